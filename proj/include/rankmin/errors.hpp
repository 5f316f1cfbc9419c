#pragma once

#include <stdexcept>
#include <string>

namespace rankmin {

// Bad run configuration (out-of-range parameter, unknown key, mismatched
// problems in a comparison). Maps to exit code 2 in the CLI.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A solver invariant broke at run time. Maps to exit code 3 in the CLI.
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Backtracking exceeded its cap; signals an inconsistent gradient, since the
// line search provably terminates for a correct one.
struct line_search_error : solver_error {
    using solver_error::solver_error;
};

// A factorization stopped reconstructing its input.
struct numerical_error : solver_error {
    using solver_error::solver_error;
};

// A rank policy returned a rank outside its admissible range.
struct policy_error : solver_error {
    using solver_error::solver_error;
};

// File read/write failure. Maps to exit code 4 in the CLI.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rankmin
