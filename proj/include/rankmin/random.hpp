#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "rankmin/matcore.hpp"

namespace rankmin {

// Seeded scalar/matrix sampler. Gaussian draws go through an explicit
// Box-Muller transform so a seed pins the exact stream independently of the
// standard library's distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double gaussian() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        cache_ = radius * std::sin(angle);
        has_cache_ = true;
        return radius * std::cos(angle);
    }

    Dense gaussian_matrix(Index m, Index n) {
        Dense A(m, n);
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < n; ++j) A(i, j) = gaussian();
        return A;
    }

    // Frobenius-normalized Gaussian draw (uniform on the unit sphere).
    Dense unit_sphere_matrix(Index m, Index n) {
        for (;;) {
            Dense A = gaussian_matrix(m, n);
            const double nrm = A.norm();
            if (nrm > 0.0) return A / nrm;
        }
    }

    // Random m x n matrix of exact rank k with unit-scale factors.
    Dense low_rank_matrix(Index m, Index n, Index k) {
        return gaussian_matrix(m, k) * gaussian_matrix(n, k).transpose();
    }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace rankmin
