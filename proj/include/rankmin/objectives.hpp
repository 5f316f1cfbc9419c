#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rankmin/matcore.hpp"
#include "rankmin/random.hpp"

namespace rankmin {

// Differentiable objective on m x n matrices. Implementations must be pure and
// deterministic: repeated evaluation at the same point returns the same value,
// and instances are immutable after construction so concurrent runs may share
// them.
class Objective {
  public:
    virtual ~Objective() = default;

    virtual Index rows() const = 0;
    virtual Index cols() const = 0;
    virtual double value(const Dense& X) const = 0;
    virtual Dense gradient(const Dense& X) const = 0;

    // Known global Lipschitz constant of the gradient, if any.
    virtual std::optional<double> lipschitz_hint() const { return std::nullopt; }
};

// f(X) = 1/2 ||X - A||_F^2, gradient X - A. The minimizer over the rank-<=r
// variety is the rank-r truncation of A, which makes this the canonical test
// objective with an analytically known optimum.
class ApproxProblem final : public Objective {
  public:
    explicit ApproxProblem(Dense target) : target_(std::move(target)) {
        require_finite(target_, "ApproxProblem");
        if (target_.rows() < 1 || target_.cols() < 1)
            throw std::invalid_argument("ApproxProblem: empty target");
    }

    Index rows() const override { return target_.rows(); }
    Index cols() const override { return target_.cols(); }

    double value(const Dense& X) const override {
        require_same_shape(X, target_, "ApproxProblem::value");
        return 0.5 * (X - target_).squaredNorm();
    }

    Dense gradient(const Dense& X) const override {
        require_same_shape(X, target_, "ApproxProblem::gradient");
        return X - target_;
    }

    std::optional<double> lipschitz_hint() const override { return 1.0; }

    const Dense& target() const { return target_; }

  private:
    Dense target_;
};

// f(X) = 1/2 ||P_Omega(X - A)||_F^2 with a fixed 0/1 observation mask.
class CompletionProblem final : public Objective {
  public:
    CompletionProblem(Dense target, Dense mask)
        : target_(std::move(target)), mask_(std::move(mask)) {
        require_finite(target_, "CompletionProblem");
        require_same_shape(mask_, target_, "CompletionProblem");
        if (target_.rows() < 1 || target_.cols() < 1)
            throw std::invalid_argument("CompletionProblem: empty target");
        for (Index i = 0; i < mask_.rows(); ++i)
            for (Index j = 0; j < mask_.cols(); ++j)
                if (mask_(i, j) != 0.0 && mask_(i, j) != 1.0)
                    throw std::invalid_argument("CompletionProblem: mask entries must be 0 or 1");
    }

    Index rows() const override { return target_.rows(); }
    Index cols() const override { return target_.cols(); }

    double value(const Dense& X) const override {
        require_same_shape(X, target_, "CompletionProblem::value");
        return 0.5 * (mask_.array() * (X - target_).array()).matrix().squaredNorm();
    }

    Dense gradient(const Dense& X) const override {
        require_same_shape(X, target_, "CompletionProblem::gradient");
        return (mask_.array() * (X - target_).array()).matrix();
    }

    std::optional<double> lipschitz_hint() const override { return 1.0; }

    const Dense& target() const { return target_; }
    const Dense& mask() const { return mask_; }

  private:
    Dense target_;
    Dense mask_;
};

// Compares the analytic gradient against central differences along the four
// corner coordinate directions plus five random unit directions; returns the
// maximum relative error.
inline double finite_diff_check(const Objective& obj, const Dense& X, double step,
                                std::uint64_t seed = 0) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    const Index m = X.rows(), n = X.cols();
    const Dense g = obj.gradient(X);

    std::vector<Dense> dirs;
    auto corner = [&](Index i, Index j) {
        Dense D = Dense::Zero(m, n);
        D(i, j) = 1.0;
        dirs.push_back(D);
    };
    corner(0, 0);
    corner(0, n - 1);
    corner(m - 1, 0);
    corner(m - 1, n - 1);
    Rng rng(seed);
    for (int k = 0; k < 5; ++k) dirs.push_back(rng.unit_sphere_matrix(m, n));

    double worst = 0.0;
    for (const Dense& D : dirs) {
        const double fd = (obj.value(X + step * D) - obj.value(X - step * D)) / (2.0 * step);
        const double ip = inner(g, D);
        const double rel = std::abs(fd - ip) / std::max(1.0, std::abs(ip));
        worst = std::max(worst, rel);
    }
    return worst;
}

// Sampled estimate of the local Lipschitz constant of the gradient over the
// closed ball B[center, radius]: max over sampled pairs of
// ||grad(X) - grad(Y)|| / ||X - Y||. A declared hint takes precedence.
inline double local_lipschitz_estimate(const Objective& obj, const Dense& center, double radius,
                                       int samples, std::uint64_t seed = 0) {
    if (!(radius > 0.0))
        throw std::invalid_argument("local_lipschitz_estimate: radius must be positive");
    if (auto hint = obj.lipschitz_hint()) return *hint;
    if (samples < 1)
        throw std::invalid_argument(
            "local_lipschitz_estimate: samples must be >= 1 when no Lipschitz hint exists");
    Rng rng(seed);
    const Index m = center.rows(), n = center.cols();
    auto draw = [&]() -> Dense {
        return center + (radius * rng.uniform()) * rng.unit_sphere_matrix(m, n);
    };
    double best = 0.0;
    for (int k = 0; k < samples; ++k) {
        const Dense X = draw(), Y = draw();
        const double d = (X - Y).norm();
        if (d == 0.0) continue;
        best = std::max(best, (obj.gradient(X) - obj.gradient(Y)).norm() / d);
    }
    return best;
}

}  // namespace rankmin
