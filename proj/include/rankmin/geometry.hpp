#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rankmin/matcore.hpp"

namespace rankmin {

// Deterministic choice when the two candidates of a set-valued projection tie:
// Left keeps the column-space candidate U U^T Z, Right the row-space candidate
// Z V V^T.
enum class TieBreak { Left, Right };

// The three sparse cones: matrices with at most one nonzero entry, one nonzero
// row, or one nonzero column. Each is a closed cone inside the rank-<=1
// matrices with polar {0}.
enum class SparseConeKind { OneEntry, OneRow, OneColumn };

inline const char* to_string(SparseConeKind k) {
    switch (k) {
        case SparseConeKind::OneEntry: return "entry";
        case SparseConeKind::OneRow: return "row";
        case SparseConeKind::OneColumn: return "column";
    }
    return "?";
}

inline void require_dims(const FactoredMatrix& X, const Dense& Z, const char* what) {
    if (X.rows() != Z.rows() || X.cols() != Z.cols())
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Squared norms of the two one-sided coefficient blocks U^T Z and Z V. The
// restricted-cone branch decision compares exactly these quantities, in both
// the dense and the factored code paths, so the branch taken is identical.
inline double left_candidate_norm_sq(const FactoredMatrix& X, const Dense& Z) {
    return (X.U.transpose() * Z).squaredNorm();
}
inline double right_candidate_norm_sq(const FactoredMatrix& X, const Dense& Z) {
    return (Z * X.V).squaredNorm();
}

// Orthogonal projection onto the tangent space of the fixed-rank manifold at
// X: U U^T Z + Z V V^T - U U^T Z V V^T, evaluated through the thin factors.
inline Dense proj_tangent_space(const FactoredMatrix& X, const Dense& Z) {
    require_dims(X, Z, "proj_tangent_space");
    if (X.rank() == 0) return Dense::Zero(Z.rows(), Z.cols());
    const Dense UtZ = X.U.transpose() * Z;  // k x n
    const Dense ZV = Z * X.V;               // m x k
    return X.U * UtZ + (ZV - X.U * (UtZ * X.V)) * X.V.transpose();
}

inline Dense proj_normal_space(const FactoredMatrix& X, const Dense& Z) {
    require_dims(X, Z, "proj_normal_space");
    return Z - proj_tangent_space(X, Z);
}

// Same projection computed as (I - U U^T) Z (I - V V^T); kept as a second
// route so tests can cross-check the complement form.
inline Dense proj_normal_space_direct(const FactoredMatrix& X, const Dense& Z) {
    require_dims(X, Z, "proj_normal_space_direct");
    const Dense Pl = Dense::Identity(X.rows(), X.rows()) - X.U * X.U.transpose();
    const Dense Pr = Dense::Identity(X.cols(), X.cols()) - X.V * X.V.transpose();
    return Pl * Z * Pr;
}

// Projection onto the restricted tangent cone of the fixed-rank manifold:
// whichever of U U^T Z and Z V V^T has the larger norm, ties broken by
// tie_break. The comparison is exact; an epsilon band would only make the
// output discontinuous in a configuration-dependent way.
inline Dense proj_restricted_fixed(const FactoredMatrix& X, const Dense& Z,
                                   TieBreak tie_break = TieBreak::Left) {
    require_dims(X, Z, "proj_restricted_fixed");
    const double sl = left_candidate_norm_sq(X, Z);
    const double sr = right_candidate_norm_sq(X, Z);
    const bool left = sl > sr || (sl == sr && tie_break == TieBreak::Left);
    if (left) return X.U * (X.U.transpose() * Z);
    return (Z * X.V) * X.V.transpose();
}

// Projection onto the tangent cone of the rank-<=r variety at X: the tangent
// space part plus the best rank-(r - rank X) approximation of the normal part.
// The truncated SVD of the normal part is the large-scale path; solvers avoid
// it on their hot path.
inline Dense proj_tangent_cone_variety(const FactoredMatrix& X, const Dense& Z, Index r) {
    require_dims(X, Z, "proj_tangent_cone_variety");
    if (X.rank() > r)
        throw std::invalid_argument("proj_tangent_cone_variety: rank of X exceeds r");
    const Dense T = proj_tangent_space(X, Z);
    if (X.rank() == r) return T;
    const FactoredMatrix N = truncate(svd_thin(Z - T), r - X.rank());
    return T + N.dense();
}

// Projection onto the restricted tangent cone of the variety: restricted
// fixed-rank part plus the truncated normal part.
inline Dense proj_restricted_cone_variety(const FactoredMatrix& X, const Dense& Z, Index r,
                                          TieBreak tie_break = TieBreak::Left) {
    require_dims(X, Z, "proj_restricted_cone_variety");
    if (X.rank() > r)
        throw std::invalid_argument("proj_restricted_cone_variety: rank of X exceeds r");
    const Dense T = proj_restricted_fixed(X, Z, tie_break);
    if (X.rank() == r) return T;
    const Dense N = proj_normal_space(X, Z);
    const FactoredMatrix Ntr = truncate(svd_thin(N), r - X.rank());
    return T + Ntr.dense();
}

// Orthogonal decomposition of Z at X into its tangent-space and normal-space
// parts.
struct TangentDecomposition {
    Dense tangent_part;
    Dense normal_part;
    FactoredMatrix at;
};

inline TangentDecomposition decompose_tangent_normal(const FactoredMatrix& X, const Dense& Z) {
    Dense t = proj_tangent_space(X, Z);
    return TangentDecomposition{t, Z - t, X};
}

// Projection of Z onto a sparse cone, returned directly in rank-<=1 SVD form.
// Ties go to the lexicographically smallest index so runs are reproducible.
inline FactoredMatrix sparse_cone_project(SparseConeKind kind, const Dense& Z) {
    const Index m = Z.rows(), n = Z.cols();
    switch (kind) {
        case SparseConeKind::OneEntry: {
            Index bi = 0, bj = 0;
            double best = -1.0;
            for (Index i = 0; i < m; ++i)
                for (Index j = 0; j < n; ++j)
                    if (std::abs(Z(i, j)) > best) {
                        best = std::abs(Z(i, j));
                        bi = i;
                        bj = j;
                    }
            if (best <= 0.0) return FactoredMatrix::zero(m, n);
            FactoredMatrix G{Dense::Zero(m, 1), Vector::Constant(1, best), Dense::Zero(n, 1)};
            G.U(bi, 0) = 1.0;
            G.V(bj, 0) = Z(bi, bj) > 0 ? 1.0 : -1.0;
            return G;
        }
        case SparseConeKind::OneRow: {
            Index bi = 0;
            double best = -1.0;
            for (Index i = 0; i < m; ++i)
                if (Z.row(i).norm() > best) {
                    best = Z.row(i).norm();
                    bi = i;
                }
            if (best <= 0.0) return FactoredMatrix::zero(m, n);
            FactoredMatrix G{Dense::Zero(m, 1), Vector::Constant(1, best), Dense(n, 1)};
            G.U(bi, 0) = 1.0;
            G.V.col(0) = Z.row(bi).transpose() / best;
            return G;
        }
        case SparseConeKind::OneColumn: {
            Index bj = 0;
            double best = -1.0;
            for (Index j = 0; j < n; ++j)
                if (Z.col(j).norm() > best) {
                    best = Z.col(j).norm();
                    bj = j;
                }
            if (best <= 0.0) return FactoredMatrix::zero(m, n);
            FactoredMatrix G{Dense(m, 1), Vector::Constant(1, best), Dense::Zero(n, 1)};
            G.U.col(0) = Z.col(bj) / best;
            G.V(bj, 0) = 1.0;
            return G;
        }
    }
    throw std::invalid_argument("sparse_cone_project: unknown cone kind");
}

// Minimum over the unit sphere of ||P_C(X)||^2 for each cone: 1/(mn), 1/m,
// 1/n. This is the kappa_1 value a sparse-cone direction certifies.
inline double cone_unit_sphere_constant(SparseConeKind kind, Index m, Index n) {
    switch (kind) {
        case SparseConeKind::OneEntry: return 1.0 / static_cast<double>(m * n);
        case SparseConeKind::OneRow: return 1.0 / static_cast<double>(m);
        case SparseConeKind::OneColumn: return 1.0 / static_cast<double>(n);
    }
    throw std::invalid_argument("cone_unit_sphere_constant: unknown cone kind");
}

// Measure of B-stationarity: norm of the projection of -grad onto the tangent
// cone of the rank-<=r variety at X. Zero exactly at B-stationary points.
// Diagnostic use: when rank X < r this runs the large-scale SVD path, so
// solvers track ||grad|| instead on that branch.
inline double stationarity_measure(const FactoredMatrix& X, const Dense& grad, Index r) {
    return proj_tangent_cone_variety(X, -grad, r).norm();
}

}  // namespace rankmin
