#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "rankmin/errors.hpp"

namespace rankmin {

using Dense = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace defaults {

// Relative spectral cutoff: singular values at or below rank_tol * sigma_1 are
// treated as zero.
inline constexpr double rank_tol = 1e-12;

// Orthonormality tolerance for stored factors; backward-stable factorizations
// stay well inside this.
inline double orth_tol(Index max_dim) {
    return 1e-10 * std::sqrt(static_cast<double>(std::max<Index>(max_dim, 1)));
}

}  // namespace defaults

inline void require_finite(const Dense& A, const char* what) {
    if (!A.allFinite())
        throw std::invalid_argument(std::string(what) + ": input has non-finite entries");
}

inline void require_same_shape(const Dense& A, const Dense& B, const char* what) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                    std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                                    " vs " + std::to_string(B.rows()) + "x" +
                                    std::to_string(B.cols()) + ")");
}

// Frobenius inner product <A, B> = tr(B^T A).
inline double inner(const Dense& A, const Dense& B) {
    require_same_shape(A, B, "inner");
    return (A.array() * B.array()).sum();
}

inline double frobenius(const Dense& A) { return A.norm(); }

// Thin SVD triplet (U, sigma, V) with orthonormal factor columns and strictly
// positive, nonincreasing sigma. rank() == 0 represents the zero matrix via
// empty factors; the ambient shape stays recoverable from U.rows()/V.rows().
struct FactoredMatrix {
    Dense U;       // m x k
    Vector sigma;  // k
    Dense V;       // n x k

    Index rows() const { return U.rows(); }
    Index cols() const { return V.rows(); }
    Index rank() const { return sigma.size(); }

    static FactoredMatrix zero(Index m, Index n) {
        return FactoredMatrix{Dense(m, 0), Vector(0), Dense(n, 0)};
    }

    Dense dense() const { return U * sigma.asDiagonal() * V.transpose(); }

    double norm() const { return sigma.norm(); }

    double smallest_sigma() const { return rank() > 0 ? sigma(rank() - 1) : 0.0; }
};

inline double orthonormality_defect(const Dense& Q) {
    if (Q.cols() == 0) return 0.0;
    return (Q.transpose() * Q - Dense::Identity(Q.cols(), Q.cols())).norm();
}

// Structural validity of a stored factorization: orthonormal factors within
// tol, sigma positive and nonincreasing, rank within bounds.
inline bool is_valid_factorization(const FactoredMatrix& F, double tol) {
    if (F.rank() > std::min(F.rows(), F.cols())) return false;
    if (F.U.cols() != F.rank() || F.V.cols() != F.rank()) return false;
    if (orthonormality_defect(F.U) > tol || orthonormality_defect(F.V) > tol) return false;
    for (Index j = 0; j < F.rank(); ++j) {
        if (!(F.sigma(j) > 0.0)) return false;
        if (j > 0 && F.sigma(j) > F.sigma(j - 1)) return false;
    }
    return true;
}

// Thin SVD truncated at the numerical rank: keeps sigma_j > rank_tol * sigma_1
// (none if sigma_1 == 0).
inline FactoredMatrix svd_thin(const Dense& A, double rank_tol = defaults::rank_tol) {
    require_finite(A, "svd_thin");
    Dense U, V;
    Vector s;
    if (std::min(A.rows(), A.cols()) <= 16) {
        Eigen::JacobiSVD<Dense> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        U = svd.matrixU();
        s = svd.singularValues();
        V = svd.matrixV();
    } else {
        Eigen::BDCSVD<Dense> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        U = svd.matrixU();
        s = svd.singularValues();
        V = svd.matrixV();
    }
    const double s1 = s.size() > 0 ? s(0) : 0.0;
    Index k = 0;
    if (s1 > 0.0)
        while (k < s.size() && s(k) > rank_tol * s1) ++k;
    return FactoredMatrix{U.leftCols(k), s.head(k), V.leftCols(k)};
}

// Keeps the first min{rank, s} singular triplets (Eckart-Young projection onto
// the rank-<=s variety). Negative s is treated as 0.
inline FactoredMatrix truncate(const FactoredMatrix& F, Index s) {
    const Index k = std::min<Index>(F.rank(), std::max<Index>(s, 0));
    return FactoredMatrix{F.U.leftCols(k), F.sigma.head(k), F.V.leftCols(k)};
}

// QR factorization with column pivoting, cut at the numerical rank q detected
// from the pivoted R diagonal: M = Q * R * perm^{-1}, Q with q orthonormal
// columns, R q x p upper triangular up to the column permutation.
struct PivotedQR {
    Dense Q;
    Dense R;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> perm;

    Index rank() const { return Q.cols(); }

    // Coefficient matrix C with M = Q * C (columns back in input order).
    Dense unpivoted_R() const { return R * perm.inverse(); }

    Dense reconstruct() const { return Q * unpivoted_R(); }
};

inline PivotedQR qr_col_pivot(const Dense& M, double rank_tol = defaults::rank_tol) {
    require_finite(M, "qr_col_pivot");
    Eigen::ColPivHouseholderQR<Dense> qr(M);
    const Dense Rfull = qr.matrixR().triangularView<Eigen::Upper>();
    const Index pmin = std::min(M.rows(), M.cols());
    const double d0 = pmin > 0 ? std::abs(Rfull(0, 0)) : 0.0;
    Index q = 0;
    if (d0 > 0.0)
        while (q < pmin && std::abs(Rfull(q, q)) > rank_tol * d0) ++q;
    PivotedQR out;
    out.Q = qr.householderQ() * Dense::Identity(M.rows(), q);
    out.R = Rfull.topRows(q);
    out.perm = qr.colsPermutation();
    return out;
}

// Full list of min{m, n} singular values, nonincreasing.
inline Vector singular_values(const Dense& A) {
    if (std::min(A.rows(), A.cols()) <= 16)
        return Eigen::JacobiSVD<Dense>(A).singularValues();
    return Eigen::BDCSVD<Dense>(A).singularValues();
}

// ---------------------------------------------------------------------------
// Plain text serialization: first line "m n", then m rows of n scalars.
// Scalars carry 17 significant digits so doubles round-trip exactly.
// ---------------------------------------------------------------------------

inline std::string format_scalar(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_dense(std::ostream& os, const Dense& A) {
    os << A.rows() << ' ' << A.cols() << '\n';
    for (Index i = 0; i < A.rows(); ++i) {
        for (Index j = 0; j < A.cols(); ++j) {
            if (j > 0) os << ' ';
            os << format_scalar(A(i, j));
        }
        os << '\n';
    }
    if (!os) throw io_error("write_dense: stream failure");
}

inline Dense read_dense(std::istream& is) {
    long long m = 0, n = 0;
    if (!(is >> m >> n) || m < 0 || n < 0)
        throw io_error("read_dense: bad header (expected \"m n\")");
    Dense A(m, n);
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = 0; j < A.cols(); ++j)
            if (!(is >> A(i, j))) throw io_error("read_dense: truncated matrix body");
    return A;
}

// A factored matrix is three consecutive blocks: U, sigma (as a k x 1 block),
// then V.
inline void write_factored(std::ostream& os, const FactoredMatrix& F) {
    write_dense(os, F.U);
    Dense s(F.rank(), 1);
    s.col(0) = F.sigma;
    write_dense(os, s);
    write_dense(os, F.V);
}

inline FactoredMatrix read_factored(std::istream& is) {
    Dense U = read_dense(is);
    Dense s = read_dense(is);
    Dense V = read_dense(is);
    if (s.cols() != 1 || s.rows() != U.cols() || V.cols() != U.cols())
        throw io_error("read_factored: inconsistent block shapes");
    return FactoredMatrix{U, s.col(0), V};
}

}  // namespace rankmin
