#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fafpca {

/// Truncated symmetric eigendecomposition with deterministic conventions:
/// eigenvalues nonincreasing, columns unit norm, first non-negligible entry
/// of each column positive.
struct EigenResult {
    Eigen::VectorXd values;   // k, nonincreasing
    Eigen::MatrixXd vectors;  // m x k, orthonormal columns
};

/// Flip column signs in place so the first entry with magnitude above
/// 1e-8 * column max-norm is positive.
inline void fix_column_signs(Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double thresh = 1e-8 * m.col(c).cwiseAbs().maxCoeff();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (std::abs(m(r, c)) > thresh) {
                if (m(r, c) < 0.0) m.col(c) = -m.col(c);
                break;
            }
        }
    }
}

/// Eigenpairs for the k largest eigenvalues of a symmetric matrix.
///
/// The input is symmetrized as (A + A')/2 before decomposition. Eigenvalues
/// that tie within 1e-12 * lambda_max are reordered by the row index of each
/// vector's largest-magnitude entry, which makes degenerate inputs (e.g.
/// permuted diagonal matrices) deterministic.
inline EigenResult top_eigen(const Eigen::MatrixXd& a, int k) {
    const Eigen::Index m = a.rows();
    if (a.cols() != m) throw std::invalid_argument("top_eigen: matrix must be square");
    if (!a.allFinite()) throw std::invalid_argument("top_eigen: matrix has non-finite entries");
    if (k < 1 || k > m) throw std::invalid_argument("top_eigen: need 1 <= k <= m");

    const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw std::runtime_error("top_eigen: decomposition failed");

    // Eigen returns ascending order; take the tail reversed.
    std::vector<int> order(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(m - 1 - i);

    const double tie_tol = 1e-12 * std::abs(es.eigenvalues()(m - 1));
    auto argmax_row = [&](int col) {
        Eigen::Index r = 0;
        es.eigenvectors().col(col).cwiseAbs().maxCoeff(&r);
        return r;
    };
    for (std::size_t lo = 0; lo < order.size();) {
        std::size_t hi = lo + 1;
        while (hi < order.size() &&
               std::abs(es.eigenvalues()(order[hi - 1]) - es.eigenvalues()(order[hi])) <= tie_tol)
            ++hi;
        if (hi - lo > 1) {
            std::sort(order.begin() + static_cast<std::ptrdiff_t>(lo),
                      order.begin() + static_cast<std::ptrdiff_t>(hi),
                      [&](int x, int y) { return argmax_row(x) < argmax_row(y); });
        }
        lo = hi;
    }

    EigenResult res;
    res.values.resize(k);
    res.vectors.resize(m, k);
    for (int i = 0; i < k; ++i) {
        res.values(i) = es.eigenvalues()(order[static_cast<std::size_t>(i)]);
        res.vectors.col(i) = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
    }
    fix_column_signs(res.vectors);
    return res;
}

/// Smallest j such that the leading-j share of the (clamped) spectrum
/// strictly exceeds the threshold.
inline int explained_variance_count(const Eigen::VectorXd& eigenvalues, double threshold) {
    const Eigen::VectorXd clamped = eigenvalues.cwiseMax(0.0);
    const double total = clamped.sum();
    if (total <= 0.0)
        throw std::invalid_argument("explained_variance_count: spectrum has no variance");
    double cum = 0.0;
    for (Eigen::Index j = 0; j < clamped.size(); ++j) {
        cum += clamped(j);
        if (cum > threshold * total) return static_cast<int>(j) + 1;
    }
    // threshold >= 1 never strictly crossed
    throw std::invalid_argument("explained_variance_count: threshold never exceeded");
}

/// Cumulative explained-variance ratios of a nonincreasing spectrum.
inline Eigen::VectorXd explained_variance_curve(const Eigen::VectorXd& eigenvalues) {
    const Eigen::VectorXd clamped = eigenvalues.cwiseMax(0.0);
    const double total = clamped.sum();
    if (total <= 0.0)
        throw std::invalid_argument("explained_variance_curve: spectrum has no variance");
    Eigen::VectorXd curve(clamped.size());
    double cum = 0.0;
    for (Eigen::Index j = 0; j < clamped.size(); ++j) {
        cum += clamped(j);
        curve(j) = cum / total;
    }
    return curve;
}

}  // namespace fafpca
