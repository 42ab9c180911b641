#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fafpca/basis.hpp"
#include "fafpca/dataset.hpp"

namespace fafpca {

/// Tuning knobs of the fit. Negative interior_knots / ridge mean "resolve
/// from the data" (see resolve_interior_knots / the fit routine).
struct FitConfig {
    int degree = 3;
    int interior_knots = -1;   // < 0: ceil(n^{1/3}) clamped to [4, 30]
    double ridge = -1.0;       // < 0: 1e-6 * mean subject Gram trace
    int n_quad = 1024;
    std::uint64_t seed = 0;    // provenance only
};

inline int resolve_interior_knots(const FitConfig& cfg, int n_subjects) {
    if (cfg.interior_knots >= 0) return cfg.interior_knots;
    const int k = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n_subjects))));
    return std::clamp(k, 4, 30);
}

/// p x q loading matrix with p^{-1} B'B = I and sign-fixed columns.
struct LoadingMatrix {
    Eigen::MatrixXd B;

    int p() const { return static_cast<int>(B.rows()); }
    int q() const { return static_cast<int>(B.cols()); }
};

/// Per-factor estimate: spline coefficients of the K eigenfunctions
/// (tau_n^{-1} theta theta' = I_K), the n x K score matrix with diagonal
/// nonincreasing Gram, and the PCA eigenvalues of W'W.
struct FactorBlock {
    Eigen::MatrixXd theta;   // K x tau_n
    Eigen::MatrixXd scores;  // n x K
    Eigen::VectorXd eigvals; // K, nonincreasing
};

/// Fitted bundle: everything needed to evaluate eigenfunctions, score new
/// subjects and reconstruct curves. Immutable once fitted.
struct FaFpcaModel {
    LoadingMatrix loadings;
    OrthoSplineBasis basis;
    std::vector<FactorBlock> blocks;
    int q = 0;
    int K = 0;
    double ridge = 0.0;
    TimeMap time_map;
    Eigen::VectorXd centers;
    FitConfig config;

    int p() const { return loadings.p(); }
    int tau_n() const { return basis.tau_n(); }
    int n_train() const {
        return blocks.empty() ? 0 : static_cast<int>(blocks.front().scores.rows());
    }

    /// In-sample scores stacked as an n x Kq matrix, block j occupying
    /// columns [jK, (j+1)K).
    Eigen::MatrixXd stacked_scores() const {
        Eigen::MatrixXd z(n_train(), K * q);
        for (int j = 0; j < q; ++j) z.middleCols(j * K, K) = blocks[static_cast<std::size_t>(j)].scores;
        return z;
    }
};

}  // namespace fafpca
