#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <utility>
#include <vector>

#include "fafpca/estimator.hpp"
#include "fafpca/spectra.hpp"

namespace fafpca {

/// Explained-variance selection of q and K (strict "> threshold" rule).
struct SelectionReport {
    int q_chosen = 0;
    int K_chosen = 0;
    Eigen::VectorXd q_curve;                // cumulative ratios of the pooled spectrum
    std::vector<Eigen::VectorXd> K_curves;  // one cumulative-ratio curve per factor block
    std::vector<int> K_per_block;           // flexible per-block choice
    double threshold = 0.95;
};

/// Number of factors: smallest q whose share of the pooled moment spectrum
/// strictly exceeds the threshold.
inline std::pair<int, Eigen::VectorXd> select_q(const FunctionalDataset& ds, double threshold = 0.95) {
    if (!ds.centered) throw std::invalid_argument("select_q: dataset must be centered");
    const Eigen::MatrixXd s = pooled_covariance(ds);
    const EigenResult full = top_eigen(s, ds.p);
    const Eigen::VectorXd curve = explained_variance_curve(full.values);
    const int q = explained_variance_count(full.values, threshold);
    return {q, curve};
}

/// Number of eigenfunctions: smallest K whose share of every block spectrum
/// W_k'W_k strictly exceeds the threshold (min over the q blocks).
inline std::pair<int, std::vector<Eigen::VectorXd>> select_K(const FunctionalDataset& ds, int q,
                                                             const OrthoSplineBasis& basis,
                                                             double ridge, double threshold = 0.95) {
    if (!ds.centered) throw std::invalid_argument("select_K: dataset must be centered");
    const LoadingMatrix loadings = estimate_loadings(ds, q);
    const std::vector<Eigen::MatrixXd> w_blocks = build_response(ds, loadings, basis, ridge);

    std::vector<Eigen::VectorXd> curves;
    curves.reserve(w_blocks.size());
    int k_choice = 1;
    for (const auto& w : w_blocks) {
        const Eigen::MatrixXd gram = w.transpose() * w;
        const EigenResult full = top_eigen(gram, basis.tau_n());
        curves.push_back(explained_variance_curve(full.values));
        k_choice = std::max(k_choice, explained_variance_count(full.values, threshold));
    }
    return {k_choice, curves};
}

/// Per-block variant: an independent K_k for every factor.
inline std::vector<int> select_K_per_block(const std::vector<Eigen::VectorXd>& curves,
                                           double threshold) {
    std::vector<int> ks;
    ks.reserve(curves.size());
    for (const auto& curve : curves) {
        int k = -1;
        for (Eigen::Index j = 0; j < curve.size(); ++j) {
            if (curve(j) > threshold) {
                k = static_cast<int>(j) + 1;
                break;
            }
        }
        if (k < 0) throw std::invalid_argument("select_K_per_block: threshold never exceeded");
        ks.push_back(k);
    }
    return ks;
}

/// Run both rules and bundle the curves for scree-plot export.
inline SelectionReport select_model(const FunctionalDataset& ds, const FitConfig& cfg,
                                    double threshold = 0.95) {
    SelectionReport rep;
    rep.threshold = threshold;
    auto [q, q_curve] = select_q(ds, threshold);
    rep.q_chosen = q;
    rep.q_curve = std::move(q_curve);

    FitConfig resolved = cfg;
    resolved.interior_knots = resolve_interior_knots(cfg, ds.n());
    const OrthoSplineBasis basis =
        orthonormalize(make_raw_basis(resolved.degree, resolved.interior_knots), resolved.n_quad);
    const double ridge = resolved.ridge >= 0.0 ? resolved.ridge : 1e-6 * basis.tau_n();
    auto [k, curves] = select_K(ds, rep.q_chosen, basis, ridge, threshold);
    rep.K_chosen = k;
    rep.K_curves = std::move(curves);
    rep.K_per_block = select_K_per_block(rep.K_curves, threshold);
    return rep;
}

}  // namespace fafpca
