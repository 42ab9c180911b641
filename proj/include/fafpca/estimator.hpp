#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fafpca/basis.hpp"
#include "fafpca/dataset.hpp"
#include "fafpca/model.hpp"
#include "fafpca/spectra.hpp"

namespace fafpca {

/// Pooled second-moment matrix S = n^{-1} sum_i n_i^{-1} sum_l X_i X_i'.
inline Eigen::MatrixXd pooled_covariance(const FunctionalDataset& ds) {
    if (ds.n() == 0) throw std::invalid_argument("pooled_covariance: empty dataset");
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ds.p, ds.p);
    for (const auto& subj : ds.subjects) {
        const double w = 1.0 / (static_cast<double>(ds.n()) * subj.n_obs());
        s.selfadjointView<Eigen::Lower>().rankUpdate(subj.values.transpose(), w);
    }
    return Eigen::MatrixXd(s.selfadjointView<Eigen::Lower>());
}

/// Loadings: sqrt(p) times the top-q eigenvectors of the pooled moment
/// matrix, so p^{-1} B'B = I_q holds by construction.
inline LoadingMatrix estimate_loadings(const FunctionalDataset& ds, int q) {
    if (!ds.centered) throw std::invalid_argument("estimate_loadings: dataset must be centered");
    const int cap = std::min(static_cast<long>(ds.p),
                             static_cast<long>(ds.n()) * static_cast<long>(ds.min_obs()));
    if (q < 1 || q > cap)
        throw std::invalid_argument("estimate_loadings: need 1 <= q <= min(n * min_i n_i, p)");

    const Eigen::MatrixXd s = pooled_covariance(ds);
    const EigenResult full = top_eigen(s, ds.p);
    const double lmax = std::max(full.values(0), 0.0);
    int rank = 0;
    for (Eigen::Index i = 0; i < full.values.size(); ++i)
        if (full.values(i) > 1e-12 * lmax) ++rank;
    if (q > rank) {
        std::ostringstream msg;
        msg << "estimate_loadings: q=" << q << " exceeds numeric rank " << rank
            << " of the pooled moment matrix";
        throw std::invalid_argument(msg.str());
    }

    LoadingMatrix lm;
    lm.B = std::sqrt(static_cast<double>(ds.p)) * full.vectors.leftCols(q);
    return lm;
}

/// Basis design matrix for one subject: row l is M~(t_l)'.
inline Eigen::MatrixXd basis_design(const OrthoSplineBasis& basis, const Eigen::VectorXd& times) {
    Eigen::MatrixXd design(times.size(), basis.tau_n());
    for (Eigen::Index l = 0; l < times.size(); ++l)
        design.row(l) = basis.evaluate(times(l)).transpose();
    return design;
}

namespace detail {

/// Solve the per-subject ridge system A_i w = r for all q factor targets,
/// A_i = sum_l M~ M~' + ridge I. Throws naming the subject when A_i is not
/// usable even with the ridge.
inline Eigen::MatrixXd solve_subject_coefficients(const Eigen::MatrixXd& design,
                                                  const Eigen::MatrixXd& targets,
                                                  double ridge, const std::string& subject_id) {
    const int tau = static_cast<int>(design.cols());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(tau, tau);
    a.selfadjointView<Eigen::Lower>().rankUpdate(design.transpose(), 1.0);
    a = Eigen::MatrixXd(a.selfadjointView<Eigen::Lower>());
    a.diagonal().array() += ridge;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::MatrixXd w;
    bool ok = (ldlt.info() == Eigen::Success && ldlt.isPositive());
    if (ok) {
        w = ldlt.solve(design.transpose() * targets);
        ok = w.allFinite();
    }
    if (!ok)
        throw std::runtime_error(
            "build_response: basis Gram matrix of subject " + subject_id +
            " is numerically singular; increase the ridge or reduce interior knots");
    return w;
}

}  // namespace detail

/// Per-factor response matrices W_k (n x tau_n): row i of W_k holds the
/// ridge-regularized spline coefficients of the projected factor path
/// p^{-1} sum_j b_jk X_ij(t) at subject i's observation times.
inline std::vector<Eigen::MatrixXd> build_response(const FunctionalDataset& ds,
                                                   const LoadingMatrix& loadings,
                                                   const OrthoSplineBasis& basis, double ridge) {
    if (loadings.p() != ds.p)
        throw std::invalid_argument("build_response: loadings and dataset disagree on p");
    if (ridge < 0.0) throw std::invalid_argument("build_response: ridge must be >= 0");
    const int q = loadings.q();
    const int tau = basis.tau_n();
    std::vector<Eigen::MatrixXd> w_blocks(static_cast<std::size_t>(q));
    for (auto& w : w_blocks) w.resize(ds.n(), tau);

    for (int i = 0; i < ds.n(); ++i) {
        const auto& subj = ds.subjects[static_cast<std::size_t>(i)];
        const Eigen::MatrixXd design = basis_design(basis, subj.times);
        const Eigen::MatrixXd h = subj.values * loadings.B / ds.p;  // n_i x q factor targets
        const Eigen::MatrixXd coef = detail::solve_subject_coefficients(design, h, ridge, subj.id);
        for (int k = 0; k < q; ++k) w_blocks[static_cast<std::size_t>(k)].row(i) = coef.col(k).transpose();
    }
    return w_blocks;
}

/// PCA of one response block. With V the top-K unit eigenvectors of W'W:
/// theta = sqrt(tau_n) V' (so tau_n^{-1} theta theta' = I_K) and
/// scores = tau_n^{-1/2} W V, whose Gram is diagonal nonincreasing.
inline FactorBlock estimate_block(const Eigen::MatrixXd& w, int K) {
    const int tau = static_cast<int>(w.cols());
    const int n = static_cast<int>(w.rows());
    if (K < 1 || K > std::min(n, tau))
        throw std::invalid_argument("estimate_block: need 1 <= K <= min(n, tau_n)");

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(tau, tau);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose(), 1.0);
    gram = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());

    const EigenResult full = top_eigen(gram, tau);
    const double lmax = std::max(full.values(0), 0.0);
    int rank = 0;
    for (Eigen::Index i = 0; i < full.values.size(); ++i)
        if (full.values(i) > 1e-12 * lmax) ++rank;
    if (K > rank) {
        std::ostringstream msg;
        msg << "estimate_block: K=" << K << " exceeds numeric rank " << rank << " of W'W";
        throw std::invalid_argument(msg.str());
    }

    const double root_tau = std::sqrt(static_cast<double>(tau));
    FactorBlock block;
    block.eigvals = full.values.head(K);
    block.theta = root_tau * full.vectors.leftCols(K).transpose();
    block.scores = w * full.vectors.leftCols(K) / root_tau;
    return block;
}

namespace detail {

/// Enforce phi_jk(0) > 0 by jointly flipping theta rows and score columns.
/// When phi_jk(0) is numerically zero the sign is taken from the first
/// quadrature node where |phi_jk| exceeds 1e-8.
inline void apply_eigenfunction_sign_pass(FaFpcaModel& model) {
    const Eigen::VectorXd m0 = model.basis.evaluate(0.0);
    const QuadratureRule rule = basis_quadrature(model.basis.raw, model.config.n_quad);
    for (auto& block : model.blocks) {
        for (int k = 0; k < model.K; ++k) {
            double v = block.theta.row(k).dot(m0);
            if (std::abs(v) < 1e-8) {
                for (double node : rule.nodes()) {
                    const double cand = block.theta.row(k).dot(model.basis.evaluate(node));
                    if (std::abs(cand) > 1e-8) {
                        v = cand;
                        break;
                    }
                }
            }
            if (v < 0.0) {
                block.theta.row(k) = -block.theta.row(k);
                block.scores.col(k) = -block.scores.col(k);
            }
        }
    }
}

}  // namespace detail

/// Full FaFPCA fit: loadings, per-factor spline responses, per-block PCA and
/// the eigenfunction sign pass. Centers the data first when needed.
inline FaFpcaModel fit(const FunctionalDataset& dataset, int q, int K, FitConfig config = {}) {
    const FunctionalDataset& ds = dataset;
    FunctionalDataset centered_storage;
    const FunctionalDataset* data = &ds;
    if (!ds.centered) {
        centered_storage = center(ds);
        data = &centered_storage;
    }
    if (q < 1) throw std::invalid_argument("fit: q must be >= 1");
    if (K < 1) throw std::invalid_argument("fit: K must be >= 1");
    if (q > data->p) throw std::invalid_argument("fit: q must not exceed p");
    if (static_cast<long>(K) * q > data->n())
        throw std::invalid_argument("fit: K*q must not exceed the number of subjects n");

    FaFpcaModel model;
    model.config = config;
    model.config.interior_knots = resolve_interior_knots(config, data->n());
    const RawSplineBasis raw = make_raw_basis(config.degree, model.config.interior_knots);
    model.basis = orthonormalize(raw, config.n_quad);
    model.q = q;
    model.K = K;
    model.time_map = data->time_map;
    model.centers = data->centered && data->centers.size() == data->p
                        ? data->centers
                        : Eigen::VectorXd::Zero(data->p);

    if (config.ridge >= 0.0) {
        model.ridge = config.ridge;
    } else {
        // 1e-6 * tau_n, scaled by the average diagonal of the subject Gram
        // matrices (= mean trace / tau_n).
        double mean_trace = 0.0;
        for (const auto& subj : data->subjects) {
            double tr = 0.0;
            for (Eigen::Index l = 0; l < subj.times.size(); ++l)
                tr += model.basis.evaluate(subj.times(l)).squaredNorm();
            mean_trace += tr;
        }
        mean_trace /= data->n();
        model.ridge = 1e-6 * mean_trace;
    }
    model.config.ridge = model.ridge;

    model.loadings = estimate_loadings(*data, q);
    const std::vector<Eigen::MatrixXd> w_blocks =
        build_response(*data, model.loadings, model.basis, model.ridge);
    model.blocks.reserve(static_cast<std::size_t>(q));
    for (int k = 0; k < q; ++k)
        model.blocks.push_back(estimate_block(w_blocks[static_cast<std::size_t>(k)], K));
    detail::apply_eigenfunction_sign_pass(model);
    return model;
}

/// Evaluate eigenfunction phi_jk at a time in original units.
inline double eval_eigenfunction(const FaFpcaModel& model, int j, int k, double t_raw,
                                 bool extrapolate = false) {
    if (j < 0 || j >= model.q || k < 0 || k >= model.K)
        throw std::invalid_argument("eval_eigenfunction: factor or component index out of range");
    const double s = model.time_map.to_unit(t_raw);
    if (s < 0.0 || s > 1.0) {
        if (!extrapolate)
            throw std::invalid_argument(
                "eval_eigenfunction: time outside the training range (set extrapolate to allow)");
        return model.blocks[static_cast<std::size_t>(j)].theta.row(k).dot(
            model.basis.evaluate_unchecked(s));
    }
    return model.blocks[static_cast<std::size_t>(j)].theta.row(k).dot(model.basis.evaluate(s));
}

/// Out-of-sample scores for one subject: the in-sample response construction
/// with the trained loadings and basis, projected block by block through
/// zeta_jk = tau_n^{-1} theta_j w_ij.
inline Eigen::VectorXd score_subject(const FaFpcaModel& model, const Eigen::VectorXd& times_raw,
                                     const Eigen::MatrixXd& values) {
    if (values.cols() != model.p())
        throw std::invalid_argument("score_subject: values must have the model's p columns");
    if (values.rows() != times_raw.size())
        throw std::invalid_argument("score_subject: times and values disagree on n_i");

    Eigen::VectorXd times(times_raw.size());
    for (Eigen::Index l = 0; l < times_raw.size(); ++l) {
        times(l) = model.time_map.to_unit(times_raw(l));
        if (times(l) < -1e-12 || times(l) > 1.0 + 1e-12)
            throw std::invalid_argument("score_subject: observation time outside the training range");
        times(l) = std::clamp(times(l), 0.0, 1.0);
    }

    const Eigen::MatrixXd centered = values.rowwise() - model.centers.transpose();
    const Eigen::MatrixXd design = basis_design(model.basis, times);
    const Eigen::MatrixXd h = centered * model.loadings.B / model.p();
    const Eigen::MatrixXd coef =
        detail::solve_subject_coefficients(design, h, model.ridge, "(out-of-sample)");

    const double tau = static_cast<double>(model.tau_n());
    Eigen::VectorXd score(model.K * model.q);
    for (int j = 0; j < model.q; ++j)
        score.segment(j * model.K, model.K) =
            model.blocks[static_cast<std::size_t>(j)].theta * coef.col(j) / tau;
    return score;
}

/// Reconstruct X^(t) = B Phi'(t) zeta + centers at a time in original units.
inline Eigen::VectorXd reconstruct(const FaFpcaModel& model, const Eigen::VectorXd& score,
                                   double t_raw) {
    if (score.size() != static_cast<Eigen::Index>(model.K) * model.q)
        throw std::invalid_argument("reconstruct: score must have length K*q");
    const double s = model.time_map.to_unit(t_raw);
    const Eigen::VectorXd m = (s >= 0.0 && s <= 1.0) ? model.basis.evaluate(s)
                                                     : model.basis.evaluate_unchecked(s);
    Eigen::VectorXd h(model.q);
    for (int j = 0; j < model.q; ++j) {
        const Eigen::VectorXd phi = model.blocks[static_cast<std::size_t>(j)].theta * m;  // K values
        h(j) = phi.dot(score.segment(j * model.K, model.K));
    }
    return model.loadings.B * h + model.centers;
}

/// Residuals of the identification constraints of a fitted model; all are
/// ~1e-12 on healthy fits and are what the acceptance suite checks.
struct IdentificationReport {
    double loading_gram_error = 0.0;     // ||p^{-1} B'B - I||_max
    double theta_gram_error = 0.0;       // max_j ||tau^{-1} theta theta' - I||_max
    double score_offdiag_error = 0.0;    // max_j offdiag(z'z) / trace(z'z)
    double score_order_violation = 0.0;  // max increase along diag(z'z)
    double phi_gram_error = 0.0;         // ||int Phi Phi' dt - I||_max by quadrature
    bool loading_signs_ok = true;
    bool phi_signs_ok = true;
};

inline IdentificationReport validate_identification(const FaFpcaModel& model, int n_quad = 1024) {
    IdentificationReport rep;
    const int p = model.p();
    const int tau = model.tau_n();

    rep.loading_gram_error =
        (model.loadings.B.transpose() * model.loadings.B / p - Eigen::MatrixXd::Identity(model.q, model.q))
            .cwiseAbs()
            .maxCoeff();

    for (const auto& block : model.blocks) {
        rep.theta_gram_error = std::max(
            rep.theta_gram_error,
            (block.theta * block.theta.transpose() / tau - Eigen::MatrixXd::Identity(model.K, model.K))
                .cwiseAbs()
                .maxCoeff());
        const Eigen::MatrixXd zz = block.scores.transpose() * block.scores;
        const double trace = zz.trace();
        Eigen::MatrixXd off = zz;
        off.diagonal().setZero();
        if (trace > 0.0)
            rep.score_offdiag_error = std::max(rep.score_offdiag_error, off.cwiseAbs().maxCoeff() / trace);
        for (int k = 0; k + 1 < model.K; ++k)
            rep.score_order_violation =
                std::max(rep.score_order_violation, zz(k + 1, k + 1) - zz(k, k));
    }

    // Quadrature check of int Phi Phi' dt = I_{Kq}; off-diagonal blocks of
    // Phi Phi' are structurally zero, so only within-block integrals matter.
    const QuadratureRule rule = basis_quadrature(model.basis.raw, n_quad);
    for (const auto& block : model.blocks) {
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(model.K, model.K);
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const Eigen::VectorXd phi = block.theta * model.basis.evaluate(rule.nodes()[i]);
            gram.selfadjointView<Eigen::Lower>().rankUpdate(phi, rule.weights()[i]);
        }
        gram = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());
        rep.phi_gram_error =
            std::max(rep.phi_gram_error,
                     (gram - Eigen::MatrixXd::Identity(model.K, model.K)).cwiseAbs().maxCoeff());
    }

    for (int c = 0; c < model.q; ++c) {
        const double thresh = 1e-8 * model.loadings.B.col(c).cwiseAbs().maxCoeff();
        for (int r = 0; r < p; ++r) {
            if (std::abs(model.loadings.B(r, c)) > thresh) {
                if (model.loadings.B(r, c) < 0.0) rep.loading_signs_ok = false;
                break;
            }
        }
    }
    const Eigen::VectorXd m0 = model.basis.evaluate(0.0);
    for (const auto& block : model.blocks) {
        for (int k = 0; k < model.K; ++k) {
            double v = block.theta.row(k).dot(m0);
            if (std::abs(v) < 1e-8) {
                for (double node : rule.nodes()) {
                    const double cand = block.theta.row(k).dot(model.basis.evaluate(node));
                    if (std::abs(cand) > 1e-8) {
                        v = cand;
                        break;
                    }
                }
            }
            if (v < 0.0) rep.phi_signs_ok = false;
        }
    }
    return rep;
}

}  // namespace fafpca
