#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>

#include "fafpca/estimator.hpp"
#include "fafpca/model.hpp"

namespace fafpca {

/// Ground truth retained by the simulation generators, everything the
/// evaluation metrics need: loadings, stacked scores, closed-form
/// eigenfunctions on the unit time domain, and the noise level.
struct SimTruth {
    Eigen::MatrixXd B0;      // p x q
    Eigen::MatrixXd zeta0;   // n x Kq, block j in columns [jK, (j+1)K)
    std::function<double(int j, int k, double s)> phi;  // s on [0, 1]
    bool has_phi = false;
    int q = 0;
    int K = 0;
    double sigma = 1.0;
};

/// Flip estimate columns toward the truth: per column, the sign maximizing
/// the inner product. Never permutes columns.
inline Eigen::MatrixXd align_signs(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth,
                                   int* flip_count = nullptr) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw std::invalid_argument("align_signs: dimension mismatch");
    Eigen::MatrixXd aligned = estimate;
    int flips = 0;
    for (Eigen::Index c = 0; c < estimate.cols(); ++c) {
        if (estimate.col(c).dot(truth.col(c)) < 0.0) {
            aligned.col(c) = -aligned.col(c);
            ++flips;
        }
    }
    if (flip_count) *flip_count = flips;
    return aligned;
}

/// RMSE_l = p^{-1/2} ||B^ - B0||_F (inputs assumed sign-aligned).
inline double rmse_loadings(const Eigen::MatrixXd& b_hat, const Eigen::MatrixXd& b0) {
    if (b_hat.rows() != b0.rows() || b_hat.cols() != b0.cols())
        throw std::invalid_argument("rmse_loadings: dimension mismatch");
    return (b_hat - b0).norm() / std::sqrt(static_cast<double>(b0.rows()));
}

/// RMSE_f = n^{-1/2} ||zeta^ - zeta0||_F (inputs assumed sign-aligned,
/// blocks stacked k within j).
inline double rmse_factors(const Eigen::MatrixXd& zeta_hat, const Eigen::MatrixXd& zeta0) {
    if (zeta_hat.rows() != zeta0.rows() || zeta_hat.cols() != zeta0.cols())
        throw std::invalid_argument("rmse_factors: dimension mismatch");
    return (zeta_hat - zeta0).norm() / std::sqrt(static_cast<double>(zeta0.rows()));
}

/// Signs aligning each fitted eigenfunction with the truth under the
/// quadrature inner product int phi^ phi0 dt.
inline Eigen::MatrixXd eigenfunction_alignment(const FaFpcaModel& model, const SimTruth& truth,
                                               int n_quad = 1024) {
    if (!truth.has_phi)
        throw std::invalid_argument("eigenfunction_alignment: truth has no eigenfunctions");
    const QuadratureRule rule = basis_quadrature(model.basis.raw, n_quad);
    Eigen::MatrixXd signs = Eigen::MatrixXd::Ones(model.q, model.K);
    for (int j = 0; j < model.q; ++j) {
        for (int k = 0; k < model.K; ++k) {
            double inner = 0.0;
            for (std::size_t i = 0; i < rule.size(); ++i) {
                const double s = rule.nodes()[i];
                const double est =
                    model.blocks[static_cast<std::size_t>(j)].theta.row(k).dot(model.basis.evaluate(s));
                inner += rule.weights()[i] * est * truth.phi(j, k, s);
            }
            if (inner < 0.0) signs(j, k) = -1.0;
        }
    }
    return signs;
}

/// RMSE_e = sqrt(sum_{j,k} int (phi^_jk - phi0_jk)^2 dt) by quadrature.
inline double rmse_eigenfunctions(const FaFpcaModel& model, const SimTruth& truth, int n_quad = 1024,
                                  bool align = true, int* flip_count = nullptr) {
    if (!truth.has_phi)
        throw std::invalid_argument("rmse_eigenfunctions: truth has no eigenfunctions");
    Eigen::MatrixXd signs = Eigen::MatrixXd::Ones(model.q, model.K);
    if (align) signs = eigenfunction_alignment(model, truth, n_quad);
    if (flip_count) *flip_count = static_cast<int>((signs.array() < 0.0).count());

    const QuadratureRule rule = basis_quadrature(model.basis.raw, n_quad);
    double total = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double s = rule.nodes()[i];
        const Eigen::VectorXd m = model.basis.evaluate(s);
        for (int j = 0; j < model.q; ++j) {
            for (int k = 0; k < model.K; ++k) {
                const double est =
                    signs(j, k) * model.blocks[static_cast<std::size_t>(j)].theta.row(k).dot(m);
                const double diff = est - truth.phi(j, k, s);
                total += rule.weights()[i] * diff * diff;
            }
        }
    }
    return std::sqrt(total);
}

/// Normalized prediction error at the observed test points. Both the
/// reconstruction and the denominator use values centered with the model's
/// training centers; test subjects are scored out of sample.
inline double prediction_error(const FaFpcaModel& model, const FunctionalDataset& test) {
    if (test.p != model.p())
        throw std::invalid_argument("prediction_error: test set does not match the model's p");
    double num = 0.0, den = 0.0;
    for (const auto& subj : test.subjects) {
        Eigen::VectorXd times_raw(subj.times.size());
        for (Eigen::Index l = 0; l < subj.times.size(); ++l)
            times_raw(l) = test.time_map.to_raw(subj.times(l));
        // Undo any centering the dataset carries, then center with the model.
        Eigen::MatrixXd raw_values = subj.values;
        if (test.centered && test.centers.size() == test.p)
            raw_values.rowwise() += test.centers.transpose();
        const Eigen::VectorXd score = score_subject(model, times_raw, raw_values);

        const double inv_ni = 1.0 / subj.n_obs();
        for (Eigen::Index l = 0; l < subj.times.size(); ++l) {
            const Eigen::VectorXd x_hat = reconstruct(model, score, times_raw(l)) - model.centers;
            const Eigen::VectorXd x = raw_values.row(l).transpose() - model.centers;
            num += inv_ni * (x_hat - x).squaredNorm();
            den += inv_ni * x.squaredNorm();
        }
    }
    if (den <= 0.0) throw std::runtime_error("prediction_error: zero denominator");
    return num / den;
}

}  // namespace fafpca
