#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fafpca/dataset.hpp"
#include "fafpca/estimator.hpp"
#include "fafpca/metrics.hpp"
#include "fafpca/model.hpp"
#include "fafpca/rng.hpp"
#include "fafpca/selection.hpp"
#include "fafpca/spectra.hpp"

namespace fafpca {

// Both generators sample observation times uniformly on the raw domain
// (0, 10) and store them rescaled by the exact domain map s = t / 10.
inline constexpr double kRawTimeSpan = 10.0;

/// Scenario 1: K loading-free p-dimensional score vectors per subject,
/// shared sine time courses, and noise that is either white or
/// equicorrelated across variables. Deliberately outside the fitted model
/// class; used for prediction-error comparisons only.
struct Scenario1Config {
    int n = 100;
    int p = 100;
    int K = 2;
    enum class SigmaCase { identity, equicorrelated } sigma_case = SigmaCase::identity;
    int ni = 20;
    std::uint64_t seed = 0;
};

/// Scenario 2: the model's own data-generating process with the loading,
/// score and eigenfunction construction that satisfies the identification
/// constraints exactly.
struct Scenario2Config {
    int n = 100;
    int p = 100;
    int q = 5;
    int K = 2;
    int ni = 20;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

/// n_i sorted times uniform on (0, lo+span), exact duplicates nudged apart.
inline Eigen::VectorXd draw_times(Rng& rng, int ni, double span) {
    std::vector<double> t(static_cast<std::size_t>(ni));
    for (auto& v : t) v = rng.uniform(0.0, span);
    std::sort(t.begin(), t.end());
    for (std::size_t l = 1; l < t.size(); ++l)
        if (t[l] <= t[l - 1]) t[l] = t[l - 1] + 1e-12;
    return Eigen::Map<Eigen::VectorXd>(t.data(), ni);
}

/// Sample from the AR(1)-correlation law cov(x_i, x_j) = 0.5^{|i-j|} via the
/// stationary Markov recursion.
inline Eigen::VectorXd draw_ar1(Rng& rng, int p, double rho = 0.5) {
    Eigen::VectorXd x(p);
    x(0) = rng.normal();
    const double fresh = std::sqrt(1.0 - rho * rho);
    for (int j = 1; j < p; ++j) x(j) = rho * x(j - 1) + fresh * rng.normal();
    return x;
}

inline std::string subject_label(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%04d", i + 1);
    return buf;
}

}  // namespace detail

/// Scenario-1 eigenfunction on the raw domain, phi_k(t) = sin((2k-1) pi t / 10).
inline double scenario1_phi(int k1, double t_raw) {
    return std::sin((2.0 * k1 - 1.0) * M_PI * t_raw / kRawTimeSpan);
}

/// Scenario-2 eigenfunction on the raw domain (1-based j, k).
inline double scenario2_phi(int j1, int k1, double t_raw) {
    const double root2 = std::sqrt(2.0);
    const double base = M_PI * t_raw / kRawTimeSpan;
    if (k1 % 2 == 1) {
        const double mult = (j1 != 2) ? 2.0 * k1 : 1.0 * k1;
        return root2 * std::sin(mult * base);
    }
    const double mult = (j1 != 2) ? 2.0 * k1 : 2.0 * k1 + 1.0;
    return root2 * std::cos(mult * base);
}

inline FunctionalDataset generate_scenario1(const Scenario1Config& cfg,
                                            std::uint64_t stream_tag = kStreamGlobal) {
    if (cfg.n < 1 || cfg.p < 1 || cfg.ni < 1)
        throw std::invalid_argument("generate_scenario1: n, p, ni must be >= 1");
    if (cfg.K < 2) throw std::invalid_argument("generate_scenario1: K must be >= 2");

    FunctionalDataset ds;
    ds.p = cfg.p;
    ds.time_map.offset = 0.0;
    ds.time_map.scale = 1.0 / kRawTimeSpan;
    ds.subjects.reserve(static_cast<std::size_t>(cfg.n));

    for (int i = 0; i < cfg.n; ++i) {
        Rng rng(derive_seed(cfg.seed, stream_tag ^ kStreamSubject, static_cast<std::uint64_t>(i)));

        // Score vectors zeta_ik ~ N(0, Sigma_{zeta,k}): AR(1) correlation off
        // the diagonal, diagonal inflated to 3 - (k-1)/(K-1).
        Eigen::MatrixXd zeta(cfg.p, cfg.K);
        for (int k = 0; k < cfg.K; ++k) {
            const double diag = 3.0 - static_cast<double>(k) / (cfg.K - 1);
            Eigen::VectorXd base = detail::draw_ar1(rng, cfg.p);
            const double extra = std::sqrt(diag - 1.0);
            for (int j = 0; j < cfg.p; ++j) base(j) += extra * rng.normal();
            zeta.col(k) = base;
        }

        const Eigen::VectorXd t_raw = detail::draw_times(rng, cfg.ni, kRawTimeSpan);

        SubjectRecord rec;
        rec.id = detail::subject_label(i);
        rec.times = t_raw / kRawTimeSpan;
        rec.values.resize(cfg.ni, cfg.p);
        for (int l = 0; l < cfg.ni; ++l) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(cfg.p);
            for (int k = 0; k < cfg.K; ++k) x += zeta.col(k) * scenario1_phi(k + 1, t_raw(l));
            if (cfg.sigma_case == Scenario1Config::SigmaCase::identity) {
                for (int j = 0; j < cfg.p; ++j) x(j) += rng.normal();
            } else {
                // Sigma = 0.3 J + 0.7 I: one shared deviate plus white noise.
                const double g = rng.normal();
                const double shared = std::sqrt(0.3), fresh = std::sqrt(0.7);
                for (int j = 0; j < cfg.p; ++j) x(j) += shared * g + fresh * rng.normal();
            }
            rec.values.row(l) = x.transpose();
        }
        ds.subjects.push_back(std::move(rec));
    }
    return ds;
}

namespace detail {

/// Loadings for scenario 2: B = sqrt(p) Q from the QR factor of K'(top-q
/// eigenvectors of KK'), columns sign-fixed.
inline Eigen::MatrixXd scenario2_loadings(const Scenario2Config& cfg, std::uint64_t stream_tag) {
    Eigen::MatrixXd kmat(cfg.n, cfg.p);
    for (int i = 0; i < cfg.n; ++i) {
        Rng rng(derive_seed(cfg.seed, stream_tag ^ 0x4b4dULL, static_cast<std::uint64_t>(i)));
        kmat.row(i) = draw_ar1(rng, cfg.p).transpose();
    }
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(cfg.n, cfg.n);
    outer.selfadjointView<Eigen::Lower>().rankUpdate(kmat, 1.0);
    outer = Eigen::MatrixXd(outer.selfadjointView<Eigen::Lower>());
    const EigenResult top = top_eigen(outer, cfg.q);

    const Eigen::MatrixXd b_n = kmat.transpose() * top.vectors;  // p x q
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(b_n);
    Eigen::MatrixXd q_thin =
        qr.householderQ() * Eigen::MatrixXd::Identity(cfg.p, cfg.q);
    fix_column_signs(q_thin);
    return std::sqrt(static_cast<double>(cfg.p)) * q_thin;
}

/// Scores for scenario 2: raw draws xi*_ik ~ N(0, Kq/k) rotated onto the
/// top-Kq eigenbasis of their own Gram so zeta'zeta is exactly diagonal
/// with decreasing entries.
inline Eigen::MatrixXd scenario2_scores(const Scenario2Config& cfg, std::uint64_t stream_tag) {
    const int kq = cfg.K * cfg.q;
    Eigen::MatrixXd raw(cfg.n, kq);
    for (int i = 0; i < cfg.n; ++i) {
        Rng rng(derive_seed(cfg.seed, stream_tag ^ 0x5a31ULL, static_cast<std::uint64_t>(i)));
        for (int c = 0; c < kq; ++c)
            raw(i, c) = rng.normal() * std::sqrt(static_cast<double>(kq) / (c + 1));
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cfg.n, cfg.n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(raw, 1.0);
    gram = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());
    const EigenResult top = top_eigen(gram, kq);
    return top.vectors * top.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Observation block shared by the training and held-out scenario-2 sets.
inline void scenario2_fill_subjects(FunctionalDataset& ds, const Scenario2Config& cfg,
                                    const Eigen::MatrixXd& b, const Eigen::MatrixXd& zeta,
                                    std::uint64_t stream_tag) {
    ds.subjects.reserve(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) {
        Rng rng(derive_seed(cfg.seed, stream_tag ^ kStreamSubject, static_cast<std::uint64_t>(i)));
        const Eigen::VectorXd t_raw = detail::draw_times(rng, cfg.ni, kRawTimeSpan);

        SubjectRecord rec;
        rec.id = detail::subject_label(i);
        rec.times = t_raw / kRawTimeSpan;
        rec.values.resize(cfg.ni, cfg.p);
        for (int l = 0; l < cfg.ni; ++l) {
            Eigen::VectorXd h(cfg.q);
            for (int j = 0; j < cfg.q; ++j) {
                double acc = 0.0;
                for (int k = 0; k < cfg.K; ++k)
                    acc += zeta(i, j * cfg.K + k) * scenario2_phi(j + 1, k + 1, t_raw(l));
                h(j) = acc;
            }
            Eigen::VectorXd x = b * h;
            if (cfg.noise_sd > 0.0)
                for (int j = 0; j < cfg.p; ++j) x(j) += cfg.noise_sd * rng.normal();
            rec.values.row(l) = x.transpose();
        }
        ds.subjects.push_back(std::move(rec));
    }
}

}  // namespace detail

inline std::pair<FunctionalDataset, SimTruth> generate_scenario2(
    const Scenario2Config& cfg, std::uint64_t stream_tag = kStreamGlobal) {
    if (cfg.n < 1 || cfg.p < 1 || cfg.ni < 1)
        throw std::invalid_argument("generate_scenario2: n, p, ni must be >= 1");
    if (cfg.q < 1 || cfg.K < 1) throw std::invalid_argument("generate_scenario2: q, K must be >= 1");
    if (static_cast<long>(cfg.K) * cfg.q > cfg.n)
        throw std::invalid_argument("generate_scenario2: Kq must not exceed n (score construction rank)");
    if (cfg.q > cfg.p) throw std::invalid_argument("generate_scenario2: q must not exceed p");
    if (cfg.noise_sd < 0.0) throw std::invalid_argument("generate_scenario2: noise_sd must be >= 0");

    SimTruth truth;
    truth.q = cfg.q;
    truth.K = cfg.K;
    truth.sigma = cfg.noise_sd;
    truth.B0 = detail::scenario2_loadings(cfg, stream_tag);
    truth.zeta0 = detail::scenario2_scores(cfg, stream_tag);
    truth.phi = [](int j, int k, double s) { return scenario2_phi(j + 1, k + 1, s * kRawTimeSpan); };
    truth.has_phi = true;

    FunctionalDataset ds;
    ds.p = cfg.p;
    ds.time_map.offset = 0.0;
    ds.time_map.scale = 1.0 / kRawTimeSpan;
    detail::scenario2_fill_subjects(ds, cfg, truth.B0, truth.zeta0, stream_tag);
    return {std::move(ds), std::move(truth)};
}

/// Held-out set with the same population quantities (loadings and
/// eigenfunctions) as a generated training set: fresh scores, times and
/// noise. Returns the test truth as well (scores differ from training).
inline std::pair<FunctionalDataset, SimTruth> generate_scenario2_test_set(const Scenario2Config& cfg,
                                                                          const SimTruth& truth) {
    SimTruth test_truth = truth;
    test_truth.zeta0 = detail::scenario2_scores(cfg, kStreamTestSet);

    FunctionalDataset ds;
    ds.p = cfg.p;
    ds.time_map.offset = 0.0;
    ds.time_map.scale = 1.0 / kRawTimeSpan;
    detail::scenario2_fill_subjects(ds, cfg, truth.B0, test_truth.zeta0, kStreamTestSet);
    return {std::move(ds), std::move(test_truth)};
}

/// Noiseless data whose eigenfunctions live exactly in the given spline
/// basis, on one shared dense grid. With u = 0 the closed-form estimator
/// recovers every component to machine precision; used by the exact-recovery
/// checks.
inline std::pair<FunctionalDataset, SimTruth> generate_spline_truth(int n, int p, int q, int K,
                                                                    const OrthoSplineBasis& basis,
                                                                    int ni, std::uint64_t seed) {
    const int tau = basis.tau_n();
    if (K > tau) throw std::invalid_argument("generate_spline_truth: K must not exceed tau_n");
    if (static_cast<long>(K) * q > n)
        throw std::invalid_argument("generate_spline_truth: Kq must not exceed n");
    if (ni < tau) throw std::invalid_argument("generate_spline_truth: need ni >= tau_n");

    Scenario2Config cfg;
    cfg.n = n;
    cfg.p = p;
    cfg.q = q;
    cfg.K = K;
    cfg.seed = seed;

    SimTruth truth;
    truth.q = q;
    truth.K = K;
    truth.sigma = 0.0;
    truth.B0 = detail::scenario2_loadings(cfg, kStreamGlobal);
    Eigen::MatrixXd zeta = detail::scenario2_scores(cfg, kStreamGlobal);

    // Per-factor spline coefficients with orthonormal rows scaled sqrt(tau),
    // then the phi(0) > 0 sign rule applied jointly with the score columns.
    const QuadratureRule rule = basis_quadrature(basis.raw, basis.quadrature_points);
    const Eigen::VectorXd m0 = basis.evaluate(0.0);
    std::vector<Eigen::MatrixXd> thetas;
    thetas.reserve(static_cast<std::size_t>(q));
    Rng theta_rng(derive_seed(seed, 0x54485441ULL));
    for (int j = 0; j < q; ++j) {
        Eigen::MatrixXd g(tau, K);
        for (int c = 0; c < K; ++c)
            for (int r = 0; r < tau; ++r) g(r, c) = theta_rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd ortho = qr.householderQ() * Eigen::MatrixXd::Identity(tau, K);
        Eigen::MatrixXd theta = std::sqrt(static_cast<double>(tau)) * ortho.transpose();  // K x tau
        for (int k = 0; k < K; ++k) {
            double v = theta.row(k).dot(m0);
            if (std::abs(v) < 1e-8) {
                for (double node : rule.nodes()) {
                    const double cand = theta.row(k).dot(basis.evaluate(node));
                    if (std::abs(cand) > 1e-8) {
                        v = cand;
                        break;
                    }
                }
            }
            if (v < 0.0) {
                theta.row(k) = -theta.row(k);
                zeta.col(j * K + k) = -zeta.col(j * K + k);
            }
        }
        thetas.push_back(std::move(theta));
    }
    truth.zeta0 = zeta;
    truth.phi = [thetas, basis](int j, int k, double s) {
        return thetas[static_cast<std::size_t>(j)].row(k).dot(basis.evaluate(s));
    };
    truth.has_phi = true;

    FunctionalDataset ds;
    ds.p = p;
    ds.time_map = TimeMap{0.0, 1.0};  // unit domain directly
    ds.subjects.reserve(static_cast<std::size_t>(n));
    Eigen::VectorXd grid(ni);
    for (int l = 0; l < ni; ++l) grid(l) = (l + 0.5) / ni;  // shared dense grid
    Eigen::MatrixXd phi_vals(ni, q * K);
    for (int l = 0; l < ni; ++l)
        for (int j = 0; j < q; ++j)
            for (int k = 0; k < K; ++k)
                phi_vals(l, j * K + k) = truth.phi(j, k, grid(l));
    for (int i = 0; i < n; ++i) {
        SubjectRecord rec;
        rec.id = detail::subject_label(i);
        rec.times = grid;
        rec.values.resize(ni, p);
        for (int l = 0; l < ni; ++l) {
            Eigen::VectorXd h(q);
            for (int j = 0; j < q; ++j)
                h(j) = phi_vals.row(l).segment(j * K, K).dot(zeta.row(i).segment(j * K, K));
            rec.values.row(l) = (truth.B0 * h).transpose();
        }
        ds.subjects.push_back(std::move(rec));
    }
    return {std::move(ds), std::move(truth)};
}

/// One line of the metrics CSV (schema shared by `evaluate` and
/// `replicate`): empty fields where a metric does not apply, plus a
/// trailing error column for failed replicates.
struct MetricsRow {
    int replicate = 0;
    std::uint64_t seed = 0;
    int n = 0;
    int p = 0;
    int q = 0;
    int K = 0;
    std::optional<double> rmse_l, rmse_f, rmse_e, pe;
    std::optional<double> fit_seconds;
    std::string error;

    static std::string csv_header() {
        return "replicate,seed,n,p,q,K,rmse_l,rmse_f,rmse_e,pe,fit_seconds,error";
    }

    std::string csv_line() const {
        auto opt = [](const std::optional<double>& v) {
            return v ? detail::format_double(*v) : std::string();
        };
        std::ostringstream line;
        line << replicate << ',' << seed << ',' << n << ',' << p << ',' << q << ',' << K << ','
             << opt(rmse_l) << ',' << opt(rmse_f) << ',' << opt(rmse_e) << ',' << opt(pe) << ','
             << opt(fit_seconds) << ',' << error;
        return line.str();
    }
};

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out << MetricsRow::csv_header() << '\n';
    for (const auto& row : rows) out << row.csv_line() << '\n';
    if (!out) throw std::runtime_error("write_metrics_csv: write failed for " + path);
}

/// Fit controls of a replicate run. fit_q / fit_K <= 0 means the 95%
/// explained-variance rules, with K reduced afterwards if needed so that
/// K*q <= n stays feasible.
struct ReplicateOptions {
    int fit_q = 0;
    int fit_K = 0;
    double threshold = 0.95;
    FitConfig fit_config;
    bool compute_pe = true;
    int threads = 1;
};

namespace detail {

inline std::pair<int, int> resolve_fit_size(const FunctionalDataset& centered,
                                            const ReplicateOptions& opts) {
    int q = opts.fit_q;
    int K = opts.fit_K;
    if (q <= 0 || K <= 0) {
        const SelectionReport rep = select_model(centered, opts.fit_config, opts.threshold);
        if (q <= 0) q = rep.q_chosen;
        if (K <= 0) K = rep.K_chosen;
        // Keep the fit preconditions feasible on misspecified data.
        if (static_cast<long>(q) * K > centered.n()) K = std::max(1, centered.n() / q);
    }
    return {q, K};
}

template <typename Work>
inline void parallel_for_replicates(int r_count, int threads, Work&& work) {
    if (threads <= 1) {
        for (int r = 0; r < r_count; ++r) work(r);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int used = std::min(threads, r_count);
    pool.reserve(static_cast<std::size_t>(used));
    for (int t = 0; t < used; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const int r = next.fetch_add(1);
                if (r >= r_count) return;
                work(r);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// R scenario-2 replicates: generate, fit, compare against the retained
/// truth, score a fresh held-out set. Replicate r uses seed base_seed + r;
/// rows come back in replicate order regardless of thread count.
inline std::vector<MetricsRow> run_replicates_scenario2(Scenario2Config cfg, int r_count,
                                                        std::uint64_t base_seed,
                                                        const ReplicateOptions& opts) {
    if (r_count < 1) throw std::invalid_argument("run_replicates: R must be >= 1");
    std::vector<MetricsRow> rows(static_cast<std::size_t>(r_count));
    detail::parallel_for_replicates(r_count, opts.threads, [&](int r) {
        MetricsRow& row = rows[static_cast<std::size_t>(r)];
        row.replicate = r + 1;
        row.seed = base_seed + static_cast<std::uint64_t>(r) + 1;
        row.n = cfg.n;
        row.p = cfg.p;
        try {
            Scenario2Config rep_cfg = cfg;
            rep_cfg.seed = row.seed;
            auto [ds, truth] = generate_scenario2(rep_cfg);
            const FunctionalDataset centered_ds = center(ds);
            auto [q, K] = detail::resolve_fit_size(centered_ds, opts);
            row.q = q;
            row.K = K;

            FitConfig fc = opts.fit_config;
            fc.seed = row.seed;
            const auto t0 = std::chrono::steady_clock::now();
            const FaFpcaModel model = fit(centered_ds, q, K, fc);
            const auto t1 = std::chrono::steady_clock::now();
            row.fit_seconds = std::chrono::duration<double>(t1 - t0).count();

            row.rmse_l = rmse_loadings(align_signs(model.loadings.B, truth.B0), truth.B0);
            if (q == truth.q && K == truth.K) {
                row.rmse_f =
                    rmse_factors(align_signs(model.stacked_scores(), truth.zeta0), truth.zeta0);
                row.rmse_e = rmse_eigenfunctions(model, truth, fc.n_quad);
            }
            if (opts.compute_pe) {
                auto [test_ds, test_truth] = generate_scenario2_test_set(rep_cfg, truth);
                row.pe = prediction_error(model, test_ds);
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });
    return rows;
}

/// R scenario-1 replicates: prediction error only (the generator has no
/// FaFPCA-form truth), with q and K selected per replicate unless pinned.
inline std::vector<MetricsRow> run_replicates_scenario1(Scenario1Config cfg, int r_count,
                                                        std::uint64_t base_seed,
                                                        const ReplicateOptions& opts) {
    if (r_count < 1) throw std::invalid_argument("run_replicates: R must be >= 1");
    std::vector<MetricsRow> rows(static_cast<std::size_t>(r_count));
    detail::parallel_for_replicates(r_count, opts.threads, [&](int r) {
        MetricsRow& row = rows[static_cast<std::size_t>(r)];
        row.replicate = r + 1;
        row.seed = base_seed + static_cast<std::uint64_t>(r) + 1;
        row.n = cfg.n;
        row.p = cfg.p;
        try {
            Scenario1Config rep_cfg = cfg;
            rep_cfg.seed = row.seed;
            const FunctionalDataset ds = generate_scenario1(rep_cfg);
            const FunctionalDataset centered_ds = center(ds);
            auto [q, K] = detail::resolve_fit_size(centered_ds, opts);
            row.q = q;
            row.K = K;

            FitConfig fc = opts.fit_config;
            fc.seed = row.seed;
            const auto t0 = std::chrono::steady_clock::now();
            const FaFpcaModel model = fit(centered_ds, q, K, fc);
            const auto t1 = std::chrono::steady_clock::now();
            row.fit_seconds = std::chrono::duration<double>(t1 - t0).count();

            if (opts.compute_pe) {
                const FunctionalDataset test_ds = generate_scenario1(rep_cfg, kStreamTestSet);
                row.pe = prediction_error(model, test_ds);
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });
    return rows;
}

}  // namespace fafpca
