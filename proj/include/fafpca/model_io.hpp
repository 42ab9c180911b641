#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fafpca/metrics.hpp"
#include "fafpca/model.hpp"
#include "fafpca/simulate.hpp"

namespace fafpca {

#ifndef FAFPCA_VERSION
#define FAFPCA_VERSION "0.0.0"
#endif

inline const char* code_version() { return FAFPCA_VERSION; }

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    // Row-major flat array; JSON numbers round-trip binary64 exactly.
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& arr, Eigen::Index rows,
                                        Eigen::Index cols, const std::string& what) {
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols)
        throw std::runtime_error("load_model_json: field '" + what + "' has wrong length");
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = arr[static_cast<std::size_t>(i++)].get<double>();
    return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& arr, const std::string& what) {
    if (!arr.is_array()) throw std::runtime_error("load_model_json: field '" + what + "' must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

inline void write_json_file(const nlohmann::json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json doc;
    in >> doc;
    return doc;
}

}  // namespace detail

inline void save_model_json(const FaFpcaModel& model, const std::string& path) {
    nlohmann::json doc;
    doc["version"] = code_version();
    doc["p"] = model.p();
    doc["q"] = model.q;
    doc["K"] = model.K;
    doc["tau_n"] = model.tau_n();
    doc["degree"] = model.basis.degree();
    doc["knots"] = model.basis.raw.knots;
    doc["transform"] = detail::matrix_to_json(model.basis.transform);
    doc["B"] = detail::matrix_to_json(model.loadings.B);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& block : model.blocks) {
        nlohmann::json b;
        b["theta"] = detail::matrix_to_json(block.theta);
        b["eigvals"] = detail::vector_to_json(block.eigvals);
        blocks.push_back(std::move(b));
    }
    doc["blocks"] = std::move(blocks);
    doc["ridge"] = model.ridge;
    doc["time_map"] = {{"offset", model.time_map.offset}, {"scale", model.time_map.scale}};
    doc["centers"] = detail::vector_to_json(model.centers);
    doc["seed"] = model.config.seed;
    detail::write_json_file(doc, path);
}

inline FaFpcaModel load_model_json(const std::string& path) {
    const nlohmann::json doc = detail::read_json_file(path);
    FaFpcaModel model;
    const int p = doc.at("p").get<int>();
    model.q = doc.at("q").get<int>();
    model.K = doc.at("K").get<int>();
    const int tau = doc.at("tau_n").get<int>();
    const int degree = doc.at("degree").get<int>();

    RawSplineBasis raw;
    raw.degree = degree;
    raw.tau_n = tau;
    raw.interior_knot_count = tau - degree - 1;
    raw.knots = doc.at("knots").get<std::vector<double>>();
    if (static_cast<int>(raw.knots.size()) != tau + degree + 1)
        throw std::runtime_error("load_model_json: knot vector length inconsistent with tau_n");
    model.basis.raw = std::move(raw);
    model.basis.transform = detail::matrix_from_json(doc.at("transform"), tau, tau, "transform");

    model.loadings.B = detail::matrix_from_json(doc.at("B"), p, model.q, "B");
    for (const auto& b : doc.at("blocks")) {
        FactorBlock block;
        block.theta = detail::matrix_from_json(b.at("theta"), model.K, tau, "theta");
        block.eigvals = detail::vector_from_json(b.at("eigvals"), "eigvals");
        block.scores.resize(0, model.K);
        model.blocks.push_back(std::move(block));
    }
    if (static_cast<int>(model.blocks.size()) != model.q)
        throw std::runtime_error("load_model_json: expected q factor blocks");
    model.ridge = doc.at("ridge").get<double>();
    model.time_map.offset = doc.at("time_map").at("offset").get<double>();
    model.time_map.scale = doc.at("time_map").at("scale").get<double>();
    model.centers = detail::vector_from_json(doc.at("centers"), "centers");
    if (model.centers.size() != p)
        throw std::runtime_error("load_model_json: centers length must equal p");
    model.config.degree = degree;
    model.config.interior_knots = model.basis.raw.interior_knot_count;
    model.config.ridge = model.ridge;
    model.config.seed = doc.at("seed").get<std::uint64_t>();
    return model;
}

/// Scenario-2 truth file: loadings, scores and the closed-form
/// eigenfunction family (reconstructed from q and K on load).
inline void save_truth_json(const SimTruth& truth, const std::string& path) {
    nlohmann::json doc;
    doc["version"] = code_version();
    doc["scenario"] = 2;
    doc["q"] = truth.q;
    doc["K"] = truth.K;
    doc["p"] = static_cast<int>(truth.B0.rows());
    doc["n"] = static_cast<int>(truth.zeta0.rows());
    doc["sigma"] = truth.sigma;
    doc["B0"] = detail::matrix_to_json(truth.B0);
    doc["zeta0"] = detail::matrix_to_json(truth.zeta0);
    detail::write_json_file(doc, path);
}

inline SimTruth load_truth_json(const std::string& path) {
    const nlohmann::json doc = detail::read_json_file(path);
    if (doc.at("scenario").get<int>() != 2)
        throw std::runtime_error("load_truth_json: only scenario-2 truth files are supported");
    SimTruth truth;
    truth.q = doc.at("q").get<int>();
    truth.K = doc.at("K").get<int>();
    truth.sigma = doc.at("sigma").get<double>();
    const int p = doc.at("p").get<int>();
    const int n = doc.at("n").get<int>();
    truth.B0 = detail::matrix_from_json(doc.at("B0"), p, truth.q, "B0");
    truth.zeta0 = detail::matrix_from_json(doc.at("zeta0"), n, truth.K * truth.q, "zeta0");
    truth.phi = [](int j, int k, double s) { return scenario2_phi(j + 1, k + 1, s * kRawTimeSpan); };
    truth.has_phi = true;
    return truth;
}

}  // namespace fafpca
