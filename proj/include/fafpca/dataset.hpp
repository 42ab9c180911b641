#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fafpca/rng.hpp"

namespace fafpca {

/// Affine map from raw time units onto [0, 1].
struct TimeMap {
    double offset = 0.0;
    double scale = 1.0;

    double to_unit(double t) const { return (t - offset) * scale; }
    double to_raw(double s) const { return s / scale + offset; }
};

/// One subject: strictly increasing times on [0, 1] and an n_i x p value
/// matrix, row l holding the observation at times[l].
struct SubjectRecord {
    std::string id;
    Eigen::VectorXd times;
    Eigen::MatrixXd values;

    int n_obs() const { return static_cast<int>(times.size()); }
};

/// Irregularly observed p-dimensional functional data for n subjects.
struct FunctionalDataset {
    int p = 0;
    std::vector<SubjectRecord> subjects;
    TimeMap time_map;
    bool centered = false;
    Eigen::VectorXd centers;  // per-variable means removed (empty if none)

    int n() const { return static_cast<int>(subjects.size()); }

    int min_obs() const {
        int m = 0;
        for (const auto& s : subjects) m = (m == 0) ? s.n_obs() : std::min(m, s.n_obs());
        return m;
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

inline bool parse_index(const std::string& s, long& out) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e && out >= 0;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

/// Read a long-format CSV with header `subject,time,var,value`.
///
/// Variables are 0-based integer indices when every `var` field parses as a
/// nonnegative integer, otherwise string labels mapped to 0..p-1 in order of
/// first appearance. Times are rescaled to [0,1] with the global min/max.
inline FunctionalDataset ingest_long_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest_long_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("ingest_long_csv: " + path + " is empty (missing header)");
    {
        auto header = detail::split_csv_line(line);
        if (header != std::vector<std::string>{"subject", "time", "var", "value"})
            throw std::runtime_error("ingest_long_csv: header must be exactly subject,time,var,value");
    }

    struct Row {
        std::string subject;
        double time;
        std::string var;
        double value;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 4)
            throw std::runtime_error("ingest_long_csv: line " + std::to_string(line_no) +
                                     ": expected 4 fields, got " + std::to_string(fields.size()));
        Row r;
        r.subject = fields[0];
        r.var = fields[2];
        if (!detail::parse_double(fields[1], r.time))
            throw std::runtime_error("ingest_long_csv: line " + std::to_string(line_no) +
                                     ": bad time value '" + fields[1] + "'");
        if (!detail::parse_double(fields[3], r.value))
            throw std::runtime_error("ingest_long_csv: line " + std::to_string(line_no) +
                                     ": bad value '" + fields[3] + "'");
        if (!std::isfinite(r.time) || !std::isfinite(r.value))
            throw std::runtime_error("ingest_long_csv: line " + std::to_string(line_no) +
                                     ": non-finite entry");
        rows.push_back(std::move(r));
    }

    FunctionalDataset ds;
    if (rows.empty()) return ds;  // header-only file: empty dataset

    // Variable index assignment: integer mode if every label is an integer.
    bool integer_mode = true;
    for (const auto& r : rows) {
        long idx;
        if (!detail::parse_index(r.var, idx)) {
            integer_mode = false;
            break;
        }
    }
    std::map<std::string, int> var_index;
    int p = 0;
    if (integer_mode) {
        long max_idx = 0;
        for (const auto& r : rows) {
            long idx;
            detail::parse_index(r.var, idx);
            max_idx = std::max(max_idx, idx);
        }
        p = static_cast<int>(max_idx) + 1;
    } else {
        for (const auto& r : rows)
            if (var_index.emplace(r.var, static_cast<int>(var_index.size())).second) continue;
        p = static_cast<int>(var_index.size());
    }
    ds.p = p;

    double t_min = rows.front().time, t_max = rows.front().time;
    for (const auto& r : rows) {
        t_min = std::min(t_min, r.time);
        t_max = std::max(t_max, r.time);
    }
    ds.time_map.offset = t_min;
    ds.time_map.scale = (t_max > t_min) ? 1.0 / (t_max - t_min) : 1.0;

    // Group by subject (first-appearance order), then by time.
    std::map<std::string, int> subj_index;
    struct TimeSlot {
        Eigen::VectorXd vals;
        std::vector<bool> seen;
    };
    std::vector<std::map<double, TimeSlot>> grids;
    std::vector<std::string> subj_ids;
    for (const auto& r : rows) {
        auto [it, inserted] = subj_index.emplace(r.subject, static_cast<int>(subj_ids.size()));
        if (inserted) {
            subj_ids.push_back(r.subject);
            grids.emplace_back();
        }
        auto& grid = grids[static_cast<std::size_t>(it->second)];
        auto slot = grid.find(r.time);
        if (slot == grid.end()) {
            TimeSlot fresh;
            fresh.vals = Eigen::VectorXd::Zero(p);
            fresh.seen.assign(static_cast<std::size_t>(p), false);
            slot = grid.emplace(r.time, std::move(fresh)).first;
        }
        int v;
        if (integer_mode) {
            long idx;
            detail::parse_index(r.var, idx);
            v = static_cast<int>(idx);
        } else {
            v = var_index.at(r.var);
        }
        if (slot->second.seen[static_cast<std::size_t>(v)])
            throw std::runtime_error("ingest_long_csv: duplicate row for (subject=" + r.subject +
                                     ", time=" + detail::format_double(r.time) + ", var=" + r.var + ")");
        slot->second.seen[static_cast<std::size_t>(v)] = true;
        slot->second.vals(v) = r.value;
    }

    for (std::size_t s = 0; s < subj_ids.size(); ++s) {
        SubjectRecord rec;
        rec.id = subj_ids[s];
        rec.times.resize(static_cast<Eigen::Index>(grids[s].size()));
        rec.values.resize(static_cast<Eigen::Index>(grids[s].size()), p);
        Eigen::Index l = 0;
        for (const auto& [t, slot] : grids[s]) {
            for (int v = 0; v < p; ++v) {
                if (!slot.seen[static_cast<std::size_t>(v)])
                    throw std::runtime_error("ingest_long_csv: subject " + rec.id + " at time " +
                                             detail::format_double(t) + " covers fewer than p=" +
                                             std::to_string(p) + " variables (first missing var index " +
                                             std::to_string(v) + ")");
            }
            rec.times(l) = ds.time_map.to_unit(t);
            rec.values.row(l) = slot.vals.transpose();
            ++l;
        }
        ds.subjects.push_back(std::move(rec));
    }
    return ds;
}

/// Write a dataset back to the long CSV format, times in original units.
inline void export_long_csv(const FunctionalDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_long_csv: cannot open " + path + " for writing");
    out << "subject,time,var,value\n";
    for (const auto& subj : ds.subjects) {
        for (Eigen::Index l = 0; l < subj.times.size(); ++l) {
            const std::string t = detail::format_double(ds.time_map.to_raw(subj.times(l)));
            for (int v = 0; v < ds.p; ++v) {
                out << subj.id << ',' << t << ',' << v << ','
                    << detail::format_double(subj.values(l, v)) << '\n';
            }
        }
    }
    if (!out) throw std::runtime_error("export_long_csv: write to " + path + " failed");
}

/// Per-variable pooled mean with each observation weighted 1/n_i, matching
/// the weighting of the loading estimator's moment matrix.
inline Eigen::VectorXd pooled_mean(const FunctionalDataset& ds) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ds.p);
    if (ds.n() == 0) return mean;
    for (const auto& subj : ds.subjects)
        mean += subj.values.colwise().sum().transpose() / subj.n_obs();
    return mean / ds.n();
}

/// Subtract the weighted pooled mean from every observation. The removed
/// means are stored on the returned dataset for prediction-time reuse.
inline FunctionalDataset center(const FunctionalDataset& ds) {
    if (ds.centered) throw std::invalid_argument("center: dataset is already centered");
    FunctionalDataset out = ds;
    const Eigen::VectorXd mean = pooled_mean(ds);
    for (auto& subj : out.subjects) subj.values.rowwise() -= mean.transpose();
    out.centered = true;
    out.centers = mean;
    return out;
}

/// Deterministic subject-level train/test split.
///
/// Subjects are permuted by the seed; the train part takes the first
/// round(f * n) subjects for f >= 1/2 and the last round(f * n) otherwise, so
/// split(f, seed) and split(1-f, seed) partition the subjects into
/// complementary sets. Both parts share the parent's time map and centering.
inline std::pair<FunctionalDataset, FunctionalDataset> split(const FunctionalDataset& ds,
                                                             double train_fraction,
                                                             std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train_fraction must be in (0, 1)");
    const int n = ds.n();
    const int k = static_cast<int>(std::llround(train_fraction * n));
    if (k < 1 || n - k < 1)
        throw std::invalid_argument("split: both parts must contain at least one subject");

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, kStreamSplit));
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }

    std::vector<bool> in_train(static_cast<std::size_t>(n), false);
    if (train_fraction >= 0.5) {
        for (int i = 0; i < k; ++i) in_train[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;
    } else {
        for (int i = n - k; i < n; ++i) in_train[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;
    }

    FunctionalDataset train, test;
    train.p = test.p = ds.p;
    train.time_map = test.time_map = ds.time_map;
    train.centered = test.centered = ds.centered;
    train.centers = test.centers = ds.centers;
    for (int i = 0; i < n; ++i) {
        (in_train[static_cast<std::size_t>(i)] ? train : test)
            .subjects.push_back(ds.subjects[static_cast<std::size_t>(i)]);
    }
    return {std::move(train), std::move(test)};
}

/// FNV-1a over the numeric content; used to detect duplicated datasets in
/// replicate runs.
inline std::uint64_t dataset_hash(const FunctionalDataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(&ds.p, sizeof(ds.p));
    for (const auto& subj : ds.subjects) {
        mix(subj.id.data(), subj.id.size());
        mix(subj.times.data(), sizeof(double) * static_cast<std::size_t>(subj.times.size()));
        mix(subj.values.data(), sizeof(double) * static_cast<std::size_t>(subj.values.size()));
    }
    return h;
}

}  // namespace fafpca
