#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "contour_context/dataset.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

struct EvalConfig {
    double l3 = 5.0;            // meters
    int exclusion_window = 150; // frames
    std::vector<double> threshold_sweep;  // empty: every observed score
    double max_tilt_deg = 3.0;

    void validate() const {
        if (!(l3 > 0.0)) throw std::invalid_argument("EvalConfig: l3 must be positive");
        if (exclusion_window < 0) throw std::invalid_argument("EvalConfig: exclusion_window must be >= 0");
    }
};

struct PredictionEntry {
    std::int64_t query_id = 0;
    std::optional<std::int64_t> candidate_id;
    double score = 0.0;
    Se2Transform pose;  // meters, candidate frame -> query frame
};

/// One entry per evaluated query, in processing order.
struct PredictionLog {
    std::vector<PredictionEntry> entries;
};

/// Sensor poses addressed by scan id; an id without a pose is missing GT.
struct GroundTruth {
    std::vector<std::optional<Pose3>> poses;

    GroundTruth() = default;
    explicit GroundTruth(const std::vector<Pose3>& p) : poses(p.begin(), p.end()) {}

    bool has(std::int64_t id) const {
        return id >= 0 && static_cast<std::size_t>(id) < poses.size() && poses[static_cast<std::size_t>(id)];
    }
    const Pose3& at(std::int64_t id) const { return *poses[static_cast<std::size_t>(id)]; }
    double distance(std::int64_t a, std::int64_t b) const {
        return (at(a).topRightCorner<3, 1>() - at(b).topRightCorner<3, 1>()).norm();
    }
};

enum class Outcome { TP, FP, FN, TN, Skipped };

/*
 * For every entry, whether some earlier logged scan outside the exclusion
 * window lies within l3. Entries without GT get false (they are skipped).
 */
inline std::vector<char> valid_positive_flags(const PredictionLog& log, const GroundTruth& gt, const EvalConfig& cfg) {
    std::vector<std::int64_t> ids;
    for (const auto& e : log.entries)
        if (gt.has(e.query_id)) ids.push_back(e.query_id);
    std::sort(ids.begin(), ids.end());
    std::vector<char> flags(log.entries.size(), 0);
    for (std::size_t k = 0; k < log.entries.size(); ++k) {
        const auto q = log.entries[k].query_id;
        if (!gt.has(q)) continue;
        for (auto j : ids) {
            if (q - j <= cfg.exclusion_window) break;
            if (gt.distance(q, j) < cfg.l3) {
                flags[k] = 1;
                break;
            }
        }
    }
    return flags;
}

inline Outcome classify(const PredictionEntry& e, bool has_valid_positive, const GroundTruth& gt, const EvalConfig& cfg,
                        double threshold) {
    if (!gt.has(e.query_id)) return Outcome::Skipped;
    const bool positive = e.candidate_id && e.score >= threshold;
    if (positive) {
        if (!gt.has(*e.candidate_id)) return Outcome::Skipped;
        return gt.distance(e.query_id, *e.candidate_id) < cfg.l3 ? Outcome::TP : Outcome::FP;
    }
    return has_valid_positive ? Outcome::FN : Outcome::TN;
}

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0, skipped = 0;
    std::size_t total() const { return tp + fp + fn + tn + skipped; }
};

inline ConfusionCounts count_outcomes(const PredictionLog& log, const std::vector<char>& positives,
                                      const GroundTruth& gt, const EvalConfig& cfg, double threshold) {
    ConfusionCounts c;
    for (std::size_t k = 0; k < log.entries.size(); ++k) {
        switch (classify(log.entries[k], positives[k] != 0, gt, cfg, threshold)) {
            case Outcome::TP: ++c.tp; break;
            case Outcome::FP: ++c.fp; break;
            case Outcome::FN: ++c.fn; break;
            case Outcome::TN: ++c.tn; break;
            case Outcome::Skipped: ++c.skipped; break;
        }
    }
    return c;
}

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;
};

struct PrCurve {
    std::vector<PrPoint> points;  // ascending threshold
    double max_f1 = 0.0;
    std::optional<double> best_threshold;
};

inline PrCurve pr_curve(const PredictionLog& log, const GroundTruth& gt, const EvalConfig& cfg) {
    if (log.entries.empty()) throw std::invalid_argument("pr_curve: empty prediction log");
    const auto positives = valid_positive_flags(log, gt, cfg);
    std::vector<double> thresholds = cfg.threshold_sweep;
    if (thresholds.empty()) {
        std::set<double> seen;
        for (const auto& e : log.entries)
            if (e.candidate_id) seen.insert(e.score);
        thresholds.assign(seen.begin(), seen.end());
    }
    std::sort(thresholds.begin(), thresholds.end());
    PrCurve curve;
    for (double th : thresholds) {
        const ConfusionCounts c = count_outcomes(log, positives, gt, cfg, th);
        if (c.tp + c.fp == 0 || c.tp + c.fn == 0) continue;
        PrPoint p{th, static_cast<double>(c.tp) / (c.tp + c.fp), static_cast<double>(c.tp) / (c.tp + c.fn), 0.0, c};
        p.f1 = p.precision + p.recall > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
        if (!curve.best_threshold || p.f1 > curve.max_f1) {
            curve.max_f1 = p.f1;
            curve.best_threshold = th;
        }
        curve.points.push_back(p);
    }
    return curve;
}

/// GT relative pose (candidate -> query) projected onto the plane.
struct PlanarGt {
    Se2Transform pose;
    double tilt_deg = 0.0;
};

inline PlanarGt planar_relative_pose(const GroundTruth& gt, std::int64_t query, std::int64_t cand) {
    const Pose3 rel = rigid_inverse(gt.at(query)) * gt.at(cand);
    const Mat3 r = rel.topLeftCorner<3, 3>();
    PlanarGt out;
    out.pose = Se2Transform(rel(0, 3), rel(1, 3), std::atan2(r(1, 0), r(0, 0)));
    out.tilt_deg = rad2deg(std::acos(std::clamp(r(2, 2), -1.0, 1.0)));
    return out;
}

struct PoseError {
    std::int64_t query_id = 0;
    double trans_err = 0.0;  // meters
    double rot_err = 0.0;    // degrees
    bool tilt_flagged = false;
};

inline PoseError pose_error(const PredictionEntry& e, const GroundTruth& gt, const EvalConfig& cfg) {
    const PlanarGt g = planar_relative_pose(gt, e.query_id, *e.candidate_id);
    return {e.query_id, (e.pose.t - g.pose.t).norm(), rad2deg(std::abs(wrap_angle(e.pose.theta - g.pose.theta))),
            g.tilt_deg > cfg.max_tilt_deg};
}

struct MpeStats {
    std::size_t tp_count = 0;
    double mean_rot_deg = 0.0;
    double rmse_rot_deg = 0.0;
    double mean_trans_m = 0.0;
    double rmse_trans_m = 0.0;
    std::size_t tilt_flagged = 0;
    bool empty() const { return tp_count == 0; }
};

inline std::vector<PoseError> outcome_errors(const PredictionLog& log, const GroundTruth& gt, const EvalConfig& cfg,
                                             double threshold, Outcome which) {
    const auto positives = valid_positive_flags(log, gt, cfg);
    std::vector<PoseError> out;
    for (std::size_t k = 0; k < log.entries.size(); ++k)
        if (classify(log.entries[k], positives[k] != 0, gt, cfg, threshold) == which)
            out.push_back(pose_error(log.entries[k], gt, cfg));
    return out;
}

inline MpeStats mpe_stats(const PredictionLog& log, const GroundTruth& gt, double threshold, const EvalConfig& cfg = {}) {
    MpeStats s;
    const auto errs = outcome_errors(log, gt, cfg, threshold, Outcome::TP);
    s.tp_count = errs.size();
    if (errs.empty()) return s;
    for (const auto& e : errs) {
        s.mean_rot_deg += e.rot_err;
        s.rmse_rot_deg += e.rot_err * e.rot_err;
        s.mean_trans_m += e.trans_err;
        s.rmse_trans_m += e.trans_err * e.trans_err;
        s.tilt_flagged += e.tilt_flagged ? 1 : 0;
    }
    const double n = static_cast<double>(errs.size());
    s.mean_rot_deg /= n;
    s.mean_trans_m /= n;
    s.rmse_rot_deg = std::sqrt(s.rmse_rot_deg / n);
    s.rmse_trans_m = std::sqrt(s.rmse_trans_m / n);
    return s;
}

struct FpDistribution {
    std::vector<PoseError> errors;
    std::size_t under_box = 0;
    std::optional<double> fraction_under_box;  // undefined with zero FPs
};

/// Metric errors of false positives and the share inside the (box_m, box_deg) rectangle.
inline FpDistribution fp_error_distribution(const PredictionLog& log, const GroundTruth& gt, double threshold,
                                            const EvalConfig& cfg = {}, double box_m = 1.0, double box_deg = 1.0) {
    FpDistribution d;
    d.errors = outcome_errors(log, gt, cfg, threshold, Outcome::FP);
    for (const auto& e : d.errors)
        if (e.trans_err < box_m && e.rot_err < box_deg) ++d.under_box;
    if (!d.errors.empty()) d.fraction_under_box = static_cast<double>(d.under_box) / d.errors.size();
    return d;
}

// ---- CSV files ----

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
        while (!cur.empty() && cur.front() == ' ') cur.erase(cur.begin());
        out.push_back(cur);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace detail

inline const char* kPredictionColumns[] = {"query_id", "candidate_id", "score", "tx_m", "ty_m", "yaw_rad"};

inline void write_predictions_csv(std::ostream& os, const PredictionLog& log) {
    os << "query_id,candidate_id,score,tx_m,ty_m,yaw_rad\n";
    for (const auto& e : log.entries) {
        os << e.query_id << ',';
        if (e.candidate_id) os << *e.candidate_id;
        os << ',' << detail::format_double(e.score) << ',' << detail::format_double(e.pose.t.x()) << ','
           << detail::format_double(e.pose.t.y()) << ',' << detail::format_double(e.pose.theta) << '\n';
    }
}

inline PredictionLog read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("predictions file is empty: " + path.string());
    const auto header = detail::split_csv(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : kPredictionColumns)
        if (!col.count(name)) throw DataError("predictions file " + path.string() + ": missing column '" + name + "'");

    PredictionLog log;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != header.size())
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " columns, got " + std::to_string(f.size()));
        auto num = [&](const char* name) {
            const std::string& s = f[col[name]];
            try {
                std::size_t used = 0;
                const double v = std::stod(s, &used);
                if (used == s.size()) return v;
            } catch (const std::exception&) {
            }
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value in column '" + name + "'");
        };
        PredictionEntry e;
        e.query_id = static_cast<std::int64_t>(num("query_id"));
        if (!f[col["candidate_id"]].empty()) e.candidate_id = static_cast<std::int64_t>(num("candidate_id"));
        e.score = num("score");
        e.pose = Se2Transform(num("tx_m"), num("ty_m"), num("yaw_rad"));
        log.entries.push_back(e);
    }
    return log;
}

/// Ids referenced by the log must all be covered by the pose file.
inline void validate_id_ranges(const PredictionLog& log, std::size_t pose_count) {
    for (const auto& e : log.entries) {
        if (e.query_id < 0 || static_cast<std::size_t>(e.query_id) >= pose_count)
            throw DataError("query id " + std::to_string(e.query_id) + " outside pose range [0, " +
                            std::to_string(pose_count) + ")");
        if (e.candidate_id && (*e.candidate_id < 0 || static_cast<std::size_t>(*e.candidate_id) >= pose_count))
            throw DataError("candidate id " + std::to_string(*e.candidate_id) + " outside pose range [0, " +
                            std::to_string(pose_count) + ")");
    }
}

struct TimingRow {
    std::int64_t query_id = 0;
    double gen_contours_ms = 0, retrieval_ms = 0, cac_check_ms = 0, l2_optim_ms = 0, update_db_ms = 0, total_ms = 0;
};

inline void write_timing_header(std::ostream& os) {
    os << "query_id,gen_contours_ms,retrieval_ms,cac_check_ms,l2_optim_ms,update_db_ms,total_ms\n";
}

inline void write_timing_row(std::ostream& os, const TimingRow& r) {
    os << r.query_id << ',' << detail::format_double(r.gen_contours_ms) << ',' << detail::format_double(r.retrieval_ms)
       << ',' << detail::format_double(r.cac_check_ms) << ',' << detail::format_double(r.l2_optim_ms) << ','
       << detail::format_double(r.update_db_ms) << ',' << detail::format_double(r.total_ms) << '\n';
}

inline TimingRow mean_timing(const std::vector<TimingRow>& rows) {
    TimingRow m;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.gen_contours_ms += r.gen_contours_ms;
        m.retrieval_ms += r.retrieval_ms;
        m.cac_check_ms += r.cac_check_ms;
        m.l2_optim_ms += r.l2_optim_ms;
        m.update_db_ms += r.update_db_ms;
        m.total_ms += r.total_ms;
    }
    const double n = static_cast<double>(rows.size());
    m.gen_contours_ms /= n;
    m.retrieval_ms /= n;
    m.cac_check_ms /= n;
    m.l2_optim_ms /= n;
    m.update_db_ms /= n;
    m.total_ms /= n;
    return m;
}

}  // namespace contour_context
