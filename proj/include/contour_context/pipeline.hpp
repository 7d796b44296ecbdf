#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <thread>
#include <unordered_map>
#include <vector>

#include "contour_context/bev.hpp"
#include "contour_context/constellation.hpp"
#include "contour_context/contour.hpp"
#include "contour_context/gmm.hpp"
#include "contour_context/retrieval.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

struct PipelineConfig {
    BevConfig bev;
    int min_pixels = 3;
    ConstellationConfig constellation;
    ThresholdSet thresholds;
    double rotation_window = deg2rad(10.0);
    int min_pairs = 4;
    GmmConfig gmm;
    OptimizeConfig optimizer;
    RetrievalConfig retrieval;
    int exclusion_window = 150;
    int max_retrieval_candidates = 200;
    int max_gmm_candidates = 10;
    bool parallel_candidates = false;

    void validate() const {
        bev.validate();
        const int n_levels = bev.num_levels();
        auto check_levels = [&](const std::vector<int>& lv, const char* what) {
            for (int l : lv)
                if (l < 1 || l > n_levels)
                    throw std::invalid_argument(std::string(what) + ": level outside the slice levels");
        };
        check_levels(constellation.levels, "constellation levels");
        check_levels(gmm.levels, "gmm levels");
        check_levels(retrieval.levels, "retrieval levels");
        if (min_pixels < 1) throw std::invalid_argument("min_pixels must be >= 1");
        if (exclusion_window < 0) throw std::invalid_argument("exclusion_window must be >= 0");
        if (retrieval.roi.segments < 1) throw std::invalid_argument("roi segments must be >= 1");
        if (retrieval.candidates_per_key < 1) throw std::invalid_argument("candidates_per_key must be >= 1");
    }
};

struct StageTimings {
    double gen_contours_ms = 0.0;
    double retrieval_ms = 0.0;
    double cac_check_ms = 0.0;
    double l2_optim_ms = 0.0;
    double update_db_ms = 0.0;

    double total_ms() const { return gen_contours_ms + retrieval_ms + cac_check_ms + l2_optim_ms + update_db_ms; }
};

/*
 * Everything the detector needs about one scan. keys[k] and constellations[k]
 * share the same anchor. The BEV image is dropped once the scan is archived.
 */
struct ScanDescriptor {
    std::int64_t scan_id = 0;
    std::optional<BevImage> bev;
    LevelContours contours;
    std::vector<Constellation> constellations;
    std::vector<RetrievalKey> keys;
    std::optional<Gmm25D> gmm;
    double gen_contours_ms = 0.0;

    std::optional<std::size_t> key_index(int level, int seq) const {
        for (std::size_t k = 0; k < keys.size(); ++k)
            if (keys[k].level == level && keys[k].seq == seq) return k;
        return std::nullopt;
    }
};

struct LoopResult {
    std::int64_t query_id = 0;
    std::int64_t candidate_id = 0;
    double score = 0.0;
    Se2Transform pose;        // meters; maps candidate-frame points into the query frame
    Se2Transform pose_pixels;
    StageTimings timings;
};

struct FunnelCounts {
    std::size_t retrieved = 0;       // distinct candidate scans after exclusion
    std::size_t cac_survivors = 0;
    std::size_t optimized = 0;
};

struct DetectionOutcome {
    std::optional<LoopResult> loop;
    StageTimings timings;
    FunnelCounts funnel;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

/// Runs fn(i) for i in [0, n), optionally across hardware threads.
template <typename Fn>
void for_each_index(std::size_t n, bool parallel, Fn&& fn) {
    const std::size_t workers = parallel ? std::min<std::size_t>(n, std::max(1U, std::thread::hardware_concurrency())) : 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
}

}  // namespace detail

inline ScanDescriptor preprocess(std::int64_t scan_id, const PointCloud& cloud, const PipelineConfig& cfg) {
    const auto t0 = detail::Clock::now();
    ScanDescriptor d;
    d.scan_id = scan_id;
    d.bev = rasterize(cloud, cfg.bev);
    d.contours = make_contours(*d.bev, cfg.min_pixels);
    d.keys = make_scan_keys(*d.bev, d.contours, cfg.retrieval);
    for (const auto& key : d.keys)
        d.constellations.push_back(
            build_constellation(d.contours[key.level - 1][key.seq], d.contours, cfg.constellation));
    try {
        d.gmm = build_gmm(d.contours, cfg.gmm.levels, cfg.gmm);
    } catch (const EmptyMixtureError&) {
        d.gmm.reset();
    }
    d.gen_contours_ms = detail::elapsed_ms(t0);
    return d;
}

/// Keeps what later queries need: contours referenced by constellations, keys and the mixture.
inline ScanDescriptor archive(ScanDescriptor d, const PipelineConfig& cfg) {
    d.bev.reset();
    const std::size_t keep = static_cast<std::size_t>(
        std::max(cfg.constellation.top_k, cfg.retrieval.anchors_per_level));
    for (auto& level : d.contours)
        if (level.size() > keep) level.resize(keep);
    return d;
}

/// Past scans available as loop candidates, addressed by scan id.
class ScanHistory {
  public:
    void add(ScanDescriptor d) {
        index_[d.scan_id] = scans_.size();
        scans_.push_back(std::move(d));
    }
    const ScanDescriptor* find(std::int64_t id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &scans_[it->second];
    }
    std::size_t size() const { return scans_.size(); }
    const std::vector<ScanDescriptor>& scans() const { return scans_; }

  private:
    std::vector<ScanDescriptor> scans_;
    std::unordered_map<std::int64_t, std::size_t> index_;
};

namespace detail {

struct AnchorPairing {
    std::size_t query_key;
    std::size_t cand_key;
};

struct Candidate {
    std::int64_t scan_id = 0;
    double best_distance = 0.0;
    std::vector<AnchorPairing> pairings;
    // Filled by the constellation stage.
    bool passed = false;
    std::size_t survivors = 0;
    Se2Transform init;
};

}  // namespace detail

/*
 * Retrieval, constellation checks and mixture optimization for one query scan.
 * The candidate with the highest optimized correlation is returned; thresholding
 * the score is left to the caller.
 */
inline DetectionOutcome detect_loop(const ScanDescriptor& desc, const LayeredDatabase& db, const ScanHistory& history,
                                    const PipelineConfig& cfg) {
    DetectionOutcome out;
    out.timings.gen_contours_ms = desc.gen_contours_ms;

    auto t0 = detail::Clock::now();
    std::map<std::int64_t, detail::Candidate> by_scan;
    for (std::size_t k = 0; k < desc.keys.size(); ++k) {
        const auto& key = desc.keys[k];
        for (const auto& hit : db.query(key, static_cast<std::size_t>(cfg.retrieval.candidates_per_key))) {
            if (hit.scan_id >= desc.scan_id || desc.scan_id - hit.scan_id <= cfg.exclusion_window) continue;
            const ScanDescriptor* cand = history.find(hit.scan_id);
            if (!cand) continue;
            const auto ck = cand->key_index(key.level, hit.seq);
            if (!ck) continue;
            auto [it, inserted] = by_scan.try_emplace(hit.scan_id);
            auto& c = it->second;
            if (inserted || hit.distance < c.best_distance) c.best_distance = hit.distance;
            c.scan_id = hit.scan_id;
            c.pairings.push_back({k, *ck});
        }
    }
    std::vector<detail::Candidate> cands;
    cands.reserve(by_scan.size());
    for (auto& [id, c] : by_scan) cands.push_back(std::move(c));
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        return a.best_distance < b.best_distance;
    });
    if (cands.size() > static_cast<std::size_t>(cfg.max_retrieval_candidates))
        cands.resize(static_cast<std::size_t>(cfg.max_retrieval_candidates));
    out.funnel.retrieved = cands.size();
    out.timings.retrieval_ms = detail::elapsed_ms(t0);

    t0 = detail::Clock::now();
    detail::for_each_index(cands.size(), cfg.parallel_candidates, [&](std::size_t ci) {
        auto& c = cands[ci];
        const ScanDescriptor& cand = *history.find(c.scan_id);
        for (const auto& pr : c.pairings) {
            const Constellation& qc = desc.constellations[pr.query_key];
            const Constellation& cc = cand.constellations[pr.cand_key];
            if (!check_anchor_sim(qc.anchor, cc.anchor, cfg.thresholds)) continue;
            const auto pairs = pair_by_distance(qc, cc, cfg.thresholds);
            if (pairs.empty()) continue;
            const auto vote = vote_rotation(pairs, cfg.rotation_window);
            const auto pw = check_pairwise(qc, desc.contours, cc, cand.contours, vote, cfg.thresholds, cfg.min_pairs);
            if (!pw.passed || pw.survivors.size() <= c.survivors) continue;
            c.passed = true;
            c.survivors = pw.survivors.size();
            c.init = estimate_transform(qc.anchor, cc.anchor, vote.theta_hat);
        }
    });
    std::vector<detail::Candidate> passed;
    for (auto& c : cands)
        if (c.passed) passed.push_back(std::move(c));
    out.funnel.cac_survivors = passed.size();
    std::stable_sort(passed.begin(), passed.end(), [](const auto& a, const auto& b) {
        return a.survivors > b.survivors;
    });
    if (passed.size() > static_cast<std::size_t>(cfg.max_gmm_candidates))
        passed.resize(static_cast<std::size_t>(cfg.max_gmm_candidates));
    out.timings.cac_check_ms = detail::elapsed_ms(t0);

    t0 = detail::Clock::now();
    std::vector<std::optional<CorrelationResult>> optimized(passed.size());
    if (desc.gmm) {
        detail::for_each_index(passed.size(), cfg.parallel_candidates, [&](std::size_t ci) {
            const ScanDescriptor& cand = *history.find(passed[ci].scan_id);
            if (!cand.gmm) return;
            optimized[ci] = optimize(*desc.gmm, *cand.gmm, passed[ci].init, cfg.optimizer);
        });
    }
    std::optional<std::size_t> best;
    for (std::size_t ci = 0; ci < optimized.size(); ++ci) {
        if (!optimized[ci]) continue;
        ++out.funnel.optimized;
        if (!best || optimized[ci]->score > optimized[*best]->score) best = ci;
    }
    out.timings.l2_optim_ms = detail::elapsed_ms(t0);

    if (best) {
        const auto& r = *optimized[*best];
        LoopResult loop;
        loop.query_id = desc.scan_id;
        loop.candidate_id = passed[*best].scan_id;
        loop.score = std::clamp(r.score, 0.0, 1.0);
        loop.pose_pixels = r.transform;
        loop.pose = Se2Transform(r.transform.theta, Vec2(r.transform.t * cfg.bev.resolution));
        out.loop = loop;
    }
    return out;
}

/// Buffers the scan's keys, advances the refresh schedule, and archives the descriptor.
inline double add_to_database(ScanDescriptor desc, LayeredDatabase& db, ScanHistory& history,
                              const PipelineConfig& cfg) {
    const auto t0 = detail::Clock::now();
    db.insert(desc.scan_id, desc.keys);
    db.tick();
    history.add(archive(std::move(desc), cfg));
    return detail::elapsed_ms(t0);
}

/// Online driver: detect against the past, then insert (a scan never matches itself).
class LoopDetector {
  public:
    explicit LoopDetector(PipelineConfig cfg) : cfg_(std::move(cfg)), db_(cfg_.retrieval) { cfg_.validate(); }

    DetectionOutcome process(std::int64_t scan_id, const PointCloud& cloud) {
        ScanDescriptor desc = preprocess(scan_id, cloud, cfg_);
        DetectionOutcome out = detect_loop(desc, db_, history_, cfg_);
        out.timings.update_db_ms = add_to_database(std::move(desc), db_, history_, cfg_);
        if (out.loop) out.loop->timings = out.timings;
        return out;
    }

    const PipelineConfig& config() const { return cfg_; }
    const LayeredDatabase& database() const { return db_; }
    LayeredDatabase& database() { return db_; }
    const ScanHistory& history() const { return history_; }

  private:
    PipelineConfig cfg_;
    LayeredDatabase db_;
    ScanHistory history_;
};

}  // namespace contour_context
