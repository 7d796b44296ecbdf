#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "contour_context/contour.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

/// Percentage (t_p) and absolute (t_a) difference thresholds for one scalar.
struct ScalarThreshold {
    double t_p = 0.25;
    double t_a = 0.0;
};

/*
 * Two scalars agree if their difference is below t_a, or below t_p relative to
 * the larger magnitude. Magnitudes are used because mean heights may be negative.
 */
inline bool sim_check(double x1, double x2, const ScalarThreshold& th) {
    const double diff = std::abs(x1 - x2);
    if (diff < th.t_a) return true;
    const double denom = std::max(std::abs(x1), std::abs(x2));
    if (denom == 0.0) return true;
    return diff / denom < th.t_p;
}

struct ThresholdSet {
    ScalarThreshold n_a{0.25, 6.0};
    ScalarThreshold h_m{0.25, 0.3};
    ScalarThreshold ecc{0.5, 0.75};
    ScalarThreshold lam1{0.3, 1.0};
    ScalarThreshold lam2{0.3, 1.0};
    ScalarThreshold dist{0.05, 1.0};
};

/// The five per-contour scalars; level equality is required as well.
inline bool check_anchor_sim(const ContourAbstraction& a, const ContourAbstraction& b, const ThresholdSet& th) {
    return a.level == b.level && sim_check(a.n_a, b.n_a, th.n_a) && sim_check(a.h_m, b.h_m, th.h_m) &&
           sim_check(a.ecc_feat, b.ecc_feat, th.ecc) && sim_check(a.lam1, b.lam1, th.lam1) &&
           sim_check(a.lam2, b.lam2, th.lam2);
}

struct ConstellationConfig {
    std::vector<int> levels{2, 3, 4, 5};
    int top_k = 10;
    double max_radius = 127.0;    // pixels
    double bucket_width = 2.0;    // pixels
    double boundary_margin = 0.3; // pixels
};

inline constexpr int kBucketsPerLevel = 64;

struct Peripheral {
    int level = 1;
    int seq = 0;
    double dist = 0.0;     // pixels
    double azimuth = 0.0;  // radians in (-pi, pi], measured at the anchor
    int bucket = 0;
    int neighbor_bucket = -1;  // query-side adjacent bucket near a boundary, or -1
};

/*
 * Anchor plus peripheral contours. dist_bits holds one 64-bit block per level
 * (index level-1) with the exact bucket of every peripheral; query_bits adds the
 * boundary-adjacent bucket and is used when this constellation is the query.
 */
struct Constellation {
    ContourAbstraction anchor;
    std::vector<Peripheral> peripherals;
    std::vector<std::uint64_t> dist_bits;
    std::vector<std::uint64_t> query_bits;
};

struct DistanceBucket {
    int bucket = 0;
    int neighbor = -1;
};

inline DistanceBucket distance_bucket(double d, const ConstellationConfig& cfg) {
    const double u = d / cfg.bucket_width;
    const int raw = static_cast<int>(std::floor(u));
    DistanceBucket b{std::clamp(raw, 0, kBucketsPerLevel - 1), -1};
    if (raw < 0 || raw >= kBucketsPerLevel) return b;
    const double lower = raw * cfg.bucket_width, upper = (raw + 1) * cfg.bucket_width;
    if (d - lower < cfg.boundary_margin && raw > 0)
        b.neighbor = raw - 1;
    else if (upper - d < cfg.boundary_margin && raw + 1 < kBucketsPerLevel)
        b.neighbor = raw + 1;
    return b;
}

inline Constellation build_constellation(const ContourAbstraction& anchor, const LevelContours& scan,
                                         const ConstellationConfig& cfg) {
    Constellation c;
    c.anchor = anchor;
    const std::size_t n_blocks = std::max<std::size_t>(scan.size(), static_cast<std::size_t>(anchor.level));
    c.dist_bits.assign(n_blocks, 0);
    c.query_bits.assign(n_blocks, 0);
    for (int level : cfg.levels) {
        if (level < 1 || level > static_cast<int>(scan.size())) continue;
        const auto& cas = scan[level - 1];
        const int n = std::min<int>(cfg.top_k, static_cast<int>(cas.size()));
        for (int s = 0; s < n; ++s) {
            const auto& ca = cas[s];
            if (ca.level == anchor.level && ca.seq == anchor.seq) continue;
            const Vec2 disp = ca.x_c - anchor.x_c;
            const double d = disp.norm();
            if (d > cfg.max_radius) continue;
            const DistanceBucket b = distance_bucket(d, cfg);
            Peripheral p{level, ca.seq, d, wrap_angle(std::atan2(disp.y(), disp.x())), b.bucket, b.neighbor};
            c.dist_bits[level - 1] |= std::uint64_t{1} << b.bucket;
            c.query_bits[level - 1] |= std::uint64_t{1} << b.bucket;
            if (b.neighbor >= 0) c.query_bits[level - 1] |= std::uint64_t{1} << b.neighbor;
            c.peripherals.push_back(p);
        }
    }
    return c;
}

struct CandidatePair {
    int i = 0;  // peripheral index in the first constellation
    int j = 0;  // peripheral index in the second constellation
    double azimuth_diff = 0.0;
};

using CandidatePairList = std::vector<CandidatePair>;

/*
 * Peripheral pairs whose distance buckets intersect (query side c1 with its
 * boundary-adjacent bits, stored side c2) and whose exact distances pass the
 * distance check. Sorted ascending by wrapped azimuth difference.
 */
inline CandidatePairList pair_by_distance(const Constellation& c1, const Constellation& c2, const ThresholdSet& th) {
    CandidatePairList out;
    const std::size_t n_blocks = std::min(c1.query_bits.size(), c2.dist_bits.size());
    for (std::size_t ii = 0; ii < c1.peripherals.size(); ++ii) {
        const Peripheral& p1 = c1.peripherals[ii];
        const auto blk = static_cast<std::size_t>(p1.level - 1);
        if (blk >= n_blocks) continue;
        const std::uint64_t common = c1.query_bits[blk] & c2.dist_bits[blk];
        if (!common) continue;
        std::uint64_t mine = std::uint64_t{1} << p1.bucket;
        if (p1.neighbor_bucket >= 0) mine |= std::uint64_t{1} << p1.neighbor_bucket;
        if (!(mine & common)) continue;
        for (std::size_t jj = 0; jj < c2.peripherals.size(); ++jj) {
            const Peripheral& p2 = c2.peripherals[jj];
            if (p2.level != p1.level || !((mine & common) >> p2.bucket & 1U)) continue;
            if (!sim_check(p1.dist, p2.dist, th.dist)) continue;
            out.push_back({static_cast<int>(ii), static_cast<int>(jj), wrap_angle(p1.azimuth - p2.azimuth)});
        }
    }
    std::sort(out.begin(), out.end(), [](const CandidatePair& a, const CandidatePair& b) {
        return std::tie(a.azimuth_diff, a.i, a.j) < std::tie(b.azimuth_diff, b.i, b.j);
    });
    return out;
}

struct VoteResult {
    double theta_hat = 0.0;
    CandidatePairList supporters;
};

inline double circular_mean(const CandidatePairList& pairs) {
    double s = 0.0, c = 0.0;
    for (const auto& p : pairs) {
        s += std::sin(p.azimuth_diff);
        c += std::cos(p.azimuth_diff);
    }
    return wrap_angle(std::atan2(s, c));
}

/*
 * One pass over the sorted circular list: the window [start, start + window]
 * anchored at each pair is extended with a second pointer over the list
 * duplicated at +2pi. The window with the most pairs wins; ties go to the
 * smaller |theta_hat|.
 */
inline VoteResult vote_rotation(const CandidatePairList& pairs, double window) {
    VoteResult best;
    const std::size_t n = pairs.size();
    if (n == 0) return best;
    auto value = [&](std::size_t k) {
        return k < n ? pairs[k].azimuth_diff : pairs[k - n].azimuth_diff + 2.0 * kPi;
    };
    std::size_t best_count = 0;
    std::size_t end = 0;  // exclusive
    for (std::size_t start = 0; start < n; ++start) {
        end = std::max(end, start + 1);
        while (end < start + n && value(end) - value(start) <= window) ++end;
        const std::size_t count = end - start;
        if (count < best_count) continue;
        CandidatePairList sup;
        sup.reserve(count);
        for (std::size_t k = start; k < end; ++k) sup.push_back(pairs[k % n]);
        const double theta = circular_mean(sup);
        if (count > best_count || std::abs(theta) < std::abs(best.theta_hat)) {
            best_count = count;
            best.theta_hat = theta;
            best.supporters = std::move(sup);
        }
    }
    return best;
}

struct PairwiseResult {
    bool passed = false;
    CandidatePairList survivors;
};

/*
 * Five-scalar check on every supporting pair, then at most one pair per
 * peripheral on either side, kept greedily by agreement with theta_hat.
 */
inline PairwiseResult check_pairwise(const Constellation& c1, const LevelContours& scan1, const Constellation& c2,
                                     const LevelContours& scan2, const VoteResult& vote, const ThresholdSet& th,
                                     int min_pairs) {
    PairwiseResult res;
    CandidatePairList ok;
    for (const auto& pr : vote.supporters) {
        const Peripheral& p1 = c1.peripherals[pr.i];
        const Peripheral& p2 = c2.peripherals[pr.j];
        if (check_anchor_sim(scan1[p1.level - 1][p1.seq], scan2[p2.level - 1][p2.seq], th)) ok.push_back(pr);
    }
    std::stable_sort(ok.begin(), ok.end(), [&](const CandidatePair& a, const CandidatePair& b) {
        return std::abs(wrap_angle(a.azimuth_diff - vote.theta_hat)) <
               std::abs(wrap_angle(b.azimuth_diff - vote.theta_hat));
    });
    std::vector<char> used1(c1.peripherals.size(), 0), used2(c2.peripherals.size(), 0);
    for (const auto& pr : ok) {
        if (used1[pr.i] || used2[pr.j]) continue;
        used1[pr.i] = used2[pr.j] = 1;
        res.survivors.push_back(pr);
    }
    res.passed = static_cast<int>(res.survivors.size()) >= min_pairs;
    return res;
}

/// Rotation theta_hat about the origin followed by the translation that makes the anchors coincide.
inline Se2Transform estimate_transform(const ContourAbstraction& anchor1, const ContourAbstraction& anchor2,
                                       double theta_hat) {
    const Mat2 r = rotation2d(theta_hat);
    return {theta_hat, Vec2(anchor1.x_c - r * anchor2.x_c)};
}

}  // namespace contour_context
