#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <shared_mutex>
#include <stdexcept>
#include <vector>

#include "contour_context/bev.hpp"
#include "contour_context/contour.hpp"
#include "contour_context/kdtree.hpp"

namespace contour_context {

struct RoiKeyConfig {
    double radius = 20.0;  // pixels
    int segments = 7;
    double sigma = 1.0;    // pixels
    int base_level = 1;

    /// Upper bounds d_1..d_n of the distance segments; d_0 = 0.
    std::vector<double> thresholds() const {
        std::vector<double> d(static_cast<std::size_t>(segments));
        for (int i = 0; i < segments; ++i) d[i] = radius * (i + 1) / segments;
        return d;
    }
};

struct RetrievalConfig {
    std::vector<int> levels{2, 3, 4};
    int anchors_per_level = 6;
    RoiKeyConfig roi;
    double w1 = 0.3;
    int candidates_per_key = 50;
    int batch_interval = 100;  // scans between refreshes of any one level

    std::size_t key_dim() const { return 3 + static_cast<std::size_t>(roi.segments); }
};

struct RetrievalKey {
    int level = 1;
    int seq = 0;
    std::vector<double> values;
};

/// [sqrt(n_a lam1), sqrt(n_a lam2), sqrt(cumulative n_a up to and including this contour)].
inline std::array<double, 3> make_anchor_key(const ContourAbstraction& ca, double cum_na) {
    return {std::sqrt(ca.n_a * ca.lam1), std::sqrt(ca.n_a * ca.lam2), std::sqrt(cum_na)};
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/*
 * Each occupied pixel within the RoI whose level exceeds the base level adds
 * (Lev - l_b) times the mass of N(delta_p, sigma) falling in each distance
 * segment, delta_p being its distance to the contour center.
 */
inline std::vector<double> make_roi_key(const BevImage& img, const ContourAbstraction& ca, const RoiKeyConfig& cfg) {
    const auto d = cfg.thresholds();
    std::vector<double> key(d.size(), 0.0);
    const auto& bev_cfg = img.config();
    const int cr = bev_cfg.center_row(), cc = bev_cfg.center_col();
    const int r_lo = std::max(0, static_cast<int>(std::floor(ca.x_c.x() - cfg.radius)) + cr);
    const int r_hi = std::min(img.rows() - 1, static_cast<int>(std::ceil(ca.x_c.x() + cfg.radius)) + cr);
    const int c_lo = std::max(0, static_cast<int>(std::floor(ca.x_c.y() - cfg.radius)) + cc);
    const int c_hi = std::min(img.cols() - 1, static_cast<int>(std::ceil(ca.x_c.y() + cfg.radius)) + cc);
    std::vector<double> cdf(d.size() + 1);
    for (int r = r_lo; r <= r_hi; ++r) {
        for (int c = c_lo; c <= c_hi; ++c) {
            if (!img.occupied(r, c)) continue;
            const int weight = level_of(img.height(r, c), bev_cfg) - cfg.base_level;
            if (weight <= 0) continue;
            const double dx = (r - cr) - ca.x_c.x(), dy = (c - cc) - ca.x_c.y();
            const double delta = std::sqrt(dx * dx + dy * dy);
            if (delta > cfg.radius) continue;
            cdf[0] = std_normal_cdf((0.0 - delta) / cfg.sigma);
            for (std::size_t i = 0; i < d.size(); ++i) {
                cdf[i + 1] = std_normal_cdf((d[i] - delta) / cfg.sigma);
                key[i] += weight * (cdf[i + 1] - cdf[i]);
            }
        }
    }
    return key;
}

inline RetrievalKey make_full_key(int level, int seq, const std::array<double, 3>& anchor_key,
                                  const std::vector<double>& roi_key, double w1) {
    RetrievalKey k{level, seq, {}};
    k.values.reserve(3 + roi_key.size());
    for (double v : anchor_key) k.values.push_back(w1 * v);
    k.values.insert(k.values.end(), roi_key.begin(), roi_key.end());
    return k;
}

/// Keys for the top anchors of every indexed level, in (level, seq) order.
inline std::vector<RetrievalKey> make_scan_keys(const BevImage& img, const LevelContours& contours,
                                                const RetrievalConfig& cfg) {
    std::vector<RetrievalKey> keys;
    for (int level : cfg.levels) {
        if (level < 1 || level > static_cast<int>(contours.size())) continue;
        const auto& cas = contours[level - 1];
        double cum = 0.0;
        const int n = std::min<int>(cfg.anchors_per_level, static_cast<int>(cas.size()));
        for (int s = 0; s < n; ++s) {
            cum += cas[s].n_a;
            keys.push_back(make_full_key(level, s, make_anchor_key(cas[s], cum), make_roi_key(img, cas[s], cfg.roi),
                                         cfg.w1));
        }
    }
    return keys;
}

struct QueryHit {
    std::int64_t scan_id = 0;
    int seq = 0;
    double distance = 0.0;
};

/*
 * Per-level KD-trees over retrieval keys. Inserted keys wait in a pending
 * buffer until their level is flushed. flush() refreshes one level per call in
 * round-robin order; tick() issues a flush every batch_interval / L scans, so
 * each level is refreshed at least once every batch_interval scans.
 * Single writer, many readers: queries hold a shared lock and trees are
 * swapped in whole under an exclusive lock.
 */
class LayeredDatabase {
  public:
    struct Entry {
        std::int64_t scan_id;
        int seq;
        std::vector<double> values;
    };

    LayeredDatabase() : LayeredDatabase(RetrievalConfig{}) {}
    explicit LayeredDatabase(const RetrievalConfig& cfg)
        : LayeredDatabase(cfg.levels, cfg.key_dim(), cfg.batch_interval) {}
    LayeredDatabase(std::vector<int> levels, std::size_t dim, int batch_interval)
        : dim_(dim), batch_interval_(std::max(1, batch_interval)) {
        for (int l : levels) levels_.emplace(l, Level{});
        level_order_ = std::move(levels);
    }

    LayeredDatabase(const LayeredDatabase&) = delete;
    LayeredDatabase& operator=(const LayeredDatabase&) = delete;
    // Moving is not synchronized; the source must not be in use.
    LayeredDatabase(LayeredDatabase&& o) noexcept
        : dim_(o.dim_), batch_interval_(o.batch_interval_), level_order_(std::move(o.level_order_)),
          levels_(std::move(o.levels_)), next_flush_(o.next_flush_), scans_(o.scans_) {}

    std::size_t dim() const { return dim_; }
    const std::vector<int>& levels() const { return level_order_; }

    void insert(std::int64_t scan_id, const std::vector<RetrievalKey>& keys) {
        std::unique_lock lock(mutex_);
        for (const auto& k : keys) {
            if (k.values.size() != dim_) throw std::invalid_argument("LayeredDatabase: key dimension mismatch");
            auto it = levels_.find(k.level);
            if (it == levels_.end()) throw std::invalid_argument("LayeredDatabase: key level is not indexed");
            it->second.pending.push_back({scan_id, k.seq, k.values});
        }
    }

    /// Exact k nearest flushed entries of the key's level, ascending by distance.
    std::vector<QueryHit> query(const RetrievalKey& key, std::size_t k) const {
        std::shared_lock lock(mutex_);
        std::vector<QueryHit> out;
        auto it = levels_.find(key.level);
        if (it == levels_.end() || key.values.size() != dim_) return out;
        const Level& lv = it->second;
        for (const auto& nb : lv.tree.knn(key.values, k)) {
            const Entry& e = lv.entries[nb.index];
            out.push_back({e.scan_id, e.seq, std::sqrt(nb.sq_dist)});
        }
        return out;
    }

    /// Merges the pending buffer of the next level in round-robin order.
    void flush() {
        if (level_order_.empty()) return;
        const int level = level_order_[next_flush_ % level_order_.size()];
        ++next_flush_;
        flush_level(level);
    }

    void flush_all() {
        for (int l : level_order_) flush_level(l);
    }

    /// Call once per processed scan to apply the staggered refresh schedule.
    void tick() {
        ++scans_;
        const int every = std::max(1, batch_interval_ / static_cast<int>(std::max<std::size_t>(1, level_order_.size())));
        if (scans_ % every == 0) flush();
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& [l, lv] : levels_) n += lv.entries.size();
        return n;
    }
    std::size_t pending() const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& [l, lv] : levels_) n += lv.pending.size();
        return n;
    }

    /*
     * Little-endian snapshot:
     *   char[4] "CCDB", u32 version (1), u32 dim, u32 batch_interval, u32 level count,
     *   then per level: i32 level, u64 flushed count, u64 pending count, followed by
     *   flushed then pending entries, each i64 scan_id, i32 seq, f64[dim] values.
     */
    void save(std::ostream& os) const {
        std::shared_lock lock(mutex_);
        os.write("CCDB", 4);
        put<std::uint32_t>(os, kSnapshotVersion);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(batch_interval_));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(level_order_.size()));
        for (int l : level_order_) {
            const Level& lv = levels_.at(l);
            put<std::int32_t>(os, l);
            put<std::uint64_t>(os, lv.entries.size());
            put<std::uint64_t>(os, lv.pending.size());
            for (const auto* list : {&lv.entries, &lv.pending})
                for (const auto& e : *list) {
                    put<std::int64_t>(os, e.scan_id);
                    put<std::int32_t>(os, e.seq);
                    for (double v : e.values) put<double>(os, v);
                }
        }
        if (!os) throw DataError("LayeredDatabase: snapshot write failed");
    }

    static LayeredDatabase load(std::istream& is) {
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "CCDB", 4) != 0) throw DataError("LayeredDatabase: bad snapshot magic");
        if (get<std::uint32_t>(is) != kSnapshotVersion) throw DataError("LayeredDatabase: unsupported version");
        const auto dim = get<std::uint32_t>(is);
        const auto interval = get<std::uint32_t>(is);
        const auto n_levels = get<std::uint32_t>(is);
        std::vector<int> levels;
        std::vector<std::pair<std::vector<Entry>, std::vector<Entry>>> data;
        for (std::uint32_t k = 0; k < n_levels; ++k) {
            levels.push_back(get<std::int32_t>(is));
            const auto n_flushed = get<std::uint64_t>(is);
            const auto n_pending = get<std::uint64_t>(is);
            auto read_entries = [&](std::uint64_t n) {
                std::vector<Entry> v;
                for (std::uint64_t i = 0; i < n; ++i) {
                    Entry e{get<std::int64_t>(is), get<std::int32_t>(is), std::vector<double>(dim)};
                    for (auto& x : e.values) x = get<double>(is);
                    v.push_back(std::move(e));
                }
                return v;
            };
            auto flushed = read_entries(n_flushed);
            auto pend = read_entries(n_pending);
            data.emplace_back(std::move(flushed), std::move(pend));
        }
        LayeredDatabase db(levels, dim, static_cast<int>(interval));
        for (std::size_t k = 0; k < levels.size(); ++k) {
            Level& lv = db.levels_.at(levels[k]);
            lv.entries = std::move(data[k].first);
            lv.tree = build_tree(lv.entries, dim);
            lv.pending = std::move(data[k].second);
        }
        return db;
    }

  private:
    static constexpr std::uint32_t kSnapshotVersion = 1;

    struct Level {
        std::vector<Entry> entries;  // indexed by tree
        std::vector<Entry> pending;
        KdTree tree;
    };

    static KdTree build_tree(const std::vector<Entry>& entries, std::size_t dim) {
        std::vector<double> pts;
        pts.reserve(entries.size() * dim);
        for (const auto& e : entries) pts.insert(pts.end(), e.values.begin(), e.values.end());
        return KdTree(std::move(pts), dim);
    }

    void flush_level(int level) {
        std::vector<Entry> merged;
        {
            std::shared_lock lock(mutex_);
            const Level& lv = levels_.at(level);
            if (lv.pending.empty()) return;
            merged = lv.entries;
            merged.insert(merged.end(), lv.pending.begin(), lv.pending.end());
        }
        KdTree tree = build_tree(merged, dim_);
        std::unique_lock lock(mutex_);
        Level& lv = levels_.at(level);
        // Only the writer thread inserts, so pending still holds exactly what was merged.
        lv.entries = std::move(merged);
        lv.tree = std::move(tree);
        lv.pending.clear();
    }

    template <typename T>
    static void put(std::ostream& os, T v) {
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        os.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }
    template <typename T>
    static T get(std::istream& is) {
        unsigned char buf[sizeof(T)];
        is.read(reinterpret_cast<char*>(buf), sizeof(T));
        if (!is) throw DataError("LayeredDatabase: truncated snapshot");
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }

    std::size_t dim_;
    int batch_interval_;
    std::vector<int> level_order_;
    std::map<int, Level> levels_;
    std::size_t next_flush_ = 0;
    long long scans_ = 0;
    mutable std::shared_mutex mutex_;
};

}  // namespace contour_context
