#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "contour_context/types.hpp"

namespace contour_context {

struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Level index returned for heights below the lowest slice.
inline constexpr int kBelowAllLevels = 0;

/*
 * Cartesian BEV grid parameters. The sensor sits at the center cell.
 * Cell (row, col) covers metric x in [(row - cr - 0.5) res, (row - cr + 0.5) res)
 * and likewise y for col, where cr is the center row. Pixel coordinates used by
 * contours are centered offsets (row - cr, col - cc), so pixel * resolution is
 * the metric position of the cell center.
 */
struct BevConfig {
    double resolution = 0.5;
    double half_extent_x = 75.0;
    double half_extent_y = 75.0;
    // Lower bounds of levels 1..L, relative to the sensor after the offset is applied.
    std::vector<double> slice_heights{-0.75, -0.25, 0.25, 0.75, 1.25, 2.0, 3.0, 4.5};
    double sensor_height_offset = 0.0;

    void validate() const {
        if (!(resolution > 0.0) || !std::isfinite(resolution))
            throw std::invalid_argument("BevConfig: resolution must be positive");
        if (!(half_extent_x > 0.0) || !(half_extent_y > 0.0))
            throw std::invalid_argument("BevConfig: half extents must be positive");
        if (slice_heights.size() < 2)
            throw std::invalid_argument("BevConfig: at least 2 slice levels are required");
        for (std::size_t i = 1; i < slice_heights.size(); ++i)
            if (!(slice_heights[i] > slice_heights[i - 1]))
                throw std::invalid_argument("BevConfig: slice heights must be strictly increasing");
    }

    int num_levels() const { return static_cast<int>(slice_heights.size()); }
    int center_row() const { return static_cast<int>(std::floor(half_extent_x / resolution + 1e-9)); }
    int center_col() const { return static_cast<int>(std::floor(half_extent_y / resolution + 1e-9)); }
    int rows() const { return 2 * center_row() + 1; }
    int cols() const { return 2 * center_col() + 1; }
};

/// Returns max{l : h >= slice_heights[l-1]} (1-based), or kBelowAllLevels.
inline int level_of(double h, const BevConfig& cfg) {
    const auto it = std::upper_bound(cfg.slice_heights.begin(), cfg.slice_heights.end(), h);
    return static_cast<int>(it - cfg.slice_heights.begin());
}

class BevImage {
  public:
    BevImage() = default;
    explicit BevImage(BevConfig cfg)
        : cfg_(std::move(cfg)), rows_(cfg_.rows()), cols_(cfg_.cols()),
          cells_(static_cast<std::size_t>(rows_) * cols_, kEmpty) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const BevConfig& config() const { return cfg_; }

    bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }
    bool occupied(int r, int c) const { return !std::isnan(cells_[index(r, c)]); }

    std::optional<double> at(int r, int c) const {
        const float v = cells_[index(r, c)];
        if (std::isnan(v)) return std::nullopt;
        return v;
    }
    /// Height of an occupied cell; undefined for empty cells.
    double height(int r, int c) const { return cells_[index(r, c)]; }

    void update_max(int r, int c, double z) {
        float& v = cells_[index(r, c)];
        const auto fz = static_cast<float>(z);
        if (std::isnan(v) || fz > v) v = fz;
    }

    std::size_t occupied_count() const {
        return static_cast<std::size_t>(
            std::count_if(cells_.begin(), cells_.end(), [](float v) { return !std::isnan(v); }));
    }

    /// Centered pixel coordinates of a cell.
    Vec2 pixel_coords(int r, int c) const {
        return {static_cast<double>(r - cfg_.center_row()), static_cast<double>(c - cfg_.center_col())};
    }

    bool operator==(const BevImage& o) const {
        if (rows_ != o.rows_ || cols_ != o.cols_) return false;
        for (std::size_t i = 0; i < cells_.size(); ++i) {
            const bool a = std::isnan(cells_[i]), b = std::isnan(o.cells_[i]);
            if (a != b || (!a && cells_[i] != o.cells_[i])) return false;
        }
        return true;
    }

  private:
    static constexpr float kEmpty = std::numeric_limits<float>::quiet_NaN();
    std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols_ + c; }

    BevConfig cfg_;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<float> cells_;
};

/// Binary mask of cells whose level is at least `level`.
struct LevelMask {
    int level = 1;
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> bits;

    bool test(int r, int c) const { return bits[static_cast<std::size_t>(r) * cols + c] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

inline BevImage rasterize(const PointCloud& cloud, const BevConfig& cfg) {
    cfg.validate();
    BevImage img(cfg);
    const int cr = cfg.center_row(), cc = cfg.center_col();
    for (const auto& p : cloud.points) {
        const double fr = std::floor(p.x() / cfg.resolution + 0.5) + cr;
        const double fc = std::floor(p.y() / cfg.resolution + 0.5) + cc;
        if (fr < 0 || fc < 0 || fr >= img.rows() || fc >= img.cols()) continue;
        img.update_max(static_cast<int>(fr), static_cast<int>(fc), p.z() + cfg.sensor_height_offset);
    }
    return img;
}

inline LevelMask slice(const BevImage& img, int level) {
    const auto& cfg = img.config();
    if (level < 1 || level > cfg.num_levels()) throw std::out_of_range("slice: level out of range");
    LevelMask m{level, img.rows(), img.cols(),
                std::vector<std::uint8_t>(static_cast<std::size_t>(img.rows()) * img.cols(), 0)};
    const double threshold = cfg.slice_heights[level - 1];
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c)
            if (img.occupied(r, c) && img.height(r, c) >= threshold)
                m.bits[static_cast<std::size_t>(r) * img.cols() + c] = 1;
    return m;
}

}  // namespace contour_context
