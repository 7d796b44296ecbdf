#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "contour_context/bev.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

struct ContourPixel {
    int x = 0;  // centered row offset
    int y = 0;  // centered column offset
    double z = 0.0;
};

/// A maximal 8-connected set of pixels at one level.
struct RawContour {
    int level = 1;
    int seq = 0;
    std::vector<ContourPixel> pixels;
};

struct Eigen2 {
    Vec2 v1 = Vec2::UnitX();
    Vec2 v2 = Vec2::UnitY();
    double lam1 = 0.0;
    double lam2 = 0.0;
};

/// Statistical summary of a raw contour. Positions are in pixels.
struct ContourAbstraction {
    int level = 1;
    int seq = 0;  // 0-based rank within the level after rank_contours
    int n_a = 0;
    double h_m = 0.0;
    Vec2 x_c = Vec2::Zero();
    Vec2 x_m = Vec2::Zero();  // (1/n_a) sum p_z p_xy, not renormalized by height
    Mat2 cov = Mat2::Zero();
    Vec2 v1 = Vec2::UnitX();
    Vec2 v2 = Vec2::UnitY();
    double lam1 = 0.0;
    double lam2 = 0.0;
    double ecc_feat = 0.0;  // |x_c - x_m|
};

/// Contours grouped by level; index 0 holds level 1.
using LevelContours = std::vector<std::vector<ContourAbstraction>>;

/// Closed-form eigendecomposition of a symmetric 2x2 matrix, lam1 >= lam2.
inline Eigen2 eig2x2(const Mat2& m) {
    const double a = m(0, 0), b = 0.5 * (m(0, 1) + m(1, 0)), d = m(1, 1);
    const double mean = 0.5 * (a + d);
    const double r = std::hypot(0.5 * (a - d), b);
    Eigen2 e;
    e.lam1 = mean + r;
    e.lam2 = mean - r;
    if (r == 0.0) return e;
    // Either column of (M - lam2 I) spans the lam1 eigenspace; take the longer one.
    const Vec2 ca(a - e.lam2, b), cb(b, d - e.lam2);
    Vec2 v = ca.squaredNorm() >= cb.squaredNorm() ? ca : cb;
    v.normalize();
    e.v1 = v;
    e.v2 = Vec2(-v.y(), v.x());
    return e;
}

/*
 * Labels the 8-connected components of a level mask. Components smaller than
 * min_pixels are discarded. Output order follows the row-major position of each
 * component's first pixel; pixels carry the BEV height of their cell. The mask
 * may cover only the top-left part of the image.
 */
inline std::vector<RawContour> extract_contours(const LevelMask& mask, const BevImage& img, int min_pixels) {
    std::vector<RawContour> out;
    const int rows = mask.rows, cols = mask.cols;
    if (rows > img.rows() || cols > img.cols() || mask.bits.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("extract_contours: mask does not fit the image");
    std::vector<std::uint8_t> visited(mask.bits.size(), 0);
    std::vector<int> stack;
    const int cr = img.config().center_row(), cc = img.config().center_col();

    for (int r0 = 0; r0 < rows; ++r0) {
        for (int c0 = 0; c0 < cols; ++c0) {
            const int start = r0 * cols + c0;
            if (!mask.bits[start] || visited[start]) continue;
            RawContour contour;
            contour.level = mask.level;
            visited[start] = 1;
            stack.assign(1, start);
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int r = cur / cols, c = cur % cols;
                contour.pixels.push_back({r - cr, c - cc, img.height(r, c)});
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = r + dr, nc = c + dc;
                        if ((dr == 0 && dc == 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
                        const int ni = nr * cols + nc;
                        if (mask.bits[ni] && !visited[ni]) {
                            visited[ni] = 1;
                            stack.push_back(ni);
                        }
                    }
                }
            }
            if (static_cast<int>(contour.pixels.size()) >= min_pixels) out.push_back(std::move(contour));
        }
    }
    return out;
}

inline ContourAbstraction summarize(const RawContour& raw) {
    if (raw.pixels.empty()) throw std::invalid_argument("summarize: empty contour");
    ContourAbstraction ca;
    ca.level = raw.level;
    ca.seq = raw.seq;
    ca.n_a = static_cast<int>(raw.pixels.size());
    const double n = ca.n_a;

    // Integer coordinate sums are exact, which keeps the statistics independent of pixel order.
    long long sx = 0, sy = 0;
    double sz = 0.0, szx = 0.0, szy = 0.0;
    for (const auto& p : raw.pixels) {
        sx += p.x;
        sy += p.y;
        sz += p.z;
        szx += p.z * p.x;
        szy += p.z * p.y;
    }
    ca.h_m = sz / n;
    ca.x_c = Vec2(static_cast<double>(sx) / n, static_cast<double>(sy) / n);
    ca.x_m = Vec2(szx / n, szy / n);

    if (ca.n_a > 1) {
        // Centered second moments from exact integer sums.
        long long sxx = 0, syy = 0, sxy = 0;
        for (const auto& p : raw.pixels) {
            sxx += static_cast<long long>(p.x) * p.x;
            syy += static_cast<long long>(p.y) * p.y;
            sxy += static_cast<long long>(p.x) * p.y;
        }
        const double cxx = (static_cast<double>(sxx) - static_cast<double>(sx) * sx / n) / (n - 1);
        const double cyy = (static_cast<double>(syy) - static_cast<double>(sy) * sy / n) / (n - 1);
        const double cxy = (static_cast<double>(sxy) - static_cast<double>(sx) * sy / n) / (n - 1);
        ca.cov << cxx, cxy, cxy, cyy;
    }
    const Eigen2 e = eig2x2(ca.cov);
    ca.v1 = e.v1;
    ca.v2 = e.v2;
    ca.lam1 = std::max(0.0, e.lam1);
    ca.lam2 = std::max(0.0, e.lam2);
    ca.ecc_feat = (ca.x_c - ca.x_m).norm();
    return ca;
}

/*
 * Groups abstractions by level and sorts each level by descending n_a. Equal
 * sizes fall back to descending lam1, lam2 and h_m, then ascending x_c
 * (lexicographic). Sequence ids are reassigned as 0-based ranks.
 */
inline LevelContours rank_contours(std::vector<ContourAbstraction> cas, int num_levels = 0) {
    int max_level = num_levels;
    for (const auto& ca : cas) max_level = std::max(max_level, ca.level);
    LevelContours out(static_cast<std::size_t>(max_level));
    for (auto& ca : cas) {
        if (ca.level < 1) throw std::invalid_argument("rank_contours: level must be >= 1");
        out[ca.level - 1].push_back(std::move(ca));
    }
    for (auto& level : out) {
        std::sort(level.begin(), level.end(), [](const ContourAbstraction& a, const ContourAbstraction& b) {
            return std::tuple(-a.n_a, -a.lam1, -a.lam2, -a.h_m, a.x_c.x(), a.x_c.y()) <
                   std::tuple(-b.n_a, -b.lam1, -b.lam2, -b.h_m, b.x_c.x(), b.x_c.y());
        });
        for (std::size_t i = 0; i < level.size(); ++i) level[i].seq = static_cast<int>(i);
    }
    return out;
}

/// Slices, labels, summarizes and ranks every level of a BEV image.
inline LevelContours make_contours(const BevImage& img, int min_pixels) {
    std::vector<ContourAbstraction> cas;
    for (int l = 1; l <= img.config().num_levels(); ++l) {
        const LevelMask mask = slice(img, l);
        for (const auto& raw : extract_contours(mask, img, min_pixels)) cas.push_back(summarize(raw));
    }
    return rank_contours(std::move(cas), img.config().num_levels());
}

}  // namespace contour_context
