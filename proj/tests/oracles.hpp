#pragma once

// Brute-force reference implementations and random fixtures shared by the unit
// and acceptance tests. Nothing here is used by the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "contour_context/constellation.hpp"
#include "contour_context/contour.hpp"
#include "contour_context/gmm.hpp"
#include "contour_context/kdtree.hpp"

namespace oracle {

using namespace contour_context;

using PixelSet = std::vector<std::pair<int, int>>;  // sorted (row, col)

/// Components of a mask by breadth-first flood fill over the 8-neighborhood.
inline std::set<PixelSet> flood_fill_components(const LevelMask& mask, int min_pixels = 1) {
    std::set<PixelSet> out;
    std::vector<int> label(mask.bits.size(), -1);
    int next = 0;
    for (int r = 0; r < mask.rows; ++r) {
        for (int c = 0; c < mask.cols; ++c) {
            if (!mask.test(r, c) || label[r * mask.cols + c] >= 0) continue;
            PixelSet comp;
            std::deque<std::pair<int, int>> queue{{r, c}};
            label[r * mask.cols + c] = next;
            while (!queue.empty()) {
                auto [qr, qc] = queue.front();
                queue.pop_front();
                comp.emplace_back(qr, qc);
                for (int nr = qr - 1; nr <= qr + 1; ++nr)
                    for (int nc = qc - 1; nc <= qc + 1; ++nc) {
                        if (nr < 0 || nc < 0 || nr >= mask.rows || nc >= mask.cols) continue;
                        if (!mask.test(nr, nc) || label[nr * mask.cols + nc] >= 0) continue;
                        label[nr * mask.cols + nc] = next;
                        queue.emplace_back(nr, nc);
                    }
            }
            ++next;
            if (static_cast<int>(comp.size()) < min_pixels) continue;
            std::sort(comp.begin(), comp.end());
            out.insert(std::move(comp));
        }
    }
    return out;
}

inline std::set<PixelSet> as_pixel_sets(const std::vector<RawContour>& contours, int center_row, int center_col) {
    std::set<PixelSet> out;
    for (const auto& rc : contours) {
        PixelSet s;
        for (const auto& p : rc.pixels) s.emplace_back(p.x + center_row, p.y + center_col);
        std::sort(s.begin(), s.end());
        out.insert(std::move(s));
    }
    return out;
}

inline LevelMask random_mask(std::mt19937_64& rng, int rows, int cols, double density) {
    std::bernoulli_distribution on(density);
    LevelMask m{1, rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0)};
    for (auto& b : m.bits) b = on(rng) ? 1 : 0;
    return m;
}

inline Mat2 random_spd(std::mt19937_64& rng, double min_sigma, double max_sigma) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s1 = min_sigma + (max_sigma - min_sigma) * u(rng);
    const double s2 = min_sigma + (max_sigma - min_sigma) * u(rng);
    const Mat2 r = rotation2d(kPi * u(rng));
    return r * Vec2(s1 * s1, s2 * s2).asDiagonal() * r.transpose();
}

inline double gauss_pdf(const Vec2& x, const Vec2& mu, const Mat2& cov) {
    const Vec2 d = x - mu;
    return std::exp(-0.5 * d.dot(cov.inverse() * d)) / (2.0 * kPi * std::sqrt(cov.determinant()));
}

/*
 * Midpoint-rule integral of N(x|mu1,s1) N(x|mu2,s2) over a cells x cells grid
 * spanning +-8 standard deviations of the product Gaussian along each of its
 * principal axes.
 */
inline double product_integral_quadrature(const Vec2& mu1, const Mat2& s1, const Vec2& mu2, const Mat2& s2,
                                          int cells = 400) {
    const Mat2 i1 = s1.inverse(), i2 = s2.inverse();
    const Mat2 sp = (i1 + i2).inverse();
    const Vec2 mp = sp * (i1 * mu1 + i2 * mu2);
    const Eigen2 e = eig2x2(sp);
    const double a = 8.0 * std::sqrt(e.lam1), b = 8.0 * std::sqrt(e.lam2);
    const double du = 2.0 * a / cells, dv = 2.0 * b / cells;
    const double norm = 1.0 / (4.0 * kPi * kPi * std::sqrt(s1.determinant() * s2.determinant()));
    double sum = 0.0;
    for (int iu = 0; iu < cells; ++iu) {
        const double u = -a + (iu + 0.5) * du;
        for (int iv = 0; iv < cells; ++iv) {
            const double v = -b + (iv + 0.5) * dv;
            const Vec2 x = mp + u * e.v1 + v * e.v2;
            const Vec2 d1 = x - mu1, d2 = x - mu2;
            sum += std::exp(-0.5 * (d1.dot(i1 * d1) + d2.dot(i2 * d2)));
        }
    }
    return sum * norm * du * dv;
}

/// Mixture with random levels, means within `spread` px and covariances of the given sigma range.
inline Gmm25D random_mixture(std::mt19937_64& rng, const std::vector<int>& levels, int min_comp, int max_comp,
                             double spread, double min_sigma, double max_sigma) {
    std::uniform_int_distribution<int> count(min_comp, max_comp);
    std::uniform_real_distribution<double> pos(-spread, spread), w(0.1, 1.0);
    Gmm25D g;
    double total = 0.0;
    for (int l : levels) {
        std::vector<GmmComponent> comps(static_cast<std::size_t>(count(rng)));
        for (auto& c : comps) {
            c.weight = w(rng);
            c.mean = Vec2(pos(rng), pos(rng));
            c.cov = random_spd(rng, min_sigma, max_sigma);
            total += c.weight;
        }
        g.levels.push_back(l);
        g.components.push_back(std::move(comps));
    }
    for (auto& lv : g.components)
        for (auto& c : lv) c.weight /= total;
    g.total_na = total;
    g.self_term = compute_self_term(g);
    return g;
}

/// Every component moved by tf: mean -> R mean + t, cov -> R cov R^T.
inline Gmm25D transform_mixture(const Gmm25D& g, const Se2Transform& tf) {
    Gmm25D out = g;
    const Mat2 r = tf.rotation();
    for (auto& lv : out.components)
        for (auto& c : lv) {
            c.mean = r * c.mean + tf.t;
            c.cov = r * c.cov * r.transpose();
        }
    out.self_term = compute_self_term(out);
    return out;
}

/// Central differences of the cross-term value over (tx, ty, yaw) with a fixed pair set.
inline Vec3 cross_term_fd_gradient(const Gmm25D& g1, const Gmm25D& g2, const std::vector<ActivePair>& pairs,
                                   const Se2Transform& tf, double h = 1e-5) {
    Vec3 grad;
    for (int k = 0; k < 3; ++k) {
        Vec3 dp = Vec3::Zero();
        dp[k] = h;
        const Se2Transform plus(tf.theta + dp.z(), Vec2(tf.t + dp.head<2>()));
        const Se2Transform minus(tf.theta - dp.z(), Vec2(tf.t - dp.head<2>()));
        grad[k] = (evaluate_cross_term(g1, g2, pairs, plus, false).value -
                   evaluate_cross_term(g1, g2, pairs, minus, false).value) /
                  (2.0 * h);
    }
    return grad;
}

/// Random contour abstractions over `levels` levels, ranked.
inline LevelContours random_scan(std::mt19937_64& rng, int levels, int per_level, double radius) {
    std::uniform_real_distribution<double> pos(-radius, radius), h(0.0, 4.0);
    std::uniform_int_distribution<int> na(3, 200);
    std::vector<ContourAbstraction> cas;
    for (int l = 1; l <= levels; ++l)
        for (int k = 0; k < per_level; ++k) {
            ContourAbstraction ca;
            ca.level = l;
            ca.n_a = na(rng);
            ca.h_m = h(rng);
            ca.x_c = Vec2(pos(rng), pos(rng));
            ca.cov = random_spd(rng, 0.5, 4.0);
            const Eigen2 e = eig2x2(ca.cov);
            ca.lam1 = e.lam1;
            ca.lam2 = e.lam2;
            ca.v1 = e.v1;
            ca.v2 = e.v2;
            ca.x_m = ca.x_c * ca.h_m;
            ca.ecc_feat = (ca.x_c - ca.x_m).norm();
            cas.push_back(ca);
        }
    return rank_contours(std::move(cas), levels);
}

/// Rigidly moves every abstraction of a scan and perturbs its scalars.
inline LevelContours perturb_scan(std::mt19937_64& rng, const LevelContours& scan, const Se2Transform& tf,
                                  double pos_noise, double rel_noise) {
    std::normal_distribution<double> np(0.0, pos_noise), nr(0.0, rel_noise);
    std::vector<ContourAbstraction> cas;
    const Mat2 r = tf.rotation();
    for (const auto& lv : scan)
        for (ContourAbstraction ca : lv) {
            ca.x_c = r * ca.x_c + tf.t + Vec2(np(rng), np(rng));
            ca.n_a = std::max(1, static_cast<int>(std::lround(ca.n_a * (1.0 + nr(rng)))));
            ca.h_m *= 1.0 + nr(rng);
            ca.lam1 *= 1.0 + nr(rng);
            ca.lam2 = std::min(ca.lam1, ca.lam2 * (1.0 + nr(rng)));
            ca.cov = r * ca.cov * r.transpose();
            cas.push_back(ca);
        }
    return rank_contours(std::move(cas), static_cast<int>(scan.size()));
}

/// All same-level peripheral pairs whose exact distances pass the distance check.
inline std::set<std::pair<int, int>> exhaustive_sc_pairs(const Constellation& c1, const Constellation& c2,
                                                         const ThresholdSet& th) {
    std::set<std::pair<int, int>> out;
    for (std::size_t i = 0; i < c1.peripherals.size(); ++i)
        for (std::size_t j = 0; j < c2.peripherals.size(); ++j) {
            const auto& p = c1.peripherals[i];
            const auto& q = c2.peripherals[j];
            if (p.level == q.level && sim_check(p.dist, q.dist, th.dist))
                out.emplace(static_cast<int>(i), static_cast<int>(j));
        }
    return out;
}

/// The pairs of the exhaustive oracle that the bucket rule can reach: same bucket or the query's boundary neighbor.
inline std::set<std::pair<int, int>> bucket_reachable(const Constellation& c1, const Constellation& c2,
                                                      const std::set<std::pair<int, int>>& pairs) {
    std::set<std::pair<int, int>> out;
    for (const auto& [i, j] : pairs) {
        const auto& p = c1.peripherals[i];
        const auto& q = c2.peripherals[j];
        if (q.bucket == p.bucket || q.bucket == p.neighbor_bucket) out.emplace(i, j);
    }
    return out;
}

struct WindowVote {
    std::size_t count = 0;
    double theta = 0.0;
    std::set<std::pair<int, int>> members;
};

/*
 * Tries the window [a, a + window] (mod 2pi) starting at every azimuth
 * difference and keeps the fullest; ties go to the smaller |circular mean|.
 */
inline WindowVote exhaustive_window_vote(const CandidatePairList& pairs, double window) {
    WindowVote best;
    for (const auto& start : pairs) {
        WindowVote v;
        double s = 0.0, c = 0.0;
        for (const auto& p : pairs) {
            double off = p.azimuth_diff - start.azimuth_diff;
            while (off < 0.0) off += 2.0 * kPi;
            while (off >= 2.0 * kPi) off -= 2.0 * kPi;
            if (off <= window) {
                v.members.emplace(p.i, p.j);
                s += std::sin(p.azimuth_diff);
                c += std::cos(p.azimuth_diff);
            }
        }
        v.count = v.members.size();
        v.theta = wrap_angle(std::atan2(s, c));
        if (v.count > best.count || (v.count == best.count && std::abs(v.theta) < std::abs(best.theta))) best = v;
    }
    return best;
}

/// Linear-scan k nearest neighbors, ascending by squared distance then index.
inline std::vector<KdTree::Neighbor> brute_knn(const std::vector<double>& points, std::size_t dim,
                                               const std::vector<double>& q, std::size_t k) {
    std::vector<KdTree::Neighbor> all;
    const std::size_t n = points.size() / dim;
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t a = 0; a < dim; ++a) {
            const double t = points[i * dim + a] - q[a];
            d += t * t;
        }
        all.push_back({i, d});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
    });
    if (all.size() > k) all.resize(k);
    return all;
}

/*
 * RoI key by trapezoid quadrature of the Gaussian density over each segment
 * instead of the closed-form CDF difference.
 */
inline std::vector<double> roi_key_quadrature(const BevImage& img, const ContourAbstraction& ca,
                                              const std::vector<double>& thresholds, double radius, double sigma,
                                              int base_level, int steps = 20000) {
    std::vector<double> key(thresholds.size(), 0.0);
    const auto& cfg = img.config();
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            if (!img.occupied(r, c)) continue;
            const int w = level_of(img.height(r, c), cfg) - base_level;
            if (w <= 0) continue;
            const Vec2 p = img.pixel_coords(r, c);
            const double delta = (p - ca.x_c).norm();
            if (delta > radius) continue;
            double lo = 0.0;
            for (std::size_t i = 0; i < thresholds.size(); ++i) {
                const double hi = thresholds[i];
                const double h = (hi - lo) / steps;
                double acc = 0.0;
                for (int k = 0; k <= steps; ++k) {
                    const double x = lo + k * h;
                    const double f = std::exp(-0.5 * std::pow((x - delta) / sigma, 2)) / (sigma * std::sqrt(2 * kPi));
                    acc += (k == 0 || k == steps) ? 0.5 * f : f;
                }
                key[i] += w * acc * h;
                lo = hi;
            }
        }
    return key;
}

}  // namespace oracle
