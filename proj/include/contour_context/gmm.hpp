#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "contour_context/contour.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

class EmptyMixtureError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct GmmComponent {
    double weight = 0.0;
    Vec2 mean = Vec2::Zero();  // pixels
    Mat2 cov = Mat2::Identity();
};

/*
 * Level-grouped mixture: components of different levels never interact.
 * Weights sum to one over all levels; self_term caches the integral of the
 * squared density.
 */
struct Gmm25D {
    std::vector<int> levels;
    std::vector<std::vector<GmmComponent>> components;  // parallel to levels
    double total_na = 0.0;
    double self_term = 0.0;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& c : components) n += c.size();
        return n;
    }
    const std::vector<GmmComponent>* level_components(int level) const {
        for (std::size_t k = 0; k < levels.size(); ++k)
            if (levels[k] == level) return &components[k];
        return nullptr;
    }
};

struct GmmConfig {
    std::vector<int> levels{2, 3, 4, 5};
    double reg_eps = 0.25;       // px^2 added to both diagonal entries
    double reg_min_lambda = 0.01;
};

/// Integral of N(x|mu1,s1) N(x|mu2,s2) over the plane, i.e. N(mu1 | mu2, s1 + s2).
inline double gauss_product_integral(const Vec2& mu1, const Mat2& s1, const Vec2& mu2, const Mat2& s2) {
    const Mat2 s = s1 + s2;
    const double det = s.determinant();
    if (!(det > 0.0)) throw std::domain_error("gauss_product_integral: singular covariance sum");
    const Vec2 d = mu1 - mu2;
    const Mat2 inv = s.inverse();
    return std::exp(-0.5 * d.dot(inv * d)) / (2.0 * kPi * std::sqrt(det));
}

struct ActivePair {
    int level_index = 0;  // index into g1.levels
    int i = 0;
    int j = 0;
};

/// Same-level component pairs with |mu_i - T(mu_j)| <= prune_dist.
inline std::vector<ActivePair> active_pairs(const Gmm25D& g1, const Gmm25D& g2, const Se2Transform& tf,
                                            double prune_dist) {
    std::vector<ActivePair> pairs;
    const double r2 = prune_dist * prune_dist;
    const bool unpruned = !std::isfinite(prune_dist);
    const Mat2 rot = tf.rotation();
    for (std::size_t k = 0; k < g1.levels.size(); ++k) {
        const auto* other = g2.level_components(g1.levels[k]);
        if (!other) continue;
        const auto& a = g1.components[k];
        std::vector<Vec2> moved(other->size());
        for (std::size_t j = 0; j < other->size(); ++j) moved[j] = rot * (*other)[j].mean + tf.t;
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < other->size(); ++j)
                if (unpruned || (a[i].mean - moved[j]).squaredNorm() <= r2)
                    pairs.push_back({static_cast<int>(k), static_cast<int>(i), static_cast<int>(j)});
    }
    return pairs;
}

/// Value, gradient and Gauss-Newton curvature of the pair sum over theta = (tx, ty, yaw).
struct CrossTermEval {
    double value = 0.0;
    Vec3 gradient = Vec3::Zero();
    Mat3 gn_hessian = Mat3::Zero();
};

/*
 * Sums w_i w_j N(mu_i | R mu_j + t, S_i + R S_j R^T) over the given pairs. The
 * yaw derivative includes the rotation of S_j, both in the exponent and in the
 * normalizing determinant. The curvature is sum g J^T S^-1 J with J = d(mu_i -
 * R mu_j - t)/d theta; it omits covariance-rotation terms and stays PSD.
 */
inline CrossTermEval evaluate_cross_term(const Gmm25D& g1, const Gmm25D& g2, const std::vector<ActivePair>& pairs,
                                         const Se2Transform& tf, bool with_derivatives = true) {
    CrossTermEval ev;
    const Mat2 rot = tf.rotation();
    const Mat2 drot = rotation2d_derivative(tf.theta);
    const double norm = 1.0 / (2.0 * kPi);
    for (const auto& pr : pairs) {
        const auto& ci = g1.components[pr.level_index][pr.i];
        const auto& cj = (*g2.level_components(g1.levels[pr.level_index]))[pr.j];
        const Mat2 rs = rot * cj.cov;
        const Mat2 s = ci.cov + rs * rot.transpose();
        const double det = s.determinant();
        if (!(det > 0.0)) throw std::domain_error("evaluate_cross_term: singular covariance sum");
        const Mat2 inv = s.inverse();
        const Vec2 rmu = rot * cj.mean;
        const Vec2 d = ci.mean - rmu - tf.t;
        const Vec2 q = inv * d;
        const double g = ci.weight * cj.weight * norm / std::sqrt(det) * std::exp(-0.5 * d.dot(q));
        ev.value += g;
        if (!with_derivatives) continue;

        const Vec2 dmu = drot * cj.mean;
        const Mat2 dsr = drot * cj.cov * rot.transpose();
        const Mat2 ds = dsr + dsr.transpose();
        const double dyaw = dmu.dot(q) + 0.5 * q.dot(ds * q) - 0.5 * (inv * ds).trace();
        ev.gradient.head<2>() += g * q;
        ev.gradient.z() += g * dyaw;

        Eigen::Matrix<double, 2, 3> jac;
        jac.leftCols<2>() = -Mat2::Identity();
        jac.col(2) = -dmu;
        ev.gn_hessian += g * jac.transpose() * inv * jac;
    }
    return ev;
}

inline double cross_term(const Gmm25D& g1, const Gmm25D& g2, const Se2Transform& tf,
                         double prune_dist = std::numeric_limits<double>::infinity()) {
    return evaluate_cross_term(g1, g2, active_pairs(g1, g2, tf, prune_dist), tf, false).value;
}

inline double compute_self_term(const Gmm25D& g) {
    return cross_term(g, g, Se2Transform::identity());
}

inline Gmm25D build_gmm(const LevelContours& contours, const std::vector<int>& levels, const GmmConfig& cfg = {}) {
    Gmm25D g;
    for (int level : levels) {
        if (level < 1 || level > static_cast<int>(contours.size()))
            throw std::out_of_range("build_gmm: level outside the configured slice levels");
        for (const auto& ca : contours[level - 1]) g.total_na += ca.n_a;
    }
    if (g.total_na <= 0.0) throw EmptyMixtureError("build_gmm: no contours at the selected levels");
    for (int level : levels) {
        std::vector<GmmComponent> comps;
        for (const auto& ca : contours[level - 1]) {
            GmmComponent c{ca.n_a / g.total_na, ca.x_c, ca.cov};
            if (ca.lam2 < cfg.reg_min_lambda) c.cov += cfg.reg_eps * Mat2::Identity();
            comps.push_back(c);
        }
        g.levels.push_back(level);
        g.components.push_back(std::move(comps));
    }
    g.self_term = compute_self_term(g);
    return g;
}

struct CorrelationResult {
    Se2Transform transform;
    double score = 0.0;
    double cross = 0.0;
    double self1 = 0.0;
    double self2 = 0.0;
};

/// Normalized correlation of g1 and T(g2). Self terms are always unpruned.
inline CorrelationResult correlation(const Gmm25D& g1, const Gmm25D& g2, const Se2Transform& tf,
                                     double prune_dist = std::numeric_limits<double>::infinity()) {
    if (g1.size() == 0 || g2.size() == 0) throw EmptyMixtureError("correlation: empty mixture");
    CorrelationResult r{tf, 0.0, cross_term(g1, g2, tf, prune_dist), g1.self_term, g2.self_term};
    r.score = r.cross / std::sqrt(r.self1 * r.self2);
    return r;
}

struct OptimizeConfig {
    double prune_dist = 30.0;  // pixels
    int max_iterations = 20;
    double gradient_tol = 1e-6;
    double step_tol = 1e-7;
    double initial_damping = 1e-3;
};

/*
 * Maximizes the correlation over (tx, ty, yaw) with a Levenberg-damped
 * Gauss-Newton iteration on the analytic gradient. Component pairs are chosen
 * once at the initial transform and kept fixed, so the objective is smooth.
 * Only improving steps are accepted; the result is the best iterate.
 */
inline CorrelationResult optimize(const Gmm25D& g1, const Gmm25D& g2, const Se2Transform& init,
                                  const OptimizeConfig& cfg = {}) {
    if (g1.size() == 0 || g2.size() == 0) throw EmptyMixtureError("optimize: empty mixture");
    const double scale = 1.0 / std::sqrt(g1.self_term * g2.self_term);
    const auto pairs = active_pairs(g1, g2, init, cfg.prune_dist);

    Se2Transform cur = init;
    CrossTermEval ev = evaluate_cross_term(g1, g2, pairs, cur);
    double lambda = cfg.initial_damping;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        // Objective is -scale * cross; its gradient is -scale * ev.gradient.
        const Vec3 grad = -scale * ev.gradient;
        if (grad.norm() < cfg.gradient_tol) break;
        Mat3 h = scale * ev.gn_hessian;
        const Vec3 diag = h.diagonal().cwiseMax(1e-12);
        h.diagonal() += lambda * diag;
        const Vec3 step = h.ldlt().solve(-grad);
        if (!step.allFinite()) break;
        const Se2Transform trial(cur.theta + step.z(), Vec2(cur.t + step.head<2>()));
        CrossTermEval trial_ev = evaluate_cross_term(g1, g2, pairs, trial);
        if (trial_ev.value > ev.value) {
            cur = trial;
            ev = std::move(trial_ev);
            lambda = std::max(lambda / 4.0, 1e-9);
            if (step.norm() < cfg.step_tol) break;
        } else {
            if (step.norm() < cfg.step_tol) break;
            lambda *= 8.0;
        }
    }
    CorrelationResult r{cur, ev.value * scale, ev.value, g1.self_term, g2.self_term};
    return r;
}

}  // namespace contour_context
