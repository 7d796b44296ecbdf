#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Dense>

namespace contour_context {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

/// Thrown for malformed input files and inconsistent datasets.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline Mat2 rotation2d(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 r;
    r << c, -s, s, c;
    return r;
}

/// Derivative of rotation2d with respect to theta.
inline Mat2 rotation2d_derivative(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 r;
    r << -s, -c, c, -s;
    return r;
}

/// Planar rigid transform x -> R(theta) x + t.
struct Se2Transform {
    double theta = 0.0;
    Vec2 t = Vec2::Zero();

    Se2Transform() = default;
    Se2Transform(double yaw, Vec2 translation) : theta(wrap_angle(yaw)), t(std::move(translation)) {}
    Se2Transform(double x, double y, double yaw) : theta(wrap_angle(yaw)), t(x, y) {}

    static Se2Transform identity() { return {}; }

    Mat2 rotation() const { return rotation2d(theta); }
    Vec2 apply(const Vec2& p) const { return rotation() * p + t; }

    Se2Transform inverse() const {
        const Mat2 rt = rotation().transpose();
        return {-theta, Vec2(-(rt * t))};
    }

    Se2Transform operator*(const Se2Transform& rhs) const {
        return {theta + rhs.theta, Vec2(rotation() * rhs.t + t)};
    }
};

}  // namespace contour_context
