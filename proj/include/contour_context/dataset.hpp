#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "contour_context/bev.hpp"
#include "contour_context/types.hpp"

namespace contour_context {

using Pose3 = Eigen::Matrix4d;

struct ScanRecord {
    std::int64_t scan_id = 0;
    PointCloud cloud;
    std::optional<Pose3> gt_pose;  // world <- sensor
};

inline bool is_rigid(const Pose3& t, double tol = 1e-6) {
    const Mat3 r = t.topLeftCorner<3, 3>();
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < tol && std::abs(r.determinant() - 1.0) < tol &&
           t.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1));
}

inline Pose3 rigid_inverse(const Pose3& t) {
    Pose3 inv = Pose3::Identity();
    inv.topLeftCorner<3, 3>() = t.topLeftCorner<3, 3>().transpose();
    inv.topRightCorner<3, 1>() = -(inv.topLeftCorner<3, 3>() * t.topRightCorner<3, 1>());
    return inv;
}

inline Pose3 planar_pose(double x, double y, double yaw) {
    Pose3 p = Pose3::Identity();
    p.topLeftCorner<2, 2>() = rotation2d(yaw);
    p(0, 3) = x;
    p(1, 3) = y;
    return p;
}

// ---- KITTI velodyne scans: little-endian float32 (x, y, z, intensity) per point ----

inline PointCloud read_scan_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scan file: " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 16 != 0)
        throw DataError("malformed scan file " + path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of 16, trailing bytes start at offset " +
                        std::to_string(bytes.size() - bytes.size() % 16));
    PointCloud cloud;
    cloud.points.reserve(bytes.size() / 16);
    for (std::size_t off = 0; off < bytes.size(); off += 16) {
        float v[3];
        for (int k = 0; k < 3; ++k) {
            unsigned char b[4];
            std::memcpy(b, bytes.data() + off + 4 * k, 4);
            if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 4);
            std::memcpy(&v[k], b, 4);
        }
        cloud.points.emplace_back(v[0], v[1], v[2]);
    }
    return cloud;
}

inline void write_scan_bin(const std::filesystem::path& path, const PointCloud& cloud, float intensity = 0.0f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write scan file: " + path.string());
    for (const auto& p : cloud.points) {
        const float v[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), intensity};
        for (float f : v) {
            unsigned char b[4];
            std::memcpy(b, &f, 4);
            if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 4);
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out) throw DataError("write failed: " + path.string());
}

// ---- Poses and calibration ----

namespace detail {

inline Pose3 pose_from_row_major(const std::vector<double>& v) {
    Pose3 p = Pose3::Identity();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) p(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    return p;
}

inline std::vector<double> parse_numbers(const std::string& text) {
    std::istringstream ss(text);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw DataError("not a number: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace detail

/// Reads the "Tr:" entry (sensor -> camera) of a KITTI calib file; identity with a warning if missing.
inline Pose3 read_calib(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open calib file: " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string key = line.substr(0, colon);
        key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char ch) { return std::isspace(ch); }), key.end());
        if (key != "Tr") continue;
        std::vector<double> v;
        try {
            v = detail::parse_numbers(line.substr(colon + 1));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (v.size() != 12)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 12 numbers for Tr, got " +
                            std::to_string(v.size()));
        return detail::pose_from_row_major(v);
    }
    std::cerr << "warning: no Tr entry in " << path.string() << ", using identity calibration\n";
    return Pose3::Identity();
}

/// Camera-frame KITTI poses converted to the sensor frame: Tr^-1 * P * Tr.
inline std::vector<Pose3> read_poses(const std::filesystem::path& path, const Pose3& calib = Pose3::Identity()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open pose file: " + path.string());
    const Pose3 calib_inv = rigid_inverse(calib);
    std::vector<Pose3> poses;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> v;
        try {
            v = detail::parse_numbers(line);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (v.size() != 12)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 12 numbers, got " +
                            std::to_string(v.size()));
        poses.push_back(calib_inv * detail::pose_from_row_major(v) * calib);
    }
    return poses;
}

inline void write_poses(const std::filesystem::path& path, const std::vector<Pose3>& poses) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write pose file: " + path.string());
    out << std::setprecision(17);
    for (const auto& p : poses) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) out << p(r, c) << (r == 2 && c == 3 ? '\n' : ' ');
    }
    if (!out) throw DataError("write failed: " + path.string());
}

// ---- Synthetic scenes ----

struct Blob {
    Vec2 center = Vec2::Zero();  // meters, scene frame
    Mat2 spread = Mat2::Identity();  // m^2; points fill the 2-sigma ellipse
    double height = 1.0;   // top height in the sensor frame, meters
    double density = 25.0; // points per square meter
};

struct SyntheticScene {
    std::vector<Blob> blobs;
    Se2Transform world_pose;  // scene frame in world

    /// Key-value text: "blobs", "pose" and one "blob.<i>" line per blob.
    std::string serialize() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "blobs = " << blobs.size() << "\n";
        os << "pose = " << world_pose.t.x() << ' ' << world_pose.t.y() << ' ' << world_pose.theta << "\n";
        for (std::size_t i = 0; i < blobs.size(); ++i) {
            const auto& b = blobs[i];
            os << "blob." << i << " = " << b.center.x() << ' ' << b.center.y() << ' ' << b.spread(0, 0) << ' '
               << b.spread(0, 1) << ' ' << b.spread(1, 1) << ' ' << b.height << ' ' << b.density << "\n";
        }
        return os.str();
    }

    static SyntheticScene parse(const std::string& text) {
        SyntheticScene s;
        std::map<std::string, std::vector<double>> kv;
        std::istringstream is(text);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char ch) { return std::isspace(ch); }),
                      key.end());
            try {
                kv[key] = detail::parse_numbers(line.substr(eq + 1));
            } catch (const DataError& e) {
                throw DataError("scene line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        auto need = [&](const std::string& k, std::size_t n) -> const std::vector<double>& {
            auto it = kv.find(k);
            if (it == kv.end() || it->second.size() != n) throw DataError("scene: missing or malformed key " + k);
            return it->second;
        };
        const auto n = static_cast<std::size_t>(need("blobs", 1)[0]);
        const auto& pose = need("pose", 3);
        s.world_pose = Se2Transform(pose[0], pose[1], pose[2]);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& v = need("blob." + std::to_string(i), 7);
            Blob b;
            b.center = Vec2(v[0], v[1]);
            b.spread << v[2], v[3], v[3], v[4];
            b.height = v[5];
            b.density = v[6];
            if (!(b.density > 0.0)) throw DataError("scene: blob density must be positive");
            s.blobs.push_back(b);
        }
        return s;
    }
};

struct SceneParams {
    int min_blobs = 20;
    int max_blobs = 60;
    double placement_radius = 45.0;  // meters
    double min_sigma = 0.6;
    double max_sigma = 3.0;
    double min_height = -0.5;
    double max_height = 4.5;
    double ground_z = -1.73;  // sensor-frame ground level the domes rise from
    double density = 25.0;
    double vertical_noise = 0.02;
};

/// Samples a cloud in the frame of a sensor placed at `sensor` (scene frame).
inline PointCloud sample_scene(const SyntheticScene& scene, const Se2Transform& sensor, std::uint64_t seed,
                               const SceneParams& params = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, params.vertical_noise);
    const Se2Transform to_sensor = sensor.inverse();
    PointCloud cloud;
    for (const auto& b : scene.blobs) {
        Eigen::SelfAdjointEigenSolver<Mat2> es(b.spread);
        const Mat2 axes = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        const double area = kPi * 4.0 * std::sqrt(std::max(0.0, b.spread.determinant()));
        const auto n = static_cast<std::size_t>(std::ceil(area * b.density));
        for (std::size_t k = 0; k < n; ++k) {
            Vec2 u;
            do u = Vec2(unit(rng), unit(rng));
            while (u.squaredNorm() > 1.0);
            const double m2 = u.squaredNorm();  // (mahalanobis / 2)^2
            const Vec2 xy = b.center + 2.0 * axes * u;
            const double z = params.ground_z + (b.height - params.ground_z) * std::sqrt(1.0 - m2) + noise(rng);
            const Vec2 local = to_sensor.apply(xy);
            cloud.points.emplace_back(local.x(), local.y(), z);
        }
    }
    return cloud;
}

inline SyntheticScene random_scene(std::mt19937_64& rng, const SceneParams& params) {
    std::uniform_int_distribution<int> count(params.min_blobs, params.max_blobs);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticScene s;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        Blob b;
        const double r = params.placement_radius * std::sqrt(unit(rng));
        const double a = 2.0 * kPi * unit(rng);
        b.center = Vec2(r * std::cos(a), r * std::sin(a));
        const double s1 = params.min_sigma + (params.max_sigma - params.min_sigma) * unit(rng);
        const double s2 = params.min_sigma + (params.max_sigma - params.min_sigma) * unit(rng);
        const Mat2 rot = rotation2d(kPi * unit(rng));
        b.spread = rot * Vec2(s1 * s1, s2 * s2).asDiagonal() * rot.transpose();
        b.height = params.min_height + (params.max_height - params.min_height) * unit(rng);
        b.density = params.density;
        s.blobs.push_back(b);
    }
    return s;
}

/// Deterministic scene for a seed together with its cloud seen from the scene origin.
inline std::pair<SyntheticScene, PointCloud> generate_scene(std::uint64_t seed, const SceneParams& params = {}) {
    std::mt19937_64 rng(seed);
    SyntheticScene scene = random_scene(rng, params);
    PointCloud cloud = sample_scene(scene, Se2Transform::identity(), rng(), params);
    return {std::move(scene), std::move(cloud)};
}

/// Drops each blob with probability `dropout` and jitters the rest (meters, per axis).
inline SyntheticScene perturb_scene(const SyntheticScene& scene, std::mt19937_64& rng, double dropout, double jitter) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jit(0.0, jitter);
    SyntheticScene out;
    out.world_pose = scene.world_pose;
    for (const auto& b : scene.blobs) {
        if (unit(rng) < dropout) continue;
        Blob nb = b;
        nb.center += Vec2(jit(rng), jit(rng));
        out.blobs.push_back(nb);
    }
    return out;
}

struct RevisitParams {
    int pairs = 500;
    double max_translation = 3.0;  // meters
    double dropout = 0.1;
    double jitter = 0.1;           // meters (0.2 px at 0.5 m/px)
    double place_spacing = 500.0;  // meters between distinct places
    SceneParams scene;
};

/*
 * Scans 0..pairs-1 visit distinct places from each place origin; scans
 * pairs..2*pairs-1 revisit the same places in order under a random planar
 * offset and yaw, with blob dropout and jitter. Ground-truth poses are world <- sensor.
 */
inline std::vector<ScanRecord> make_revisit_sequence(std::uint64_t seed, const RevisitParams& p,
                                                     std::vector<SyntheticScene>* scenes_out = nullptr) {
    if (p.pairs < 0) throw std::invalid_argument("make_revisit_sequence: pairs must be >= 0");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<SyntheticScene> scenes;
    std::vector<ScanRecord> out;
    for (int i = 0; i < p.pairs; ++i) {
        SyntheticScene s = random_scene(rng, p.scene);
        s.world_pose = Se2Transform(p.place_spacing * i, 0.0, 0.0);
        ScanRecord rec;
        rec.scan_id = i;
        rec.cloud = sample_scene(s, Se2Transform::identity(), rng(), p.scene);
        rec.gt_pose = planar_pose(s.world_pose.t.x(), s.world_pose.t.y(), s.world_pose.theta);
        out.push_back(std::move(rec));
        scenes.push_back(std::move(s));
    }
    for (int i = 0; i < p.pairs; ++i) {
        const SyntheticScene revisit = perturb_scene(scenes[i], rng, p.dropout, p.jitter);
        const double r = p.max_translation * std::sqrt(unit(rng));
        const double a = 2.0 * kPi * unit(rng);
        const double yaw = kPi * (2.0 * unit(rng) - 1.0);
        const Se2Transform sensor(r * std::cos(a), r * std::sin(a), yaw);
        ScanRecord rec;
        rec.scan_id = p.pairs + i;
        rec.cloud = sample_scene(revisit, sensor, rng(), p.scene);
        const Se2Transform world = revisit.world_pose * sensor;
        rec.gt_pose = planar_pose(world.t.x(), world.t.y(), world.theta);
        out.push_back(std::move(rec));
    }
    if (scenes_out) *scenes_out = std::move(scenes);
    return out;
}

}  // namespace contour_context
