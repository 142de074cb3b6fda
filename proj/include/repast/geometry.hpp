#pragma once

// Rigid camera poses, pinhole rays, the relative-frame map and the sinusoidal
// ray encoding. Geometry is always evaluated in double precision; model code
// casts the encoded features to its own scalar type at the end.
//
// Camera convention: camera-to-world extrinsics, +z is the viewing direction,
// +x points right and +y points down in the image. Pixel (col, row) has its
// center at (col + 0.5, row + 0.5).

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "repast/eigen.hpp"

namespace repast {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Element of SE(3): x_world = rotation * x_camera + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    Vec3 origin() const { return translation; }
    Vec3 apply_point(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_direction(const Vec3& d) const { return rotation * d; }

    /// Throws unless the rotation is orthonormal with determinant +1 (tolerance 1e-6).
    void validate() const {
        const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
        const double det = rotation.determinant();
        if (!(ortho <= 1e-6) || !(std::abs(det - 1.0) <= 1e-6) || !translation.allFinite())
            throw GeometryError("pose rotation is not a proper rotation (|R^T R - I| = " + std::to_string(ortho) +
                                ", det = " + std::to_string(det) + ")");
    }

    bool operator==(const Pose&) const = default;
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();

    bool operator==(const Ray&) const = default;
};

/// Shared pinhole intrinsics (square pixels).
struct Intrinsics {
    double focal = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    void validate() const {
        if (!(focal > 0) || width <= 0 || height <= 0 || !(cx >= 0 && cx <= width) || !(cy >= 0 && cy <= height))
            throw GeometryError("invalid intrinsics");
    }

    /// Principal point at the image center, focal chosen for the given horizontal field of view.
    static Intrinsics from_fov(int width, int height, double fov_x_radians) {
        return {0.5 * width / std::tan(0.5 * fov_x_radians), 0.5 * width, 0.5 * height, width, height};
    }

    bool operator==(const Intrinsics&) const = default;
};

/// Sinusoidal encoding settings. Frequencies are base_frequency * 2^l for l in [0, num_freqs).
struct PosEncConfig {
    int num_freqs_origin = 6;
    int num_freqs_direction = 6;
    double base_frequency = std::numbers::pi;
    bool include_raw = true;

    std::size_t dim() const {
        return (include_raw ? 6 : 0) + 6 * static_cast<std::size_t>(num_freqs_origin) +
               6 * static_cast<std::size_t>(num_freqs_direction);
    }

    void validate() const {
        if (num_freqs_origin < 0 || num_freqs_direction < 0 || !(base_frequency > 0))
            throw GeometryError("invalid positional encoding config");
    }

    bool operator==(const PosEncConfig&) const = default;
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
    a.validate();
    b.validate();
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose pose_inverse(const Pose& p) {
    p.validate();
    const Mat3 rt = p.rotation.transpose();
    return {rt, -(rt * p.translation)};
}

/// Moves a world ray by a rigid transform.
inline Ray transform_ray(const Pose& t, const Ray& r) {
    return {t.apply_point(r.origin), t.apply_direction(r.direction)};
}

/// Re-expresses a world-frame ray in the local frame of camera `c`.
inline Ray to_local(const Ray& r, const Pose& c) {
    const Mat3 rt = c.rotation.transpose();
    return {rt * (r.origin - c.translation), (rt * r.direction).normalized()};
}

/// Ray through continuous pixel coordinates (u, v); integer + 0.5 hits a pixel center.
inline Ray pixel_ray(const Pose& c, const Intrinsics& k, double u, double v) {
    if (!(u >= 0 && u <= k.width && v >= 0 && v <= k.height))
        throw GeometryError("pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                            std::to_string(k.width) + "x" + std::to_string(k.height) + " image");
    const Vec3 d((u - k.cx) / k.focal, (v - k.cy) / k.focal, 1.0);
    return {c.translation, (c.rotation * d).normalized()};
}

struct PatchGrid {
    int rows = 1;
    int cols = 1;
    int count() const { return rows * cols; }
};

/// Ray through the center of patch `index` (row-major: row = index / cols, col = index % cols).
inline Ray patch_ray(const Pose& c, const Intrinsics& k, int index, PatchGrid grid) {
    if (grid.rows <= 0 || grid.cols <= 0 || index < 0 || index >= grid.count())
        throw GeometryError("patch index " + std::to_string(index) + " out of range for " + std::to_string(grid.rows) +
                            "x" + std::to_string(grid.cols) + " grid");
    const int row = index / grid.cols;
    const int col = index % grid.cols;
    const double ph = static_cast<double>(k.height) / grid.rows;
    const double pw = static_cast<double>(k.width) / grid.cols;
    return pixel_ray(c, k, (col + 0.5) * pw, (row + 0.5) * ph);
}

/// Writes the encoding of `r` into `out` (length cfg.dim()).
///
/// Layout: [raw origin xyz, raw direction xyz] when include_raw, then the
/// origin sin block, origin cos block, direction sin block, direction cos
/// block. Inside a block entries run frequency-major: (l=0: x,y,z), (l=1: x,y,z), ...
inline void posenc_into(const Ray& r, const PosEncConfig& cfg, std::span<double> out) {
    if (out.size() != cfg.dim()) throw GeometryError("posenc output span has wrong length");
    std::size_t k = 0;
    if (cfg.include_raw) {
        for (int c = 0; c < 3; ++c) out[k++] = r.origin[c];
        for (int c = 0; c < 3; ++c) out[k++] = r.direction[c];
    }
    auto block = [&](const Vec3& v, int freqs) {
        const std::size_t sin_at = k, cos_at = k + 3 * static_cast<std::size_t>(freqs);
        double w = cfg.base_frequency;
        for (int l = 0; l < freqs; ++l, w *= 2.0)
            for (int c = 0; c < 3; ++c) {
                out[sin_at + 3 * l + c] = std::sin(w * v[c]);
                out[cos_at + 3 * l + c] = std::cos(w * v[c]);
            }
        k += 6 * static_cast<std::size_t>(freqs);
    };
    block(r.origin, cfg.num_freqs_origin);
    block(r.direction, cfg.num_freqs_direction);
}

inline std::vector<double> posenc(const Ray& r, const PosEncConfig& cfg) {
    std::vector<double> out(cfg.dim());
    posenc_into(r, cfg, out);
    return out;
}

/// Camera at `eye` looking at `target`, with image "up" aligned to `world_up`.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up = Vec3::UnitZ()) {
    const Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(world_up);
    if (x.norm() < 1e-9) x = z.cross(Vec3::UnitX());
    x.normalize();
    const Vec3 y = z.cross(x);
    Pose p;
    p.rotation.col(0) = x;
    p.rotation.col(1) = y;
    p.rotation.col(2) = z;
    p.translation = eye;
    return p;
}

/// Uniformly random rotation plus a translation with components in [-max_translation, max_translation].
template <class Rng>
Pose random_rigid(Rng& rng, double max_translation) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-max_translation, max_translation);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    Pose p;
    p.rotation = q.toRotationMatrix();
    p.translation = Vec3(u(rng), u(rng), u(rng));
    return p;
}

inline Pose rotation_z(double radians, const Vec3& t = Vec3::Zero()) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix();
    p.translation = t;
    return p;
}

}  // namespace repast
