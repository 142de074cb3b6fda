#pragma once

// Procedural scenes (spheres and boxes on a ground plane), an analytic
// ray tracer that renders them, and the on-disk dataset container.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "repast/binio.hpp"
#include "repast/geometry.hpp"
#include "repast/image.hpp"
#include "repast/parallel.hpp"

namespace repast {

enum class ShapeKind : std::uint8_t { sphere, box };

struct SceneObject {
    ShapeKind shape = ShapeKind::sphere;
    Pose pose;                        // object-to-world
    Vec3 scale = Vec3::Ones();        // radii (sphere) or half-extents (box) in the object frame
    Vec3 albedo = Vec3::Constant(0.5);

    bool operator==(const SceneObject&) const = default;
};

struct Scene {
    std::vector<SceneObject> objects;
    bool has_ground = true;
    Vec3 ground_point = Vec3::Zero();
    Vec3 ground_normal = Vec3::UnitZ();
    Vec3 ground_albedo = Vec3(0.55, 0.5, 0.45);
    Vec3 background = Vec3(0.62, 0.76, 0.92);
    Vec3 light_direction = Vec3(0.3, -0.5, 0.8).normalized();  // towards the light
    double ambient = 0.2;

    bool operator==(const Scene&) const = default;
};

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
    int min_objects = 2;
    int max_objects = 4;
    double region_radius = 1.25;  // object centers lie within this disk around the origin
    double min_size = 0.25;
    double max_size = 0.45;
    double min_gap = 0.05;
    double box_probability = 0.5;
    int max_retries = 200;

    // Cameras: upper hemisphere around the scene center, looking at it with jitter.
    double camera_min_distance = 3.2;
    double camera_max_distance = 4.2;
    double camera_min_elevation = 20.0 * std::numbers::pi / 180.0;
    double camera_max_elevation = 50.0 * std::numbers::pi / 180.0;
    double look_at_jitter = 0.3;
    double fov_x = 50.0 * std::numbers::pi / 180.0;
    Vec3 scene_center = Vec3(0, 0, 0.25);

    void validate() const {
        if (min_objects < 1 || max_objects < 1 || !(region_radius > 0) || !(min_size > 0) ||
            max_size < min_size || max_retries < 1 || !(camera_min_distance > 0) ||
            camera_max_distance < camera_min_distance || camera_min_elevation <= 0 ||
            camera_max_elevation < camera_min_elevation || camera_max_elevation >= std::numbers::pi / 2 ||
            look_at_jitter < 0 || !(fov_x > 0 && fov_x < std::numbers::pi))
            throw std::invalid_argument("invalid scene generator config");
    }
};

/// Deterministic function of (seed, cfg).
inline Scene sample_scene(std::uint64_t seed, const GeneratorConfig& cfg = {}) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // max_objects wins when the bounds cross, so max_objects = 1 alone gives single-object scenes.
    const int count = std::uniform_int_distribution<int>(std::min(cfg.min_objects, cfg.max_objects), cfg.max_objects)(rng);
    auto sample_object = [&] {
        SceneObject obj;
        obj.shape = unit(rng) < cfg.box_probability ? ShapeKind::box : ShapeKind::sphere;
        auto size = [&] { return cfg.min_size + (cfg.max_size - cfg.min_size) * unit(rng); };
        obj.scale = obj.shape == ShapeKind::sphere ? Vec3::Constant(size()) : Vec3(size(), size(), size());
        obj.albedo = Vec3(0.05 + 0.9 * unit(rng), 0.05 + 0.9 * unit(rng), 0.05 + 0.9 * unit(rng));
        return obj;
    };
    auto footprint = [](const SceneObject& o) {
        return o.shape == ShapeKind::sphere ? o.scale.x() : std::hypot(o.scale.x(), o.scale.y());
    };
    // An object that cannot be placed restarts the whole arrangement; both loops are bounded.
    constexpr int kArrangementAttempts = 8;
    for (int arrangement = 0; arrangement < kArrangementAttempts; ++arrangement) {
        Scene scene;
        bool ok = true;
        for (int n = 0; n < count && ok; ++n) {
            SceneObject obj = sample_object();
            ok = false;
            for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
                const double r = cfg.region_radius * std::sqrt(unit(rng));
                const double a = 2 * std::numbers::pi * unit(rng);
                const Vec3 c(r * std::cos(a), r * std::sin(a), 0);
                ok = true;
                for (const auto& other : scene.objects)
                    if ((other.pose.translation - c).head<2>().norm() < footprint(other) + footprint(obj) + cfg.min_gap) {
                        ok = false;
                        break;
                    }
                if (ok) obj.pose.translation = Vec3(c.x(), c.y(), obj.scale.z());  // resting on z = 0
            }
            if (ok) scene.objects.push_back(obj);
        }
        if (ok) return scene;
    }
    throw PlacementError("could not place " + std::to_string(count) + " objects for scene " + std::to_string(seed) +
                         " within the retry budget");
}

/// Applies a rigid transform to every element of a scene.
inline Scene transform_scene(const Pose& t, const Scene& s) {
    Scene out = s;
    for (auto& o : out.objects) o.pose = pose_compose(t, o.pose);
    out.ground_point = t.apply_point(s.ground_point);
    out.ground_normal = t.apply_direction(s.ground_normal);
    out.light_direction = t.apply_direction(s.light_direction);
    return out;
}

namespace detail {

struct Hit {
    double distance = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
    Vec3 albedo = Vec3::Zero();
};

constexpr double kMinHitDistance = 1e-9;

inline std::optional<Hit> intersect(const SceneObject& obj, const Ray& r) {
    const Mat3 rt = obj.pose.rotation.transpose();
    const Vec3 o = rt * (r.origin - obj.pose.translation);
    const Vec3 d = rt * r.direction;
    if (obj.shape == ShapeKind::sphere) {
        const Vec3 os = o.cwiseQuotient(obj.scale), ds = d.cwiseQuotient(obj.scale);
        const double a = ds.squaredNorm(), b = 2 * os.dot(ds), c = os.squaredNorm() - 1;
        const double disc = b * b - 4 * a * c;
        if (disc < 0) return std::nullopt;
        const double sq = std::sqrt(disc);
        double t = (-b - sq) / (2 * a);
        if (t <= kMinHitDistance) t = (-b + sq) / (2 * a);
        if (t <= kMinHitDistance) return std::nullopt;
        const Vec3 p = o + t * d;
        const Vec3 n = obj.pose.rotation * p.cwiseQuotient(obj.scale.cwiseProduct(obj.scale));
        return Hit{t, n.normalized(), obj.albedo};
    }
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 0;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-15) {
            if (std::abs(o[k]) > obj.scale[k]) return std::nullopt;
            continue;
        }
        double ta = (-obj.scale[k] - o[k]) / d[k], tb = (obj.scale[k] - o[k]) / d[k];
        double s = -1;
        if (ta > tb) {
            std::swap(ta, tb);
            s = 1;
        }
        if (ta > t0) {
            t0 = ta;
            axis = k;
            sign = s;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t0 <= kMinHitDistance || axis < 0) return std::nullopt;
    Vec3 n = Vec3::Zero();
    n[axis] = sign;
    return Hit{t0, obj.pose.rotation * n, obj.albedo};
}

}  // namespace detail

/// Colour seen along one world ray.
inline Vec3 trace(const Scene& scene, const Ray& r) {
    detail::Hit best;
    if (scene.has_ground) {
        const double dn = scene.ground_normal.dot(r.direction);
        if (dn < 0) {
            const double t = scene.ground_normal.dot(scene.ground_point - r.origin) / dn;
            if (t > detail::kMinHitDistance) best = {t, scene.ground_normal, scene.ground_albedo};
        }
    }
    for (const auto& obj : scene.objects)
        if (auto h = detail::intersect(obj, r); h && h->distance < best.distance) best = *h;
    if (!std::isfinite(best.distance)) return scene.background;
    const double lambert = std::max(0.0, best.normal.dot(scene.light_direction));
    return (lambert * best.albedo + scene.ambient * best.albedo).cwiseMax(0.0).cwiseMin(1.0);
}

/// Per-pixel nearest-hit ray trace through pixel centers.
inline ImageF render_view(const Scene& scene, const Pose& camera, const Intrinsics& k) {
    k.validate();
    ImageF img(k.height, k.width);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
            const Vec3 c = trace(scene, pixel_ray(camera, k, x + 0.5, y + 0.5));
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[ch];
        }
    return img;
}

struct View {
    ImageU8 image;
    Pose camera;

    bool operator==(const View&) const = default;
};

struct SceneExample {
    std::int64_t seed = 0;
    Intrinsics intrinsics;
    std::vector<View> inputs;
    std::vector<View> targets;

    bool operator==(const SceneExample&) const = default;
};

/// Rounds a pose to what the dataset file can represent (f32 entries).
inline Pose round_to_float(const Pose& p) {
    // The volatile store keeps GCC 11's vectorizer from eliding the narrowing.
    auto narrow = [](double v) {
        volatile float f = static_cast<float>(v);
        return static_cast<double>(f);
    };
    Pose out;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) out.rotation(i, j) = narrow(p.rotation(i, j));
        out.translation[i] = narrow(p.translation[i]);
    }
    return out;
}

/// Camera on the upper hemisphere around the scene center, looking at a jittered target.
template <class Rng>
Pose sample_camera(Rng& rng, const GeneratorConfig& cfg) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double az = 2 * std::numbers::pi * unit(rng);
    const double el = cfg.camera_min_elevation + (cfg.camera_max_elevation - cfg.camera_min_elevation) * unit(rng);
    const double dist = cfg.camera_min_distance + (cfg.camera_max_distance - cfg.camera_min_distance) * unit(rng);
    Vec3 jitter;
    do {
        jitter = Vec3(2 * unit(rng) - 1, 2 * unit(rng) - 1, 2 * unit(rng) - 1);
    } while (jitter.squaredNorm() > 1.0);
    const Vec3 eye = cfg.scene_center + dist * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    return look_at(eye, cfg.scene_center + cfg.look_at_jitter * jitter);
}

/// Samples a scene and renders n_input + n_target views at resolution x resolution.
inline SceneExample make_example(std::int64_t seed, int n_input, int n_target, int resolution,
                                 const GeneratorConfig& cfg = {}) {
    if (n_input < 1) throw std::invalid_argument("make_example: n_input must be >= 1");
    if (n_target < 0 || resolution < 1) throw std::invalid_argument("make_example: bad view count or resolution");
    const Scene scene = sample_scene(static_cast<std::uint64_t>(seed), cfg);
    SceneExample ex;
    ex.seed = seed;
    Intrinsics k = Intrinsics::from_fov(resolution, resolution, cfg.fov_x);
    k.focal = static_cast<float>(k.focal);
    ex.intrinsics = k;
    // Camera stream is decoupled from the object stream.
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) ^ 0x9e3779b97f4a7c15ull);
    auto make_view = [&] {
        const Pose cam = round_to_float(sample_camera(rng, cfg));
        return View{to_u8(render_view(scene, cam, k)), cam};
    };
    for (int i = 0; i < n_input; ++i) ex.inputs.push_back(make_view());
    for (int i = 0; i < n_target; ++i) ex.targets.push_back(make_view());
    return ex;
}

inline std::vector<SceneExample> make_examples(std::int64_t first_seed, int count, int n_input, int n_target,
                                               int resolution, const GeneratorConfig& cfg = {}) {
    std::vector<SceneExample> out(static_cast<std::size_t>(std::max(count, 0)));
    parallel_for(out.size(), [&](std::size_t i) {
        out[i] = make_example(first_seed + static_cast<std::int64_t>(i), n_input, n_target, resolution, cfg);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Dataset container: "RPA1" | version | count | N | M | H | W, then per
// example: seed i64, (N + M) poses as 12 f32 (row-major 3x4 [R | t]),
// intrinsics as 4 f32 (fx, fy, cx, cy), then (N + M) u8 RGB images.

inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {
inline void put_pose(ByteWriter& w, const Pose& p) {
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) w.put(static_cast<float>(p.rotation(i, j)));
        w.put(static_cast<float>(p.translation[i]));
    }
}
inline Pose get_pose(ByteReader& r) {
    Pose p;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) p.rotation(i, j) = r.get<float>();
        p.translation[i] = r.get<float>();
    }
    return p;
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(std::span<const SceneExample> examples) {
    std::uint32_t n = 0, m = 0, h = 0, w = 0;
    if (!examples.empty()) {
        n = static_cast<std::uint32_t>(examples[0].inputs.size());
        m = static_cast<std::uint32_t>(examples[0].targets.size());
        h = static_cast<std::uint32_t>(examples[0].intrinsics.height);
        w = static_cast<std::uint32_t>(examples[0].intrinsics.width);
    }
    ByteWriter out;
    out.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("RPA1"), 4));
    for (std::uint32_t v : {kDatasetVersion, static_cast<std::uint32_t>(examples.size()), n, m, h, w}) out.put(v);
    for (const auto& ex : examples) {
        if (ex.inputs.size() != n || ex.targets.size() != m || ex.intrinsics.height != static_cast<int>(h) ||
            ex.intrinsics.width != static_cast<int>(w))
            throw FormatError("dataset examples disagree on view count or resolution (seed " + std::to_string(ex.seed) + ")");
        out.put(ex.seed);
        for (const auto* views : {&ex.inputs, &ex.targets})
            for (const auto& v : *views) detail::put_pose(out, v.camera);
        const auto& k = ex.intrinsics;
        for (double v : {k.focal, k.focal, k.cx, k.cy}) out.put(static_cast<float>(v));
        for (const auto* views : {&ex.inputs, &ex.targets})
            for (const auto& v : *views) {
                if (v.image.height != static_cast<int>(h) || v.image.width != static_cast<int>(w))
                    throw FormatError("image size disagrees with intrinsics");
                out.put_bytes(v.image.data);
            }
    }
    return out.bytes();
}

inline std::vector<SceneExample> decode_dataset(std::vector<std::uint8_t> bytes, const std::string& what = "dataset") {
    ByteReader in(std::move(bytes), what);
    const auto magic = in.get_bytes(4);
    if (std::string(magic.begin(), magic.end()) != "RPA1")
        throw FormatError(what + ": bad magic bytes, not a dataset file of version " + std::to_string(kDatasetVersion));
    const auto version = in.get<std::uint32_t>();
    if (version != kDatasetVersion)
        throw FormatError(what + ": unsupported dataset version " + std::to_string(version) + " (expected " +
                          std::to_string(kDatasetVersion) + ")");
    const auto count = in.get<std::uint32_t>(), n = in.get<std::uint32_t>(), m = in.get<std::uint32_t>();
    const auto h = in.get<std::uint32_t>(), w = in.get<std::uint32_t>();
    const std::size_t image_bytes = static_cast<std::size_t>(h) * w * 3;
    const std::size_t per_example = 8 + (n + m) * 48 + 16 + (n + m) * image_bytes;
    if (count > 0 && (n == 0 || h == 0 || w == 0)) throw FormatError(what + ": header has zero views or extents");
    if (per_example * count != in.remaining())
        throw FormatError(what + ": payload size " + std::to_string(in.remaining()) + " does not match header (" +
                          std::to_string(per_example * count) + " expected)");
    std::vector<SceneExample> out(count);
    for (auto& ex : out) {
        ex.seed = in.get<std::int64_t>();
        ex.inputs.resize(n);
        ex.targets.resize(m);
        for (auto* views : {&ex.inputs, &ex.targets})
            for (auto& v : *views) v.camera = detail::get_pose(in);
        const float fx = in.get<float>(), fy = in.get<float>(), cx = in.get<float>(), cy = in.get<float>();
        if (fx != fy) throw FormatError(what + ": non-square pixels are not supported");
        ex.intrinsics = {fx, cx, cy, static_cast<int>(w), static_cast<int>(h)};
        for (auto* views : {&ex.inputs, &ex.targets})
            for (auto& v : *views) {
                v.image = ImageU8(static_cast<int>(h), static_cast<int>(w));
                auto b = in.get_bytes(image_bytes);
                std::copy(b.begin(), b.end(), v.image.data.begin());
            }
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& path, std::span<const SceneExample> examples) {
    write_file_atomic(path, encode_dataset(examples));
}

inline std::vector<SceneExample> read_dataset(const std::filesystem::path& path) {
    return decode_dataset(read_file(path), path.string());
}

}  // namespace repast
