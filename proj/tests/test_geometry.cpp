#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "repast/geometry.hpp"

using namespace repast;

namespace {

double max_diff(const Pose& a, const Pose& b) {
    return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(), (a.translation - b.translation).cwiseAbs().maxCoeff());
}

double max_diff(const Ray& a, const Ray& b) {
    return std::max((a.origin - b.origin).cwiseAbs().maxCoeff(), (a.direction - b.direction).cwiseAbs().maxCoeff());
}

Ray random_ray(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-3, 3);
    return {Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)).normalized()};
}

}  // namespace

TEST(Pose, ComposeAndInverseIdentities) {
    std::mt19937_64 rng(1);
    const Pose p = random_rigid(rng, 5.0);
    EXPECT_LE(max_diff(pose_compose(Pose::identity(), p), p), 0.0);
    EXPECT_EQ(pose_inverse(Pose::identity()), Pose::identity());
    const Pose r = rotation_z(std::numbers::pi / 2, Vec3(1, 0, 0));
    EXPECT_LE(max_diff(pose_compose(r, pose_inverse(r)), Pose::identity()), 1e-9);
    for (int i = 0; i < 50; ++i) {
        const Pose q = random_rigid(rng, 10.0);
        EXPECT_LE(max_diff(pose_compose(q, pose_inverse(q)), Pose::identity()), 1e-6);
    }
}

TEST(Pose, NonOrthonormalRotationRejected) {
    Pose p;
    p.rotation(0, 0) = 1.1;
    EXPECT_THROW(p.validate(), GeometryError);
    EXPECT_THROW(pose_inverse(p), GeometryError);
    Pose mirror;
    mirror.rotation(2, 2) = -1;  // det = -1
    EXPECT_THROW(pose_compose(mirror, Pose::identity()), GeometryError);
}

TEST(ToLocal, IdentityFrameAndCameraOrigin) {
    std::mt19937_64 rng(2);
    const Ray r = random_ray(rng);
    EXPECT_LE(max_diff(to_local(r, Pose::identity()), r), 1e-15);
    const Pose c = random_rigid(rng, 4.0);
    const Ray from_cam{c.translation, Vec3(0.3, -0.2, 0.9).normalized()};
    EXPECT_LE(to_local(from_cam, c).origin.norm(), 1e-12);
}

TEST(ToLocal, QuarterTurnAboutZ) {
    const Ray r{Vec3::Zero(), Vec3(1, 0, 0)};
    const Ray l = to_local(r, rotation_z(std::numbers::pi / 2));
    EXPECT_NEAR(l.direction.x(), 0.0, 1e-15);
    EXPECT_NEAR(l.direction.y(), -1.0, 1e-15);
    EXPECT_NEAR(l.direction.z(), 0.0, 1e-15);
}

TEST(ToLocal, EquivariantUnderRigidMotion) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Ray r = random_ray(rng);
        const Pose c = random_rigid(rng, 5.0);
        const Pose t = random_rigid(rng, 20.0);
        const Ray a = to_local(r, c);
        const Ray b = to_local(transform_ray(t, r), pose_compose(t, c));
        EXPECT_LE(max_diff(a, b), 1e-6);
        // Inverse transform recovers the world ray.
        EXPECT_LE(max_diff(transform_ray(c, a), r), 1e-6);
    }
}

TEST(PixelRay, OpticalAxisSymmetryAndFormula) {
    const Intrinsics k{32, 16, 16, 32, 32};
    const Ray axis = pixel_ray(Pose::identity(), k, 16, 16);
    EXPECT_LE((axis.direction - Vec3::UnitZ()).norm(), 1e-15);

    const Ray left = pixel_ray(Pose::identity(), k, 16 - 5.5, 20.5);
    const Ray right = pixel_ray(Pose::identity(), k, 16 + 5.5, 20.5);
    EXPECT_DOUBLE_EQ(left.direction.x(), -right.direction.x());
    EXPECT_DOUBLE_EQ(left.direction.y(), right.direction.y());

    const Ray edge = pixel_ray(Pose::identity(), k, 32, 16);
    const Vec3 expect = Vec3(0.5, 0, 1).normalized();
    EXPECT_LE((edge.direction - expect).norm(), 1e-15);

    EXPECT_THROW(pixel_ray(Pose::identity(), k, 32.5, 3), GeometryError);
    EXPECT_THROW(pixel_ray(Pose::identity(), k, 3, -0.1), GeometryError);
}

TEST(PixelRay, DirectionsAreUnitNorm) {
    std::mt19937_64 rng(4);
    const Intrinsics k = Intrinsics::from_fov(40, 24, 1.0);
    std::uniform_real_distribution<double> uu(0, 40), vv(0, 24);
    for (int i = 0; i < 500; ++i) {
        const Pose c = random_rigid(rng, 3.0);
        const Ray r = pixel_ray(c, k, uu(rng), vv(rng));
        EXPECT_NEAR(r.direction.norm(), 1.0, 1e-6);
        EXPECT_EQ(r.origin, c.translation);
    }
}

TEST(PatchRay, CentersAndRowMajorIndexing) {
    const Intrinsics k{20, 16, 16, 32, 32};
    const Ray single = patch_ray(Pose::identity(), k, 0, {1, 1});
    EXPECT_EQ(single.direction, pixel_ray(Pose::identity(), k, 16, 16).direction);
    EXPECT_EQ(patch_ray(Pose::identity(), k, 0, {2, 2}).direction, pixel_ray(Pose::identity(), k, 8, 8).direction);
    // Patch j sits at (row j / W', col j % W').
    const PatchGrid g{3, 4};
    for (int j = 0; j < g.count(); ++j) {
        const double u = (j % 4 + 0.5) * 8.0, v = (j / 4 + 0.5) * (32.0 / 3);
        EXPECT_EQ(patch_ray(Pose::identity(), k, j, g).direction, pixel_ray(Pose::identity(), k, u, v).direction);
    }
    EXPECT_THROW(patch_ray(Pose::identity(), k, 12, g), GeometryError);
}

TEST(PosEnc, LayoutAndClosedForms) {
    PosEncConfig cfg;
    EXPECT_EQ(cfg.dim(), 78u);

    const Ray r{Vec3::Zero(), Vec3(0, 0.6, 0.8)};
    const auto e = posenc(r, cfg);
    const std::size_t L = 6;
    for (std::size_t i = 0; i < 3 * L; ++i) {
        EXPECT_EQ(e[6 + i], 0.0);          // origin sin block
        EXPECT_EQ(e[6 + 3 * L + i], 1.0);  // origin cos block
    }

    PosEncConfig raw{0, 0, std::numbers::pi, true};
    const auto rv = posenc(Ray{Vec3(1, 2, 3), Vec3(0, 0, 1)}, raw);
    EXPECT_EQ(rv, (std::vector<double>{1, 2, 3, 0, 0, 1}));

    PosEncConfig one{1, 0, 2.0, false};
    const auto s = posenc(Ray{Vec3(std::numbers::pi / (2 * 2.0), 0, 0), Vec3::UnitZ()}, one);
    ASSERT_EQ(s.size(), 6u);
    EXPECT_NEAR(s[0], 1.0, 1e-15);  // sin slot for x, l = 0
    EXPECT_NEAR(s[3], 0.0, 1e-15);  // cos slot for x, l = 0
}

TEST(PosEnc, FrequenciesDoublePerOctave) {
    PosEncConfig cfg{3, 0, 1.0, false};
    const double x = 0.3;
    const auto e = posenc(Ray{Vec3(x, 0, 0), Vec3::UnitZ()}, cfg);
    for (int l = 0; l < 3; ++l) {
        EXPECT_DOUBLE_EQ(e[3 * l], std::sin(std::ldexp(1.0, l) * x));
        EXPECT_DOUBLE_EQ(e[9 + 3 * l], std::cos(std::ldexp(1.0, l) * x));
    }
}
