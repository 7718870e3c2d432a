#include "chromareg/pose.hpp"
#include "chromareg/random.hpp"

#include <gtest/gtest.h>

using namespace chromareg;

namespace {

CameraIntrinsics vga() { return {500.0, 500.0, 320.0, 240.0, 640, 480}; }

RigidTransform random_pose(Rng& rng, double max_angle = 0.3) {
    const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    return RigidTransform::from_axis_angle(axis.normalized(), rng.uniform(0.0, max_angle),
                                           {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
}

/// Points in front of the camera under `pose`, projected inside the image, with optional pixel noise.
std::vector<Correspondence2D3D> synthesize(const RigidTransform& pose, const CameraIntrinsics& k, int n, Rng& rng,
                                           double noise_px = 0.0) {
    std::vector<Correspondence2D3D> out;
    const RigidTransform inv = invert(pose);
    while (static_cast<int>(out.size()) < n) {
        const double z = rng.uniform(2.0, 6.0);
        const Eigen::Vector2d px(rng.uniform(0.0, k.width), rng.uniform(0.0, k.height));
        const Eigen::Vector3d cam = lift_with_depth(k, px, z);
        out.push_back({px + Eigen::Vector2d(rng.normal(0, noise_px), rng.normal(0, noise_px)), inv.apply(cam)});
    }
    return out;
}

}  // namespace

TEST(PnPMinimal, SixExactCorrespondences) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const RigidTransform gt = random_pose(rng);
        const auto corrs = synthesize(gt, vga(), 6, rng);
        const PoseError e = pose_error(pnp_minimal(corrs, vga()), gt);
        EXPECT_LT(e.rre_deg, 1e-4);
        EXPECT_LT(e.rte_m, 1e-6);
    }
}

TEST(PnPMinimal, IdentityWithExactPixels) {
    Rng rng(2);
    const auto corrs = synthesize(RigidTransform::identity(), vga(), 10, rng);
    const RigidTransform t = pnp_minimal(corrs, vga());
    EXPECT_LT((t.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PnPMinimal, CoplanarAndTooFewThrow) {
    std::vector<Correspondence2D3D> planar;
    const RigidTransform pose = RigidTransform::from_axis_angle({0, 1, 0}, 0.2, {0, 0, 0});
    for (int i = 0; i < 8; ++i) {
        const Eigen::Vector3d p(i % 3 - 1.0, i / 3 - 1.0, 0.3 * (i % 3) + 0.1 * (i / 3));
        const Eigen::Vector3d world(p.x(), p.y(), 4.0 + 0.5 * p.x() - 0.25 * p.y());
        const auto uv = project_unbounded(vga(), pose.apply(world));
        ASSERT_TRUE(uv.has_value());
        planar.push_back({*uv, world});
    }
    EXPECT_THROW(pnp_minimal(planar, vga()), DegenerateConfiguration);
    planar.resize(5);
    EXPECT_THROW(pnp_minimal(planar, vga()), std::invalid_argument);
}

TEST(Refine, FixedPointAndPerturbRecover) {
    Rng rng(3);
    const RigidTransform gt = random_pose(rng);
    const auto corrs = synthesize(gt, vga(), 50, rng);
    const RefineResult same = refine(gt, corrs, vga());
    EXPECT_LT((same.transform.matrix() - gt.matrix()).cwiseAbs().maxCoeff(), 1e-10);

    const RigidTransform nudge = RigidTransform::from_axis_angle(Eigen::Vector3d(1, 2, 3).normalized(), M_PI / 180.0,
                                                                 {0.01, 0.0, 0.0});
    const RefineResult r = refine(compose(nudge, gt), corrs, vga());
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.transform.matrix() - gt.matrix()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(r.final_cost, r.initial_cost);
}

TEST(Refine, NeverIncreasesResidual) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const RigidTransform gt = random_pose(rng);
        const auto corrs = synthesize(gt, vga(), 30, rng, 2.0);
        const RigidTransform start = compose(random_pose(rng, 0.05), gt);
        const RefineResult r = refine(start, corrs, vga(), 10);
        if (!std::isfinite(r.initial_cost)) continue;
        EXPECT_LE(r.final_cost, r.initial_cost);
        EXPECT_NEAR(reprojection_cost(r.transform, corrs, vga()), r.final_cost, 1e-9 * (1.0 + r.final_cost));
        EXPECT_LT(r.transform.orthonormality_error(), 1e-9);
    }
}

TEST(Refine, SingularNormalEquations) {
    std::vector<Correspondence2D3D> corrs(6, {{320.0, 240.0}, {0.0, 0.0, 3.0}});
    const RigidTransform start = RigidTransform::identity();
    const RefineResult r = refine(start, corrs, vga());
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.transform.matrix(), start.matrix());
}

TEST(RansacPnP, ExactCorrespondences) {
    Rng rng(5);
    const RigidTransform gt = random_pose(rng);
    const auto corrs = synthesize(gt, vga(), 200, rng);
    const PnPResult r = ransac_pnp(corrs, vga());
    ASSERT_TRUE(r.converged);
    const PoseError e = pose_error(r.transform, gt);
    EXPECT_LT(e.rre_deg, 1e-3);
    EXPECT_LT(e.rte_m, 1e-4);
    EXPECT_EQ(r.inlier_count(), 200u);
}

TEST(RansacPnP, OutliersAndNoise) {
    int successes = 0;
    const int trials = 20;
    for (int seed = 0; seed < trials; ++seed) {
        Rng rng(1000 + seed);
        const RigidTransform gt = random_pose(rng);
        auto corrs = synthesize(gt, vga(), 200, rng, 0.5);
        for (int i = 0; i < 60; ++i) corrs[i].pixel = {rng.uniform(0.0, 640.0), rng.uniform(0.0, 480.0)};
        RansacOptions options;
        options.seed = static_cast<std::uint64_t>(seed);
        const PnPResult r = ransac_pnp(corrs, vga(), options);
        const PoseError e = pose_error(r.transform, gt);
        successes += r.converged && e.rre_deg < 0.5 && e.rte_m < 0.01;
        for (std::size_t i = 0; i < corrs.size(); ++i)
            if (r.inliers[i]) {
                const auto uv = project_unbounded(vga(), r.transform.apply(corrs[i].point));
                ASSERT_TRUE(uv.has_value());
                EXPECT_LT((*uv - corrs[i].pixel).norm(), options.threshold_px);
            }
    }
    EXPECT_GE(successes, trials - 1);
}

TEST(RansacPnP, TooFewAndDeterministic) {
    Rng rng(6);
    const RigidTransform gt = random_pose(rng);
    auto five = synthesize(gt, vga(), 5, rng);
    const PnPResult none = ransac_pnp(five, vga());
    EXPECT_FALSE(none.converged);
    EXPECT_EQ(none.transform.matrix(), Eigen::Matrix4d::Identity());

    auto corrs = synthesize(gt, vga(), 80, rng, 1.0);
    for (int i = 0; i < 30; ++i) corrs[i].pixel = {rng.uniform(0.0, 640.0), rng.uniform(0.0, 480.0)};
    const PnPResult a = ransac_pnp(corrs, vga()), b = ransac_pnp(corrs, vga());
    EXPECT_EQ(a.transform.matrix(), b.transform.matrix());
    EXPECT_EQ(a.inliers, b.inliers);
    EXPECT_EQ(a.iterations, b.iterations);
}
