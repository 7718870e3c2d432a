#include "chromareg/backbones.hpp"
#include "chromareg/data.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace chromareg;

namespace {

CameraIntrinsics small_camera() { return {56.0, 56.0, 32.0, 24.0, 64, 48}; }

NetworkConfig tiny_network() {
    NetworkConfig c;
    c.image_stem = 8;
    c.image_widths = {8, 12, 16};
    c.image_coarse = 16;
    c.image_fine = 8;
    c.point_widths = {8, 12, 16};
    c.point_coarse = 16;
    c.point_fine = 8;
    return c;
}

ColoredPointCloud random_cloud(int n, std::uint64_t seed, double extent = 1.0) {
    Rng rng(seed);
    ColoredPointCloud cloud;
    for (int i = 0; i < n; ++i) {
        cloud.positions.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(1.0, 3.0));
        cloud.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    return cloud;
}

ColorImage random_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    ColorImage img(w, h);
    for (auto& p : img.pixels) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    return img;
}

/// Clusters on a unit lattice, so the coarsest level (voxel 0.25) keeps one point per cluster.
ColoredPointCloud clustered_cloud(int clusters, int per_cluster, std::uint64_t seed) {
    Rng rng(seed);
    ColoredPointCloud cloud;
    for (int c = 0; c < clusters; ++c) {
        const Eigen::Vector3d center(c % 8 + 0.05, c / 8 + 0.05, 2.05);
        for (int i = 0; i < per_cluster; ++i) {
            cloud.positions.push_back(center + Eigen::Vector3d(rng.uniform(0, 0.15), rng.uniform(0, 0.15), rng.uniform(0, 0.15)));
            cloud.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
        }
    }
    return cloud;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(ImageBackbone, CoarseShapeFromStride) {
    NetworkConfig config;
    nn::ParameterStore store;
    Rng rng(1);
    const ImageBackbone net(store, config.effective(), rng);
    const ImageFeatures f = net(random_image(64, 64, 2));
    EXPECT_EQ(f.coarse.height, 8);
    EXPECT_EQ(f.coarse.width, 8);
    EXPECT_EQ(f.coarse.channels(), 512);
    EXPECT_EQ(f.fine.height, 32);
    EXPECT_EQ(f.fine.width, 32);
    EXPECT_EQ(f.fine.channels(), 128);
}

TEST(ImageBackbone, DeterministicAndSeeded) {
    const NetworkConfig config = tiny_network();
    nn::ParameterStore s1, s2;
    Rng r1(5), r2(5);
    const ImageBackbone a(s1, config, r1), b(s2, config, r2);
    const ColorImage img = random_image(64, 48, 3);
    const ImageFeatures fa = a(img), fa2 = a(img), fb = b(img);
    EXPECT_EQ(fa.coarse.data.value(), fa2.coarse.data.value());
    EXPECT_EQ(fa.coarse.data.value(), fb.coarse.data.value());
    EXPECT_EQ(fa.fine.data.value(), fb.fine.data.value());
}

TEST(ImageBackbone, ConstantImageGivesConstantCoarseFeatures) {
    const NetworkConfig config = tiny_network();
    nn::ParameterStore store;
    Rng rng(8);
    const ImageBackbone net(store, config, rng);
    const ImageFeatures f = net(ColorImage(64, 48, {0.3, 0.6, 0.1}));
    const Matrix& c = f.coarse.data.value();
    for (Eigen::Index r = 1; r < c.rows(); ++r) EXPECT_LT((c.row(r) - c.row(0)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ImageBackbone, ImageSmallerThanStrideThrows) {
    const NetworkConfig config = tiny_network();
    nn::ParameterStore store;
    Rng rng(8);
    const ImageBackbone net(store, config, rng);
    EXPECT_THROW(net(ColorImage(7, 30)), std::invalid_argument);
    EXPECT_NO_THROW(net(ColorImage(8, 8)));
}

TEST(DataFusion, RedPixelAndBehindCamera) {
    const CameraIntrinsics k{10.0, 10.0, 2.0, 2.0, 4, 4};
    ColorImage img(4, 4, {0.2, 0.2, 0.2});
    img.at(2, 2) = {1.0, 0.0, 0.0};
    ColoredPointCloud cloud;
    cloud.positions = {{0.05, 0.05, 1.0}, {0.0, 0.0, -1.0}, {5.0, 0.0, 1.0}};
    cloud.colors = {{0, 0, 1}, {0, 1, 0}, {1, 1, 1}};
    const FusionInput f = data_fusion(cloud, img, k);
    ASSERT_EQ(f.features.rows(), 3);
    ASSERT_EQ(f.features.cols(), 6);
    Eigen::Matrix<double, 1, 6> red;
    red << 0.05, 0.05, 1.0, 1.0, 0.0, 0.0;
    EXPECT_LT((f.features.row(0) - red).norm(), 1e-12);
    Eigen::Matrix<double, 1, 6> behind;
    behind << 0.0, 0.0, -1.0, 0.0, 0.0, 0.0;
    EXPECT_LT((f.features.row(1) - behind).norm(), 1e-12);
    EXPECT_TRUE(f.mask[0]);
    EXPECT_FALSE(f.mask[1]);
    EXPECT_FALSE(f.mask[2]);
    EXPECT_EQ(f.features.block(2, 3, 1, 3).norm(), 0.0);
    EXPECT_NEAR(f.valid_fraction(), 1.0 / 3.0, 1e-12);
}

TEST(DataFusion, MaskedFractionTracksOverlap) {
    const auto k = small_camera();
    SceneOptions opt;
    opt.enclosure = true;
    const auto scene = generate_scene(4, 5, 4.0, opt);
    const RigidTransform a = look_at({1.0, -1.2, 1.4}, {0, 0.3, 0.5});
    const auto near = build_pair(scene, a, look_at({1.04, -1.2, 1.4}, {0.02, 0.3, 0.5}), k);
    ASSERT_TRUE(near.accepted());
    const FusionInput f = data_fusion(transform_cloud(near.pair->cloud, near.pair->gt), near.pair->image, k);
    EXPECT_NEAR(f.valid_fraction(), near.pair->overlap, 0.05);

    // Wider baseline: the gap is exactly the in-frustum points that fail the depth check.
    const auto wide = build_pair(scene, a, look_at({1.2, -1.1, 1.45}, {0.1, 0.3, 0.5}), k);
    ASSERT_TRUE(wide.accepted());
    const RegistrationPair& pair = *wide.pair;
    const ColoredPointCloud moved = transform_cloud(pair.cloud, pair.gt);
    const FusionInput g = data_fusion(moved, pair.image, k);
    int hidden = 0;
    for (std::size_t i = 0; i < moved.size(); ++i) {
        if (!g.mask[i]) continue;
        const auto uv = project(k, RigidTransform::identity(), moved.positions[i]);
        ASSERT_TRUE(uv.has_value());
        const double d = pair.depth.at(static_cast<int>(uv->y()), static_cast<int>(uv->x()));
        hidden += !(d > 0.0 && std::abs(moved.positions[i].z() - d) <= kOverlapDepthTolerance);
    }
    EXPECT_NEAR(g.valid_fraction() - pair.overlap, static_cast<double>(hidden) / moved.size(), 1e-12);
}

TEST(PointBackbone, CoarseShapeAtDefaultWidths) {
    NetworkConfig config;
    const auto cloud = clustered_cloud(40, 6, 3);
    const PointPyramid pyramid = grid_subsample(cloud, config.voxel, config.n_levels(), config.knn);
    ASSERT_EQ(pyramid.coarsest().size(), 40u);
    nn::ParameterStore store;
    Rng rng(2);
    const PointBackbone net(store, config.effective(), rng);
    const PointFeatures f = net(pyramid, data_fusion(cloud, ColorImage(64, 48), small_camera()), true);
    EXPECT_EQ(f.coarse.rows(), 40);
    EXPECT_EQ(f.coarse.cols(), 1024);
    EXPECT_EQ(f.fine.rows(), 240);
    EXPECT_EQ(f.fine.cols(), 128);
}

TEST(PointBackbone, ZeroConnectorsMatchFusionDisabled) {
    const NetworkConfig config = tiny_network();
    const auto cloud = random_cloud(300, 4);
    const PointPyramid pyramid = grid_subsample(cloud, config.voxel, config.n_levels(), config.knn);
    nn::ParameterStore store;
    Rng rng(9);
    const PointBackbone net(store, config, rng);
    for (const auto& name : net.connector_names()) EXPECT_EQ(store.get(name).value().norm(), 0.0) << name;
    const FusionInput fusion = data_fusion(cloud, random_image(64, 48, 5), small_camera());
    const PointFeatures on = net(pyramid, fusion, true), off = net(pyramid, fusion, false);
    EXPECT_LT(max_abs_diff(on.coarse.value(), off.coarse.value()), 1e-6);
    EXPECT_LT(max_abs_diff(on.fine.value(), off.fine.value()), 1e-6);

    for (const auto& name : net.connector_names())
        store.get(name).node()->value.setConstant(0.05);
    const PointFeatures changed = net(pyramid, fusion, true);
    EXPECT_GT(max_abs_diff(changed.fine.value(), off.fine.value()), 1e-6);
}

TEST(PointBackbone, PermutationEquivariant) {
    const NetworkConfig config = tiny_network();
    const auto cloud = random_cloud(200, 6);
    std::vector<int> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng(10);
    shuffle_rng.shuffle(perm);
    ColoredPointCloud permuted;
    for (int i : perm) {
        permuted.positions.push_back(cloud.positions[i]);
        permuted.colors.push_back(cloud.colors[i]);
    }
    nn::ParameterStore store;
    Rng rng(11);
    const PointBackbone net(store, config, rng);
    const ColorImage img = random_image(64, 48, 12);
    const auto run = [&](const ColoredPointCloud& c) {
        const PointPyramid p = grid_subsample(c, config.voxel, config.n_levels(), config.knn);
        return std::make_pair(p, net(p, data_fusion(c, img, small_camera()), true));
    };
    const auto [pa, fa] = run(cloud);
    const auto [pb, fb] = run(permuted);
    for (std::size_t i = 0; i < perm.size(); ++i)
        EXPECT_LT((fa.fine.value().row(perm[i]) - fb.fine.value().row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-5);
    // Voxels are ordered by key, so the coarse rows line up directly.
    ASSERT_EQ(pa.coarsest().size(), pb.coarsest().size());
    EXPECT_LT(max_abs_diff(fa.coarse.value(), fb.coarse.value()), 1e-5);
}

TEST(PointBackbone, FusionSizeMismatchThrows) {
    const NetworkConfig config = tiny_network();
    const auto cloud = random_cloud(100, 7);
    const PointPyramid pyramid = grid_subsample(cloud, config.voxel, config.n_levels(), config.knn);
    nn::ParameterStore store;
    Rng rng(3);
    const PointBackbone net(store, config, rng);
    const FusionInput wrong = data_fusion(random_cloud(99, 8), ColorImage(64, 48), small_camera());
    EXPECT_THROW(net(pyramid, wrong, true), std::invalid_argument);
    const PointPyramid short_pyramid = grid_subsample(cloud, config.voxel, 2, config.knn);
    EXPECT_THROW(net(short_pyramid, data_fusion(cloud, ColorImage(64, 48), small_camera()), true), std::invalid_argument);
}

TEST(Backbones, ShapeContractOverRandomConfigs) {
    Rng rng(77);
    const auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    for (int trial = 0; trial < 20; ++trial) {
        NetworkConfig c;
        c.image_stem = pick(8, 12);
        const int stages = pick(2, 3);
        c.image_widths.clear();
        for (int s = 0; s < stages; ++s) c.image_widths.push_back(pick(8, 16));
        c.image_coarse = pick(8, 20);
        c.image_fine = c.point_fine = pick(8, 12);
        c.fine_stride = stages == 3 && trial % 2 ? 4 : 2;
        const int levels = pick(2, 3);
        c.point_widths.clear();
        for (int l = 0; l < levels; ++l) c.point_widths.push_back(pick(8, 16));
        c.point_coarse = pick(8, 20);
        c.knn = pick(4, 10);
        c.toy = trial % 3 == 0;
        if (c.toy) {
            c.image_stem *= 2;
            c.image_coarse *= 2;
            c.image_fine *= 2;
            c.point_fine *= 2;
            c.point_coarse *= 2;
            for (auto& w : c.image_widths) w *= 2;
            for (auto& w : c.point_widths) w *= 2;
        }
        c.validate();
        const NetworkConfig e = c.effective();
        const int w = pick(c.coarse_stride(), 40), h = pick(c.coarse_stride(), 40);

        nn::ParameterStore store;
        Rng init(static_cast<std::uint64_t>(trial));
        const ImageBackbone image(store, e, init);
        const ImageFeatures f = image(random_image(w, h, trial + 100));
        const PatchGrid coarse = patchify(w, h, c.coarse_stride());
        const PatchGrid fine = patchify(w, h, c.fine_stride);
        EXPECT_EQ(f.coarse.height, coarse.rows);
        EXPECT_EQ(f.coarse.width, coarse.cols);
        EXPECT_EQ(f.coarse.channels(), e.image_coarse);
        EXPECT_EQ(f.fine.height, fine.rows);
        EXPECT_EQ(f.fine.width, fine.cols);
        EXPECT_EQ(f.fine.channels(), e.image_fine);

        const auto cloud = random_cloud(pick(30, 120), trial + 200);
        const PointPyramid pyramid = grid_subsample(cloud, c.voxel, c.n_levels(), c.knn);
        const PointBackbone points(store, e, init);
        const PointFeatures p = points(pyramid, data_fusion(cloud, ColorImage(w, h), small_camera()), true);
        EXPECT_EQ(p.coarse.rows(), static_cast<Eigen::Index>(pyramid.coarsest().size()));
        EXPECT_EQ(p.coarse.cols(), e.point_coarse);
        EXPECT_EQ(p.fine.rows(), static_cast<Eigen::Index>(cloud.size()));
        EXPECT_EQ(p.fine.cols(), e.point_fine);
        EXPECT_EQ(e.image_fine, e.point_fine);
    }
}
