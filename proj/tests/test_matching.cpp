#include "chromareg/matching.hpp"
#include "chromareg/random.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace chromareg;
using check::random_matrix;

namespace {

FeatureMatrix to_features(const ad::Matrix& m) { return m; }

FeatureMatrix brute_force_scores(const FeatureMatrix& f, const FeatureMatrix& g) {
    FeatureMatrix s(f.rows(), g.rows());
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < g.rows(); ++j) {
            const Eigen::RowVectorXd fi = f.row(i) / f.row(i).norm(), gj = g.row(j) / g.row(j).norm();
            const double dij = (fi - gj).squaredNorm();
            double row = 0.0, col = 0.0;
            for (Eigen::Index jj = 0; jj < g.rows(); ++jj) row += std::exp(-(fi - g.row(jj) / g.row(jj).norm()).squaredNorm());
            for (Eigen::Index ii = 0; ii < f.rows(); ++ii) col += std::exp(-(f.row(ii) / f.row(ii).norm() - gj).squaredNorm());
            s(i, j) = std::exp(-dij) / row * std::exp(-dij) / col;
        }
    return s;
}

}  // namespace

TEST(CoarseMatch, IdentityFeaturesGiveDiagonal) {
    const FeatureMatrix eye = FeatureMatrix::Identity(6, 6);
    const CoarseMatchSet m = coarse_match(eye, eye, 10);
    ASSERT_EQ(m.size(), 10u);
    std::set<int> diagonal;
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(m[i].patch, m[i].superpoint);
        diagonal.insert(m[i].patch);
    }
    EXPECT_EQ(diagonal.size(), 6u);
    EXPECT_GT(m[5].score, m[6].score);
}

TEST(CoarseMatch, TopOneIsMaximumEntry) {
    const FeatureMatrix f = to_features(random_matrix(7, 5, 1)), g = to_features(random_matrix(9, 5, 2));
    const CoarseMatchSet m = coarse_match(f, g, 1);
    ASSERT_EQ(m.size(), 1u);
    const FeatureMatrix s = dual_normalized_scores(f, g);
    Eigen::Index r, c;
    s.maxCoeff(&r, &c);
    EXPECT_EQ(m[0].patch, r);
    EXPECT_EQ(m[0].superpoint, c);
}

TEST(CoarseMatch, MatchesBruteForceOracle) {
    const FeatureMatrix f = to_features(random_matrix(12, 6, 3)), g = to_features(random_matrix(15, 6, 4));
    const FeatureMatrix ref = brute_force_scores(f, g);
    EXPECT_LT((dual_normalized_scores(f, g) - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(ref.minCoeff(), 0.0);
    EXPECT_LE(ref.maxCoeff(), 1.0);
    std::vector<CoarseMatch> all;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 15; ++j) all.push_back({i, j, ref(i, j)});
    std::stable_sort(all.begin(), all.end(), [](const CoarseMatch& a, const CoarseMatch& b) { return a.score > b.score; });
    const CoarseMatchSet m = coarse_match(f, g, 20);
    ASSERT_EQ(m.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(m[i].patch, all[i].patch);
        EXPECT_EQ(m[i].superpoint, all[i].superpoint);
        EXPECT_NEAR(m[i].score, all[i].score, 1e-12);
    }
}

TEST(CoarseMatch, EmptyInputsAndPermutation) {
    EXPECT_TRUE(coarse_match(FeatureMatrix(0, 4), to_features(random_matrix(3, 4, 5)), 4).empty());
    EXPECT_TRUE(coarse_match(to_features(random_matrix(3, 4, 5)), FeatureMatrix(0, 4), 4).empty());
    const FeatureMatrix f = to_features(random_matrix(8, 4, 6)), g = to_features(random_matrix(8, 4, 7));
    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    FeatureMatrix fp(8, 4);
    for (int i = 0; i < 8; ++i) fp.row(i) = f.row(perm[i]);
    const CoarseMatchSet a = coarse_match(f, g, 5), b = coarse_match(fp, g, 5);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].patch, perm[b[i].patch]);
        EXPECT_EQ(a[i].superpoint, b[i].superpoint);
        EXPECT_NEAR(a[i].score, b[i].score, 1e-12);
    }
}

TEST(FineMatch, SinglePixelSinglePoint) {
    MatchGeometry geo{{{0}}, {{0}}, {13}};
    const FeatureMatrix f = to_features(random_matrix(1, 4, 8)), g = to_features(random_matrix(1, 4, 9));
    const FineMatchSet m = fine_match({{0, 0, 1.0}}, f, g, geo);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].pixel, 13);
    EXPECT_EQ(m[0].point, 0);
    EXPECT_EQ(m[0].parent, 0);
}

TEST(FineMatch, TiesGoToLowestIndex) {
    MatchGeometry geo{{{0, 1, 2}}, {{0, 1}}, {0, 1, 2}};
    FeatureMatrix f = FeatureMatrix::Zero(3, 2), g = FeatureMatrix::Zero(2, 2);
    f.rowwise() = Eigen::RowVector2d(1, 0);
    g.rowwise() = Eigen::RowVector2d(1, 0);
    const FineMatchSet m = fine_match({{0, 0, 1.0}}, f, g, geo);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].token, 0);
    EXPECT_EQ(m[0].point, 0);
    EXPECT_EQ(fine_match({{0, 0, 1.0}}, f, g, geo), m);
}

TEST(FineMatch, MatchesMutualNearestOracle) {
    const int tokens = 40, points = 60;
    const FeatureMatrix f = to_features(random_matrix(tokens, 5, 10)), g = to_features(random_matrix(points, 5, 11));
    MatchGeometry geo;
    for (int p = 0; p < 4; ++p) {
        geo.patch_tokens.emplace_back();
        for (int t = p; t < tokens; t += 4) geo.patch_tokens.back().push_back(t);
    }
    for (int s = 0; s < 5; ++s) {
        geo.superpoint_points.emplace_back();
        for (int n = s; n < points; n += 5) geo.superpoint_points.back().push_back(n);
    }
    for (int t = 0; t < tokens; ++t) geo.token_pixel.push_back(100 + t);
    const CoarseMatchSet coarse{{0, 1, 0.9}, {2, 3, 0.8}, {3, 0, 0.7}};
    const FineMatchSet m = fine_match(coarse, f, g, geo);

    std::set<std::tuple<int, int, int>> expected;
    for (std::size_t c = 0; c < coarse.size(); ++c) {
        const auto& ts = geo.patch_tokens[coarse[c].patch];
        const auto& ps = geo.superpoint_points[coarse[c].superpoint];
        const auto dist = [&](int t, int n) {
            return (f.row(t) / f.row(t).norm() - g.row(n) / g.row(n).norm()).squaredNorm();
        };
        for (int t : ts) {
            const int best_n = *std::min_element(ps.begin(), ps.end(), [&](int a, int b) { return dist(t, a) < dist(t, b); });
            const int best_t = *std::min_element(ts.begin(), ts.end(), [&](int a, int b) { return dist(a, best_n) < dist(b, best_n); });
            if (best_t == t) expected.emplace(static_cast<int>(c), t, best_n);
        }
    }
    std::set<std::tuple<int, int, int>> got;
    for (const auto& fm : m) {
        got.emplace(fm.parent, fm.token, fm.point);
        const auto& ts = geo.patch_tokens[coarse[fm.parent].patch];
        const auto& ps = geo.superpoint_points[coarse[fm.parent].superpoint];
        EXPECT_NE(std::find(ts.begin(), ts.end(), fm.token), ts.end());
        EXPECT_NE(std::find(ps.begin(), ps.end(), fm.point), ps.end());
        EXPECT_EQ(fm.pixel, 100 + fm.token);
        EXPECT_GT(fm.confidence, 0.0);
    }
    EXPECT_EQ(got, expected);
    EXPECT_FALSE(expected.empty());
    EXPECT_TRUE(fine_match(coarse, f, g, geo, 1.0).empty());
}

TEST(PatchInlierRatio, Examples) {
    const std::vector<int> patch_of_pixel{0, 0, 1, 1};
    const std::vector<int> superpoint_of_point{0, 1, 1};
    const CorrespondenceSet gt(4, 3, {{0, 0}, {2, 1}, {3, 2}});
    EXPECT_EQ(patch_inlier_ratio({}, gt, patch_of_pixel, superpoint_of_point), 0.0);
    EXPECT_EQ(patch_inlier_ratio({{0, 0, 1}, {1, 1, 1}}, gt, patch_of_pixel, superpoint_of_point), 1.0);
    EXPECT_EQ(patch_inlier_ratio({{0, 0, 1}, {0, 1, 1}, {1, 0, 1}, {1, 1, 1}}, gt, patch_of_pixel, superpoint_of_point), 0.5);
}

TEST(PatchInlierRatio, MatchesExhaustiveMembership) {
    Rng rng(12);
    const int pixels = 200, points = 150, patches = 10, superpoints = 12;
    std::vector<int> pop(pixels), sop(points);
    for (auto& p : pop) p = static_cast<int>(rng.below(patches));
    for (auto& s : sop) s = static_cast<int>(rng.below(superpoints));
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < 60; ++i) pairs.emplace_back(static_cast<int>(rng.below(pixels)), static_cast<int>(rng.below(points)));
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    const CorrespondenceSet gt(pixels, points, pairs);
    CoarseMatchSet coarse;
    for (int i = 0; i < 30; ++i) coarse.push_back({static_cast<int>(rng.below(patches)), static_cast<int>(rng.below(superpoints)), 0.5});
    int hits = 0;
    for (const auto& c : coarse) {
        bool hit = false;
        for (int m = 0; m < pixels && !hit; ++m)
            for (int n = 0; n < points && !hit; ++n)
                hit = pop[m] == c.patch && sop[n] == c.superpoint && gt.contains(m, n);
        hits += hit;
    }
    EXPECT_DOUBLE_EQ(patch_inlier_ratio(coarse, gt, pop, sop), hits / 30.0);
}
