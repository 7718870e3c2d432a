#include "chromareg/transformer.hpp"
#include "support/attention_oracle.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace chromareg;
using check::gradient_relative_error;
using check::block_ref;
using check::layer_norm_ref;
using check::linear_ref;
using check::random_matrix;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

TransformerConfig small_config() {
    TransformerConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.blocks = 2;
    c.fourier_bands = 2;
    return c;
}

struct Tokens {
    TokenInputs image;
    TokenInputs points;
};

Tokens random_tokens(int ti, int tp, int c_img, int c_pt, std::uint64_t seed) {
    Tokens t;
    t.image.features = ad::variable(random_matrix(ti, c_img, seed));
    t.image.coordinates = random_matrix(ti, 2, seed + 1) * 20.0;
    t.image.color_distance = random_matrix(ti, 1, seed + 2).cwiseAbs() * 5.0;
    t.points.features = ad::variable(random_matrix(tp, c_pt, seed + 3));
    t.points.coordinates = random_matrix(tp, 3, seed + 4);
    t.points.color_distance = random_matrix(tp, 1, seed + 5).cwiseAbs() * 5.0;
    return t;
}

}  // namespace

TEST(FourierEmbed, OriginAndPadding) {
    const Matrix e = fourier_embed(Matrix::Zero(2, 3), 4, 32);
    for (int j = 0; j < 24; j += 2) {
        EXPECT_EQ(e(0, j), 0.0);
        EXPECT_EQ(e(0, j + 1), 1.0);
    }
    EXPECT_EQ(e.rightCols(8).norm(), 0.0);
    EXPECT_EQ(e.row(0), e.row(1));
    Matrix c(1, 1);
    c << 0.25;
    const Matrix f = fourier_embed(c, 2, 4);
    EXPECT_NEAR(f(0, 0), std::sin(M_PI / 4), 1e-15);
    EXPECT_NEAR(f(0, 2), std::sin(M_PI / 2), 1e-15);
    EXPECT_NEAR(f(0, 3), std::cos(M_PI / 2), 1e-15);
    EXPECT_THROW(fourier_embed(Matrix::Zero(1, 3), 4, 23), std::invalid_argument);
    EXPECT_THROW(fourier_embed(Matrix::Zero(1, 3), 0, 24), std::invalid_argument);
}

TEST(NormalizeCoordinates, UnitBoxPerAxis) {
    Matrix c(3, 2);
    c << 2, 5, 4, 5, 6, 5;
    const Matrix n = normalize_coordinates(c);
    EXPECT_NEAR(n(0, 0), 0.0, 1e-15);
    EXPECT_NEAR(n(1, 0), 0.5, 1e-15);
    EXPECT_NEAR(n(2, 0), 1.0, 1e-15);
    EXPECT_EQ(n.col(1).norm(), 0.0);
}

TEST(ColorDistance, ImageExamples) {
    EXPECT_EQ(color_distance_image(Matrix::Constant(12, 3, 0.4), 3, 4).norm(), 0.0);
    Matrix grid = Matrix::Zero(9, 3);
    grid.row(4).setOnes();
    const Eigen::VectorXd d = color_distance_image(grid, 3, 3);
    EXPECT_DOUBLE_EQ(d(4), 24.0);
    EXPECT_DOUBLE_EQ(d(0), 3.0);
}

TEST(ColorDistance, ImageMatchesBruteForce) {
    const int rows = 5, cols = 7;
    const Matrix v = random_matrix(rows * cols, 3, 41).cwiseAbs();
    const Eigen::VectorXd d = color_distance_image(v, rows, cols);
    for (int c = 0; c < rows * cols; ++c) {
        double ref = 0.0;
        for (int n = 0; n < rows * cols; ++n) {
            const int dr = std::abs(n / cols - c / cols), dc = std::abs(n % cols - c % cols);
            if (n == c || dr > 1 || dc > 1) continue;
            for (int ch = 0; ch < 3; ++ch) ref += std::abs(v(n, ch) - v(c, ch));
        }
        EXPECT_NEAR(d(c), ref, 1e-6);
    }
}

TEST(ColorDistance, PointExamples) {
    Matrix colors(3, 3);
    colors << 1, 0, 0, 0, 0, 0, 1, 1, 1;
    const Eigen::VectorXd d = color_distance_points(colors, {1, 2, 0, 2, 0, 1}, 2);
    EXPECT_DOUBLE_EQ(d(0), 3.0);
    EXPECT_EQ(color_distance_points(Matrix::Constant(3, 3, 0.7), {1, 2, 0, 2, 0, 1}, 2).norm(), 0.0);
    EXPECT_THROW(color_distance_points(colors, {1, 2, 0}, 2), std::invalid_argument);
    EXPECT_THROW(color_distance_points(colors, {1, 2, 0, 2, 0, 7}, 2), std::invalid_argument);
}

TEST(ColorDistance, PointsMatchBruteForceWithKnn) {
    const Matrix coords = random_matrix(30, 3, 51);
    const Matrix colors = random_matrix(30, 3, 52).cwiseAbs();
    int k = 0;
    const std::vector<int> nb = knn_excluding_self(coords, 8, k);
    ASSERT_EQ(k, 8);
    const Eigen::VectorXd d = color_distance_points(colors, nb, k);
    for (int i = 0; i < 30; ++i) {
        std::vector<std::pair<double, int>> all;
        for (int j = 0; j < 30; ++j)
            if (j != i) all.emplace_back((coords.row(j) - coords.row(i)).norm(), j);
        std::sort(all.begin(), all.end());
        double ref = 0.0;
        for (int j = 0; j < 8; ++j) ref += (colors.row(all[j].second) - colors.row(i)).cwiseAbs().sum();
        EXPECT_NEAR(d(i), ref, 1e-6);
    }
    int k_small = 0;
    knn_excluding_self(coords.topRows(3), 8, k_small);
    EXPECT_EQ(k_small, 2);
}

TEST(AttentionBlock, MatchesOracleAndZeroBiasReduction) {
    nn::ParameterStore s;
    Rng rng(3);
    const AttentionBlock block(s, "blk", 16, 4, 2, AttentionKind::kSelf, rng);
    const Var x = ad::constant(random_matrix(9, 16, 61));
    const Eigen::VectorXd d = random_matrix(9, 1, 62).cwiseAbs() * 4.0;
    EXPECT_LT(max_abs_diff(block.self_attend(x, d).value(), block_ref(x.value(), x.value(), &d, s, "blk", 4, true)), 1e-10);

    s.get("blk.color_bias").node()->value.setZero();
    const Matrix biased_zero = block.self_attend(x, d).value();
    EXPECT_LT(max_abs_diff(biased_zero, block_ref(x.value(), x.value(), nullptr, s, "blk", 4, true)), 1e-10);
    EXPECT_LT(max_abs_diff(biased_zero, block.self_attend(x, Eigen::VectorXd::Zero(9)).value()), 1e-12);
}

TEST(AttentionBlock, SoftmaxRowsSumToOne) {
    nn::ParameterStore s;
    Rng rng(4);
    const AttentionBlock block(s, "blk", 16, 4, 2, AttentionKind::kSelf, rng);
    const AttentionBlock cross(s, "cross", 16, 4, 2, AttentionKind::kCross, rng);
    block.self_attend(ad::constant(random_matrix(11, 16, 71, 3.0)), random_matrix(11, 1, 72).cwiseAbs() * 10.0);
    ASSERT_EQ(block.last_attention().size(), 4u);
    for (const auto& p : block.last_attention())
        for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    cross.cross_attend(ad::constant(random_matrix(5, 16, 73)), ad::constant(random_matrix(13, 16, 74)));
    for (const auto& p : cross.last_attention()) {
        EXPECT_EQ(p.rows(), 5);
        EXPECT_EQ(p.cols(), 13);
        for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    }
}

TEST(AttentionBlock, SingleTokenAndSingleKey) {
    nn::ParameterStore s;
    Rng rng(5);
    const AttentionBlock self(s, "self", 8, 2, 2, AttentionKind::kSelf, rng);
    const AttentionBlock block(s, "blk", 8, 2, 2, AttentionKind::kCross, rng);
    const Var one = ad::constant(random_matrix(1, 8, 81));
    self.self_attend(one, Eigen::VectorXd::Constant(1, 2.0));
    for (const auto& p : self.last_attention()) EXPECT_EQ(p(0, 0), 1.0);

    const Matrix queries = random_matrix(6, 8, 82);
    const Matrix ctx = random_matrix(1, 8, 83);
    const Matrix out = block.cross_attend(ad::constant(queries), ad::constant(ctx)).value();
    const Matrix value_row = linear_ref(linear_ref(layer_norm_ref(ctx, s, "blk.norm_kv"), s, "blk.v"), s, "blk.out");
    for (Eigen::Index i = 0; i < 6; ++i) {
        const Matrix y = queries.row(i) + value_row;
        const Matrix hidden = linear_ref(layer_norm_ref(y, s, "blk.norm_ffn"), s, "blk.ffn1").cwiseMax(0.0);
        EXPECT_LT(max_abs_diff(out.row(i), y + linear_ref(hidden, s, "blk.ffn2")), 1e-12);
    }
}

TEST(AttentionBlock, CrossOnIdenticalSetsIsSelfAttention) {
    nn::ParameterStore s;
    Rng rng(6);
    const AttentionBlock block(s, "blk", 16, 4, 2, AttentionKind::kCross, rng);
    const Var x = ad::constant(random_matrix(7, 16, 91));
    EXPECT_LT(max_abs_diff(block.cross_attend(x, x).value(), block.self_attend(x, Eigen::VectorXd()).value()), 1e-12);
    const Matrix out = block.cross_attend(x, ad::constant(random_matrix(3, 16, 92))).value();
    EXPECT_EQ(out.rows(), 7);
    EXPECT_EQ(out.cols(), 16);
    const AttentionBlock self(s, "self", 16, 4, 2, AttentionKind::kSelf, rng);
    EXPECT_THROW(self.cross_attend(x, x), std::logic_error);
}

TEST(ColorAwareTransformer, ZeroBlocksRejected) {
    TransformerConfig c = small_config();
    c.blocks = 0;
    nn::ParameterStore s;
    Rng rng(1);
    EXPECT_THROW(ColorAwareTransformer(s, c, 8, 8, rng), ConfigError);
}

TEST(ColorAwareTransformer, ShapesForRandomSizes) {
    Rng sizes(12);
    for (int trial = 0; trial < 5; ++trial) {
        const int ti = 1 + static_cast<int>(sizes.below(20)), tp = 1 + static_cast<int>(sizes.below(20));
        nn::ParameterStore s;
        Rng rng(trial);
        const ColorAwareTransformer t(s, small_config(), 10, 12, rng);
        const Tokens tok = random_tokens(ti, tp, 10, 12, 100 + trial);
        const auto [x, y] = t(tok.image, tok.points);
        EXPECT_EQ(x.rows(), ti);
        EXPECT_EQ(y.rows(), tp);
        EXPECT_EQ(x.cols(), 16);
        EXPECT_EQ(y.cols(), 16);
    }
}

TEST(ColorAwareTransformer, ZeroBiasMatchesPlainStack) {
    nn::ParameterStore s;
    Rng rng(21);
    const TransformerConfig config = small_config();
    const ColorAwareTransformer t(s, config, 10, 12, rng);
    Tokens tok = random_tokens(9, 11, 10, 12, 200);
    for (const auto& name : t.color_bias_names()) s.get(name).node()->value.setZero();
    const auto [x, y] = t(tok.image, tok.points);

    const int d = config.d_model;
    Matrix xi = linear_ref(tok.image.features.value(), s, "transformer.image_in") +
                fourier_embed(normalize_coordinates(tok.image.coordinates), config.fourier_bands, d);
    Matrix yi = linear_ref(tok.points.features.value(), s, "transformer.point_in") +
                fourier_embed(normalize_coordinates(tok.points.coordinates), config.fourier_bands, d);
    for (int b = 0; b < config.blocks; ++b) {
        const std::string p = "transformer.block" + std::to_string(b);
        xi = block_ref(xi, xi, nullptr, s, p + ".image_self", config.heads, true);
        yi = block_ref(yi, yi, nullptr, s, p + ".point_self", config.heads, true);
        const Matrix xn = block_ref(xi, yi, nullptr, s, p + ".image_cross", config.heads, false);
        const Matrix yn = block_ref(yi, xi, nullptr, s, p + ".point_cross", config.heads, false);
        xi = xn;
        yi = yn;
    }
    EXPECT_LT(max_abs_diff(x.value(), layer_norm_ref(xi, s, "transformer.image_out")), 1e-5);
    EXPECT_LT(max_abs_diff(y.value(), layer_norm_ref(yi, s, "transformer.point_out")), 1e-5);
}

TEST(ColorAwareTransformer, GradientsMatchFiniteDifferences) {
    nn::ParameterStore s;
    Rng rng(31);
    TransformerConfig config = small_config();
    config.d_model = 8;
    config.blocks = 2;
    config.fourier_bands = 1;
    const ColorAwareTransformer t(s, config, 5, 6, rng);
    Tokens tok = random_tokens(6, 7, 5, 6, 300);
    std::vector<Var> inputs{tok.image.features, tok.points.features};
    for (const auto& name : t.color_bias_names()) inputs.push_back(s.get(name));
    const Matrix wx = random_matrix(6, 8, 301), wy = random_matrix(7, 8, 302);
    const auto loss = [&] {
        const auto [x, y] = t(tok.image, tok.points);
        return ad::add(ad::sum_all(ad::mul(x, ad::constant(wx))), ad::sum_all(ad::mul(y, ad::constant(wy))));
    };
    EXPECT_LT(gradient_relative_error(loss, inputs), 1e-4);
}

TEST(AttentionBlock, PointSelfAttentionPermutationEquivariant) {
    nn::ParameterStore s;
    Rng rng(41);
    const AttentionBlock block(s, "blk", 16, 4, 2, AttentionKind::kSelf, rng);
    const Matrix x = random_matrix(10, 16, 111);
    const Eigen::VectorXd d = random_matrix(10, 1, 112).cwiseAbs() * 3.0;
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(5);
    shuffle.shuffle(perm);
    Matrix xp(10, 16);
    Eigen::VectorXd dp(10);
    for (int i = 0; i < 10; ++i) {
        xp.row(i) = x.row(perm[i]);
        dp(i) = d(perm[i]);
    }
    const Matrix a = block.self_attend(ad::constant(x), d).value();
    const Matrix b = block.self_attend(ad::constant(xp), dp).value();
    for (int i = 0; i < 10; ++i) EXPECT_LT((a.row(perm[i]) - b.row(i)).cwiseAbs().maxCoeff(), 1e-10);
}
