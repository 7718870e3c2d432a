#include "chromareg/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace chromareg {

Matrix normalize_coordinates(const Matrix& coords) {
    Matrix out = Matrix::Zero(coords.rows(), coords.cols());
    if (coords.rows() == 0) return out;
    for (Eigen::Index c = 0; c < coords.cols(); ++c) {
        const double lo = coords.col(c).minCoeff();
        const double span = coords.col(c).maxCoeff() - lo;
        if (span > 0.0) out.col(c) = ((coords.col(c).array() - lo) / span).matrix();
    }
    return out;
}

Matrix fourier_embed(const Matrix& coords, int n_bands, int d_out) {
    if (n_bands < 1) throw std::invalid_argument("fourier_embed: n_bands must be >= 1");
    const auto axes = static_cast<int>(coords.cols());
    if (2 * axes * n_bands > d_out) throw std::invalid_argument("fourier_embed: 2 * axes * n_bands exceeds d_out");
    Matrix out = Matrix::Zero(coords.rows(), d_out);
    for (Eigen::Index t = 0; t < coords.rows(); ++t)
        for (int a = 0; a < axes; ++a)
            for (int b = 0; b < n_bands; ++b) {
                const double w = std::ldexp(M_PI, b) * coords(t, a);
                out(t, 2 * (a * n_bands + b)) = std::sin(w);
                out(t, 2 * (a * n_bands + b) + 1) = std::cos(w);
            }
    return out;
}

Eigen::VectorXd color_distance_image(const Matrix& values, int rows, int cols) {
    if (rows < 1 || cols < 1 || values.rows() != static_cast<Eigen::Index>(rows) * cols)
        throw std::invalid_argument("color_distance_image: grid shape does not match the values");
    Eigen::VectorXd d = Eigen::VectorXd::Zero(values.rows());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const Eigen::Index center = static_cast<Eigen::Index>(r) * cols + c;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
                    d(center) += (values.row(static_cast<Eigen::Index>(rr) * cols + cc) - values.row(center)).cwiseAbs().sum();
                }
        }
    return d;
}

Eigen::VectorXd color_distance_points(const Matrix& values, const std::vector<int>& neighbors, int k) {
    if (k < 1 || neighbors.size() != static_cast<std::size_t>(values.rows()) * k)
        throw std::invalid_argument("color_distance_points: neighbor list does not match k");
    Eigen::VectorXd d = Eigen::VectorXd::Zero(values.rows());
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        for (int j = 0; j < k; ++j) {
            const int n = neighbors[static_cast<std::size_t>(i) * k + j];
            if (n < 0 || n >= values.rows()) throw std::invalid_argument("color_distance_points: index out of range");
            d(i) += (values.row(n) - values.row(i)).cwiseAbs().sum();
        }
    return d;
}

std::vector<int> knn_excluding_self(const Matrix& coords, int k, int& k_out) {
    const auto n = static_cast<int>(coords.rows());
    k_out = std::max(0, std::min(k, n - 1));
    std::vector<int> out(static_cast<std::size_t>(n) * k_out);
    std::vector<std::pair<double, int>> cand;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) cand.emplace_back((coords.row(j) - coords.row(i)).squaredNorm(), j);
        std::partial_sort(cand.begin(), cand.begin() + k_out, cand.end());
        for (int j = 0; j < k_out; ++j) out[static_cast<std::size_t>(i) * k_out + j] = cand[j].second;
    }
    return out;
}

AttentionBlock::AttentionBlock(nn::ParameterStore& store, const std::string& name, int d_model, int heads,
                               int ffn_multiplier, AttentionKind kind, Rng& rng)
    : d_model_(d_model), heads_(heads) {
    if (heads < 1 || d_model % heads != 0) throw std::invalid_argument("AttentionBlock: d_model % heads != 0");
    norm_q_ = nn::LayerNorm(store, name + ".norm_q", d_model);
    if (kind == AttentionKind::kCross) norm_kv_ = nn::LayerNorm(store, name + ".norm_kv", d_model);
    wq_ = nn::Linear(store, name + ".q", d_model, d_model, rng, nn::Init::kXavier);
    wk_ = nn::Linear(store, name + ".k", d_model, d_model, rng, nn::Init::kXavier);
    wv_ = nn::Linear(store, name + ".v", d_model, d_model, rng, nn::Init::kXavier);
    wo_ = nn::Linear(store, name + ".out", d_model, d_model, rng, nn::Init::kXavier);
    if (kind == AttentionKind::kSelf) {
        bias_name_ = name + ".color_bias";
        wd_ = store.create(bias_name_, nn::init_matrix(1, d_model, nn::Init::kXavier, rng) * 0.1);
    }
    norm_ffn_ = nn::LayerNorm(store, name + ".norm_ffn", d_model);
    ffn1_ = nn::Linear(store, name + ".ffn1", d_model, d_model * ffn_multiplier, rng);
    ffn2_ = nn::Linear(store, name + ".ffn2", d_model * ffn_multiplier, d_model, rng, nn::Init::kXavier);
}

Var AttentionBlock::attend(const Var& q_in, const Var& kv_in, const Eigen::VectorXd* color_distance) const {
    if (q_in.cols() != d_model_ || kv_in.cols() != d_model_)
        throw std::invalid_argument("attention: token width differs from d_model");
    const Var q = wq_(q_in);
    Var k = wk_(kv_in);
    if (color_distance) {
        if (!wd_.defined()) throw std::logic_error("attention: block was built without a color bias");
        if (color_distance->size() != kv_in.rows()) throw std::invalid_argument("attention: one D per key token");
        Matrix dcol = *color_distance;
        k = ad::add(k, ad::matmul(ad::constant(std::move(dcol)), wd_));
    }
    const Var v = wv_(kv_in);
    const int dh = d_model_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> head_out;
    last_attention_.clear();
    for (int h = 0; h < heads_; ++h) {
        const Var qh = ad::slice_cols(q, h * dh, dh);
        const Var kh = ad::slice_cols(k, h * dh, dh);
        const Var vh = ad::slice_cols(v, h * dh, dh);
        const Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        last_attention_.push_back(p.value());
        head_out.push_back(ad::matmul(p, vh));
    }
    return wo_(heads_ == 1 ? head_out.front() : ad::concat_cols(head_out));
}

Var AttentionBlock::feed_forward(const Var& x) const {
    return ad::add(x, ffn2_(ad::relu(ffn1_(norm_ffn_(x)))));
}

Var AttentionBlock::self_attend(const Var& x, const Eigen::VectorXd& color_distance) const {
    const Var xn = norm_q_(x);
    const Eigen::VectorXd* d = wd_.defined() ? &color_distance : nullptr;
    return feed_forward(ad::add(x, attend(xn, xn, d)));
}

Var AttentionBlock::cross_attend(const Var& x, const Var& context) const {
    if (!norm_kv_.defined()) throw std::logic_error("attention: self-attention block used for cross-attention");
    return feed_forward(ad::add(x, attend(norm_q_(x), norm_kv_(context), nullptr)));
}

ColorAwareTransformer::ColorAwareTransformer(nn::ParameterStore& store, const TransformerConfig& config, int image_in,
                                             int point_in, Rng& rng)
    : config_(config) {
    config.validate();
    const int d = config.d_model, heads = config.heads, ffn = config.ffn_multiplier;
    image_in_ = nn::Linear(store, "transformer.image_in", image_in, d, rng, nn::Init::kXavier);
    point_in_ = nn::Linear(store, "transformer.point_in", point_in, d, rng, nn::Init::kXavier);
    for (int b = 0; b < config.blocks; ++b) {
        const std::string p = "transformer.block" + std::to_string(b);
        image_self_.emplace_back(store, p + ".image_self", d, heads, ffn, AttentionKind::kSelf, rng);
        point_self_.emplace_back(store, p + ".point_self", d, heads, ffn, AttentionKind::kSelf, rng);
        image_cross_.emplace_back(store, p + ".image_cross", d, heads, ffn, AttentionKind::kCross, rng);
        point_cross_.emplace_back(store, p + ".point_cross", d, heads, ffn, AttentionKind::kCross, rng);
    }
    image_out_ = nn::LayerNorm(store, "transformer.image_out", d);
    point_out_ = nn::LayerNorm(store, "transformer.point_out", d);
}

std::vector<std::string> ColorAwareTransformer::color_bias_names() const {
    std::vector<std::string> names;
    for (int b = 0; b < blocks(); ++b) {
        names.push_back(image_self_[b].bias_name());
        names.push_back(point_self_[b].bias_name());
    }
    return names;
}

std::pair<Var, Var> ColorAwareTransformer::operator()(const TokenInputs& image, const TokenInputs& points) const {
    const int d = config_.d_model;
    const Matrix pe_img = fourier_embed(normalize_coordinates(image.coordinates), config_.fourier_bands, d);
    const Matrix pe_pt = fourier_embed(normalize_coordinates(points.coordinates), config_.fourier_bands, d);
    Var x = ad::add(image_in_(image.features), ad::constant(pe_img));
    Var y = ad::add(point_in_(points.features), ad::constant(pe_pt));
    for (int b = 0; b < blocks(); ++b) {
        x = image_self_[b].self_attend(x, image.color_distance);
        y = point_self_[b].self_attend(y, points.color_distance);
        const Var x_next = image_cross_[b].cross_attend(x, y);
        const Var y_next = point_cross_[b].cross_attend(y, x);
        x = x_next;
        y = y_next;
    }
    return {image_out_(x), point_out_(y)};
}

}  // namespace chromareg
