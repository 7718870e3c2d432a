#include "chromareg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chromareg::nn {

Var ParameterStore::create(const std::string& name, Matrix init) {
    if (auto it = params_.find(name); it != params_.end()) {
        if (it->second.rows() != init.rows() || it->second.cols() != init.cols())
            throw std::invalid_argument("parameter '" + name + "' re-created with a different shape");
        return it->second;
    }
    Var v = ad::variable(std::move(init));
    params_.emplace(name, v);
    return v;
}

const Var& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

void ParameterStore::set_trainable(const std::string& name, bool trainable) {
    get(name);
    frozen_[name] = !trainable;
}

bool ParameterStore::trainable(const std::string& name) const {
    auto it = frozen_.find(name);
    return it == frozen_.end() || !it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

std::size_t ParameterStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += static_cast<std::size_t>(v.value().size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [k, v] : params_) const_cast<Var&>(v).zero_grad();
}

Matrix init_matrix(Eigen::Index rows, Eigen::Index cols, Init init, Rng& rng) {
    Matrix m(rows, cols);
    if (init == Init::kZero) return Matrix::Zero(rows, cols);
    const double stddev = init == Init::kHe ? std::sqrt(2.0 / static_cast<double>(rows))
                                            : std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
    return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, Init init, bool with_bias)
    : in_(in), out_(out) {
    weight_ = store.create(name + ".weight", init_matrix(in, out, init, rng));
    if (with_bias) bias_ = store.create(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(const Var& x) const {
    if (x.cols() != in_) throw std::invalid_argument("Linear: input width mismatch");
    Var y = ad::matmul(x, weight_);
    return bias_.defined() ? ad::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int width) {
    gain_ = store.create(name + ".gain", Matrix::Ones(1, width));
    bias_ = store.create(name + ".bias", Matrix::Zero(1, width));
}

Var LayerNorm::operator()(const Var& x) const { return ad::layer_norm(x, gain_, bias_); }

std::vector<int> conv_window_indices(int height, int width, int kernel, int stride, int& out_height, int& out_width) {
    out_height = (height + stride - 1) / stride;
    out_width = (width + stride - 1) / stride;
    const int half = kernel / 2;
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(out_height) * out_width * kernel * kernel);
    for (int r = 0; r < out_height; ++r)
        for (int c = 0; c < out_width; ++c)
            for (int dr = -half; dr <= half; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    const int rr = std::clamp(r * stride + dr, 0, height - 1);
                    const int cc = std::clamp(c * stride + dc, 0, width - 1);
                    idx.push_back(rr * width + cc);
                }
    return idx;
}

std::vector<int> nearest_upsample_indices(int in_height, int in_width, int out_height, int out_width) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(out_height) * out_width);
    for (int r = 0; r < out_height; ++r)
        for (int c = 0; c < out_width; ++c)
            idx.push_back(std::min(r / 2, in_height - 1) * in_width + std::min(c / 2, in_width - 1));
    return idx;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
               Init init)
    : in_(in), kernel_(kernel), stride_(stride) {
    if (kernel % 2 != 1) throw std::invalid_argument("Conv2d: kernel must be odd");
    weight_ = store.create(name + ".weight", init_matrix(static_cast<Eigen::Index>(kernel) * kernel * in, out, init, rng));
    bias_ = store.create(name + ".bias", Matrix::Zero(1, out));
}

FeatureMap Conv2d::operator()(const FeatureMap& x) const {
    if (x.channels() != in_) throw std::invalid_argument("Conv2d: channel mismatch");
    FeatureMap out;
    Var cols;
    if (kernel_ == 1 && stride_ == 1) {
        cols = x.data;
        out.height = x.height;
        out.width = x.width;
    } else {
        const auto idx = conv_window_indices(x.height, x.width, kernel_, stride_, out.height, out.width);
        cols = ad::gather_rows(x.data, idx, kernel_ * kernel_);
    }
    out.data = ad::add_row(ad::matmul(cols, weight_), bias_);
    return out;
}

PointConv::PointConv(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) : out_(out) {
    feature_ = Linear(store, name + ".feature", in, out, rng, Init::kHe, false);
    position_ = Linear(store, name + ".position", 3, out, rng, Init::kHe, true);
    bias_ = store.create(name + ".bias", Matrix::Zero(1, out));
}

Var PointConv::operator()(const Var& features, const Var& relative, std::span<const int> neighbors, int k) const {
    const Eigen::Index n = features.rows();
    if (static_cast<Eigen::Index>(neighbors.size()) != n * k || relative.rows() != n * k)
        throw std::invalid_argument("PointConv: neighborhood size mismatch");
    Var projected = feature_(features);              // N x out
    Var gathered = ad::gather_rows(projected, neighbors);  // N*k x out
    Var gates = ad::relu(position_(relative));       // N*k x out
    Var agg = ad::group_mean_rows(ad::mul(gathered, gates), k);
    return ad::add_row(agg, bias_);
}

double Adam::step(ParameterStore& store) {
    double sq = 0.0;
    for (const auto& [name, p] : store.all())
        if (store.trainable(name) && p.grad().size() != 0) sq += p.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    ++state_.step;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(state_.step));
    for (const auto& [name, pc] : store.all()) {
        if (!store.trainable(name) || pc.grad().size() == 0) continue;
        Var p = pc;
        auto& m = state_.m[name];
        auto& v = state_.v[name];
        if (m.size() == 0) {
            m = Matrix::Zero(p.rows(), p.cols());
            v = Matrix::Zero(p.rows(), p.cols());
        }
        const Matrix g = p.grad() * clip;
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
        p.mutable_value().array() -=
            config_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
    }
    return norm;
}

}  // namespace chromareg::nn
