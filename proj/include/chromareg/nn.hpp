#pragma once

#include "chromareg/autodiff.hpp"
#include "chromareg/random.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace chromareg::nn {

using ad::Matrix;
using ad::Var;

/// Named, ordered collection of trainable tensors. Names are hierarchical ("image.stem.weight").
class ParameterStore {
public:
    /// Creates (or, when already present, returns) a parameter. Throws on a shape clash.
    Var create(const std::string& name, Matrix init);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    /// Excluded parameters keep their value and are skipped by the optimizer.
    void set_trainable(const std::string& name, bool trainable);
    bool trainable(const std::string& name) const;

    const std::map<std::string, Var>& all() const { return params_; }
    std::vector<std::string> names() const;
    std::size_t total_size() const;
    void zero_grad();

private:
    std::map<std::string, Var> params_;
    std::map<std::string, bool> frozen_;
};

enum class Init { kHe, kXavier, kZero };

Matrix init_matrix(Eigen::Index rows, Eigen::Index cols, Init init, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, Init init = Init::kHe,
           bool with_bias = true);
    Var operator()(const Var& x) const;
    int in() const { return in_; }
    int out() const { return out_; }
    const Var& weight() const { return weight_; }

private:
    Var weight_;
    Var bias_;
    int in_ = 0;
    int out_ = 0;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, int width);
    Var operator()(const Var& x) const;
    bool defined() const { return gain_.defined(); }

private:
    Var gain_;
    Var bias_;
};

/// Channels-last feature map: rows are pixels in row-major order.
struct FeatureMap {
    Var data;
    int height = 0;
    int width = 0;
    int channels() const { return static_cast<int>(data.cols()); }
};

/// Gather indices for a k x k window with replicate padding; output is ceil(H/stride) x ceil(W/stride).
std::vector<int> conv_window_indices(int height, int width, int kernel, int stride, int& out_height, int& out_width);
/// Output (r, c) takes input (r / 2, c / 2).
std::vector<int> nearest_upsample_indices(int in_height, int in_width, int out_height, int out_width);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
           Init init = Init::kHe);
    FeatureMap operator()(const FeatureMap& x) const;

private:
    Var weight_;
    Var bias_;
    int in_ = 0;
    int kernel_ = 1;
    int stride_ = 1;
};

/// k-NN point convolution: out_i = mean_j relu(W_pos (y_j - y_i) / radius + b_pos) * (W f)_j + b.
class PointConv {
public:
    PointConv() = default;
    PointConv(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
    /// `relative` is (N*k) x 3, `neighbors` N*k flat indices.
    Var operator()(const Var& features, const Var& relative, std::span<const int> neighbors, int k) const;

private:
    Linear feature_;
    Linear position_;
    Var bias_;
    int out_ = 0;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;  ///< global gradient-norm clip; <= 0 disables
};

struct AdamState {
    long long step = 0;
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}
    /// Applies one update to every trainable parameter with a gradient. Returns the pre-clip gradient norm.
    double step(ParameterStore& store);
    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    AdamState state_;
};

}  // namespace chromareg::nn
