#pragma once

#include "chromareg/config.hpp"
#include "chromareg/nn.hpp"

#include <Eigen/Core>

#include <vector>

namespace chromareg {

using ad::Matrix;
using ad::Var;

/// Per-axis min-max normalization into [0, 1]; constant axes map to 0.
Matrix normalize_coordinates(const Matrix& coords);

/// Columns [2*(axis*n_bands + b)], +1 hold sin(2^b pi c), cos(2^b pi c) of normalized coordinates; the rest is 0.
/// Throws std::invalid_argument when 2 * axes * n_bands > d_out or n_bands < 1.
Matrix fourier_embed(const Matrix& normalized_coords, int n_bands, int d_out);

/// Sum over in-bounds 8-neighbors and channels of |value_neighbor - value_center| on a rows x cols grid
/// (row-major tokens, any channel count).
Eigen::VectorXd color_distance_image(const Matrix& values, int rows, int cols);
/// Sum over the k listed neighbors (flat, k per token) and channels of |value_neighbor - value_center|.
Eigen::VectorXd color_distance_points(const Matrix& values, const std::vector<int>& neighbors, int k);
/// k nearest other tokens (self excluded), ties by lower index; k is clipped to T - 1.
std::vector<int> knn_excluding_self(const Matrix& coords, int k, int& k_out);

/// Pre-norm attention block: x + proj(attn(LN(x), LN(kv))) followed by x + FFN(LN(x)).
/// With a color bias the keys become K + D W^D, D one scalar per key token.
/// kSelf blocks carry the color bias W^D; kCross blocks carry a separate norm for the context.
enum class AttentionKind { kSelf, kCross };

class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(nn::ParameterStore& store, const std::string& name, int d_model, int heads, int ffn_multiplier,
                   AttentionKind kind, Rng& rng);

    /// Self-attention; `color_distance` may be empty when the block has no color bias.
    Var self_attend(const Var& x, const Eigen::VectorXd& color_distance) const;
    /// Cross-attention: queries from x, keys and values from `context`.
    Var cross_attend(const Var& x, const Var& context) const;
    /// Attention probabilities of the last call, one T_q x T_kv matrix per head (for inspection).
    const std::vector<Matrix>& last_attention() const { return last_attention_; }
    const std::string& bias_name() const { return bias_name_; }

private:
    Var attend(const Var& q_in, const Var& kv_in, const Eigen::VectorXd* color_distance) const;
    Var feed_forward(const Var& x) const;

    int d_model_ = 0;
    int heads_ = 0;
    nn::LayerNorm norm_q_;
    nn::LayerNorm norm_kv_;
    nn::Linear wq_, wk_, wv_, wo_;
    Var wd_;
    std::string bias_name_;
    nn::LayerNorm norm_ffn_;
    nn::Linear ffn1_, ffn2_;
    mutable std::vector<Matrix> last_attention_;
};

struct TokenInputs {
    Var features;             ///< T x c_in
    Matrix coordinates;       ///< T x 2 (patches) or T x 3 (superpoints)
    Eigen::VectorXd color_distance;  ///< T
};

/// In-projections to d_model, Fourier embeddings added once, then blocks of
/// (color-biased self-attention per modality, bidirectional cross-attention).
class ColorAwareTransformer {
public:
    ColorAwareTransformer() = default;
    /// `config` must already be effective(toy).
    ColorAwareTransformer(nn::ParameterStore& store, const TransformerConfig& config, int image_in, int point_in,
                          Rng& rng);
    /// Returns (image tokens, point tokens), both at width d_model.
    std::pair<Var, Var> operator()(const TokenInputs& image, const TokenInputs& points) const;

    /// Names of all W^D parameters.
    std::vector<std::string> color_bias_names() const;
    const TransformerConfig& config() const { return config_; }
    int blocks() const { return static_cast<int>(image_self_.size()); }
    const AttentionBlock& image_self(int b) const { return image_self_[b]; }
    const AttentionBlock& point_self(int b) const { return point_self_[b]; }

private:
    TransformerConfig config_;
    nn::Linear image_in_, point_in_;
    std::vector<AttentionBlock> image_self_, point_self_, image_cross_, point_cross_;
    nn::LayerNorm image_out_, point_out_;
};

}  // namespace chromareg
