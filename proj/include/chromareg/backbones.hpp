#pragma once

#include "chromareg/config.hpp"
#include "chromareg/data.hpp"
#include "chromareg/nn.hpp"

#include <vector>

namespace chromareg {

using ad::Matrix;
using ad::Var;

struct ImageFeatures {
    nn::FeatureMap coarse;  ///< stride = coarse stride
    nn::FeatureMap fine;    ///< stride = fine stride
};

/// Per-point (x, y, z, r, g, b); rgb is zero where the mask is false.
struct FusionInput {
    Matrix features;  ///< N x 6
    std::vector<bool> mask;
    std::size_t size() const { return mask.size(); }
    double valid_fraction() const;
};

struct PointFeatures {
    Var coarse;  ///< coarsest pyramid level x point_coarse
    Var fine;    ///< level 0 x point_fine
};

/// Samples the image at the identity projection of every point (nearest pixel).
FusionInput data_fusion(const ColoredPointCloud& cloud, const ColorImage& image, const CameraIntrinsics& k);

/// Conv stem, stride-2 residual stages and a top-down pyramid. Input is rgb - 0.5.
class ImageBackbone {
public:
    ImageBackbone() = default;
    /// `config` must already be effective() (toy widths applied).
    ImageBackbone(nn::ParameterStore& store, const NetworkConfig& config, Rng& rng);
    /// Throws std::invalid_argument for images smaller than one coarse stride.
    ImageFeatures operator()(const ColorImage& image) const;

private:
    struct Stage {
        nn::Conv2d down;
        nn::LayerNorm down_norm;
        nn::Conv2d conv1;
        nn::LayerNorm norm1;
        nn::Conv2d conv2;
        nn::LayerNorm norm2;
    };
    NetworkConfig config_;
    nn::Conv2d stem_;
    nn::LayerNorm stem_norm_;
    std::vector<Stage> stages_;
    nn::Conv2d coarse_head_;
    std::vector<nn::Conv2d> laterals_;  ///< index = pyramid stride level (0 = stem)
    nn::Conv2d smooth_;
    int fine_level_ = 1;
};

/// Point stream G with the parallel fusion stream H. H has G's encoder topology and feeds G through
/// zero-initialized linear connectors at the bottleneck and at every decoder skip.
class PointBackbone {
public:
    PointBackbone() = default;
    PointBackbone(nn::ParameterStore& store, const NetworkConfig& config, Rng& rng);
    /// Throws std::invalid_argument when fusion and pyramid sizes differ or the level count is wrong.
    PointFeatures operator()(const PointPyramid& pyramid, const FusionInput& fusion, bool fusion_enabled) const;

    /// Names of the connector parameters (all zero at initialization).
    std::vector<std::string> connector_names() const;

private:
    struct Encoder {
        std::vector<nn::PointConv> convs;
        std::vector<nn::LayerNorm> norms;
        std::vector<nn::Linear> mixes;
        std::vector<nn::LayerNorm> mix_norms;
        std::vector<Var> run(const Var& input, const PointPyramid& pyramid, const std::vector<Var>& relative,
                             const std::vector<std::vector<int>>& flat_neighbors) const;
    };
    NetworkConfig config_;
    Encoder g_;
    Encoder h_;
    std::vector<nn::Linear> connectors_;
    std::vector<nn::Linear> decoder_;
    std::vector<nn::LayerNorm> decoder_norms_;
    nn::Linear coarse_head_;
    nn::Linear fine_head_;
    std::vector<std::string> connector_names_;
};

/// Flattened, radius-scaled neighbor offsets (y_j - y_i) / radius for one level.
Matrix relative_positions(const PyramidLevel& level, double radius);
/// Neighborhood radius used to scale offsets at pyramid level l.
double level_radius(double voxel, int level);

}  // namespace chromareg
