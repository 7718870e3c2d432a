#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromareg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Widths and strides of the three feature streams.
struct NetworkConfig {
    int image_stem = 32;
    std::vector<int> image_widths{64, 128, 256};  ///< one per stride-2 stage; coarse stride = 2^size
    int image_coarse = 512;
    int image_fine = 128;
    int fine_stride = 2;
    std::vector<int> point_widths{64, 128, 256};  ///< one per pyramid level
    int point_coarse = 1024;
    int point_fine = 128;
    int knn = 16;
    double voxel = 0.125;
    bool toy = false;       ///< halves every width
    bool fusion_enabled = true;
    std::uint64_t seed = 7;

    int coarse_stride() const { return 1 << static_cast<int>(image_widths.size()); }
    int n_levels() const { return static_cast<int>(point_widths.size()); }
    /// Widths after the toy halving; all other fields unchanged.
    NetworkConfig effective() const;
    /// Throws ConfigError.
    void validate() const;
    bool operator==(const NetworkConfig&) const = default;
};

enum class ImageColorSource { kPatchRgb, kCoarseFeatures };

struct TransformerConfig {
    int d_model = 256;
    int heads = 4;
    int blocks = 3;
    int fourier_bands = 6;
    int ffn_multiplier = 2;
    int color_knn = 8;
    bool color_bias = true;  ///< false pins W^D at zero (ablation)
    ImageColorSource image_color_source = ImageColorSource::kPatchRgb;

    TransformerConfig effective(bool toy) const;
    void validate() const;
    bool operator==(const TransformerConfig&) const = default;
};

struct MatchingConfig {
    int top_k = 64;
    double fine_similarity_floor = 0.0;
    bool operator==(const MatchingConfig&) const = default;
};

struct ModelConfig {
    NetworkConfig network;
    TransformerConfig transformer;
    MatchingConfig matching;
    bool operator==(const ModelConfig&) const = default;
};

struct LossConfig {
    double alpha = 0.05;
    double delta_p = 0.1;
    double delta_n = 1.4;
    double gamma = 24.0;
    double positive_overlap = 0.3;
    int max_anchors = 128;
    double fine_negative_radius = 0.1;  ///< meters; fine candidates closer than this (but not positive) are ignored
    double color_temperature = 0.1;
    bool color_loss = true;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

struct DataConfig {
    std::uint64_t seed = 1;
    int n_scenes = 2;
    int pairs_per_scene = 4;
    int objects_per_scene = 5;
    double extent = 4.0;
    double surfel_spacing = 0.03;
    int image_width = 64;
    int image_height = 48;
    double focal = 56.0;
    double min_overlap = 0.3;
    double baseline_translation = 0.3;  ///< max camera offset between the views of a pair (m)
    double baseline_rotation_deg = 12.0;
    int max_attempts_per_pair = 20;
    double theta_fine = 1.0;    ///< px
    double theta_coarse = 8.0;  ///< px
    std::string ingestion_path;  ///< non-empty: build pairs from a real RGB-D directory instead
    int ingestion_frame_gap = 10;

    void validate() const;
    bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
    int steps = 2000;
    int batch_size = 1;
    double learning_rate = 1e-3;
    std::uint64_t seed = 3;
    int checkpoint_every = 500;
    LossConfig loss;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

enum class RecallCriterion { kCorrespondenceRmse, kPoseError };

struct EvalConfig {
    double ir_threshold = 0.05;
    double fmr_threshold = 0.10;
    double rr_threshold = 0.10;
    RecallCriterion rr_criterion = RecallCriterion::kCorrespondenceRmse;
    double rr_max_rre_deg = 5.0;  ///< pose criterion only
    int ransac_max_iters = 10000;
    double ransac_threshold_px = 8.0;
    double ransac_confidence = 0.999;
    std::uint64_t ransac_seed = 11;
    int refine_iters = 10;

    void validate() const;
    bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// Parses a JSON document. Missing keys keep their defaults; unknown keys throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);
/// Overrides every seed in the config (data, network, training, RANSAC).
void apply_seed_override(RunConfig& config, std::uint64_t seed);

}  // namespace chromareg
