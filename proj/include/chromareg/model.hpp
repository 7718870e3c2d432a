#pragma once

#include "chromareg/backbones.hpp"
#include "chromareg/config.hpp"
#include "chromareg/data.hpp"
#include "chromareg/evaluation.hpp"
#include "chromareg/losses.hpp"
#include "chromareg/matching.hpp"
#include "chromareg/pose.hpp"
#include "chromareg/transformer.hpp"

#include <memory>
#include <string>
#include <vector>

namespace chromareg {

/// Fine-level supervision for one gt-matched image token.
struct FineAnchor {
    int token = 0;
    std::vector<int> positives;   ///< level-0 points
    std::vector<int> negatives;   ///< points of the same superpoints farther than the negative radius
    std::vector<int> candidates;  ///< all points of those superpoints (soft color match)
};

/// Everything derived from one pair that does not depend on network weights.
struct PreparedPair {
    std::shared_ptr<const RegistrationPair> pair;
    PatchGrid coarse_grid;
    PatchGrid fine_grid;
    PointPyramid pyramid;
    FusionInput fusion;
    Matrix patch_coordinates;       ///< T x 2 pixel centers
    Matrix superpoint_coordinates;  ///< S x 3
    Eigen::VectorXd patch_color_distance;
    Eigen::VectorXd superpoint_color_distance;
    std::vector<int> token_pixel;         ///< fine token -> pixel
    std::vector<int> patch_of_token;      ///< fine token -> coarse patch
    std::vector<int> superpoint_of_point; ///< level-0 point -> superpoint
    MatchGeometry geometry;
    std::vector<std::pair<int, int>> gt_token_pairs;  ///< (fine token, point), visible in the image view
    std::vector<std::pair<int, int>> gt_pixel_pairs;  ///< the same pairs with full-resolution pixels
    PairMining patch_mining;       ///< anchors: patches, candidates: superpoints
    PairMining superpoint_mining;  ///< anchors: superpoints, candidates: patches
    std::vector<FineAnchor> fine_anchors;

    const std::string& id() const { return pair->id; }
};

/// Builds grids, pyramid (through the on-disk cache when CHROMAREG_CACHE_DIR is set), fusion input,
/// color distances, visibility-filtered gt and mining.
PreparedPair prepare_pair(std::shared_ptr<const RegistrationPair> pair, const RunConfig& config);

struct ForwardResult {
    Var coarse_image;  ///< T x d, rows unit length
    Var coarse_point;  ///< S x d
    Var fine_image;    ///< fine tokens x c_fine
    Var fine_point;    ///< level-0 points x c_fine
};

class RegistrationModel {
public:
    /// Widths are taken from config.network.effective(); weights drawn from config.network.seed.
    explicit RegistrationModel(const ModelConfig& config);
    RegistrationModel(const RegistrationModel&) = delete;
    RegistrationModel& operator=(const RegistrationModel&) = delete;

    ForwardResult forward(const PreparedPair& pair) const;

    const ModelConfig& config() const { return config_; }
    nn::ParameterStore& parameters() { return store_; }
    const nn::ParameterStore& parameters() const { return store_; }
    const PointBackbone& point_backbone() const { return point_; }
    const ColorAwareTransformer& transformer() const { return transformer_; }

private:
    ModelConfig config_;
    nn::ParameterStore store_;
    ImageBackbone image_;
    PointBackbone point_;
    ColorAwareTransformer transformer_;
};

struct LossBreakdown {
    Var overall;
    double color = 0.0;
    double feature = 0.0;
    double coarse = 0.0;
    double fine = 0.0;
    bool color_empty = false;
};

/// L_c + L_f for one pair; anchor subsets are drawn from `rng`.
LossBreakdown compute_losses(const ForwardResult& out, const PreparedPair& pair, const LossConfig& config, Rng& rng);

struct TrainStepLog {
    long long step = 0;
    double color = 0.0;
    double feature = 0.0;
    double overall = 0.0;
    double grad_norm = 0.0;
    std::vector<std::string> pairs;
};

class Trainer {
public:
    Trainer(RegistrationModel& model, const TrainConfig& config);
    /// One optimizer step on a batch drawn from mix_seed(train seed, step); reproducible per step index.
    TrainStepLog step(const std::vector<PreparedPair>& pairs, long long step_index);
    /// Mean loss over all pairs without updating (anchors drawn from a fixed seed).
    double evaluate_loss(const std::vector<PreparedPair>& pairs) const;
    nn::Adam& optimizer() { return adam_; }

private:
    RegistrationModel& model_;
    TrainConfig config_;
    nn::Adam adam_;
};

struct Registration {
    CoarseMatchSet coarse;
    FineMatchSet fine;
    std::vector<Correspondence2D3D> correspondences;
    PnPResult pose;
};

Registration register_pair(const RegistrationModel& model, const PreparedPair& pair, const EvalConfig& config);
PairReport report_pair(const PreparedPair& pair, const Registration& registration, const EvalConfig& config);

}  // namespace chromareg
