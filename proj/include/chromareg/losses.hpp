#pragma once

#include "chromareg/autodiff.hpp"
#include "chromareg/config.hpp"
#include "chromareg/random.hpp"

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace chromareg {

using ad::Var;

/// (1/3) sum_c sqrt((a_c - b_c)^2 + alpha).
double color_loss_pair(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double alpha);

struct ColorLossResult {
    Var value;           ///< 1x1
    bool empty = false;  ///< no pairs; value is 0
};

/// Mean per-pair color loss over aligned rows of two P x 3 color matrices.
ColorLossResult color_loss(const Var& pixel_colors, const Var& point_colors, double alpha);

/// Row a: sum_j softmax_j(q_a . k_j / temperature) * colors_j over the listed candidates j of query a.
/// Queries with no candidates give zero rows.
Var soft_match_colors(const Var& queries, const Var& keys, const std::vector<std::vector<int>>& candidates,
                      const Eigen::MatrixXd& key_colors, double temperature);

struct Anchor {
    int index = 0;
    std::vector<int> positives;
    std::vector<int> negatives;
};

struct PairMining {
    std::vector<Anchor> anchors;  ///< only anchors with both positives and negatives
};

/// Anchors are tokens on the first side of `pairs`, candidates on the second. A candidate is positive when it holds
/// at least `positive_threshold` of the anchor's ground-truth pairs and negative when it holds none.
/// `anchor_of` / `candidate_of` map the fine indices in `pairs` to tokens.
PairMining mine_pairs(const std::vector<std::pair<int, int>>& pairs, const std::vector<int>& anchor_of,
                      const std::vector<int>& candidate_of, int n_anchors, int n_candidates,
                      double positive_threshold);

/// Keeps at most `max_anchors` anchors, drawn uniformly without replacement (original order kept).
PairMining cap_anchors(const PairMining& mining, int max_anchors, Rng& rng);

/// Circle loss over Euclidean descriptor distances d = ||a_i - b_j||, averaged over anchors:
/// (1/gamma) log(1 + sum_P exp(gamma lp (d - dp)) * sum_N exp(gamma ln (dn - d))),
/// lp = max(d - dp, 0), ln = max(dn - d, 0), both treated as constants. 0 when no anchors.
Var feature_loss(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                 const LossConfig& config);

/// The lp / ln weights per anchor, in the order of its positives / negatives.
struct CircleWeights {
    std::vector<std::vector<double>> positive;
    std::vector<std::vector<double>> negative;
};

CircleWeights circle_weights(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                             const LossConfig& config);
/// Same loss with the weights held at the given values instead of recomputed from the distances.
Var feature_loss(const Var& anchor_features, const Var& candidate_features, const PairMining& mining,
                 const LossConfig& config, const CircleWeights& weights);

Var overall_loss(const Var& color, const Var& feature);

}  // namespace chromareg
