#pragma once

#include "chromareg/geometry.hpp"

#include <Eigen/Core>

#include <vector>

namespace chromareg {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CoarseMatch {
    int patch = 0;
    int superpoint = 0;
    double score = 0.0;
    bool operator==(const CoarseMatch&) const = default;
};

/// Sorted by descending score, ties by (patch, superpoint).
using CoarseMatchSet = std::vector<CoarseMatch>;

/// exp(-||f_i - g_j||^2) on row-normalized features, then row-normalized times column-normalized.
FeatureMatrix dual_normalized_scores(const FeatureMatrix& image_tokens, const FeatureMatrix& point_tokens);
/// The top_k highest dual-normalized entries. Empty when either side has no tokens.
CoarseMatchSet coarse_match(const FeatureMatrix& image_tokens, const FeatureMatrix& point_tokens, int top_k);

struct FineMatch {
    int pixel = 0;   ///< row-major pixel index in the image
    int point = 0;   ///< level-0 point index
    int token = 0;   ///< fine image token index
    int parent = 0;  ///< index into the coarse match set
    double confidence = 0.0;
    bool operator==(const FineMatch&) const = default;
};

using FineMatchSet = std::vector<FineMatch>;

/// Membership tables linking coarse tokens to their fine members.
struct MatchGeometry {
    std::vector<std::vector<int>> patch_tokens;      ///< fine image tokens per coarse patch
    std::vector<std::vector<int>> superpoint_points;  ///< level-0 points per superpoint
    std::vector<int> token_pixel;                     ///< representative pixel of each fine token
};

/// Mutual nearest neighbors of row-normalized fine features within each coarse match. Confidence is
/// exp(-||f - g||^2); pairs at or below `floor` are dropped. Ties go to the lower index.
FineMatchSet fine_match(const CoarseMatchSet& coarse, const FeatureMatrix& image_fine, const FeatureMatrix& point_fine,
                        const MatchGeometry& geometry, double floor = 0.0);

/// Fraction of coarse matches whose patch and superpoint share at least one ground-truth pair.
/// `patch_of_pixel` and `superpoint_of_point` map gt indices to coarse tokens. Empty set gives 0.
double patch_inlier_ratio(const CoarseMatchSet& coarse, const CorrespondenceSet& gt,
                          const std::vector<int>& patch_of_pixel, const std::vector<int>& superpoint_of_point);

FeatureMatrix normalize_rows(const FeatureMatrix& m);

}  // namespace chromareg
