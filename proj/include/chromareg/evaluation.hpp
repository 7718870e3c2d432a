#pragma once

#include "chromareg/config.hpp"
#include "chromareg/geometry.hpp"
#include "chromareg/matching.hpp"
#include "chromareg/pose.hpp"

#include <string>
#include <vector>

namespace chromareg {

/// Per-match verdict: the gt-depth lift of the pixel lies within `threshold` of the gt-transformed point.
/// Pixels without valid depth are outliers.
std::vector<bool> inlier_mask(const FineMatchSet& matches, const ColoredPointCloud& cloud, const RigidTransform& gt,
                              const DepthImage& depth, const CameraIntrinsics& k, double threshold = 0.05);
/// Fraction of inliers; 0 for an empty set.
double inlier_ratio(const FineMatchSet& matches, const ColoredPointCloud& cloud, const RigidTransform& gt,
                    const DepthImage& depth, const CameraIntrinsics& k, double threshold = 0.05);

/// Fraction of pairs with ir >= tau. Throws std::invalid_argument on an empty list.
double feature_matching_recall(const std::vector<double>& irs, double tau = 0.10);

/// RMS distance between est-transformed cloud points and the depth lifts of their gt pixels.
/// `gt_pairs` hold (full-resolution pixel index, point index); pixels without depth are skipped.
/// No usable pair gives infinity.
double correspondence_rmse(const RigidTransform& est, const std::vector<std::pair<int, int>>& gt_pairs,
                           const ColoredPointCloud& cloud, const DepthImage& depth, const CameraIntrinsics& k);

/// Correct registration under the configured criterion; non-converged results always fail.
bool is_registered(const PnPResult& result, const RigidTransform& gt, const std::vector<std::pair<int, int>>& gt_pairs,
                   const ColoredPointCloud& cloud, const DepthImage& depth, const CameraIntrinsics& k,
                   const EvalConfig& config);

/// Fraction of true flags; 0 for an empty list.
double registration_recall(const std::vector<bool>& registered);

struct PairReport {
    std::string id;
    int scene = 0;
    double ir = 0.0;
    double pir = 0.0;
    bool registered = false;
    bool converged = false;
    double rre = 0.0;  ///< degrees
    double rte = 0.0;  ///< meters
    double rmse = 0.0;
    int n_coarse = 0;
    int n_correspondences = 0;
    int n_ransac_inliers = 0;
};

struct SceneReport {
    int scene = -1;  ///< -1 for the overall row
    int n_pairs = 0;
    double ir = 0.0;
    double pir = 0.0;
    double fmr = 0.0;
    double rr = 0.0;
    double rte = 0.0;  ///< over converged pairs
    double rre = 0.0;
    double converged = 0.0;  ///< fraction
};

struct AggregateReport {
    std::vector<SceneReport> scenes;  ///< ascending scene label
    SceneReport overall;              ///< mean of the scene rows
};

AggregateReport aggregate(const std::vector<PairReport>& reports, const EvalConfig& config);

}  // namespace chromareg
