#pragma once

#include "chromareg/geometry.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace chromareg {

struct Correspondence2D3D {
    Eigen::Vector2d pixel;  ///< image coordinates (pixel centers at +0.5)
    Eigen::Vector3d point;  ///< cloud frame
};

struct DegenerateConfiguration : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Normalized DLT on >= 6 correspondences, rotation projected onto SO(3), sign chosen for det(R) = 1.
/// Throws DegenerateConfiguration for coplanar points or a rank-deficient design matrix,
/// std::invalid_argument for fewer than 6 correspondences.
RigidTransform pnp_minimal(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k);

/// Sum of squared reprojection residuals; infinity when a point is not in front of the camera.
double reprojection_cost(const RigidTransform& t, const std::vector<Correspondence2D3D>& corrs,
                         const CameraIntrinsics& k);

struct RefineResult {
    RigidTransform transform;
    bool converged = false;
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
};

/// Gauss-Newton with a left SO(3) perturbation and step halving; the cost never increases.
/// Singular normal equations return the input with converged = false.
RefineResult refine(const RigidTransform& initial, const std::vector<Correspondence2D3D>& inliers,
                    const CameraIntrinsics& k, int iters = 10);

struct RansacOptions {
    int max_iters = 10000;
    double threshold_px = 8.0;
    double confidence = 0.999;
    std::uint64_t seed = 11;
    int refine_iters = 10;
};

struct PnPResult {
    RigidTransform transform;
    std::vector<bool> inliers;
    double mean_reprojection_error = 0.0;  ///< over inliers, pixels
    bool converged = false;
    int iterations = 0;
    std::size_t inlier_count() const;
};

/// 6-point hypothesize-and-verify with an adaptive iteration bound, then refinement on the best inlier set.
/// Without a hypothesis reaching 6 inliers: converged = false and the identity transform.
PnPResult ransac_pnp(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k,
                     const RansacOptions& options = {});

}  // namespace chromareg
