#pragma once

#include "chromareg/geometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chromareg {

struct Surfel {
    Eigen::Vector3d position;
    Eigen::Vector3d normal;
    Eigen::Vector3d color;
    double radius = 0.0;
    int object_id = -1;  ///< -1 for enclosure surfaces
    bool operator==(const Surfel&) const = default;
};

struct ObjectBounds {
    Eigen::Vector3d min;
    Eigen::Vector3d max;
    Eigen::Vector3d dominant_color;
};

struct SyntheticScene {
    std::vector<Surfel> surfels;
    std::vector<ObjectBounds> objects;
    std::uint64_t seed = 0;
    double extent = 0.0;
    double room_height = 0.0;
    bool operator==(const SyntheticScene& o) const { return surfels == o.surfels && seed == o.seed; }
};

struct SceneOptions {
    /// Adds a textured floor, walls and ceiling around the objects so every view is fully covered.
    bool enclosure = false;
    double surfel_spacing = 0.03;
    double room_height = 2.6;
};

/// World frame is z-up with the floor at z = 0 and the scene centered on the origin.
SyntheticScene generate_scene(std::uint64_t seed, int n_objects, double extent, const SceneOptions& options = {});

/// Z-buffered surfel splatting. `world_to_camera` maps world points into the camera frame
/// (x right, y down, z forward). Uncovered pixels get depth 0 and black.
std::pair<ColorImage, DepthImage> render_view(const SyntheticScene& scene, const CameraIntrinsics& k,
                                              const RigidTransform& world_to_camera);

/// One point per valid depth pixel, colored by the nearest color pixel. Throws
/// std::invalid_argument("empty cloud") when no point survives.
ColoredPointCloud colorize_from_depth(const DepthImage& depth, const ColorImage& color, const CameraIntrinsics& k_depth,
                                      const CameraIntrinsics& k_color, const RigidTransform& depth_to_color);

struct RgbdView {
    ColorImage color;
    DepthImage depth;
    RigidTransform camera_to_world;
};

/// Rounds colors to 8 bits and depth to whole millimeters, as stored on disk.
RgbdView quantize_view(const RgbdView& view);

struct RegistrationPair {
    std::string id;
    int scene = 0;
    ColorImage image;   ///< view B
    DepthImage depth;   ///< view B, ground truth only
    ColoredPointCloud cloud;  ///< from view A, expressed in camera A
    CameraIntrinsics k;
    RigidTransform gt;  ///< camera A frame -> camera B frame
    double overlap = 0.0;
};

inline constexpr double kOverlapDepthTolerance = 0.05;

/// Fraction of cloud points whose projection under `gt` hits a valid pixel with depth agreement.
double compute_overlap(const ColoredPointCloud& cloud, const RigidTransform& gt, const CameraIntrinsics& k,
                       const DepthImage& depth, double depth_tolerance = kOverlapDepthTolerance);

struct PairBuildResult {
    std::optional<RegistrationPair> pair;  ///< empty when rejected
    double overlap = 0.0;
    bool accepted() const { return pair.has_value(); }
};

/// Cloud from view A, image from view B. Rejected when overlap < min_overlap (the bound is inclusive).
PairBuildResult build_pair_from_views(const RgbdView& a, const RgbdView& b, const CameraIntrinsics& k,
                                      double min_overlap = 0.3);
PairBuildResult build_pair(const SyntheticScene& scene, const RigidTransform& camera_to_world_a,
                           const RigidTransform& camera_to_world_b, const CameraIntrinsics& k, double min_overlap = 0.3);

/// Camera-to-world pose at `eye` looking at `target` with world z up.
RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

struct PyramidLevel {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> colors;
    int k = 0;                         ///< neighbors per point (min of requested k and level size)
    std::vector<int> neighbors;        ///< size() * k, nearest first, self included
    std::vector<int> parent;           ///< level >= 1: parent in this level of each finer point
    std::vector<std::vector<int>> members;  ///< level >= 1: finer points pooled into each point

    std::size_t size() const { return positions.size(); }
    int neighbor(std::size_t i, int j) const { return neighbors[i * k + j]; }
};

struct PointPyramid {
    std::vector<PyramidLevel> levels;
    const PyramidLevel& coarsest() const { return levels.back(); }
    /// Index into the coarsest level of each level-0 point.
    std::vector<int> ancestors_of_finest() const;
};

/// Level 0 is the input cloud; level l >= 1 pools level l-1 into voxels of edge voxel * 2^(l-1),
/// ordered by voxel key. Each voxel keeps the centroid and mean color of its members.
PointPyramid grid_subsample(const ColoredPointCloud& cloud, double voxel, int n_levels, int k = 16);

/// Exhaustive k nearest neighbors (self included), ties broken by lower index.
std::vector<int> knn_indices(const std::vector<Eigen::Vector3d>& points, int k);

struct PatchGrid {
    int stride = 1;
    int rows = 0;
    int cols = 0;
    int image_width = 0;
    int image_height = 0;
    std::vector<Eigen::Vector2d> centers;     ///< mean member pixel center, row-major over patches
    std::vector<std::vector<int>> members;    ///< row-major pixel indices
    std::vector<int> patch_of_pixel;

    std::size_t size() const { return centers.size(); }
    /// First (top-left) member pixel of a patch.
    PixelIndex anchor_pixel(std::size_t patch) const {
        const int p = members[patch].front();
        return {p / image_width, p % image_width};
    }
};

/// Rows = ceil(H / stride), cols = ceil(W / stride); border patches may be smaller.
PatchGrid patchify(int width, int height, int stride);
PatchGrid patchify(const ColorImage& image, int stride);

}  // namespace chromareg
