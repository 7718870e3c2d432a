#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace chromareg {

/// Pinhole intrinsics. Pixel (row, col) has its center at (col + 0.5, row + 0.5).
struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.5;
    double cy = 0.5;
    int width = 1;
    int height = 1;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;

    Eigen::Matrix3d matrix() const;
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid transform x -> R x + t, rotation kept on SO(3).
class RigidTransform {
public:
    RigidTransform() = default;
    /// Throws std::invalid_argument if rotation is not orthonormal with det 1 (1e-9).
    RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

    static RigidTransform identity() { return {}; }
    /// No validation; the caller guarantees rotation is on SO(3) up to rounding.
    static RigidTransform from_trusted(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);
    static RigidTransform from_axis_angle(const Eigen::Vector3d& axis, double angle_rad, const Eigen::Vector3d& translation);
    /// Row-major 4x4 homogeneous matrix; the last row must be (0 0 0 1).
    static RigidTransform from_matrix(const Eigen::Matrix4d& m);

    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Eigen::Vector3d& translation() const { return translation_; }
    Eigen::Matrix4d matrix() const;

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
    Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return apply(p); }

    /// Max elementwise deviation of R^T R from I and |det R - 1|.
    double orthonormality_error() const;

private:
    Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// compose(a, b) * x == a * (b * x)
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& a);

/// Nearest rotation in Frobenius norm (SVD with det correction).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega);

struct ColoredPointCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> colors;

    std::size_t size() const { return positions.size(); }
    /// Throws std::invalid_argument on empty cloud, size mismatch, non-finite positions.
    /// Colors are clamped into [0,1] in place.
    void validate_and_clamp();
};

ColoredPointCloud transform_cloud(const ColoredPointCloud& cloud, const RigidTransform& t);

/// RGB image, row-major, values in [0,1].
struct ColorImage {
    int width = 0;
    int height = 0;
    std::vector<Eigen::Vector3d> pixels;

    ColorImage() = default;
    ColorImage(int w, int h, const Eigen::Vector3d& fill = Eigen::Vector3d::Zero());

    std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
    const Eigen::Vector3d& at(int row, int col) const { return pixels[index(row, col)]; }
    Eigen::Vector3d& at(int row, int col) { return pixels[index(row, col)]; }
    bool operator==(const ColorImage&) const = default;
};

/// Depth in meters, 0 marks an invalid pixel.
struct DepthImage {
    int width = 0;
    int height = 0;
    std::vector<double> depth;

    DepthImage() = default;
    DepthImage(int w, int h, double fill = 0.0);

    std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
    double at(int row, int col) const { return depth[index(row, col)]; }
    double& at(int row, int col) { return depth[index(row, col)]; }
    bool operator==(const DepthImage&) const = default;
};

struct PixelIndex {
    int row = 0;
    int col = 0;
    bool operator==(const PixelIndex&) const = default;
};

inline Eigen::Vector2d pixel_center(const PixelIndex& px) { return {px.col + 0.5, px.row + 0.5}; }

inline constexpr double kDepthEpsilon = 1e-6;

/// Pinhole projection of T * point; std::nullopt behind the camera or outside the frame.
std::optional<Eigen::Vector2d> project(const CameraIntrinsics& k, const RigidTransform& t, const Eigen::Vector3d& point);
/// Projection without the frame-bounds test (still rejects Z <= epsilon).
std::optional<Eigen::Vector2d> project_unbounded(const CameraIntrinsics& k, const Eigen::Vector3d& camera_point);

/// Back-projects a pixel center; std::nullopt for zero depth. Throws std::out_of_range on bad index.
std::optional<Eigen::Vector3d> lift(const CameraIntrinsics& k, const DepthImage& depth, const PixelIndex& px);
Eigen::Vector3d lift_with_depth(const CameraIntrinsics& k, const Eigen::Vector2d& pixel, double z);

/// Pixel-point pairs (m, n); sorted by (m, n), unique.
class CorrespondenceSet {
public:
    CorrespondenceSet() = default;
    CorrespondenceSet(std::size_t n_pixels, std::size_t n_points);
    /// Sorts and deduplicates. Throws std::out_of_range for indices beyond the declared sizes.
    CorrespondenceSet(std::size_t n_pixels, std::size_t n_points, std::vector<std::pair<int, int>> pairs);

    const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    std::size_t n_pixels() const { return n_pixels_; }
    std::size_t n_points() const { return n_points_; }
    bool contains(int m, int n) const;
    /// Dense M x N boolean view.
    std::vector<std::vector<bool>> dense() const;

private:
    std::size_t n_pixels_ = 0;
    std::size_t n_points_ = 0;
    std::vector<std::pair<int, int>> pairs_;
};

/// All (m, n) with ||x_m - proj(T y_n)|| <= theta. Points with invalid projection match nothing.
CorrespondenceSet establish_correspondences(const std::vector<Eigen::Vector2d>& pixels, const CameraIntrinsics& k,
                                            const RigidTransform& t, const ColoredPointCloud& cloud, double theta);

struct PoseError {
    double rre_deg = 0.0;
    double rte_m = 0.0;
};

PoseError pose_error(const RigidTransform& est, const RigidTransform& gt);

}  // namespace chromareg
