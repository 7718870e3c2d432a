#include "chromareg/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace chromareg {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: image size must be at least 1x1");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
        throw std::invalid_argument("intrinsics: principal point outside the image");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
    if (!rotation.allFinite() || !translation.allFinite())
        throw std::invalid_argument("RigidTransform: non-finite entries");
    if (orthonormality_error() > 1e-9) throw std::invalid_argument("RigidTransform: rotation is not in SO(3)");
}

RigidTransform RigidTransform::from_trusted(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
    RigidTransform t;
    t.rotation_ = rotation;
    t.translation_ = translation;
    return t;
}

RigidTransform RigidTransform::from_axis_angle(const Eigen::Vector3d& axis, double angle_rad,
                                               const Eigen::Vector3d& translation) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
    return {r, translation};
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
    const Eigen::RowVector4d last = m.row(3);
    if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
        throw std::invalid_argument("RigidTransform: last row of homogeneous matrix must be 0 0 0 1");
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

double RigidTransform::orthonormality_error() const {
    const double ortho = (rotation_.transpose() * rotation_ - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return std::max(ortho, std::abs(rotation_.determinant() - 1.0));
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return RigidTransform::from_trusted(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation());
}

RigidTransform invert(const RigidTransform& a) {
    const Eigen::Matrix3d rt = a.rotation().transpose();
    return RigidTransform::from_trusted(rt, -(rt * a.translation()));
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
    const double angle = omega.norm();
    if (angle < 1e-14) {
        Eigen::Matrix3d w;
        w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
        return Eigen::Matrix3d::Identity() + w;
    }
    return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

void ColoredPointCloud::validate_and_clamp() {
    if (positions.empty()) throw std::invalid_argument("empty cloud");
    if (positions.size() != colors.size()) throw std::invalid_argument("cloud: positions/colors size mismatch");
    for (const auto& p : positions)
        if (!p.allFinite()) throw std::invalid_argument("cloud: non-finite position");
    for (auto& c : colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
}

ColoredPointCloud transform_cloud(const ColoredPointCloud& cloud, const RigidTransform& t) {
    ColoredPointCloud out;
    out.colors = cloud.colors;
    out.positions.reserve(cloud.size());
    for (const auto& p : cloud.positions) out.positions.push_back(t.apply(p));
    return out;
}

ColorImage::ColorImage(int w, int h, const Eigen::Vector3d& fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw std::invalid_argument("ColorImage: size must be at least 1x1");
}

DepthImage::DepthImage(int w, int h, double fill) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw std::invalid_argument("DepthImage: size must be at least 1x1");
}

std::optional<Eigen::Vector2d> project_unbounded(const CameraIntrinsics& k, const Eigen::Vector3d& c) {
    if (!(c.z() > kDepthEpsilon)) return std::nullopt;
    return Eigen::Vector2d(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy);
}

std::optional<Eigen::Vector2d> project(const CameraIntrinsics& k, const RigidTransform& t, const Eigen::Vector3d& point) {
    auto uv = project_unbounded(k, t.apply(point));
    if (!uv) return std::nullopt;
    if (!(uv->x() >= 0.0 && uv->x() < k.width && uv->y() >= 0.0 && uv->y() < k.height)) return std::nullopt;
    return uv;
}

Eigen::Vector3d lift_with_depth(const CameraIntrinsics& k, const Eigen::Vector2d& pixel, double z) {
    return {(pixel.x() - k.cx) * z / k.fx, (pixel.y() - k.cy) * z / k.fy, z};
}

std::optional<Eigen::Vector3d> lift(const CameraIntrinsics& k, const DepthImage& depth, const PixelIndex& px) {
    if (px.row < 0 || px.col < 0 || px.row >= depth.height || px.col >= depth.width)
        throw std::out_of_range("lift: pixel (" + std::to_string(px.row) + ", " + std::to_string(px.col) +
                                ") outside the depth image");
    const double d = depth.at(px.row, px.col);
    if (d == 0.0) return std::nullopt;
    return lift_with_depth(k, pixel_center(px), d);
}

CorrespondenceSet::CorrespondenceSet(std::size_t n_pixels, std::size_t n_points)
    : n_pixels_(n_pixels), n_points_(n_points) {}

CorrespondenceSet::CorrespondenceSet(std::size_t n_pixels, std::size_t n_points, std::vector<std::pair<int, int>> pairs)
    : n_pixels_(n_pixels), n_points_(n_points), pairs_(std::move(pairs)) {
    for (const auto& [m, n] : pairs_)
        if (m < 0 || n < 0 || static_cast<std::size_t>(m) >= n_pixels_ || static_cast<std::size_t>(n) >= n_points_)
            throw std::out_of_range("CorrespondenceSet: index out of range");
    std::sort(pairs_.begin(), pairs_.end());
    pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());
}

bool CorrespondenceSet::contains(int m, int n) const {
    return std::binary_search(pairs_.begin(), pairs_.end(), std::make_pair(m, n));
}

std::vector<std::vector<bool>> CorrespondenceSet::dense() const {
    std::vector<std::vector<bool>> c(n_pixels_, std::vector<bool>(n_points_, false));
    for (const auto& [m, n] : pairs_) c[m][n] = true;
    return c;
}

CorrespondenceSet establish_correspondences(const std::vector<Eigen::Vector2d>& pixels, const CameraIntrinsics& k,
                                            const RigidTransform& t, const ColoredPointCloud& cloud, double theta) {
    if (!(theta > 0.0)) throw std::invalid_argument("establish_correspondences: theta must be positive");
    // Bucket pixels on a theta-sized grid so each projection only visits the 3x3 neighboring cells.
    auto cell_of = [theta](double v) { return static_cast<long long>(std::floor(v / theta)); };
    auto key = [](long long a, long long b) { return (a << 32) ^ (b & 0xffffffffLL); };
    std::unordered_map<long long, std::vector<int>> grid;
    for (std::size_t m = 0; m < pixels.size(); ++m)
        grid[key(cell_of(pixels[m].x()), cell_of(pixels[m].y()))].push_back(static_cast<int>(m));

    const double theta2 = theta * theta;
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t n = 0; n < cloud.size(); ++n) {
        const auto uv = project(k, t, cloud.positions[n]);
        if (!uv) continue;
        const long long cx = cell_of(uv->x());
        const long long cy = cell_of(uv->y());
        for (long long dx = -1; dx <= 1; ++dx)
            for (long long dy = -1; dy <= 1; ++dy) {
                const auto it = grid.find(key(cx + dx, cy + dy));
                if (it == grid.end()) continue;
                for (int m : it->second)
                    if ((pixels[m] - *uv).squaredNorm() <= theta2) pairs.emplace_back(m, static_cast<int>(n));
            }
    }
    return {pixels.size(), cloud.size(), std::move(pairs)};
}

PoseError pose_error(const RigidTransform& est, const RigidTransform& gt) {
    const double c = std::clamp(((est.rotation().transpose() * gt.rotation()).trace() - 1.0) / 2.0, -1.0, 1.0);
    return {std::acos(c) * 180.0 / M_PI, (est.translation() - gt.translation()).norm()};
}

}  // namespace chromareg
