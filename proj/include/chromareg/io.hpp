#pragma once

#include "chromareg/data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromareg {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 8-bit RGB.
void write_png(const std::string& path, const ColorImage& image);
/// Accepts 8-bit gray, RGB, or RGBA (alpha dropped); values scaled to [0, 1].
ColorImage read_png_color(const std::string& path);
/// 16-bit single channel in millimeters; 0 is invalid.
void write_png_depth(const std::string& path, const DepthImage& depth);
DepthImage read_png_depth(const std::string& path);

/// Little-endian binary stream with length-prefixed strings and shape-tagged matrices.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);
    void u64(std::uint64_t v);
    void i64(std::int64_t v);
    void f64(double v);
    void str(const std::string& s);
    void matrix(const Eigen::MatrixXd& m);
    void raw(const void* data, std::size_t bytes);
    void close();

private:
    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);
    std::uint64_t u64();
    std::int64_t i64();
    double f64();
    std::string str();
    Eigen::MatrixXd matrix();
    void raw(void* data, std::size_t bytes);
    const std::string& path() const { return path_; }

private:
    std::ifstream in_;
    std::string path_;
};

inline constexpr std::uint64_t kPairFormatVersion = 1;

void save_pair(const std::string& path, const RegistrationPair& pair);
RegistrationPair load_pair(const std::string& path);

/// `intrinsics.txt` holds "fx fy cx cy width height".
CameraIntrinsics read_intrinsics(const std::string& path);
/// Row-major 4x4 camera-to-world.
RigidTransform read_pose(const std::string& path);

struct RgbdSequence {
    CameraIntrinsics k;
    std::vector<std::string> frames;  ///< NNNNNN stems, ascending
    std::vector<RgbdView> views;
};

/// Reads color/NNNNNN.png, depth/NNNNNN.png (16-bit mm), intrinsics.txt and poses/NNNNNN.txt.
/// Frames missing any of the three files are skipped.
RgbdSequence read_rgbd_directory(const std::string& dir);

void save_pyramid(const std::string& path, const PointPyramid& pyramid);
PointPyramid load_pyramid(const std::string& path);

/// Value of CHROMAREG_CACHE_DIR, empty when unset.
std::string cache_directory();
/// grid_subsample, memoized on disk under the cache directory keyed by the cloud contents and parameters.
PointPyramid cached_grid_subsample(const ColoredPointCloud& cloud, double voxel, int n_levels, int k);

}  // namespace chromareg
