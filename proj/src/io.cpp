#include "chromareg/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>

namespace chromareg {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

void write_png_rows(const std::string& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<std::vector<png_byte>>& rows) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: write failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct RawPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::vector<png_byte>> rows;
};

RawPng read_png_rows(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8)) throw IoError("not a png: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: read failed for " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
    png_read_update_info(png, info);
    RawPng out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.rows.assign(out.height, std::vector<png_byte>(stride));
    std::vector<png_bytep> pointers(out.height);
    for (int r = 0; r < out.height; ++r) pointers[r] = out.rows[r].data();
    png_read_image(png, pointers.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

png_byte to_byte(double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void write_png(const std::string& path, const ColorImage& image) {
    std::vector<std::vector<png_byte>> rows(image.height, std::vector<png_byte>(3 * image.width));
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            for (int ch = 0; ch < 3; ++ch) rows[r][3 * c + ch] = to_byte(image.at(r, c)[ch]);
    write_png_rows(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

ColorImage read_png_color(const std::string& path) {
    const RawPng raw = read_png_rows(path);
    if (raw.bit_depth != 8) throw IoError("expected an 8-bit color png: " + path);
    ColorImage out(raw.width, raw.height);
    for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c) {
            const png_byte* px = &raw.rows[r][static_cast<std::size_t>(c) * raw.channels];
            Eigen::Vector3d v;
            if (raw.channels >= 3)
                v = {px[0] / 255.0, px[1] / 255.0, px[2] / 255.0};
            else
                v.setConstant(px[0] / 255.0);
            out.at(r, c) = v;
        }
    return out;
}

void write_png_depth(const std::string& path, const DepthImage& depth) {
    std::vector<std::vector<png_byte>> rows(depth.height, std::vector<png_byte>(2 * depth.width));
    for (int r = 0; r < depth.height; ++r)
        for (int c = 0; c < depth.width; ++c) {
            const long mm = std::clamp(std::lround(depth.at(r, c) * 1000.0), 0L, 65535L);
            rows[r][2 * c] = static_cast<png_byte>(mm >> 8);
            rows[r][2 * c + 1] = static_cast<png_byte>(mm & 0xff);
        }
    write_png_rows(path, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

DepthImage read_png_depth(const std::string& path) {
    const RawPng raw = read_png_rows(path);
    if (raw.bit_depth != 16 || raw.channels != 1) throw IoError("expected a 16-bit single-channel png: " + path);
    DepthImage out(raw.width, raw.height);
    for (int r = 0; r < raw.height; ++r)
        for (int c = 0; c < raw.width; ++c) {
            std::uint16_t v;
            std::memcpy(&v, &raw.rows[r][2 * static_cast<std::size_t>(c)], 2);
            out.at(r, c) = v / 1000.0;
        }
    return out;
}

BinaryWriter::BinaryWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot write " + path);
}

void BinaryWriter::raw(const void* data, std::size_t bytes) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out_) throw IoError("write failed: " + path_);
}

void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::i64(std::int64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }

void BinaryWriter::str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
}

void BinaryWriter::matrix(const Eigen::MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

void BinaryWriter::close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_);
}

BinaryReader::BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open " + path);
}

void BinaryReader::raw(void* data, std::size_t bytes) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (!in_) throw IoError("truncated file: " + path_);
}

std::uint64_t BinaryReader::u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
}

std::int64_t BinaryReader::i64() {
    std::int64_t v;
    raw(&v, sizeof v);
    return v;
}

double BinaryReader::f64() {
    double v;
    raw(&v, sizeof v);
    return v;
}

std::string BinaryReader::str() {
    const std::uint64_t n = u64();
    if (n > (1ULL << 32)) throw IoError("corrupt string length in " + path_);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
}

Eigen::MatrixXd BinaryReader::matrix() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows > (1ULL << 28) || cols > (1ULL << 28) || rows * cols > (1ULL << 30))
        throw IoError("corrupt matrix shape in " + path_);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
}

namespace {

constexpr char kPairMagic[] = "CHRPAIR";
constexpr char kPyramidMagic[] = "CHRPYRM";
constexpr std::uint64_t kPyramidFormatVersion = 1;

void write_points(BinaryWriter& w, const std::vector<Eigen::Vector3d>& v) {
    Eigen::MatrixXd m(3, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = v[i];
    w.matrix(m);
}

std::vector<Eigen::Vector3d> read_points(BinaryReader& r) {
    const Eigen::MatrixXd m = r.matrix();
    if (m.rows() != 3 && m.size() != 0) throw IoError("expected 3-row point block in " + r.path());
    std::vector<Eigen::Vector3d> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i) v[static_cast<std::size_t>(i)] = m.col(i);
    return v;
}

void write_ints(BinaryWriter& w, const std::vector<int>& v) {
    w.u64(v.size());
    std::vector<std::int64_t> wide(v.begin(), v.end());
    w.raw(wide.data(), wide.size() * sizeof(std::int64_t));
}

std::vector<int> read_ints(BinaryReader& r) {
    const std::uint64_t n = r.u64();
    if (n > (1ULL << 30)) throw IoError("corrupt index block in " + r.path());
    std::vector<std::int64_t> wide(n);
    r.raw(wide.data(), n * sizeof(std::int64_t));
    return {wide.begin(), wide.end()};
}

void check_magic(BinaryReader& r, const char* magic, std::uint64_t version) {
    if (r.str() != magic) throw IoError("unrecognized file format: " + r.path());
    const std::uint64_t v = r.u64();
    if (v != version)
        throw IoError("unsupported format version " + std::to_string(v) + " in " + r.path() + " (expected " +
                      std::to_string(version) + ")");
}

}  // namespace

void save_pair(const std::string& path, const RegistrationPair& pair) {
    BinaryWriter w(path);
    w.str(kPairMagic);
    w.u64(kPairFormatVersion);
    w.str(pair.id);
    w.i64(pair.scene);
    w.f64(pair.overlap);
    w.f64(pair.k.fx);
    w.f64(pair.k.fy);
    w.f64(pair.k.cx);
    w.f64(pair.k.cy);
    w.i64(pair.k.width);
    w.i64(pair.k.height);
    w.matrix(pair.gt.matrix());
    w.i64(pair.image.width);
    w.i64(pair.image.height);
    write_points(w, pair.image.pixels);
    w.i64(pair.depth.width);
    w.i64(pair.depth.height);
    w.matrix(Eigen::Map<const Eigen::VectorXd>(pair.depth.depth.data(), static_cast<Eigen::Index>(pair.depth.depth.size())));
    write_points(w, pair.cloud.positions);
    write_points(w, pair.cloud.colors);
    w.close();
}

RegistrationPair load_pair(const std::string& path) {
    BinaryReader r(path);
    check_magic(r, kPairMagic, kPairFormatVersion);
    RegistrationPair p;
    p.id = r.str();
    p.scene = static_cast<int>(r.i64());
    p.overlap = r.f64();
    p.k.fx = r.f64();
    p.k.fy = r.f64();
    p.k.cx = r.f64();
    p.k.cy = r.f64();
    p.k.width = static_cast<int>(r.i64());
    p.k.height = static_cast<int>(r.i64());
    const Eigen::MatrixXd gt = r.matrix();
    if (gt.rows() != 4 || gt.cols() != 4) throw IoError("bad gt block in " + path);
    p.gt = RigidTransform::from_matrix(gt);
    p.image.width = static_cast<int>(r.i64());
    p.image.height = static_cast<int>(r.i64());
    p.image.pixels = read_points(r);
    p.depth.width = static_cast<int>(r.i64());
    p.depth.height = static_cast<int>(r.i64());
    const Eigen::MatrixXd d = r.matrix();
    p.depth.depth.assign(d.data(), d.data() + d.size());
    p.cloud.positions = read_points(r);
    p.cloud.colors = read_points(r);
    if (p.image.pixels.size() != static_cast<std::size_t>(p.image.width) * p.image.height ||
        p.depth.depth.size() != static_cast<std::size_t>(p.depth.width) * p.depth.height ||
        p.cloud.positions.size() != p.cloud.colors.size())
        throw IoError("inconsistent sizes in " + path);
    p.k.validate();
    return p;
}

CameraIntrinsics read_intrinsics(const std::string& path) {
    std::istringstream in(read_text(path));
    CameraIntrinsics k;
    if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) throw IoError("malformed intrinsics: " + path);
    k.validate();
    return k;
}

RigidTransform read_pose(const std::string& path) {
    std::istringstream in(read_text(path));
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(in >> m(r, c))) throw IoError("malformed pose: " + path);
    Eigen::Matrix4d fixed = m;
    fixed.topLeftCorner<3, 3>() = nearest_rotation(m.topLeftCorner<3, 3>());
    if ((fixed.topLeftCorner<3, 3>() - m.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() > 1e-3)
        throw IoError("pose rotation is not orthonormal: " + path);
    try {
        return RigidTransform::from_matrix(fixed);
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string(e.what()) + ": " + path);
    }
}

RgbdSequence read_rgbd_directory(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw IoError("not a directory: " + dir);
    RgbdSequence seq;
    seq.k = read_intrinsics((root / "intrinsics.txt").string());
    if (!fs::is_directory(root / "color")) throw IoError("missing color/ in " + dir);
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(root / "color"))
        if (entry.path().extension() == ".png") stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    for (const auto& stem : stems) {
        const fs::path depth = root / "depth" / (stem + ".png");
        const fs::path pose = root / "poses" / (stem + ".txt");
        if (!fs::exists(depth) || !fs::exists(pose)) continue;
        RgbdView v;
        v.color = read_png_color((root / "color" / (stem + ".png")).string());
        v.depth = read_png_depth(depth.string());
        v.camera_to_world = read_pose(pose.string());
        if (v.color.width != seq.k.width || v.color.height != seq.k.height || v.depth.width != seq.k.width ||
            v.depth.height != seq.k.height)
            throw IoError("frame " + stem + " does not match intrinsics size in " + dir);
        seq.frames.push_back(stem);
        seq.views.push_back(std::move(v));
    }
    return seq;
}

void save_pyramid(const std::string& path, const PointPyramid& pyramid) {
    BinaryWriter w(path);
    w.str(kPyramidMagic);
    w.u64(kPyramidFormatVersion);
    w.u64(pyramid.levels.size());
    for (const auto& level : pyramid.levels) {
        write_points(w, level.positions);
        write_points(w, level.colors);
        w.i64(level.k);
        write_ints(w, level.neighbors);
        write_ints(w, level.parent);
        w.u64(level.members.size());
        for (const auto& m : level.members) write_ints(w, m);
    }
    w.close();
}

PointPyramid load_pyramid(const std::string& path) {
    BinaryReader r(path);
    check_magic(r, kPyramidMagic, kPyramidFormatVersion);
    PointPyramid out;
    out.levels.resize(r.u64());
    for (auto& level : out.levels) {
        level.positions = read_points(r);
        level.colors = read_points(r);
        level.k = static_cast<int>(r.i64());
        level.neighbors = read_ints(r);
        level.parent = read_ints(r);
        level.members.resize(r.u64());
        for (auto& m : level.members) m = read_ints(r);
        if (level.neighbors.size() != level.size() * static_cast<std::size_t>(level.k))
            throw IoError("inconsistent pyramid level in " + path);
    }
    return out;
}

std::string cache_directory() {
    const char* v = std::getenv("CHROMAREG_CACHE_DIR");
    return v ? std::string(v) : std::string();
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

PointPyramid cached_grid_subsample(const ColoredPointCloud& cloud, double voxel, int n_levels, int k) {
    const std::string dir = cache_directory();
    if (dir.empty()) return grid_subsample(cloud, voxel, n_levels, k);
    std::uint64_t h = 14695981039346656037ULL;
    h = fnv1a(h, &voxel, sizeof voxel);
    h = fnv1a(h, &n_levels, sizeof n_levels);
    h = fnv1a(h, &k, sizeof k);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        h = fnv1a(h, cloud.positions[i].data(), 3 * sizeof(double));
        h = fnv1a(h, cloud.colors[i].data(), 3 * sizeof(double));
    }
    char name[64];
    std::snprintf(name, sizeof name, "pyramid_%016llx_%zu.bin", static_cast<unsigned long long>(h), cloud.size());
    const fs::path path = fs::path(dir) / name;
    if (fs::exists(path)) {
        try {
            PointPyramid p = load_pyramid(path.string());
            if (!p.levels.empty() && p.levels.front().positions == cloud.positions) return p;
        } catch (const IoError&) {
        }
    }
    PointPyramid p = grid_subsample(cloud, voxel, n_levels, k);
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path tmp = path.string() + ".tmp" + std::to_string(std::hash<std::string>{}(path.string()));
    try {
        save_pyramid(tmp.string(), p);
        fs::rename(tmp, path, ec);
    } catch (const IoError&) {
        fs::remove(tmp, ec);
    }
    return p;
}

}  // namespace chromareg
