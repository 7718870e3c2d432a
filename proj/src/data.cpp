#include "chromareg/data.hpp"

#include "chromareg/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace chromareg {

namespace {

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Eigen::Vector3d rgb;
    switch (static_cast<int>(hp) % 6) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    return (rgb.array() + (v - c)).matrix();
}

Eigen::Vector3d clamp01(const Eigen::Vector3d& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

/// Axis-aligned rectangle on a surface's 2D parameterization, painted over the base pattern.
struct Decal {
    double u0, v0, u1, v1;
    Eigen::Vector3d color;
};

/// Planar surface patch: origin + u * du + v * dv for u in [0, lu], v in [0, lv].
struct Face {
    Eigen::Vector3d origin, du, dv, normal;
    double lu, lv;
};

struct Texture {
    Eigen::Vector3d primary;
    Eigen::Vector3d secondary;
    double period = 0.2;
    std::vector<Decal> decals;

    Eigen::Vector3d at(double u, double v) const {
        for (const auto& d : decals)
            if (u >= d.u0 && u <= d.u1 && v >= d.v0 && v <= d.v1) return d.color;
        const long long cu = static_cast<long long>(std::floor(u / period));
        const long long cv = static_cast<long long>(std::floor(v / period));
        return ((cu + cv) % 2 == 0) ? primary : secondary;
    }
};

void sample_face(const Face& f, const Texture& tex, double spacing, int object_id, Rng& rng, std::vector<Surfel>& out) {
    const int nu = std::max(1, static_cast<int>(std::ceil(f.lu / spacing)));
    const int nv = std::max(1, static_cast<int>(std::ceil(f.lv / spacing)));
    const double su = f.lu / nu, sv = f.lv / nv;
    const double radius = 0.75 * std::max(su, sv);
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            const double u = (i + 0.5) * su, v = (j + 0.5) * sv;
            Eigen::Vector3d noise(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
            out.push_back({f.origin + u * f.du + v * f.dv, f.normal, clamp01(tex.at(u, v) + noise), radius, object_id});
        }
}

Texture make_object_texture(double hue, Rng& rng) {
    Texture t;
    const double s = rng.uniform(0.65, 0.95);
    const double v = rng.uniform(0.7, 0.95);
    t.primary = hsv_to_rgb(hue, s, v);
    t.secondary = hsv_to_rgb(hue, s, v * 0.55);
    t.period = rng.uniform(0.1, 0.22);
    return t;
}

Texture make_room_texture(double lu, double lv, Rng& rng, int n_decals) {
    Texture t;
    const double hue = rng.uniform();
    t.primary = hsv_to_rgb(hue, rng.uniform(0.15, 0.4), rng.uniform(0.55, 0.8));
    t.secondary = hsv_to_rgb(hue + rng.uniform(-0.08, 0.08), rng.uniform(0.15, 0.4), rng.uniform(0.35, 0.55));
    t.period = rng.uniform(0.3, 0.6);
    for (int i = 0; i < n_decals; ++i) {
        const double w = rng.uniform(0.2, 0.7), h = rng.uniform(0.2, 0.7);
        const double u0 = rng.uniform(0.0, std::max(lu - w, 0.0)), v0 = rng.uniform(0.0, std::max(lv - h, 0.0));
        t.decals.push_back({u0, v0, u0 + w, v0 + h, hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 1.0), rng.uniform(0.4, 1.0))});
    }
    return t;
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, int n_objects, double extent, const SceneOptions& options) {
    if (n_objects < 1) throw std::invalid_argument("generate_scene: n_objects must be >= 1");
    if (!(extent > 0.0)) throw std::invalid_argument("generate_scene: extent must be positive");
    Rng rng(seed);
    SyntheticScene scene;
    scene.seed = seed;
    scene.extent = extent;
    scene.room_height = options.room_height;
    const double s = options.surfel_spacing;
    const double half = 0.5 * extent;
    const double hue_offset = rng.uniform();

    std::vector<std::pair<Eigen::Vector2d, double>> footprints;
    for (int obj = 0; obj < n_objects; ++obj) {
        const bool is_box = rng.uniform() < 0.6;
        const double size = is_box ? 0.0 : rng.uniform(0.2, 0.45);
        const Eigen::Vector3d half_size =
            is_box ? Eigen::Vector3d(rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.5))
                   : Eigen::Vector3d(size, size, size);
        const double footprint = std::hypot(half_size.x(), half_size.y());
        Eigen::Vector2d center;
        for (int attempt = 0; attempt < 50; ++attempt) {
            const double lim = std::max(0.35 * extent - footprint, 0.0);
            center = {rng.uniform(-lim, lim), rng.uniform(-lim, lim)};
            bool clear = true;
            for (const auto& [c, r] : footprints)
                if ((c - center).norm() < r + footprint + 0.05) clear = false;
            if (clear) break;
        }
        footprints.emplace_back(center, footprint);

        // Evenly spaced hues with jitter keep each object's dominant color distinct.
        const double hue = hue_offset + (obj + rng.uniform(-0.15, 0.15)) / n_objects;
        const Texture tex = make_object_texture(hue, rng);
        const std::size_t first = scene.surfels.size();
        if (is_box) {
            const double yaw = rng.uniform(0.0, M_PI);
            const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
            const Eigen::Vector3d c(center.x(), center.y(), half_size.z());
            const Eigen::Vector3d ex = r.col(0) * half_size.x(), ey = r.col(1) * half_size.y(),
                                  ez = Eigen::Vector3d::UnitZ() * half_size.z();
            // Five visible faces (the bottom rests on the floor).
            const std::array<Face, 5> faces = {{
                {c - ex - ey + ez, 2 * ex / (2 * half_size.x()), 2 * ey / (2 * half_size.y()), Eigen::Vector3d::UnitZ(),
                 2 * half_size.x(), 2 * half_size.y()},
                {c + ex - ey - ez, r.col(1), Eigen::Vector3d::UnitZ(), r.col(0), 2 * half_size.y(), 2 * half_size.z()},
                {c - ex - ey - ez, r.col(1), Eigen::Vector3d::UnitZ(), -r.col(0), 2 * half_size.y(), 2 * half_size.z()},
                {c - ex + ey - ez, r.col(0), Eigen::Vector3d::UnitZ(), r.col(1), 2 * half_size.x(), 2 * half_size.z()},
                {c - ex - ey - ez, r.col(0), Eigen::Vector3d::UnitZ(), -r.col(1), 2 * half_size.x(), 2 * half_size.z()},
            }};
            for (const auto& f : faces) sample_face(f, tex, s, obj, rng, scene.surfels);
        } else {
            const Eigen::Vector3d c(center.x(), center.y(), size);
            const int n = std::max(8, static_cast<int>(std::ceil(4.0 * M_PI * size * size / (s * s))));
            const double golden = M_PI * (3.0 - std::sqrt(5.0));
            const double radius = 0.75 * std::sqrt(4.0 * M_PI * size * size / n) * 1.15;
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - 2.0 * (i + 0.5) / n;
                const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
                const Eigen::Vector3d dir(rr * std::cos(golden * i), rr * std::sin(golden * i), z);
                const Eigen::Vector3d p = c + size * dir;
                const Eigen::Vector3d local = p - c + Eigen::Vector3d::Constant(size);
                Eigen::Vector3d noise(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
                const Eigen::Vector3d col = tex.at(local.x() + local.z(), local.y() + local.z());
                scene.surfels.push_back({p, dir, clamp01(col + noise), radius, obj});
            }
        }
        ObjectBounds b{Eigen::Vector3d::Constant(1e300), Eigen::Vector3d::Constant(-1e300), tex.primary};
        for (std::size_t i = first; i < scene.surfels.size(); ++i) {
            b.min = b.min.cwiseMin(scene.surfels[i].position);
            b.max = b.max.cwiseMax(scene.surfels[i].position);
        }
        scene.objects.push_back(b);
    }

    if (options.enclosure) {
        const double h = options.room_height;
        const Eigen::Vector3d ux = Eigen::Vector3d::UnitX(), uy = Eigen::Vector3d::UnitY(), uz = Eigen::Vector3d::UnitZ();
        const std::array<Face, 6> faces = {{
            {{-half, -half, 0.0}, ux, uy, uz, extent, extent},         // floor
            {{-half, -half, h}, ux, uy, -uz, extent, extent},          // ceiling
            {{-half, -half, 0.0}, ux, uz, uy, extent, h},              // wall y = -half
            {{-half, half, 0.0}, ux, uz, -uy, extent, h},              // wall y = +half
            {{-half, -half, 0.0}, uy, uz, ux, extent, h},              // wall x = -half
            {{half, -half, 0.0}, uy, uz, -ux, extent, h},              // wall x = +half
        }};
        for (std::size_t i = 0; i < faces.size(); ++i) {
            const int decals = i == 1 ? 2 : 8;
            sample_face(faces[i], make_room_texture(faces[i].lu, faces[i].lv, rng, decals), s, -1, rng, scene.surfels);
        }
    }
    return scene;
}

std::pair<ColorImage, DepthImage> render_view(const SyntheticScene& scene, const CameraIntrinsics& k,
                                              const RigidTransform& world_to_camera) {
    k.validate();
    ColorImage color(k.width, k.height);
    DepthImage depth(k.width, k.height);
    const double fmax = std::max(k.fx, k.fy);
    const Eigen::Matrix3d& r = world_to_camera.rotation();
    for (const auto& s : scene.surfels) {
        const Eigen::Vector3d c = world_to_camera.apply(s.position);
        if (c.z() - s.radius <= 0.02) continue;
        const Eigen::Vector3d n = r * s.normal;
        const double u = k.fx * c.x() / c.z() + k.cx;
        const double v = k.fy * c.y() / c.z() + k.cy;
        const double rad_px = fmax * s.radius / (c.z() - s.radius) + 1.0;
        const int c0 = std::max(0, static_cast<int>(std::floor(u - rad_px)));
        const int c1 = std::min(k.width - 1, static_cast<int>(std::floor(u + rad_px)));
        const int r0 = std::max(0, static_cast<int>(std::floor(v - rad_px)));
        const int r1 = std::min(k.height - 1, static_cast<int>(std::floor(v + rad_px)));
        if (c0 > c1 || r0 > r1) continue;
        const double nc = n.dot(c);
        const double r2 = s.radius * s.radius;
        for (int row = r0; row <= r1; ++row)
            for (int col = c0; col <= c1; ++col) {
                const Eigen::Vector3d ray((col + 0.5 - k.cx) / k.fx, (row + 0.5 - k.cy) / k.fy, 1.0);
                const double denom = n.dot(ray);
                if (std::abs(denom) < 1e-9) continue;
                const double t = nc / denom;
                if (t <= kDepthEpsilon) continue;
                const bool holds_center = col == static_cast<int>(std::floor(u)) && row == static_cast<int>(std::floor(v));
                if (!holds_center && (t * ray - c).squaredNorm() > r2) continue;
                double& zb = depth.at(row, col);
                if (zb == 0.0 || t < zb) {
                    zb = t;
                    color.at(row, col) = s.color;
                }
            }
    }
    return {std::move(color), std::move(depth)};
}

ColoredPointCloud colorize_from_depth(const DepthImage& depth, const ColorImage& color, const CameraIntrinsics& k_depth,
                                      const CameraIntrinsics& k_color, const RigidTransform& depth_to_color) {
    if (depth.depth.empty() || color.pixels.empty()) throw std::invalid_argument("colorize_from_depth: empty image");
    ColoredPointCloud cloud;
    for (int row = 0; row < depth.height; ++row)
        for (int col = 0; col < depth.width; ++col) {
            const auto p = lift(k_depth, depth, {row, col});
            if (!p) continue;
            const auto uv = project(k_color, depth_to_color, *p);
            if (!uv) continue;
            const int cc = std::min(static_cast<int>(uv->x()), color.width - 1);
            const int cr = std::min(static_cast<int>(uv->y()), color.height - 1);
            cloud.positions.push_back(*p);
            cloud.colors.push_back(color.at(cr, cc));
        }
    cloud.validate_and_clamp();
    return cloud;
}

RgbdView quantize_view(const RgbdView& view) {
    RgbdView q = view;
    for (auto& c : q.color.pixels)
        for (int i = 0; i < 3; ++i) c[i] = std::round(std::clamp(c[i], 0.0, 1.0) * 255.0) / 255.0;
    for (auto& d : q.depth.depth) d = std::min(std::round(d * 1000.0), 65535.0) / 1000.0;
    return q;
}

double compute_overlap(const ColoredPointCloud& cloud, const RigidTransform& gt, const CameraIntrinsics& k,
                       const DepthImage& depth, double depth_tolerance) {
    if (cloud.size() == 0) return 0.0;
    std::size_t hits = 0;
    for (const auto& p : cloud.positions) {
        const Eigen::Vector3d q = gt.apply(p);
        const auto uv = project(k, RigidTransform::identity(), q);
        if (!uv) continue;
        const double d = depth.at(static_cast<int>(uv->y()), static_cast<int>(uv->x()));
        if (d > 0.0 && std::abs(d - q.z()) <= depth_tolerance) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(cloud.size());
}

PairBuildResult build_pair_from_views(const RgbdView& a, const RgbdView& b, const CameraIntrinsics& k,
                                      double min_overlap) {
    PairBuildResult result;
    ColoredPointCloud cloud;
    try {
        cloud = colorize_from_depth(a.depth, a.color, k, k, RigidTransform::identity());
    } catch (const std::invalid_argument&) {
        return result;  // view A sees nothing
    }
    const RigidTransform gt = compose(invert(b.camera_to_world), a.camera_to_world);
    result.overlap = compute_overlap(cloud, gt, k, b.depth);
    if (result.overlap < min_overlap) return result;
    RegistrationPair pair;
    pair.image = b.color;
    pair.depth = b.depth;
    pair.cloud = std::move(cloud);
    pair.k = k;
    pair.gt = gt;
    pair.overlap = result.overlap;
    result.pair = std::move(pair);
    return result;
}

PairBuildResult build_pair(const SyntheticScene& scene, const RigidTransform& camera_to_world_a,
                           const RigidTransform& camera_to_world_b, const CameraIntrinsics& k, double min_overlap) {
    auto [ca, da] = render_view(scene, k, invert(camera_to_world_a));
    auto [cb, db] = render_view(scene, k, invert(camera_to_world_b));
    return build_pair_from_views({std::move(ca), std::move(da), camera_to_world_a},
                                 {std::move(cb), std::move(db), camera_to_world_b}, k, min_overlap);
}

RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    const Eigen::Vector3d f = (target - eye).normalized();
    Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
    if (std::abs(f.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
    const Eigen::Vector3d x = f.cross(up).normalized();
    const Eigen::Vector3d y = f.cross(x);
    Eigen::Matrix3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = f;
    return RigidTransform::from_trusted(nearest_rotation(r), eye);
}

std::vector<int> knn_indices(const std::vector<Eigen::Vector3d>& points, int k) {
    const int n = static_cast<int>(points.size());
    k = std::min(k, n);
    std::vector<int> out(static_cast<std::size_t>(n) * k);
    std::vector<std::pair<double, int>> cand(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) cand[j] = {(points[j] - points[i]).squaredNorm(), j};
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = cand[j].second;
    }
    return out;
}

std::vector<int> PointPyramid::ancestors_of_finest() const {
    std::vector<int> idx(levels.front().size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t l = 1; l < levels.size(); ++l)
        for (auto& i : idx) i = levels[l].parent[i];
    return idx;
}

PointPyramid grid_subsample(const ColoredPointCloud& cloud, double voxel, int n_levels, int k) {
    if (!(voxel > 0.0)) throw std::invalid_argument("grid_subsample: voxel must be positive");
    if (n_levels < 2) throw std::invalid_argument("grid_subsample: need at least 2 levels");
    if (cloud.size() == 0) throw std::invalid_argument("grid_subsample: empty cloud");
    if (k < 1) throw std::invalid_argument("grid_subsample: k must be >= 1");
    PointPyramid pyr;
    PyramidLevel base;
    base.positions = cloud.positions;
    base.colors = cloud.colors;
    pyr.levels.push_back(std::move(base));
    for (int l = 1; l < n_levels; ++l) {
        const PyramidLevel& fine = pyr.levels.back();
        const double edge = voxel * std::pow(2.0, l - 1);
        using Key = std::tuple<long long, long long, long long>;
        std::map<Key, std::vector<int>> cells;
        for (std::size_t i = 0; i < fine.size(); ++i) {
            const Eigen::Vector3d& p = fine.positions[i];
            cells[{static_cast<long long>(std::floor(p.x() / edge)), static_cast<long long>(std::floor(p.y() / edge)),
                   static_cast<long long>(std::floor(p.z() / edge))}]
                .push_back(static_cast<int>(i));
        }
        PyramidLevel coarse;
        coarse.parent.assign(fine.size(), -1);
        for (auto& [key, mem] : cells) {
            Eigen::Vector3d pos = Eigen::Vector3d::Zero(), col = Eigen::Vector3d::Zero();
            for (int i : mem) {
                pos += fine.positions[i];
                col += fine.colors[i];
                coarse.parent[i] = static_cast<int>(coarse.positions.size());
            }
            coarse.positions.push_back(pos / static_cast<double>(mem.size()));
            coarse.colors.push_back(col / static_cast<double>(mem.size()));
            coarse.members.push_back(std::move(mem));
        }
        pyr.levels.push_back(std::move(coarse));
    }
    for (auto& level : pyr.levels) {
        level.k = std::min<int>(k, static_cast<int>(level.size()));
        level.neighbors = knn_indices(level.positions, level.k);
    }
    return pyr;
}

PatchGrid patchify(int width, int height, int stride) {
    if (stride < 1) throw std::invalid_argument("patchify: stride must be >= 1");
    if (width < 1 || height < 1) throw std::invalid_argument("patchify: empty image");
    PatchGrid g;
    g.stride = stride;
    g.image_width = width;
    g.image_height = height;
    g.rows = (height + stride - 1) / stride;
    g.cols = (width + stride - 1) / stride;
    g.members.resize(static_cast<std::size_t>(g.rows) * g.cols);
    g.patch_of_pixel.resize(static_cast<std::size_t>(width) * height);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const int p = (r / stride) * g.cols + c / stride;
            g.members[p].push_back(r * width + c);
            g.patch_of_pixel[static_cast<std::size_t>(r) * width + c] = p;
        }
    g.centers.reserve(g.members.size());
    for (const auto& mem : g.members) {
        Eigen::Vector2d sum = Eigen::Vector2d::Zero();
        for (int p : mem) sum += Eigen::Vector2d(p % width + 0.5, p / width + 0.5);
        g.centers.push_back(sum / static_cast<double>(mem.size()));
    }
    return g;
}

PatchGrid patchify(const ColorImage& image, int stride) { return patchify(image.width, image.height, stride); }

}  // namespace chromareg
