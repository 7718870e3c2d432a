#include "chromareg/backbones.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace chromareg {

double FusionInput::valid_fraction() const {
    if (mask.empty()) return 0.0;
    std::size_t n = 0;
    for (bool m : mask) n += m;
    return static_cast<double>(n) / static_cast<double>(mask.size());
}

FusionInput data_fusion(const ColoredPointCloud& cloud, const ColorImage& image, const CameraIntrinsics& k) {
    FusionInput f;
    f.features = Matrix::Zero(static_cast<Eigen::Index>(cloud.size()), 6);
    f.mask.assign(cloud.size(), false);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3d& p = cloud.positions[i];
        f.features.block<1, 3>(static_cast<Eigen::Index>(i), 0) = p.transpose();
        const auto uv = project(k, RigidTransform::identity(), p);
        if (!uv) continue;
        const int col = std::min(static_cast<int>(uv->x()), image.width - 1);
        const int row = std::min(static_cast<int>(uv->y()), image.height - 1);
        f.features.block<1, 3>(static_cast<Eigen::Index>(i), 3) = image.at(row, col).transpose();
        f.mask[i] = true;
    }
    return f;
}

Matrix relative_positions(const PyramidLevel& level, double radius) {
    Matrix rel(static_cast<Eigen::Index>(level.neighbors.size()), 3);
    for (std::size_t i = 0; i < level.size(); ++i)
        for (int j = 0; j < level.k; ++j) {
            const Eigen::Vector3d d = (level.positions[level.neighbor(i, j)] - level.positions[i]) / radius;
            rel.row(static_cast<Eigen::Index>(i * level.k + j)) = d.transpose();
        }
    return rel;
}

double level_radius(double voxel, int level) { return voxel * std::pow(2.0, level - 1); }

namespace {

Var image_input(const ColorImage& image) {
    Matrix x(static_cast<Eigen::Index>(image.pixels.size()), 3);
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = (image.pixels[i].array() - 0.5).matrix().transpose();
    return ad::constant(std::move(x));
}

nn::FeatureMap relu_map(const nn::FeatureMap& x) { return {ad::relu(x.data), x.height, x.width}; }
nn::FeatureMap norm_map(const nn::LayerNorm& ln, const nn::FeatureMap& x) { return {ln(x.data), x.height, x.width}; }

}  // namespace

ImageBackbone::ImageBackbone(nn::ParameterStore& store, const NetworkConfig& config, Rng& rng) : config_(config) {
    fine_level_ = static_cast<int>(std::lround(std::log2(config.fine_stride)));
    stem_ = nn::Conv2d(store, "image.stem", 3, config.image_stem, 3, 1, rng);
    stem_norm_ = nn::LayerNorm(store, "image.stem.norm", config.image_stem);
    std::vector<int> width_at{config.image_stem};
    int in = config.image_stem;
    for (std::size_t i = 0; i < config.image_widths.size(); ++i) {
        const int w = config.image_widths[i];
        const std::string p = "image.stage" + std::to_string(i + 1);
        stages_.push_back({nn::Conv2d(store, p + ".down", in, w, 3, 2, rng), nn::LayerNorm(store, p + ".down_norm", w),
                           nn::Conv2d(store, p + ".conv1", w, w, 3, 1, rng), nn::LayerNorm(store, p + ".norm1", w),
                           nn::Conv2d(store, p + ".conv2", w, w, 3, 1, rng), nn::LayerNorm(store, p + ".norm2", w)});
        width_at.push_back(w);
        in = w;
    }
    coarse_head_ = nn::Conv2d(store, "image.coarse_head", in, config.image_coarse, 1, 1, rng, nn::Init::kXavier);
    laterals_.resize(width_at.size());
    for (std::size_t j = fine_level_; j < width_at.size(); ++j)
        laterals_[j] = nn::Conv2d(store, "image.lateral" + std::to_string(j), width_at[j], config.image_fine, 1, 1, rng,
                                  nn::Init::kXavier);
    smooth_ = nn::Conv2d(store, "image.smooth", config.image_fine, config.image_fine, 3, 1, rng, nn::Init::kXavier);
}

ImageFeatures ImageBackbone::operator()(const ColorImage& image) const {
    const int stride = config_.coarse_stride();
    if (image.width < stride || image.height < stride)
        throw std::invalid_argument("image_encode: image smaller than one coarse stride (" + std::to_string(stride) +
                                    " px)");
    std::vector<nn::FeatureMap> levels;
    nn::FeatureMap x{image_input(image), image.height, image.width};
    x = relu_map(norm_map(stem_norm_, stem_(x)));
    levels.push_back(x);
    for (const auto& s : stages_) {
        x = relu_map(norm_map(s.down_norm, s.down(x)));
        nn::FeatureMap y = relu_map(norm_map(s.norm1, s.conv1(x)));
        y = norm_map(s.norm2, s.conv2(y));
        x = relu_map({ad::add(x.data, y.data), x.height, x.width});
        levels.push_back(x);
    }
    ImageFeatures out;
    out.coarse = coarse_head_(levels.back());
    nn::FeatureMap top = laterals_.back()(levels.back());
    for (int j = static_cast<int>(levels.size()) - 2; j >= fine_level_; --j) {
        const nn::FeatureMap lat = laterals_[j](levels[j]);
        const auto idx = nn::nearest_upsample_indices(top.height, top.width, lat.height, lat.width);
        top = {ad::add(lat.data, ad::gather_rows(top.data, idx)), lat.height, lat.width};
    }
    out.fine = smooth_(top);
    return out;
}

std::vector<Var> PointBackbone::Encoder::run(const Var& input, const PointPyramid& pyramid,
                                             const std::vector<Var>& relative,
                                             const std::vector<std::vector<int>>& flat_neighbors) const {
    std::vector<Var> out;
    Var x = input;
    for (std::size_t l = 0; l < convs.size(); ++l) {
        const PyramidLevel& level = pyramid.levels[l];
        if (l > 0) x = ad::segment_mean(x, level.members);
        x = ad::relu(norms[l](convs[l](x, relative[l], flat_neighbors[l], level.k)));
        x = ad::add(x, ad::relu(mix_norms[l](mixes[l](x))));
        out.push_back(x);
    }
    return out;
}

PointBackbone::PointBackbone(nn::ParameterStore& store, const NetworkConfig& config, Rng& rng) : config_(config) {
    const int levels = config.n_levels();
    auto build_encoder = [&](Encoder& e, const std::string& prefix, int in) {
        for (int l = 0; l < levels; ++l) {
            const int w = config.point_widths[l];
            const std::string p = prefix + ".level" + std::to_string(l);
            e.convs.emplace_back(store, p + ".conv", in, w, rng);
            e.norms.emplace_back(store, p + ".norm", w);
            e.mixes.emplace_back(store, p + ".mix", w, w, rng);
            e.mix_norms.emplace_back(store, p + ".mix_norm", w);
            in = w;
        }
    };
    build_encoder(g_, "point", 4);
    build_encoder(h_, "fusion", 7);
    for (int l = 0; l < levels; ++l) {
        const int w = config.point_widths[l];
        const std::string name = "fusion.connector" + std::to_string(l);
        connectors_.emplace_back(store, name, w, w, rng, nn::Init::kZero);
        connector_names_.push_back(name + ".weight");
        connector_names_.push_back(name + ".bias");
    }
    for (int l = 0; l + 1 < levels; ++l) {
        const int w = config.point_widths[l];
        const std::string p = "point.decoder" + std::to_string(l);
        decoder_.emplace_back(store, p, config.point_widths[l + 1] + w, w, rng);
        decoder_norms_.emplace_back(store, p + ".norm", w);
    }
    coarse_head_ = nn::Linear(store, "point.coarse_head", config.point_widths.back(), config.point_coarse, rng,
                              nn::Init::kXavier);
    fine_head_ = nn::Linear(store, "point.fine_head", config.point_widths.front(), config.point_fine, rng,
                            nn::Init::kXavier);
}

std::vector<std::string> PointBackbone::connector_names() const { return connector_names_; }

PointFeatures PointBackbone::operator()(const PointPyramid& pyramid, const FusionInput& fusion,
                                        bool fusion_enabled) const {
    const int levels = config_.n_levels();
    if (static_cast<int>(pyramid.levels.size()) != levels)
        throw std::invalid_argument("point_encode_decode: pyramid has " + std::to_string(pyramid.levels.size()) +
                                    " levels, network expects " + std::to_string(levels));
    const auto n = static_cast<Eigen::Index>(pyramid.levels.front().size());
    if (static_cast<Eigen::Index>(fusion.size()) != n || fusion.features.rows() != n)
        throw std::invalid_argument("point_encode_decode: fusion input size differs from the pyramid");

    std::vector<Var> relative;
    std::vector<std::vector<int>> neighbors;
    for (int l = 0; l < levels; ++l) {
        relative.push_back(ad::constant(relative_positions(pyramid.levels[l], level_radius(config_.voxel, l))));
        neighbors.push_back(pyramid.levels[l].neighbors);
    }

    Matrix g_in(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        g_in.block<1, 3>(i, 0) = pyramid.levels.front().colors[i].transpose();
        g_in(i, 3) = 1.0;
    }
    const std::vector<Var> e = g_.run(ad::constant(std::move(g_in)), pyramid, relative, neighbors);
    std::vector<Var> skip = e;
    if (fusion_enabled) {
        Matrix h_in(n, 7);
        h_in.leftCols(6) = fusion.features;
        for (Eigen::Index i = 0; i < n; ++i) h_in(i, 6) = fusion.mask[i] ? 1.0 : 0.0;
        const std::vector<Var> h = h_.run(ad::constant(std::move(h_in)), pyramid, relative, neighbors);
        for (int l = 0; l < levels; ++l) skip[l] = ad::add(e[l], connectors_[l](h[l]));
    }

    PointFeatures out;
    Var d = skip.back();
    out.coarse = coarse_head_(d);
    for (int l = levels - 2; l >= 0; --l) {
        const Var up = ad::gather_rows(d, pyramid.levels[l + 1].parent);
        d = ad::relu(decoder_norms_[l](decoder_[l](ad::concat_cols({up, skip[l]}))));
    }
    out.fine = fine_head_(d);
    return out;
}

}  // namespace chromareg
