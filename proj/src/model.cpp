#include "chromareg/model.hpp"

#include "chromareg/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace chromareg {

namespace {

constexpr double kVisibilityTolerance = 0.05;
constexpr std::uint64_t kEvalLossSeed = 0x5eed;

Matrix patch_mean_colors(const ColorImage& image, const PatchGrid& grid) {
    Matrix out(static_cast<Eigen::Index>(grid.size()), 3);
    for (std::size_t p = 0; p < grid.size(); ++p) {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        for (int px : grid.members[p]) sum += image.pixels[px];
        out.row(static_cast<Eigen::Index>(p)) = (sum / static_cast<double>(grid.members[p].size())).transpose();
    }
    return out;
}

PairMining to_mining(const std::vector<FineAnchor>& anchors) {
    PairMining m;
    for (const auto& a : anchors)
        if (!a.positives.empty() && !a.negatives.empty()) m.anchors.push_back({a.token, a.positives, a.negatives});
    return m;
}

}  // namespace

PreparedPair prepare_pair(std::shared_ptr<const RegistrationPair> pair, const RunConfig& config) {
    if (!pair) throw std::invalid_argument("prepare_pair: null pair");
    const NetworkConfig net = config.model.network.effective();
    const TransformerConfig tcfg = config.model.transformer.effective(config.model.network.toy);
    const RegistrationPair& rp = *pair;
    PreparedPair out;
    out.pair = pair;
    out.coarse_grid = patchify(rp.image, net.coarse_stride());
    out.fine_grid = patchify(rp.image, net.fine_stride);
    out.pyramid = cached_grid_subsample(rp.cloud, net.voxel, net.n_levels(), net.knn);
    out.fusion = data_fusion(rp.cloud, rp.image, rp.k);

    const auto n_patches = static_cast<Eigen::Index>(out.coarse_grid.size());
    out.patch_coordinates.resize(n_patches, 2);
    for (Eigen::Index p = 0; p < n_patches; ++p)
        out.patch_coordinates.row(p) = out.coarse_grid.centers[static_cast<std::size_t>(p)].transpose();
    out.patch_color_distance = color_distance_image(patch_mean_colors(rp.image, out.coarse_grid), out.coarse_grid.rows,
                                                    out.coarse_grid.cols);

    const PyramidLevel& top = out.pyramid.coarsest();
    const auto n_super = static_cast<Eigen::Index>(top.size());
    out.superpoint_coordinates.resize(n_super, 3);
    Matrix super_colors(n_super, 3);
    for (Eigen::Index s = 0; s < n_super; ++s) {
        out.superpoint_coordinates.row(s) = top.positions[static_cast<std::size_t>(s)].transpose();
        super_colors.row(s) = top.colors[static_cast<std::size_t>(s)].transpose();
    }
    int k_out = 0;
    const std::vector<int> nb = knn_excluding_self(out.superpoint_coordinates, tcfg.color_knn, k_out);
    out.superpoint_color_distance = k_out > 0 ? color_distance_points(super_colors, nb, k_out)
                                              : Eigen::VectorXd::Zero(n_super);

    const std::size_t n_tokens = out.fine_grid.size();
    out.token_pixel.resize(n_tokens);
    out.patch_of_token.resize(n_tokens);
    std::vector<Eigen::Vector2d> token_centers(n_tokens);
    for (std::size_t t = 0; t < n_tokens; ++t) {
        const PixelIndex px = out.fine_grid.anchor_pixel(t);
        out.token_pixel[t] = px.row * rp.image.width + px.col;
        out.patch_of_token[t] = out.coarse_grid.patch_of_pixel[out.token_pixel[t]];
        token_centers[t] = pixel_center(px);
    }
    out.superpoint_of_point = out.pyramid.ancestors_of_finest();

    out.geometry.token_pixel = out.token_pixel;
    out.geometry.patch_tokens.assign(out.coarse_grid.size(), {});
    for (std::size_t t = 0; t < n_tokens; ++t) out.geometry.patch_tokens[out.patch_of_token[t]].push_back(static_cast<int>(t));
    out.geometry.superpoint_points.assign(top.size(), {});
    for (std::size_t i = 0; i < out.superpoint_of_point.size(); ++i)
        out.geometry.superpoint_points[out.superpoint_of_point[i]].push_back(static_cast<int>(i));

    const CorrespondenceSet all = establish_correspondences(token_centers, rp.k, rp.gt, rp.cloud, config.data.theta_fine);
    for (const auto& [t, p] : all.pairs()) {
        const double z = rp.gt.apply(rp.cloud.positions[p]).z();
        const double d = rp.depth.depth[out.token_pixel[t]];
        if (d <= 0.0 || std::abs(z - d) > kVisibilityTolerance) continue;
        out.gt_token_pairs.emplace_back(t, p);
        out.gt_pixel_pairs.emplace_back(out.token_pixel[t], p);
    }

    const LossConfig& loss = config.train.loss;
    out.patch_mining = mine_pairs(out.gt_token_pairs, out.patch_of_token, out.superpoint_of_point,
                                  static_cast<int>(out.coarse_grid.size()), static_cast<int>(top.size()),
                                  loss.positive_overlap);
    std::vector<std::pair<int, int>> reversed;
    reversed.reserve(out.gt_token_pairs.size());
    for (const auto& [t, p] : out.gt_token_pairs) reversed.emplace_back(p, t);
    out.superpoint_mining = mine_pairs(reversed, out.superpoint_of_point, out.patch_of_token,
                                       static_cast<int>(top.size()), static_cast<int>(out.coarse_grid.size()),
                                       loss.positive_overlap);

    std::map<int, std::vector<int>> positives;
    for (const auto& [t, p] : out.gt_token_pairs) positives[t].push_back(p);
    const double r2 = loss.fine_negative_radius * loss.fine_negative_radius;
    for (auto& [t, pos] : positives) {
        FineAnchor a;
        a.token = t;
        a.positives = pos;
        std::set<int> supers;
        for (int p : pos) supers.insert(out.superpoint_of_point[p]);
        for (int s : supers)
            for (int q : out.geometry.superpoint_points[s]) a.candidates.push_back(q);
        std::sort(a.candidates.begin(), a.candidates.end());
        for (int q : a.candidates) {
            bool far = true;
            for (int p : pos)
                if ((rp.cloud.positions[q] - rp.cloud.positions[p]).squaredNorm() <= r2) {
                    far = false;
                    break;
                }
            if (far) a.negatives.push_back(q);
        }
        out.fine_anchors.push_back(std::move(a));
    }
    return out;
}

RegistrationModel::RegistrationModel(const ModelConfig& config) : config_(config) {
    config_.network.validate();
    const NetworkConfig net = config_.network.effective();
    const TransformerConfig tcfg = config_.transformer.effective(config_.network.toy);
    Rng rng(net.seed);
    image_ = ImageBackbone(store_, net, rng);
    point_ = PointBackbone(store_, net, rng);
    transformer_ = ColorAwareTransformer(store_, tcfg, net.image_coarse, net.point_coarse, rng);
    if (!tcfg.color_bias) {
        for (const auto& name : transformer_.color_bias_names()) {
            Var w = store_.get(name);
            w.mutable_value().setZero();
            store_.set_trainable(name, false);
        }
    }
}

ForwardResult RegistrationModel::forward(const PreparedPair& pair) const {
    const NetworkConfig net = config_.network.effective();
    const ImageFeatures img = image_(pair.pair->image);
    const PointFeatures pts = point_(pair.pyramid, pair.fusion, net.fusion_enabled);
    if (img.coarse.data.rows() != pair.patch_coordinates.rows())
        throw std::logic_error("forward: coarse map does not match the patch grid");
    TokenInputs image_tokens{img.coarse.data, pair.patch_coordinates, pair.patch_color_distance};
    if (config_.transformer.image_color_source == ImageColorSource::kCoarseFeatures)
        image_tokens.color_distance = color_distance_image(img.coarse.data.value(), img.coarse.height, img.coarse.width);
    const TokenInputs point_tokens{pts.coarse, pair.superpoint_coordinates, pair.superpoint_color_distance};
    const auto [x, y] = transformer_(image_tokens, point_tokens);
    return {ad::l2_normalize_rows(x), ad::l2_normalize_rows(y), ad::l2_normalize_rows(img.fine.data),
            ad::l2_normalize_rows(pts.fine)};
}

LossBreakdown compute_losses(const ForwardResult& out, const PreparedPair& pair, const LossConfig& config, Rng& rng) {
    LossBreakdown b;
    const PairMining patch = cap_anchors(pair.patch_mining, config.max_anchors, rng);
    const PairMining super = cap_anchors(pair.superpoint_mining, config.max_anchors, rng);
    const Var coarse = ad::scale(ad::add(feature_loss(out.coarse_image, out.coarse_point, patch, config),
                                         feature_loss(out.coarse_point, out.coarse_image, super, config)),
                                 0.5);
    const PairMining fine_mining = cap_anchors(to_mining(pair.fine_anchors), config.max_anchors, rng);
    const Var fine = feature_loss(out.fine_image, out.fine_point, fine_mining, config);
    const Var feature = ad::add(coarse, fine);

    Var color = ad::constant(Matrix::Zero(1, 1));
    if (config.color_loss && !pair.fine_anchors.empty()) {
        std::vector<int> pick = rng.sample_without_replacement(static_cast<int>(pair.fine_anchors.size()),
                                                               config.max_anchors);
        std::sort(pick.begin(), pick.end());
        std::vector<int> tokens;
        std::vector<std::vector<int>> candidates;
        Matrix pixel_colors(static_cast<Eigen::Index>(pick.size()), 3);
        for (std::size_t i = 0; i < pick.size(); ++i) {
            const FineAnchor& a = pair.fine_anchors[pick[i]];
            tokens.push_back(a.token);
            candidates.push_back(a.candidates);
            pixel_colors.row(static_cast<Eigen::Index>(i)) =
                pair.pair->image.pixels[pair.token_pixel[a.token]].transpose();
        }
        const auto& cloud = pair.pair->cloud;
        Eigen::MatrixXd key_colors(static_cast<Eigen::Index>(cloud.size()), 3);
        for (std::size_t i = 0; i < cloud.size(); ++i) key_colors.row(static_cast<Eigen::Index>(i)) = cloud.colors[i].transpose();
        const Var predicted = soft_match_colors(ad::gather_rows(out.fine_image, tokens), out.fine_point, candidates,
                                                key_colors, config.color_temperature);
        const ColorLossResult r = color_loss(ad::constant(std::move(pixel_colors)), predicted, config.alpha);
        color = r.value;
        b.color_empty = r.empty;
    } else {
        b.color_empty = true;
    }
    b.overall = overall_loss(color, feature);
    b.color = color.scalar();
    b.coarse = coarse.scalar();
    b.fine = fine.scalar();
    b.feature = feature.scalar();
    return b;
}

Trainer::Trainer(RegistrationModel& model, const TrainConfig& config)
    : model_(model), config_(config), adam_(nn::AdamConfig{config.learning_rate}) {
    config_.validate();
}

TrainStepLog Trainer::step(const std::vector<PreparedPair>& pairs, long long step_index) {
    if (pairs.empty()) throw std::invalid_argument("Trainer::step: no training pairs");
    Rng rng(mix_seed(config_.seed, static_cast<std::uint64_t>(step_index)));
    const int batch = std::min<int>(config_.batch_size, static_cast<int>(pairs.size()));
    const std::vector<int> chosen = rng.sample_without_replacement(static_cast<int>(pairs.size()), batch);
    TrainStepLog log;
    log.step = step_index;
    std::vector<Var> totals;
    for (int i : chosen) {
        const LossBreakdown b = compute_losses(model_.forward(pairs[i]), pairs[i], config_.loss, rng);
        totals.push_back(b.overall);
        log.color += b.color / batch;
        log.feature += b.feature / batch;
        log.pairs.push_back(pairs[i].id());
    }
    const Var total = ad::scale(ad::add_scalars(totals), 1.0 / batch);
    log.overall = total.scalar();
    model_.parameters().zero_grad();
    ad::backward(total);
    log.grad_norm = adam_.step(model_.parameters());
    return log;
}

double Trainer::evaluate_loss(const std::vector<PreparedPair>& pairs) const {
    if (pairs.empty()) return 0.0;
    ad::NoGradGuard guard;
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Rng rng(mix_seed(kEvalLossSeed, i));
        sum += compute_losses(model_.forward(pairs[i]), pairs[i], config_.loss, rng).overall.scalar();
    }
    return sum / static_cast<double>(pairs.size());
}

Registration register_pair(const RegistrationModel& model, const PreparedPair& pair, const EvalConfig& config) {
    ad::NoGradGuard guard;
    const ForwardResult out = model.forward(pair);
    Registration r;
    r.coarse = coarse_match(out.coarse_image.value(), out.coarse_point.value(), model.config().matching.top_k);
    r.fine = fine_match(r.coarse, out.fine_image.value(), out.fine_point.value(), pair.geometry,
                        model.config().matching.fine_similarity_floor);
    const RegistrationPair& rp = *pair.pair;
    for (const auto& m : r.fine)
        r.correspondences.push_back(
            {pixel_center({m.pixel / rp.image.width, m.pixel % rp.image.width}), rp.cloud.positions[m.point]});
    RansacOptions options;
    options.max_iters = config.ransac_max_iters;
    options.threshold_px = config.ransac_threshold_px;
    options.confidence = config.ransac_confidence;
    options.seed = config.ransac_seed;
    options.refine_iters = config.refine_iters;
    r.pose = ransac_pnp(r.correspondences, rp.k, options);
    return r;
}

PairReport report_pair(const PreparedPair& pair, const Registration& registration, const EvalConfig& config) {
    const RegistrationPair& rp = *pair.pair;
    PairReport rep;
    rep.id = rp.id;
    rep.scene = rp.scene;
    rep.ir = inlier_ratio(registration.fine, rp.cloud, rp.gt, rp.depth, rp.k, config.ir_threshold);
    const CorrespondenceSet gt(pair.fine_grid.size(), rp.cloud.size(), pair.gt_token_pairs);
    rep.pir = patch_inlier_ratio(registration.coarse, gt, pair.patch_of_token, pair.superpoint_of_point);
    rep.converged = registration.pose.converged;
    rep.registered = is_registered(registration.pose, rp.gt, pair.gt_pixel_pairs, rp.cloud, rp.depth, rp.k, config);
    const PoseError e = pose_error(registration.pose.transform, rp.gt);
    rep.rre = e.rre_deg;
    rep.rte = e.rte_m;
    rep.rmse = correspondence_rmse(registration.pose.transform, pair.gt_pixel_pairs, rp.cloud, rp.depth, rp.k);
    rep.n_coarse = static_cast<int>(registration.coarse.size());
    rep.n_correspondences = static_cast<int>(registration.correspondences.size());
    rep.n_ransac_inliers = registration.pose.inlier_count();
    return rep;
}

}  // namespace chromareg
