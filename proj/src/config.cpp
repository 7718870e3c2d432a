#include "chromareg/config.hpp"
#include "chromareg/random.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace chromareg {

using nlohmann::json;

namespace {

/// Reads fields from one JSON object and rejects keys that no field claimed.
class StrictReader {
public:
    StrictReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
    }

    template <typename T>
    void field(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + section_ + "." + key + "': " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + section_ + "." + it.key() + "'");
    }

private:
    const json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

void check(bool cond, const std::string& what) {
    if (!cond) throw ConfigError(what);
}

std::string color_source_name(ImageColorSource s) { return s == ImageColorSource::kPatchRgb ? "rgb" : "features"; }
ImageColorSource color_source_from(const std::string& s) {
    if (s == "rgb") return ImageColorSource::kPatchRgb;
    if (s == "features") return ImageColorSource::kCoarseFeatures;
    throw ConfigError("image_color_source must be 'rgb' or 'features'");
}
std::string criterion_name(RecallCriterion c) { return c == RecallCriterion::kCorrespondenceRmse ? "rmse" : "pose"; }
RecallCriterion criterion_from(const std::string& s) {
    if (s == "rmse") return RecallCriterion::kCorrespondenceRmse;
    if (s == "pose") return RecallCriterion::kPoseError;
    throw ConfigError("rr_criterion must be 'rmse' or 'pose'");
}

json to_json(const NetworkConfig& c) {
    return {{"image_stem", c.image_stem},     {"image_widths", c.image_widths}, {"image_coarse", c.image_coarse},
            {"image_fine", c.image_fine},     {"fine_stride", c.fine_stride},   {"point_widths", c.point_widths},
            {"point_coarse", c.point_coarse}, {"point_fine", c.point_fine},     {"knn", c.knn},
            {"voxel", c.voxel},               {"toy", c.toy},                   {"fusion_enabled", c.fusion_enabled},
            {"seed", c.seed}};
}

void from_json_strict(const json& j, NetworkConfig& c) {
    StrictReader r(j, "model.network");
    r.field("image_stem", c.image_stem);
    r.field("image_widths", c.image_widths);
    r.field("image_coarse", c.image_coarse);
    r.field("image_fine", c.image_fine);
    r.field("fine_stride", c.fine_stride);
    r.field("point_widths", c.point_widths);
    r.field("point_coarse", c.point_coarse);
    r.field("point_fine", c.point_fine);
    r.field("knn", c.knn);
    r.field("voxel", c.voxel);
    r.field("toy", c.toy);
    r.field("fusion_enabled", c.fusion_enabled);
    r.field("seed", c.seed);
    r.finish();
}

json to_json(const TransformerConfig& c) {
    return {{"d_model", c.d_model},
            {"heads", c.heads},
            {"blocks", c.blocks},
            {"fourier_bands", c.fourier_bands},
            {"ffn_multiplier", c.ffn_multiplier},
            {"color_knn", c.color_knn},
            {"color_bias", c.color_bias},
            {"image_color_source", color_source_name(c.image_color_source)}};
}

void from_json_strict(const json& j, TransformerConfig& c) {
    StrictReader r(j, "model.transformer");
    r.field("d_model", c.d_model);
    r.field("heads", c.heads);
    r.field("blocks", c.blocks);
    r.field("fourier_bands", c.fourier_bands);
    r.field("ffn_multiplier", c.ffn_multiplier);
    r.field("color_knn", c.color_knn);
    r.field("color_bias", c.color_bias);
    std::string src = color_source_name(c.image_color_source);
    r.field("image_color_source", src);
    c.image_color_source = color_source_from(src);
    r.finish();
}

json to_json(const MatchingConfig& c) {
    return {{"top_k", c.top_k}, {"fine_similarity_floor", c.fine_similarity_floor}};
}

void from_json_strict(const json& j, MatchingConfig& c) {
    StrictReader r(j, "model.matching");
    r.field("top_k", c.top_k);
    r.field("fine_similarity_floor", c.fine_similarity_floor);
    r.finish();
}

json to_json(const LossConfig& c) {
    return {{"alpha", c.alpha},
            {"delta_p", c.delta_p},
            {"delta_n", c.delta_n},
            {"gamma", c.gamma},
            {"positive_overlap", c.positive_overlap},
            {"max_anchors", c.max_anchors},
            {"fine_negative_radius", c.fine_negative_radius},
            {"color_temperature", c.color_temperature},
            {"color_loss", c.color_loss}};
}

void from_json_strict(const json& j, LossConfig& c) {
    StrictReader r(j, "train.loss");
    r.field("alpha", c.alpha);
    r.field("delta_p", c.delta_p);
    r.field("delta_n", c.delta_n);
    r.field("gamma", c.gamma);
    r.field("positive_overlap", c.positive_overlap);
    r.field("max_anchors", c.max_anchors);
    r.field("fine_negative_radius", c.fine_negative_radius);
    r.field("color_temperature", c.color_temperature);
    r.field("color_loss", c.color_loss);
    r.finish();
}

json to_json(const DataConfig& c) {
    return {{"seed", c.seed},
            {"n_scenes", c.n_scenes},
            {"pairs_per_scene", c.pairs_per_scene},
            {"objects_per_scene", c.objects_per_scene},
            {"extent", c.extent},
            {"surfel_spacing", c.surfel_spacing},
            {"image_width", c.image_width},
            {"image_height", c.image_height},
            {"focal", c.focal},
            {"min_overlap", c.min_overlap},
            {"baseline_translation", c.baseline_translation},
            {"baseline_rotation_deg", c.baseline_rotation_deg},
            {"max_attempts_per_pair", c.max_attempts_per_pair},
            {"theta_fine", c.theta_fine},
            {"theta_coarse", c.theta_coarse},
            {"ingestion_path", c.ingestion_path},
            {"ingestion_frame_gap", c.ingestion_frame_gap}};
}

void from_json_strict(const json& j, DataConfig& c) {
    StrictReader r(j, "data");
    r.field("seed", c.seed);
    r.field("n_scenes", c.n_scenes);
    r.field("pairs_per_scene", c.pairs_per_scene);
    r.field("objects_per_scene", c.objects_per_scene);
    r.field("extent", c.extent);
    r.field("surfel_spacing", c.surfel_spacing);
    r.field("image_width", c.image_width);
    r.field("image_height", c.image_height);
    r.field("focal", c.focal);
    r.field("min_overlap", c.min_overlap);
    r.field("baseline_translation", c.baseline_translation);
    r.field("baseline_rotation_deg", c.baseline_rotation_deg);
    r.field("max_attempts_per_pair", c.max_attempts_per_pair);
    r.field("theta_fine", c.theta_fine);
    r.field("theta_coarse", c.theta_coarse);
    r.field("ingestion_path", c.ingestion_path);
    r.field("ingestion_frame_gap", c.ingestion_frame_gap);
    r.finish();
}

json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"loss", to_json(c.loss)}};
}

void from_json_strict(const json& j, TrainConfig& c) {
    StrictReader r(j, "train");
    r.field("steps", c.steps);
    r.field("batch_size", c.batch_size);
    r.field("learning_rate", c.learning_rate);
    r.field("seed", c.seed);
    r.field("checkpoint_every", c.checkpoint_every);
    if (const json* l = r.child("loss")) from_json_strict(*l, c.loss);
    r.finish();
}

json to_json(const EvalConfig& c) {
    return {{"ir_threshold", c.ir_threshold},
            {"fmr_threshold", c.fmr_threshold},
            {"rr_threshold", c.rr_threshold},
            {"rr_criterion", criterion_name(c.rr_criterion)},
            {"rr_max_rre_deg", c.rr_max_rre_deg},
            {"ransac_max_iters", c.ransac_max_iters},
            {"ransac_threshold_px", c.ransac_threshold_px},
            {"ransac_confidence", c.ransac_confidence},
            {"ransac_seed", c.ransac_seed},
            {"refine_iters", c.refine_iters}};
}

void from_json_strict(const json& j, EvalConfig& c) {
    StrictReader r(j, "eval");
    r.field("ir_threshold", c.ir_threshold);
    r.field("fmr_threshold", c.fmr_threshold);
    r.field("rr_threshold", c.rr_threshold);
    std::string crit = criterion_name(c.rr_criterion);
    r.field("rr_criterion", crit);
    c.rr_criterion = criterion_from(crit);
    r.field("rr_max_rre_deg", c.rr_max_rre_deg);
    r.field("ransac_max_iters", c.ransac_max_iters);
    r.field("ransac_threshold_px", c.ransac_threshold_px);
    r.field("ransac_confidence", c.ransac_confidence);
    r.field("ransac_seed", c.ransac_seed);
    r.field("refine_iters", c.refine_iters);
    r.finish();
}

}  // namespace

NetworkConfig NetworkConfig::effective() const {
    NetworkConfig c = *this;
    if (!toy) return c;
    auto half = [](int w) { return std::max(1, w / 2); };
    c.image_stem = half(c.image_stem);
    for (auto& w : c.image_widths) w = half(w);
    c.image_coarse = half(c.image_coarse);
    c.image_fine = half(c.image_fine);
    for (auto& w : c.point_widths) w = half(w);
    c.point_coarse = half(c.point_coarse);
    c.point_fine = half(c.point_fine);
    c.toy = false;
    return c;
}

void NetworkConfig::validate() const {
    const NetworkConfig e = effective();
    check(!e.image_widths.empty(), "network: image_widths must be non-empty");
    check(e.point_widths.size() >= 2, "network: need at least two point levels");
    check(e.image_stem >= 8 && e.image_coarse >= 8 && e.image_fine >= 8 && e.point_coarse >= 8 && e.point_fine >= 8,
          "network: widths must be >= 8");
    for (int w : e.image_widths) check(w >= 8, "network: widths must be >= 8");
    for (int w : e.point_widths) check(w >= 8, "network: widths must be >= 8");
    check(e.image_fine == e.point_fine, "network: image and point fine widths must match");
    check(fine_stride >= 1 && (fine_stride & (fine_stride - 1)) == 0, "network: fine_stride must be a power of two");
    check(fine_stride < coarse_stride(), "network: fine_stride must be below the coarse stride");
    check(knn >= 1, "network: knn must be >= 1");
    check(voxel > 0.0, "network: voxel must be positive");
}

TransformerConfig TransformerConfig::effective(bool toy) const {
    TransformerConfig c = *this;
    if (toy) c.d_model = std::max(1, c.d_model / 2);
    return c;
}

void TransformerConfig::validate() const {
    check(d_model >= 8, "transformer: d_model must be >= 8");
    check(heads >= 1 && d_model % heads == 0, "transformer: d_model must be divisible by heads");
    check(blocks >= 1, "transformer: blocks must be >= 1");
    check(fourier_bands >= 1 && 2 * 3 * fourier_bands <= d_model, "transformer: 2*3*fourier_bands must fit d_model");
    check(ffn_multiplier >= 1, "transformer: ffn_multiplier must be >= 1");
    check(color_knn >= 1, "transformer: color_knn must be >= 1");
}

void LossConfig::validate() const {
    check(alpha > 0.0, "loss: alpha must be positive");
    check(delta_p < delta_n, "loss: delta_p must be below delta_n");
    check(gamma > 0.0, "loss: gamma must be positive");
    check(positive_overlap > 0.0 && positive_overlap <= 1.0, "loss: positive_overlap must be in (0, 1]");
    check(max_anchors >= 1, "loss: max_anchors must be >= 1");
    check(color_temperature > 0.0, "loss: color_temperature must be positive");
}

void DataConfig::validate() const {
    check(n_scenes >= 1 && pairs_per_scene >= 0, "data: scene/pair counts");
    check(objects_per_scene >= 1, "data: objects_per_scene must be >= 1");
    check(extent > 0.0 && surfel_spacing > 0.0, "data: extent and spacing must be positive");
    check(image_width >= 1 && image_height >= 1 && focal > 0.0, "data: camera");
    check(min_overlap >= 0.0, "data: min_overlap must be >= 0");
    check(theta_fine > 0.0 && theta_coarse > 0.0, "data: theta must be positive");
    check(max_attempts_per_pair >= 1, "data: max_attempts_per_pair must be >= 1");
    check(ingestion_frame_gap >= 1, "data: ingestion_frame_gap must be >= 1");
}

void TrainConfig::validate() const {
    check(steps >= 0, "train: steps must be >= 0");
    check(batch_size >= 1, "train: batch_size must be >= 1");
    check(learning_rate > 0.0, "train: learning_rate must be positive");
    check(checkpoint_every >= 1, "train: checkpoint_every must be >= 1");
    loss.validate();
}

void EvalConfig::validate() const {
    check(ir_threshold >= 0.0 && fmr_threshold >= 0.0 && rr_threshold >= 0.0, "eval: thresholds must be >= 0");
    check(ransac_max_iters >= 1 && ransac_threshold_px > 0.0, "eval: ransac");
    check(ransac_confidence > 0.0 && ransac_confidence < 1.0, "eval: ransac_confidence must be in (0,1)");
    check(refine_iters >= 0, "eval: refine_iters must be >= 0");
}

void RunConfig::validate() const {
    data.validate();
    model.network.validate();
    model.transformer.effective(model.network.toy).validate();
    check(model.matching.top_k >= 1, "matching: top_k must be >= 1");
    train.validate();
    eval.validate();
}

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    StrictReader root(j, "<root>");
    if (const json* d = root.child("data")) from_json_strict(*d, c.data);
    if (const json* m = root.child("model")) {
        StrictReader mr(*m, "model");
        if (const json* n = mr.child("network")) from_json_strict(*n, c.model.network);
        if (const json* t = mr.child("transformer")) from_json_strict(*t, c.model.transformer);
        if (const json* x = mr.child("matching")) from_json_strict(*x, c.model.matching);
        mr.finish();
    }
    if (const json* t = root.child("train")) from_json_strict(*t, c.train);
    if (const json* e = root.child("eval")) from_json_strict(*e, c.eval);
    root.finish();
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
    json j = {{"data", to_json(c.data)},
              {"model",
               {{"network", to_json(c.model.network)},
                {"transformer", to_json(c.model.transformer)},
                {"matching", to_json(c.model.matching)}}},
              {"train", to_json(c.train)},
              {"eval", to_json(c.eval)}};
    return j.dump(2);
}

void apply_seed_override(RunConfig& config, std::uint64_t seed) {
    config.data.seed = seed;
    config.model.network.seed = mix_seed(seed, 1);
    config.train.seed = mix_seed(seed, 2);
    config.eval.ransac_seed = mix_seed(seed, 3);
}

}  // namespace chromareg
