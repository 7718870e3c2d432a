#include "chromareg/harness.hpp"

#include "chromareg/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace chromareg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string pair_id(int scene, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%03d_p%03d", scene, index);
    return buf;
}

RigidTransform sample_view(const SyntheticScene& scene, const DataConfig& c, Rng& rng) {
    const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
    const double radius = rng.uniform(0.25, 0.42) * c.extent;
    const Eigen::Vector3d eye(radius * std::cos(azimuth), radius * std::sin(azimuth), rng.uniform(0.9, 1.7));
    Eigen::Vector3d target(0.0, 0.0, 0.5);
    if (!scene.objects.empty()) {
        const ObjectBounds& o = scene.objects[rng.below(scene.objects.size())];
        target = 0.5 * (o.min + o.max);
    }
    target += Eigen::Vector3d(rng.normal(0.0, 0.1), rng.normal(0.0, 0.1), rng.normal(0.0, 0.05));
    return look_at(eye, target);
}

Eigen::Vector3d random_unit(Rng& rng) {
    Eigen::Vector3d v;
    do {
        v = {rng.normal(), rng.normal(), rng.normal()};
    } while (v.norm() < 1e-9);
    return v.normalized();
}

RigidTransform perturb_view(const RigidTransform& a, const DataConfig& c, Rng& rng) {
    const Eigen::Vector3d offset = random_unit(rng) * rng.uniform(0.5, 1.0) * c.baseline_translation;
    const double angle = rng.uniform(0.5, 1.0) * c.baseline_rotation_deg * M_PI / 180.0;
    const Eigen::Matrix3d r = nearest_rotation(a.rotation() * so3_exp(random_unit(rng) * angle));
    return RigidTransform::from_trusted(r, a.translation() + offset);
}

GeneratedData ingest_pairs(const DataConfig& c) {
    const RgbdSequence seq = read_rgbd_directory(c.ingestion_path);
    GeneratedData out;
    int index = 0;
    for (std::size_t i = 0; i + c.ingestion_frame_gap < seq.views.size(); i += c.ingestion_frame_gap) {
        PairBuildResult r = build_pair_from_views(seq.views[i], seq.views[i + c.ingestion_frame_gap], seq.k, c.min_overlap);
        if (!r.accepted()) {
            ++out.rejected;
            continue;
        }
        r.pair->id = pair_id(0, index++);
        r.pair->scene = 0;
        out.pairs.push_back(std::move(*r.pair));
        ++out.accepted;
    }
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw HarnessError("cannot create output directory " + dir);
    const fs::path probe = fs::path(dir) / ".write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw HarnessError("output directory is not writable: " + dir);
    }
    fs::remove(probe, ec);
}

ordered_json scene_to_json(const SceneReport& s) {
    ordered_json j;
    if (s.scene >= 0) j["scene"] = s.scene;
    j["n_pairs"] = s.n_pairs;
    j["ir"] = s.ir;
    j["pir"] = s.pir;
    j["fmr"] = s.fmr;
    j["rr"] = s.rr;
    j["rte_m"] = s.rte;
    j["rre_deg"] = s.rre;
    j["converged"] = s.converged;
    return j;
}

SceneReport scene_from_json(const ordered_json& j) {
    SceneReport s;
    s.scene = j.value("scene", -1);
    s.n_pairs = j.at("n_pairs").get<int>();
    s.ir = j.at("ir").get<double>();
    s.pir = j.at("pir").get<double>();
    s.fmr = j.at("fmr").get<double>();
    s.rr = j.at("rr").get<double>();
    s.rte = j.at("rte_m").get<double>();
    s.rre = j.at("rre_deg").get<double>();
    s.converged = j.at("converged").get<double>();
    return s;
}

}  // namespace

GeneratedData generate_pairs(const DataConfig& config) {
    config.validate();
    if (!config.ingestion_path.empty()) return ingest_pairs(config);
    CameraIntrinsics k;
    k.fx = k.fy = config.focal;
    k.cx = 0.5 * config.image_width;
    k.cy = 0.5 * config.image_height;
    k.width = config.image_width;
    k.height = config.image_height;
    GeneratedData out;
    for (int s = 0; s < config.n_scenes; ++s) {
        const std::uint64_t scene_seed = mix_seed(config.seed, static_cast<std::uint64_t>(s));
        SceneOptions options;
        options.enclosure = true;
        options.surfel_spacing = config.surfel_spacing;
        const SyntheticScene scene = generate_scene(scene_seed, config.objects_per_scene, config.extent, options);
        for (int p = 0; p < config.pairs_per_scene; ++p) {
            Rng rng(mix_seed(scene_seed, 1000 + static_cast<std::uint64_t>(p)));
            for (int attempt = 0; attempt < config.max_attempts_per_pair; ++attempt) {
                const RigidTransform a = sample_view(scene, config, rng);
                const RigidTransform b = perturb_view(a, config, rng);
                auto [ca, da] = render_view(scene, k, invert(a));
                auto [cb, db] = render_view(scene, k, invert(b));
                const RgbdView va = quantize_view({std::move(ca), std::move(da), a});
                const RgbdView vb = quantize_view({std::move(cb), std::move(db), b});
                PairBuildResult r = build_pair_from_views(va, vb, k, config.min_overlap);
                if (!r.accepted()) {
                    ++out.rejected;
                    continue;
                }
                r.pair->id = pair_id(s, p);
                r.pair->scene = s;
                out.pairs.push_back(std::move(*r.pair));
                ++out.accepted;
                break;
            }
        }
    }
    return out;
}

Manifest cmd_gen_data(const RunConfig& config, const std::string& out_dir) {
    config.validate();
    ensure_directory(out_dir);
    ensure_directory((fs::path(out_dir) / "pairs").string());
    const GeneratedData data = generate_pairs(config.data);
    Manifest m;
    m.accepted = data.accepted;
    m.rejected = data.rejected;
    m.min_overlap = config.data.min_overlap;
    ordered_json j;
    j["format"] = "chromareg-manifest";
    j["version"] = 1;
    j["min_overlap"] = m.min_overlap;
    j["accepted"] = m.accepted;
    j["rejected"] = m.rejected;
    j["pairs"] = ordered_json::array();
    for (const auto& pair : data.pairs) {
        ManifestEntry e{pair.id, pair.scene, pair.overlap, "pairs/" + pair.id + ".pair"};
        try {
            save_pair((fs::path(out_dir) / e.file).string(), pair);
        } catch (const IoError& err) {
            throw HarnessError(err.what());
        }
        j["pairs"].push_back({{"id", e.id}, {"scene", e.scene}, {"overlap", e.overlap}, {"file", e.file}});
        m.pairs.push_back(std::move(e));
    }
    j["config"] = ordered_json::parse(serialize_config(config));
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    if (!f) throw HarnessError("cannot write manifest in " + out_dir);
    f << j.dump(2) << "\n";
    if (!f) throw HarnessError("cannot write manifest in " + out_dir);
    return m;
}

Manifest read_manifest(const std::string& data_dir) {
    const fs::path path = fs::path(data_dir) / "manifest.json";
    std::ifstream f(path);
    if (!f) throw HarnessError("no manifest.json in " + data_dir);
    Manifest m;
    try {
        const ordered_json j = ordered_json::parse(f);
        m.accepted = j.at("accepted").get<int>();
        m.rejected = j.at("rejected").get<int>();
        m.min_overlap = j.at("min_overlap").get<double>();
        for (const auto& e : j.at("pairs"))
            m.pairs.push_back({e.at("id").get<std::string>(), e.at("scene").get<int>(), e.at("overlap").get<double>(),
                               e.at("file").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw HarnessError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

std::vector<std::shared_ptr<const RegistrationPair>> load_dataset(const std::string& data_dir) {
    const Manifest m = read_manifest(data_dir);
    std::vector<std::shared_ptr<const RegistrationPair>> out;
    for (const auto& e : m.pairs) {
        try {
            out.push_back(std::make_shared<const RegistrationPair>(load_pair((fs::path(data_dir) / e.file).string())));
        } catch (const IoError& err) {
            throw HarnessError(err.what());
        }
    }
    return out;
}

std::vector<PreparedPair> prepare_all(const std::vector<std::shared_ptr<const RegistrationPair>>& pairs,
                                      const RunConfig& config) {
    std::vector<PreparedPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(prepare_pair(p, config));
    return out;
}

TrainSummary cmd_train(const RunConfig& config, const TrainOptions& options) {
    config.validate();
    const auto start_time = std::chrono::steady_clock::now();
    const auto dataset = load_dataset(options.data_dir);
    if (dataset.empty()) throw HarnessError("no training pairs in " + options.data_dir);
    ensure_directory(options.out_dir);
    const std::vector<PreparedPair> pairs = prepare_all(dataset, config);

    RegistrationModel model(config.model);
    Trainer trainer(model, config.train);
    long long first = 0;
    if (!options.resume.empty()) {
        const Checkpoint c = load_checkpoint(options.resume);
        apply_checkpoint(c, model);
        trainer.optimizer().state() = c.optimizer;
        first = c.step;
    }

    const fs::path log_path = fs::path(options.out_dir) / "train_log.csv";
    const bool append = first > 0 && fs::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw HarnessError("cannot write " + log_path.string());
    if (!append) log << "step,color_loss,feature_loss,overall_loss,grad_norm\n";
    log << std::setprecision(17);

    TrainSummary summary;
    summary.initial_loss = trainer.evaluate_loss(pairs);
    auto checkpoint = [&](const fs::path& path, long long step) {
        save_checkpoint(path.string(), config, model, trainer.optimizer().state(), step);
    };
    for (long long s = first; s < config.train.steps; ++s) {
        TrainStepLog entry = trainer.step(pairs, s);
        log << entry.step << ',' << entry.color << ',' << entry.feature << ',' << entry.overall << ',' << entry.grad_norm
            << '\n';
        if (options.progress && (s % 50 == 0 || s + 1 == config.train.steps))
            *options.progress << "step " << s << " L_c " << entry.color << " L_f " << entry.feature << " L " << entry.overall
                              << std::endl;
        summary.log.push_back(std::move(entry));
        const long long done = s + 1;
        if (config.train.checkpoint_every > 0 && done % config.train.checkpoint_every == 0) {
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_%06lld.ckpt", done);
            checkpoint(fs::path(options.out_dir) / name, done);
        }
    }
    log.flush();
    if (!log) throw HarnessError("cannot write " + log_path.string());
    const long long last = std::max<long long>(first, config.train.steps);
    summary.checkpoint = (fs::path(options.out_dir) / "checkpoint.ckpt").string();
    checkpoint(summary.checkpoint, last);
    summary.final_loss = trainer.evaluate_loss(pairs);
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return summary;
}

MetricsReport evaluate_model(const RegistrationModel& model, const std::vector<PreparedPair>& pairs,
                             const RunConfig& config) {
    MetricsReport report;
    for (const auto& p : pairs) report.pairs.push_back(report_pair(p, register_pair(model, p, config.eval), config.eval));
    report.aggregate = aggregate(report.pairs, config.eval);
    report.config_json = serialize_config(config);
    return report;
}

MetricsReport cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_path,
                       const std::optional<RunConfig>& config) {
    const auto start_time = std::chrono::steady_clock::now();
    const Checkpoint c = load_checkpoint(checkpoint);
    const RunConfig run = config ? *config : c.config;
    run.validate();
    RegistrationModel model(run.model);
    apply_checkpoint(c, model);
    const std::vector<PreparedPair> pairs = prepare_all(load_dataset(data_dir), run);
    MetricsReport report = evaluate_model(model, pairs, run);
    report.timestamp = utc_timestamp();
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    if (!out_path.empty()) {
        const fs::path parent = fs::path(out_path).parent_path();
        if (!parent.empty()) ensure_directory(parent.string());
        std::ofstream f(out_path);
        if (!f) throw HarnessError("cannot write report " + out_path);
        f << report_to_json(report);
        if (!f) throw HarnessError("cannot write report " + out_path);
    }
    return report;
}

std::string report_to_json(const MetricsReport& report) {
    ordered_json j;
    j["format"] = "chromareg-metrics";
    j["version"] = 1;
    j["code_version"] = report.code_version;
    j["timestamp"] = report.timestamp;
    j["wall_clock_seconds"] = report.wall_clock_seconds;
    j["config"] = report.config_json.empty() ? ordered_json::object() : ordered_json::parse(report.config_json);
    j["pairs"] = ordered_json::array();
    for (const auto& p : report.pairs) {
        ordered_json r;
        r["id"] = p.id;
        r["scene"] = p.scene;
        r["ir"] = p.ir;
        r["pir"] = p.pir;
        r["registered"] = p.registered;
        r["converged"] = p.converged;
        r["rre_deg"] = p.rre;
        r["rte_m"] = p.rte;
        r["rmse_m"] = std::isfinite(p.rmse) ? ordered_json(p.rmse) : ordered_json(nullptr);
        r["n_coarse"] = p.n_coarse;
        r["n_correspondences"] = p.n_correspondences;
        r["n_ransac_inliers"] = p.n_ransac_inliers;
        j["pairs"].push_back(std::move(r));
    }
    j["scenes"] = ordered_json::array();
    for (const auto& s : report.aggregate.scenes) j["scenes"].push_back(scene_to_json(s));
    j["overall"] = scene_to_json(report.aggregate.overall);
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    MetricsReport report;
    try {
        const ordered_json j = ordered_json::parse(text);
        report.code_version = j.at("code_version").get<std::string>();
        report.timestamp = j.at("timestamp").get<std::string>();
        report.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        report.config_json = j.at("config").dump();
        for (const auto& r : j.at("pairs")) {
            PairReport p;
            p.id = r.at("id").get<std::string>();
            p.scene = r.at("scene").get<int>();
            p.ir = r.at("ir").get<double>();
            p.pir = r.at("pir").get<double>();
            p.registered = r.at("registered").get<bool>();
            p.converged = r.at("converged").get<bool>();
            p.rre = r.at("rre_deg").get<double>();
            p.rte = r.at("rte_m").get<double>();
            p.rmse = r.at("rmse_m").is_null() ? std::numeric_limits<double>::infinity() : r.at("rmse_m").get<double>();
            p.n_coarse = r.at("n_coarse").get<int>();
            p.n_correspondences = r.at("n_correspondences").get<int>();
            p.n_ransac_inliers = r.at("n_ransac_inliers").get<int>();
            report.pairs.push_back(std::move(p));
        }
        for (const auto& s : j.at("scenes")) report.aggregate.scenes.push_back(scene_from_json(s));
        report.aggregate.overall = scene_from_json(j.at("overall"));
    } catch (const nlohmann::json::exception& e) {
        throw HarnessError(std::string("malformed metrics report: ") + e.what());
    }
    return report;
}

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const Glyph* glyph(char c) {
    static const Glyph digits[10] = {
        {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
        {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
        {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
        {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
        {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
    static const std::pair<char, Glyph> letters[] = {
        {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}}, {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},
        {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}}, {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}}, {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11}}, {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}}, {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'s', {0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E}}, {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}};
    if (c >= '0' && c <= '9') return &digits[c - '0'];
    for (const auto& [ch, g] : letters)
        if (ch == c) return &g;
    return nullptr;
}

void draw_text(ColorImage& img, int x0, int y0, const std::string& text, int px, const Eigen::Vector3d& color) {
    int x = x0;
    for (char ch : text) {
        if (const Glyph* g = glyph(ch)) {
            for (int r = 0; r < 7; ++r)
                for (int c = 0; c < 5; ++c)
                    if ((*g)[r] & (0x10 >> c))
                        for (int dy = 0; dy < px; ++dy)
                            for (int dx = 0; dx < px; ++dx) {
                                const int yy = y0 + r * px + dy;
                                const int xx = x + c * px + dx;
                                if (yy >= 0 && yy < img.height && xx >= 0 && xx < img.width) img.at(yy, xx) = color;
                            }
        }
        x += 6 * px;
    }
}

void draw_line(ColorImage& img, Eigen::Vector2d a, Eigen::Vector2d b, const Eigen::Vector3d& color) {
    int x0 = static_cast<int>(std::floor(a.x())), y0 = static_cast<int>(std::floor(a.y()));
    const int x1 = static_cast<int>(std::floor(b.x())), y1 = static_cast<int>(std::floor(b.y()));
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height) img.at(y0, x0) = color;
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

VizResult render_matches(const RegistrationPair& pair, const FineMatchSet& matches, double inlier_threshold, int scale) {
    if (scale < 1) throw std::invalid_argument("render_matches: scale must be >= 1");
    const int w = pair.image.width, h = pair.image.height;
    const int footer = 10 * 2 + 4;
    VizResult out;
    out.image = ColorImage(2 * w * scale, h * scale + footer, Eigen::Vector3d::Constant(0.08));

    ColorImage rendered(w, h, Eigen::Vector3d::Constant(0.2));
    std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < pair.cloud.size(); ++i) {
        const Eigen::Vector3d q = pair.gt.apply(pair.cloud.positions[i]);
        const auto uv = project(pair.k, RigidTransform::identity(), q);
        if (!uv) continue;
        const int c = std::clamp(static_cast<int>(uv->x()), 0, w - 1);
        const int r = std::clamp(static_cast<int>(uv->y()), 0, h - 1);
        const std::size_t idx = rendered.index(r, c);
        if (q.z() < zbuf[idx]) {
            zbuf[idx] = q.z();
            rendered.pixels[idx] = pair.cloud.colors[i];
        }
    }
    for (int r = 0; r < h * scale; ++r)
        for (int c = 0; c < w * scale; ++c) {
            out.image.at(r, c) = pair.image.at(r / scale, c / scale);
            out.image.at(r, c + w * scale) = rendered.at(r / scale, c / scale);
        }

    out.inlier = inlier_mask(matches, pair.cloud, pair.gt, pair.depth, pair.k, inlier_threshold);
    const Eigen::Vector3d green(0.0, 1.0, 0.0), red(1.0, 0.0, 0.0);
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const Eigen::Vector2d from = pixel_center({matches[i].pixel / w, matches[i].pixel % w}) * scale;
        const auto uv = project_unbounded(pair.k, pair.gt.apply(pair.cloud.positions[matches[i].point]));
        Eigen::Vector2d to = uv ? *uv : Eigen::Vector2d(0.5 * w, 0.5 * h);
        to = to.cwiseMax(Eigen::Vector2d::Zero()).cwiseMin(Eigen::Vector2d(w - 1e-6, h - 1e-6)) * scale;
        to.x() += w * scale;
        draw_line(out.image, from, to, out.inlier[i] ? green : red);
    }
    const auto inliers = std::count(out.inlier.begin(), out.inlier.end(), true);
    out.footer = std::to_string(matches.size()) + " matches";
    if (!matches.empty()) out.footer += ", " + std::to_string(inliers) + " inliers";
    draw_text(out.image, 4, h * scale + 3, out.footer, 2, Eigen::Vector3d::Constant(0.95));
    return out;
}

VizResult cmd_viz(const std::string& checkpoint, const std::string& data_dir, const std::string& pair_id,
                  const std::string& out_png) {
    const Checkpoint c = load_checkpoint(checkpoint);
    const Manifest m = read_manifest(data_dir);
    const auto it = std::find_if(m.pairs.begin(), m.pairs.end(), [&](const ManifestEntry& e) { return e.id == pair_id; });
    if (it == m.pairs.end()) throw HarnessError("unknown pair id '" + pair_id + "' in " + data_dir);
    auto pair = std::make_shared<const RegistrationPair>(load_pair((fs::path(data_dir) / it->file).string()));
    RegistrationModel model(c.config.model);
    apply_checkpoint(c, model);
    const PreparedPair prepared = prepare_pair(pair, c.config);
    const Registration reg = register_pair(model, prepared, c.config.eval);
    VizResult out = render_matches(*pair, reg.fine, c.config.eval.ir_threshold);
    try {
        write_png(out_png, out.image);
    } catch (const IoError& e) {
        throw HarnessError(e.what());
    }
    return out;
}

}  // namespace chromareg
