#include "chromareg/harness.hpp"
#include "chromareg/io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace chromareg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("chromareg_harness_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig small_config() {
    RunConfig c;
    c.data.n_scenes = 2;
    c.data.pairs_per_scene = 1;
    c.model.network.toy = true;
    c.model.transformer.blocks = 1;
    c.train.steps = 4;
    c.train.checkpoint_every = 2;
    return c;
}

const fs::path& shared_data() {
    static const fs::path dir = [] {
        const fs::path d = scratch("data");
        cmd_gen_data(small_config(), d.string());
        return d;
    }();
    return dir;
}

std::vector<std::string> checkpoints_in(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".ckpt") out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST(GenData, DeterministicAndConsistentWithManifest) {
    const fs::path other = scratch("data2");
    const Manifest m = cmd_gen_data(small_config(), other.string());
    const Manifest first = read_manifest(shared_data().string());
    ASSERT_EQ(m.pairs.size(), first.pairs.size());
    EXPECT_EQ(m.accepted, static_cast<int>(m.pairs.size()));
    EXPECT_EQ(m.accepted, 2);
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
        EXPECT_EQ(m.pairs[i].id, first.pairs[i].id);
        EXPECT_EQ(slurp(other / m.pairs[i].file), slurp(shared_data() / first.pairs[i].file));
    }
    EXPECT_EQ(slurp(other / "manifest.json"), slurp(shared_data() / "manifest.json"));
}

TEST(GenData, ArchivedOverlapRecomputesAboveThreshold) {
    const RunConfig c = small_config();
    for (const auto& p : load_dataset(shared_data().string())) {
        const double o = compute_overlap(p->cloud, p->gt, p->k, p->depth);
        EXPECT_DOUBLE_EQ(o, p->overlap);
        EXPECT_GE(o, c.data.min_overlap);
    }
}

TEST(GenData, ImpossibleOverlapRejectsEverything) {
    RunConfig c = small_config();
    c.data.min_overlap = 1.01;
    c.data.max_attempts_per_pair = 2;
    const fs::path dir = scratch("none");
    const Manifest m = cmd_gen_data(c, dir.string());
    EXPECT_EQ(m.accepted, 0);
    EXPECT_GT(m.rejected, 0);
    EXPECT_TRUE(m.pairs.empty());
    EXPECT_EQ(read_manifest(dir.string()).rejected, m.rejected);
}

TEST(GenData, UnwritableOutputThrows) {
    const fs::path dir = scratch("blocked");
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(cmd_gen_data(small_config(), (dir / "file" / "sub").string()), HarnessError);
}

TEST(Train, ZeroStepsWritesOnlyTheFinalCheckpoint) {
    RunConfig c = small_config();
    c.train.steps = 0;
    const fs::path out = scratch("zero");
    const TrainSummary s = cmd_train(c, {shared_data().string(), out.string(), "", nullptr});
    EXPECT_TRUE(s.log.empty());
    EXPECT_EQ(checkpoints_in(out), std::vector<std::string>{"checkpoint.ckpt"});
    EXPECT_EQ(load_checkpoint(s.checkpoint).step, 0);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
    const RunConfig c = small_config();
    const fs::path full = scratch("full");
    const TrainSummary a = cmd_train(c, {shared_data().string(), full.string(), "", nullptr});
    EXPECT_EQ(checkpoints_in(full),
              (std::vector<std::string>{"checkpoint.ckpt", "checkpoint_000002.ckpt", "checkpoint_000004.ckpt"}));
    ASSERT_EQ(a.log.size(), 4u);

    RunConfig half = c;
    half.train.steps = 2;
    const fs::path part = scratch("part");
    cmd_train(half, {shared_data().string(), part.string(), "", nullptr});
    const TrainSummary b =
        cmd_train(c, {shared_data().string(), part.string(), (part / "checkpoint.ckpt").string(), nullptr});
    ASSERT_EQ(b.log.size(), 2u);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(b.log[i].step, a.log[i + 2].step);
        EXPECT_EQ(b.log[i].overall, a.log[i + 2].overall);
    }
    const Checkpoint x = load_checkpoint(a.checkpoint), y = load_checkpoint(b.checkpoint);
    EXPECT_EQ(x.step, 4);
    EXPECT_EQ(y.step, 4);
    EXPECT_EQ(x.parameters, y.parameters);
    EXPECT_EQ(x.optimizer.m, y.optimizer.m);
    EXPECT_EQ(slurp(full / "train_log.csv"), slurp(part / "train_log.csv"));
}

TEST(Eval, ReportIsReproducibleAndSelfConsistent) {
    RunConfig c = small_config();
    c.train.steps = 0;
    const fs::path out = scratch("eval");
    const TrainSummary s = cmd_train(c, {shared_data().string(), out.string(), "", nullptr});
    const MetricsReport a = cmd_eval(s.checkpoint, shared_data().string(), (out / "a.json").string());
    const MetricsReport b = cmd_eval(s.checkpoint, shared_data().string(), (out / "b.json").string());
    auto ja = nlohmann::json::parse(slurp(out / "a.json"));
    auto jb = nlohmann::json::parse(slurp(out / "b.json"));
    for (auto* j : {&ja, &jb}) {
        ASSERT_TRUE(j->contains("timestamp"));
        ASSERT_TRUE(j->contains("wall_clock_seconds"));
        EXPECT_EQ((*j)["code_version"], kCodeVersion);
        j->erase("timestamp");
        j->erase("wall_clock_seconds");
    }
    EXPECT_EQ(ja, jb);
    ASSERT_EQ(a.pairs.size(), 2u);
    EXPECT_EQ(nlohmann::json::parse(a.config_json), nlohmann::json::parse(serialize_config(load_checkpoint(s.checkpoint).config)));

    const MetricsReport back = report_from_json(slurp(out / "a.json"));
    ASSERT_EQ(back.pairs.size(), a.pairs.size());
    const AggregateReport again = aggregate(back.pairs, c.eval);
    ASSERT_EQ(again.scenes.size(), back.aggregate.scenes.size());
    for (std::size_t i = 0; i < again.scenes.size(); ++i) {
        EXPECT_NEAR(again.scenes[i].ir, back.aggregate.scenes[i].ir, 1e-12);
        EXPECT_NEAR(again.scenes[i].rr, back.aggregate.scenes[i].rr, 1e-12);
        EXPECT_NEAR(again.scenes[i].fmr, back.aggregate.scenes[i].fmr, 1e-12);
    }
    EXPECT_NEAR(again.overall.ir, back.aggregate.overall.ir, 1e-12);
    EXPECT_NEAR(again.overall.rr, back.aggregate.overall.rr, 1e-12);
}

TEST(Viz, ZeroMatchesDrawsNoLines) {
    const auto pairs = load_dataset(shared_data().string());
    const RegistrationPair& p = *pairs.front();
    const VizResult empty = render_matches(p, {}, 0.05, 2);
    EXPECT_EQ(empty.footer, "0 matches");
    EXPECT_TRUE(empty.inlier.empty());
    EXPECT_EQ(empty.image.width, 2 * p.image.width * 2);
    EXPECT_GT(empty.image.height, p.image.height * 2);
}

TEST(Viz, LineColorsFollowTheInlierOracle) {
    const auto pairs = load_dataset(shared_data().string());
    const RunConfig c = small_config();
    const PreparedPair prep = prepare_pair(pairs.front(), c);
    const RegistrationPair& p = *prep.pair;
    FineMatchSet matches;
    for (std::size_t i = 0; i < prep.gt_token_pairs.size(); i += 40)
        matches.push_back({prep.token_pixel[prep.gt_token_pairs[i].first], prep.gt_token_pairs[i].second,
                           prep.gt_token_pairs[i].first, 0, 1.0});
    const int n_good = static_cast<int>(matches.size());
    for (int i = 0; i < 5; ++i) matches.push_back({i * 37 % (p.k.width * p.k.height), i * 401 % static_cast<int>(p.cloud.size()), 0, 0, 1.0});

    const VizResult v = render_matches(p, matches, c.eval.ir_threshold, 2);
    const VizResult base = render_matches(p, {}, c.eval.ir_threshold, 2);
    ASSERT_EQ(v.inlier.size(), matches.size());
    int inliers = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const auto x = lift(p.k, p.depth, {matches[i].pixel / p.k.width, matches[i].pixel % p.k.width});
        const bool expected = x && (*x - p.gt.apply(p.cloud.positions[matches[i].point])).norm() <= c.eval.ir_threshold;
        EXPECT_EQ(v.inlier[i], expected) << i;
        inliers += expected;
    }
    EXPECT_GT(inliers, n_good / 2);
    EXPECT_EQ(v.footer, std::to_string(matches.size()) + " matches, " + std::to_string(inliers) + " inliers");

    int green = 0, red = 0;
    const int panel_height = p.image.height * 2;
    for (int r = 0; r < panel_height; ++r)
        for (int col = 0; col < v.image.width; ++col) {
            if (v.image.at(r, col) == base.image.at(r, col)) continue;
            const Eigen::Vector3d px = v.image.at(r, col);
            if (px == Eigen::Vector3d(0, 1, 0)) ++green;
            else if (px == Eigen::Vector3d(1, 0, 0)) ++red;
            else ADD_FAILURE() << "unexpected line color at " << r << "," << col;
        }
    EXPECT_GT(green, 0);
    EXPECT_EQ(red > 0, inliers < static_cast<int>(matches.size()));
}

TEST(Viz, UnknownPairThrows) {
    RunConfig c = small_config();
    c.train.steps = 0;
    const fs::path out = scratch("viz");
    const TrainSummary s = cmd_train(c, {shared_data().string(), out.string(), "", nullptr});
    EXPECT_THROW(cmd_viz(s.checkpoint, shared_data().string(), "no_such_pair", (out / "x.png").string()), HarnessError);
    const std::string id = read_manifest(shared_data().string()).pairs.front().id;
    const VizResult v = cmd_viz(s.checkpoint, shared_data().string(), id, (out / "v.png").string());
    const ColorImage back = read_png_color((out / "v.png").string());
    EXPECT_EQ(back.width, v.image.width);
    EXPECT_EQ(back.height, v.image.height);
}
