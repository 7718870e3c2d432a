#pragma once

#include "chromareg/checkpoint.hpp"
#include "chromareg/config.hpp"
#include "chromareg/data.hpp"
#include "chromareg/evaluation.hpp"
#include "chromareg/model.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace chromareg {

inline constexpr char kCodeVersion[] = "chromareg 0.3.0";

struct HarnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GeneratedData {
    std::vector<RegistrationPair> pairs;
    int accepted = 0;
    int rejected = 0;
};

/// Synthetic scenes (or the ingestion directory when data.ingestion_path is set), filtered by min_overlap.
/// Pair ids are "sSSS_pPPP". Deterministic in the config.
GeneratedData generate_pairs(const DataConfig& config);

struct ManifestEntry {
    std::string id;
    int scene = 0;
    double overlap = 0.0;
    std::string file;  ///< relative to the data directory
};

struct Manifest {
    std::vector<ManifestEntry> pairs;
    int accepted = 0;
    int rejected = 0;
    double min_overlap = 0.0;
};

/// Writes pairs/<id>.pair and manifest.json under out_dir. Throws HarnessError when out_dir is not writable.
Manifest cmd_gen_data(const RunConfig& config, const std::string& out_dir);
Manifest read_manifest(const std::string& data_dir);
std::vector<std::shared_ptr<const RegistrationPair>> load_dataset(const std::string& data_dir);
std::vector<PreparedPair> prepare_all(const std::vector<std::shared_ptr<const RegistrationPair>>& pairs,
                                      const RunConfig& config);

struct TrainOptions {
    std::string data_dir;
    std::string out_dir;
    std::string resume;        ///< checkpoint to continue from; empty starts fresh
    std::ostream* progress = nullptr;
};

struct TrainSummary {
    std::vector<TrainStepLog> log;
    double initial_loss = 0.0;  ///< evaluate_loss over the training pairs before the first step
    double final_loss = 0.0;    ///< after the last step
    std::string checkpoint;     ///< path of the final checkpoint
    double seconds = 0.0;
};

/// Writes checkpoint.ckpt (final), checkpoint_SSSSSS.ckpt every train.checkpoint_every steps and train_log.csv.
/// With 0 steps only the initial checkpoint is written.
TrainSummary cmd_train(const RunConfig& config, const TrainOptions& options);

struct MetricsReport {
    std::vector<PairReport> pairs;
    AggregateReport aggregate;
    std::string config_json;
    std::string code_version = kCodeVersion;
    std::string timestamp;
    double wall_clock_seconds = 0.0;
};

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

/// Loads the checkpoint, builds the model from `config` (the checkpoint's own config when empty) and
/// evaluates every pair in data_dir. Writes the report to out_path when non-empty.
MetricsReport cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_path,
                       const std::optional<RunConfig>& config = std::nullopt);
MetricsReport evaluate_model(const RegistrationModel& model, const std::vector<PreparedPair>& pairs,
                             const RunConfig& config);

struct VizResult {
    ColorImage image;
    std::vector<bool> inlier;  ///< per drawn match, the color of its line (true = green)
    std::string footer;
};

/// Side-by-side image / gt-projected cloud rendering with match lines, upscaled by `scale`.
VizResult render_matches(const RegistrationPair& pair, const FineMatchSet& matches, double inlier_threshold,
                         int scale = 4);
/// Throws HarnessError for an unknown pair id.
VizResult cmd_viz(const std::string& checkpoint, const std::string& data_dir, const std::string& pair_id,
                  const std::string& out_png);

}  // namespace chromareg
