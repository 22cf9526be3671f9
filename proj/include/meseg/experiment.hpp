#ifndef MESEG_EXPERIMENT_HPP
#define MESEG_EXPERIMENT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meseg/metrics.hpp"
#include "meseg/model.hpp"
#include "meseg/synth.hpp"

namespace meseg {

// Split sizes of the generated dataset. The OOD test split holds the shifted
// twin of every ID test scan, so it also has n_test entries.
struct SplitSpec {
  int n_train = 12;
  int n_val = 6;
  int n_test = 16;

  void validate() const;
};

// Directories the commands read and write. Relative paths resolve against
// the working directory; --out on the CLI overrides the written one.
struct ExperimentPaths {
  std::string data_dir = "data";
  std::string model_dir = "models";
  std::string report_dir = "reports";
};

// One JSON document driving the whole pipeline. Every random stream (sample
// synthesis, shift noise, weight init, shuffling) derives from `seed`, so a
// config plus its seed pins every artifact byte.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ExperimentPaths paths;
  SynthConfig synth;  // synth.seed is ignored; the root seed is used instead
  ShiftParams shift = ShiftParams::ood_preset();
  SplitSpec splits;
  TrainConfig train;  // template; loss and seed are filled per strategy
  std::vector<std::string> strategies{"ce", "ce+meall", "ce+meep", "ce+kl"};
  std::vector<double> lambda_grid{0.1, 0.3, 1.0};

  void validate() const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load_file(const std::string& path);

  // Canonical serialized form (sorted keys, no whitespace); the config hash
  // is FNV-1a 64 over it, so semantically equal configs hash equally.
  std::string to_json_text(bool pretty = false) const;
  std::uint64_t config_hash() const;
  std::string config_hash_hex() const;
};

// Strategy names are the reg kinds the experiments compare. lambda is
// ignored for plain "ce". Unknown names throw Errc::invalid_argument.
LossSpec strategy_loss(const std::string& name, double lambda);
std::string strategy_name(const LossSpec& spec);

// Substream layout under the root seed. Synthetic sample i consumes
// substream i, so the other consumers live in disjoint high blocks.
std::uint64_t shift_stream_index(std::uint64_t sample_index);
std::uint64_t train_stream_index(const std::string& strategy);

struct ManifestEntry {
  std::string id;
  std::string image;  // path relative to the manifest's directory
  std::string mask;
  std::string domain;  // "id" or "ood"
  std::uint64_t substream = 0;  // synth substream of the underlying sample
  std::optional<std::uint64_t> shift_substream;  // ood only
  std::optional<std::string> twin;  // ood only: id of the unshifted twin
};

struct Manifest {
  std::uint64_t seed = 0;
  std::string config_hash;  // hex of ExperimentConfig::config_hash
  ExperimentConfig config;
  std::string dir;  // directory the manifest was loaded from / written to
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  std::vector<ManifestEntry> test_id;
  std::vector<ManifestEntry> test_ood;

  std::string resolve(const std::string& rel_path) const;
  static Manifest load_file(const std::string& path);
};

// Generates train/, val/, test_id/ and test_ood/ under out_dir, images as
// float64 NIfTI (lossless, so the OOD twin relation is bit-exact), masks as
// uint8, plus manifest.json. Returns the manifest.
Manifest cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainOutput {
  std::string checkpoint_path;
  std::string history_path;
  std::string summary_path;
  double lambda = 0.0;  // as trained; 0 for plain ce
  bool grid_searched = false;
  TrainHistory history;
  std::vector<LambdaReport> grid;  // empty when not searched
};

// Trains `strategy` on the dataset under data_dir. A fixed lambda (or plain
// "ce") trains one model; otherwise the config's lambda grid is searched on
// validation Dice. Writes <strategy>.ckpt, <strategy>_history.csv and
// <strategy>_train.json under out_dir. Divergence throws Errc::diverged.
TrainOutput cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
                      const std::string& strategy, std::optional<double> lambda,
                      const std::string& out_dir);

// Probability maps for every test scan (ID then OOD) as <id>_prob.nii.gz.
std::vector<std::string> cmd_predict(const std::string& checkpoint_path,
                                     const std::string& data_dir,
                                     const std::string& out_dir);

struct EvalOutput {
  std::string per_scan_csv;
  std::string aggregate_json;
  std::string reliability_csv;
  std::string reliability_svg;
  std::vector<ScanReport> reports;
  std::string aggregate_text;  // the aggregate document as written
};

// Evaluates a checkpoint on the test splits under data_dir: per-scan CSV,
// aggregate JSON (Dice/Hausdorff/entropy summaries, ECE under both
// conventions, calibration tables, outcome breakdowns, entropy-Dice
// Pearson, ID-vs-OOD Mann-Whitney, lesion-load strata), reliability CSV
// and a reliability-diagram SVG. Scans whose grids mismatch the model are
// skipped with a warning on stderr.
EvalOutput cmd_eval(const std::string& checkpoint_path,
                    const std::string& data_dir, const std::string& out_dir);

struct ReportOutput {
  std::string summary_csv;
  std::string outcome_csv;
  std::string strata_csv;
  std::string markdown;
};

// Cross-strategy comparison tables from one or more aggregate JSON files.
// Inputs with differing schema_version are rejected (Errc::format).
ReportOutput cmd_report(const std::vector<std::string>& aggregate_paths,
                        const std::string& out_dir);

// Report/aggregate schema version stamped into every JSON artifact.
inline constexpr int kReportSchemaVersion = 1;

// FNV-1a 64-bit hash, the project's content hash for configs.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace meseg

#endif
