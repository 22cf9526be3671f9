// Command-line front end. Everything goes through the C API of the shared
// library; no core headers are included here.
//
// Exit codes: 0 success, 2 usage or bad argument values, 3 I/O or malformed
// or incompatible data, 4 numerical failure (divergence or non-finite
// activations), 1 other failures.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "meseg/meseg.h"

namespace {

int status_to_exit(int st) {
  switch (st) {
    case MESEG_OK:
      return 0;
    case MESEG_ERR_INVALID_ARGUMENT:
      return 2;
    case MESEG_ERR_IO:
    case MESEG_ERR_FORMAT:
    case MESEG_ERR_DIM_MISMATCH:
      return 3;
    case MESEG_ERR_DIVERGED:
    case MESEG_ERR_NUMERIC:
      return 4;
    default:
      return 1;
  }
}

int fail(int st, const char* where) {
  std::fprintf(stderr, "meseg %s: %s\n", where, meseg_last_error());
  return status_to_exit(st);
}

using ConfigPtr = std::unique_ptr<meseg_config, decltype(&meseg_config_free)>;

// Loads the config and applies the --seed override; on failure returns a
// null handle and stores the exit code.
ConfigPtr load_config(const std::string& path, bool seed_given,
                      std::uint64_t seed, int& exit_code) {
  meseg_config* raw = nullptr;
  int st = meseg_config_load(path.c_str(), &raw);
  if (st != MESEG_OK) {
    exit_code = fail(st, "config");
    return ConfigPtr(nullptr, &meseg_config_free);
  }
  if (seed_given) meseg_config_set_seed(raw, seed);
  exit_code = 0;
  return ConfigPtr(raw, &meseg_config_free);
}

std::string config_dir(const meseg_config* cfg, const char* which) {
  char buf[4096];
  if (meseg_config_dir(cfg, which, buf, sizeof(buf)) != MESEG_OK) return {};
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-regularized lesion segmentation: synthetic data, "
               "training, calibration and uncertainty reports"};
  app.require_subcommand(1);
  app.set_version_flag("--version", meseg_version());

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Experiment config JSON")
        ->required();
    cmd->add_option("--seed", seed, "Root seed override (replaces the config's seed)")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--out", out_dir, "Output directory (overrides the config's default)");
  };

  CLI::App* synth = app.add_subcommand(
      "synth", "Generate the ID/OOD dataset splits and manifest");
  add_common(synth);

  CLI::App* train = app.add_subcommand(
      "train", "Train one strategy (grid-searching lambda unless fixed)");
  add_common(train);
  std::string strategy;
  double lambda = 0.0;
  bool lambda_given = false;
  train->add_option("--strategy", strategy,
                    "One of: ce, ce+meall, ce+meep, ce+kl")
      ->required();
  train->add_option("--lambda", lambda,
                    "Fixed regularizer weight (skips the grid search; ignored for ce)")
      ->each([&](const std::string&) { lambda_given = true; });

  CLI::App* predict = app.add_subcommand(
      "predict", "Write probability maps for every test scan");
  add_common(predict);
  std::string checkpoint;
  predict->add_option("--checkpoint", checkpoint, "Checkpoint file")
      ->required();

  CLI::App* eval = app.add_subcommand(
      "eval", "Per-scan and aggregate calibration/uncertainty reports");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  CLI::App* report = app.add_subcommand(
      "report", "Cross-strategy comparison tables from eval aggregates");
  add_common(report);
  std::vector<std::string> aggregates;
  report->add_option("aggregates", aggregates,
                     "Aggregate JSON files from eval runs")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  int code = 0;
  ConfigPtr cfg = load_config(config_path, seed_given, seed, code);
  if (!cfg) return code;

  if (*synth) {
    const std::string out = out_dir.empty() ? config_dir(cfg.get(), "data")
                                            : out_dir;
    int st = meseg_cmd_synth(cfg.get(), out.c_str());
    if (st != MESEG_OK) return fail(st, "synth");
    std::printf("dataset written to %s (manifest.json inside)\n", out.c_str());
    return 0;
  }

  if (*train) {
    const std::string data = config_dir(cfg.get(), "data");
    const std::string out = out_dir.empty() ? config_dir(cfg.get(), "model")
                                            : out_dir;
    const double* lam = lambda_given ? &lambda : nullptr;
    double selected = 0.0;
    int st = meseg_cmd_train(cfg.get(), data.c_str(), strategy.c_str(), lam,
                             out.c_str(), &selected);
    if (st != MESEG_OK) return fail(st, "train");
    std::printf("checkpoint %s/%s.ckpt (lambda %g)\n", out.c_str(),
                strategy.c_str(), selected);
    return 0;
  }

  if (*predict) {
    const std::string data = config_dir(cfg.get(), "data");
    const std::string out = out_dir.empty() ? config_dir(cfg.get(), "report")
                                            : out_dir;
    int st = meseg_cmd_predict(checkpoint.c_str(), data.c_str(), out.c_str());
    if (st != MESEG_OK) return fail(st, "predict");
    std::printf("probability maps written to %s\n", out.c_str());
    return 0;
  }

  if (*eval) {
    const std::string data = config_dir(cfg.get(), "data");
    const std::string out = out_dir.empty() ? config_dir(cfg.get(), "report")
                                            : out_dir;
    int st = meseg_cmd_eval(checkpoint.c_str(), data.c_str(), out.c_str());
    if (st != MESEG_OK) return fail(st, "eval");
    std::printf("evaluation reports written to %s\n", out.c_str());
    return 0;
  }

  if (*report) {
    const std::string out = out_dir.empty() ? config_dir(cfg.get(), "report")
                                            : out_dir;
    std::vector<const char*> paths;
    paths.reserve(aggregates.size());
    for (const auto& a : aggregates) paths.push_back(a.c_str());
    int st = meseg_cmd_report(paths.data(), paths.size(), out.c_str());
    if (st != MESEG_OK) return fail(st, "report");
    std::printf("comparison tables written to %s\n", out.c_str());
    return 0;
  }

  return 2;  // unreachable: require_subcommand(1)
}
