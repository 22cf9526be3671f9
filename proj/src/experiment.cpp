#include "meseg/experiment.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "meseg/error.hpp"
#include "meseg/losses.hpp"
#include "meseg/nifti.hpp"
#include "meseg/rng.hpp"

namespace meseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shortest round-trip decimal form; used for every double in CSV output so
// reruns are byte-identical and values reload exactly.
std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out.good()) throw Error(Errc::io, "cannot write " + path);
}

void make_dirs(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec)
    throw Error(Errc::io,
                "cannot create directory " + path + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& rel) {
  if (dir.empty()) return rel;
  return (fs::path(dir) / rel).string();
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw Error(Errc::format, what + ": malformed JSON");
  return j;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::format,
                std::string("config field '") + key + "': " + e.what());
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// {"mean","median","n"} over per-scan values; null when there are none.
json stats_block(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  return json{{"mean", mean_of(v)},
              {"median", quantile(v, 0.5)},
              {"n", v.size()}};
}

json table_json(const CalibrationTable& t) {
  json bins = json::array();
  for (const auto& b : t.bins)
    bins.push_back(json{{"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"fraction_positive", b.fraction_positive}});
  return bins;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Config ----------------------------------------------------------------------

void SplitSpec::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw Error(Errc::invalid_argument, "SplitSpec: split sizes must be >= 1");
}

LossSpec strategy_loss(const std::string& name, double lambda) {
  LossSpec s;
  s.seg_kind = SegKind::cross_entropy;
  if (name == "ce") {
    s.reg_kind = RegKind::none;
    s.lambda = 0.0;
    return s;
  }
  if (name == "ce+meall")
    s.reg_kind = RegKind::meall;
  else if (name == "ce+meep")
    s.reg_kind = RegKind::meep;
  else if (name == "ce+kl")
    s.reg_kind = RegKind::kl;
  else
    throw Error(Errc::invalid_argument,
                "unknown strategy '" + name +
                    "' (expected ce, ce+meall, ce+meep or ce+kl)");
  s.lambda = lambda;
  return s;
}

std::string strategy_name(const LossSpec& spec) {
  if (spec.reg_kind == RegKind::none) return "ce";
  return std::string("ce+") + to_string(spec.reg_kind);
}

std::uint64_t shift_stream_index(std::uint64_t sample_index) {
  return (1ULL << 32) + sample_index;
}

std::uint64_t train_stream_index(const std::string& strategy) {
  return (2ULL << 32) + (fnv1a64(strategy) & 0xffffffffULL);
}

void ExperimentConfig::validate() const {
  splits.validate();
  synth.validate();
  shift.validate();
  if (strategies.empty())
    throw Error(Errc::invalid_argument, "config: strategies must be nonempty");
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    strategy_loss(strategies[i], 0.0);  // throws on unknown names
    for (std::size_t k = i + 1; k < strategies.size(); ++k)
      if (strategies[i] == strategies[k])
        throw Error(Errc::invalid_argument,
                    "config: duplicate strategy '" + strategies[i] + "'");
  }
  if (lambda_grid.empty())
    throw Error(Errc::invalid_argument, "config: lambda_grid must be nonempty");
  for (double l : lambda_grid)
    if (!std::isfinite(l) || l < 0.0)
      throw Error(Errc::invalid_argument,
                  "config: lambda_grid values must be finite and >= 0");
  TrainConfig probe = train;
  probe.loss = strategy_loss("ce", 0.0);
  probe.validate();
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j = parse_json(text, "experiment config");
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    c.paths.data_dir = get_or<std::string>(p, "data_dir", c.paths.data_dir);
    c.paths.model_dir = get_or<std::string>(p, "model_dir", c.paths.model_dir);
    c.paths.report_dir =
        get_or<std::string>(p, "report_dir", c.paths.report_dir);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    if (s.contains("dim")) {
      auto d = s.at("dim").get<std::vector<int>>();
      if (d.size() != 3)
        throw Error(Errc::format, "config synth.dim: expected 3 entries");
      c.synth.dim = {d[0], d[1], d[2]};
    }
    if (s.contains("spacing")) {
      auto sp = s.at("spacing").get<std::vector<double>>();
      if (sp.size() != 3)
        throw Error(Errc::format, "config synth.spacing: expected 3 entries");
      c.synth.spacing = {sp[0], sp[1], sp[2]};
    }
    if (s.contains("lesions")) {
      auto l = s.at("lesions").get<std::vector<int>>();
      if (l.size() != 2)
        throw Error(Errc::format, "config synth.lesions: expected 2 entries");
      c.synth.min_lesions = l[0];
      c.synth.max_lesions = l[1];
    }
    if (s.contains("radius_voxels")) {
      auto r = s.at("radius_voxels").get<std::vector<double>>();
      if (r.size() != 2)
        throw Error(Errc::format,
                    "config synth.radius_voxels: expected 2 entries");
      c.synth.min_radius = r[0];
      c.synth.max_radius = r[1];
    }
    c.synth.fg_mean = get_or<double>(s, "fg_mean", c.synth.fg_mean);
    c.synth.bg_mean = get_or<double>(s, "bg_mean", c.synth.bg_mean);
    c.synth.noise_sigma = get_or<double>(s, "noise_sigma", c.synth.noise_sigma);
    c.synth.blur_sigma = get_or<double>(s, "blur_sigma", c.synth.blur_sigma);
  }
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    c.shift.gain = get_or<double>(s, "gain", c.shift.gain);
    c.shift.offset = get_or<double>(s, "offset", c.shift.offset);
    c.shift.gamma = get_or<double>(s, "gamma", c.shift.gamma);
    c.shift.noise_sigma = get_or<double>(s, "noise_sigma", c.shift.noise_sigma);
    c.shift.blur_delta = get_or<double>(s, "blur_delta", c.shift.blur_delta);
  }
  if (j.contains("splits")) {
    const json& s = j.at("splits");
    c.splits.n_train = get_or<int>(s, "train", c.splits.n_train);
    c.splits.n_val = get_or<int>(s, "val", c.splits.n_val);
    c.splits.n_test = get_or<int>(s, "test", c.splits.n_test);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    c.train.learning_rate =
        get_or<double>(t, "learning_rate", c.train.learning_rate);
    c.train.adam_beta1 = get_or<double>(t, "adam_beta1", c.train.adam_beta1);
    c.train.adam_beta2 = get_or<double>(t, "adam_beta2", c.train.adam_beta2);
    c.train.adam_eps = get_or<double>(t, "adam_eps", c.train.adam_eps);
    c.train.epochs = get_or<int>(t, "epochs", c.train.epochs);
    c.train.batch_size = get_or<int>(t, "batch_size", c.train.batch_size);
    c.train.init_scale = get_or<double>(t, "init_scale", c.train.init_scale);
    c.train.loss.clamp_eps =
        get_or<double>(t, "clamp_eps", c.train.loss.clamp_eps);
  }
  if (j.contains("strategies"))
    c.strategies = j.at("strategies").get<std::vector<std::string>>();
  if (j.contains("lambda_grid"))
    c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string ExperimentConfig::to_json_text(bool pretty) const {
  json j;
  j["seed"] = seed;
  j["paths"] = json{{"data_dir", paths.data_dir},
                    {"model_dir", paths.model_dir},
                    {"report_dir", paths.report_dir}};
  j["synth"] = json{{"dim", {synth.dim.nx, synth.dim.ny, synth.dim.nz}},
                    {"spacing", {synth.spacing.sx, synth.spacing.sy,
                                 synth.spacing.sz}},
                    {"lesions", {synth.min_lesions, synth.max_lesions}},
                    {"radius_voxels", {synth.min_radius, synth.max_radius}},
                    {"fg_mean", synth.fg_mean},
                    {"bg_mean", synth.bg_mean},
                    {"noise_sigma", synth.noise_sigma},
                    {"blur_sigma", synth.blur_sigma}};
  j["shift"] = json{{"gain", shift.gain},
                    {"offset", shift.offset},
                    {"gamma", shift.gamma},
                    {"noise_sigma", shift.noise_sigma},
                    {"blur_delta", shift.blur_delta}};
  j["splits"] = json{{"train", splits.n_train},
                     {"val", splits.n_val},
                     {"test", splits.n_test}};
  j["train"] = json{{"learning_rate", train.learning_rate},
                    {"adam_beta1", train.adam_beta1},
                    {"adam_beta2", train.adam_beta2},
                    {"adam_eps", train.adam_eps},
                    {"epochs", train.epochs},
                    {"batch_size", train.batch_size},
                    {"init_scale", train.init_scale},
                    {"clamp_eps", train.loss.clamp_eps}};
  j["strategies"] = strategies;
  j["lambda_grid"] = lambda_grid;
  return pretty ? j.dump(2) : j.dump();
}

std::uint64_t ExperimentConfig::config_hash() const {
  return fnv1a64(to_json_text(false));
}

std::string ExperimentConfig::config_hash_hex() const {
  return hex64(config_hash());
}

// Manifest ---------------------------------------------------------------------

namespace {

json entry_to_json(const ManifestEntry& e) {
  json j{{"id", e.id},
         {"image", e.image},
         {"mask", e.mask},
         {"domain", e.domain},
         {"substream", e.substream}};
  if (e.shift_substream) j["shift_substream"] = *e.shift_substream;
  if (e.twin) j["twin"] = *e.twin;
  return j;
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.image = j.at("image").get<std::string>();
  e.mask = j.at("mask").get<std::string>();
  e.domain = j.at("domain").get<std::string>();
  e.substream = j.at("substream").get<std::uint64_t>();
  if (j.contains("shift_substream"))
    e.shift_substream = j.at("shift_substream").get<std::uint64_t>();
  if (j.contains("twin")) e.twin = j.at("twin").get<std::string>();
  return e;
}

json entries_to_json(const std::vector<ManifestEntry>& es) {
  json a = json::array();
  for (const auto& e : es) a.push_back(entry_to_json(e));
  return a;
}

std::vector<ManifestEntry> entries_from_json(const json& a) {
  std::vector<ManifestEntry> es;
  for (const auto& j : a) es.push_back(entry_from_json(j));
  return es;
}

}  // namespace

std::string Manifest::resolve(const std::string& rel_path) const {
  return join(dir, rel_path);
}

Manifest Manifest::load_file(const std::string& path) {
  json j = parse_json(read_text_file(path), path);
  try {
    Manifest m;
    if (j.at("kind").get<std::string>() != "meseg_manifest")
      throw Error(Errc::format, path + ": not a dataset manifest");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = ExperimentConfig::from_json_text(j.at("config").dump());
    const json& s = j.at("splits");
    m.train = entries_from_json(s.at("train"));
    m.val = entries_from_json(s.at("val"));
    m.test_id = entries_from_json(s.at("test_id"));
    m.test_ood = entries_from_json(s.at("test_ood"));
    m.dir = fs::path(path).parent_path().string();
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::format, path + ": " + e.what());
  }
}

// cmd_synth --------------------------------------------------------------------

Manifest cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  SynthConfig synth = cfg.synth;
  synth.seed = cfg.seed;

  make_dirs(join(out_dir, "train"));
  make_dirs(join(out_dir, "val"));
  make_dirs(join(out_dir, "test_id"));
  make_dirs(join(out_dir, "test_ood"));

  Manifest m;
  m.seed = cfg.seed;
  m.config_hash = cfg.config_hash_hex();
  m.config = cfg;
  m.dir = out_dir;

  // float64 keeps on-disk images bit-identical to the generated ones, so
  // the OOD twin relation (re-apply the shift, compare) is exact.
  NiftiWriteOptions img_opt;
  img_opt.datatype = NiftiDatatype::float64;
  img_opt.gzip = true;

  std::uint64_t next = 0;
  auto record = [&](const std::string& split_dir, const std::string& id,
                    const Volume& image, const BinaryMask& mask) {
    ManifestEntry e;
    e.id = id;
    e.image = split_dir + "/" + id + "_img.nii.gz";
    e.mask = split_dir + "/" + id + "_msk.nii.gz";
    e.domain = "id";
    e.substream = next;
    nifti_write_file(join(out_dir, e.image), image, img_opt);
    nifti_write_mask_file(join(out_dir, e.mask), mask, true);
    return e;
  };
  auto name = [](const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, i);
    return std::string(buf);
  };

  for (int i = 0; i < cfg.splits.n_train; ++i, ++next) {
    SynthSample s = synth_generate_one(synth, next);
    m.train.push_back(record("train", name("train", i), s.image, s.mask));
  }
  for (int i = 0; i < cfg.splits.n_val; ++i, ++next) {
    SynthSample s = synth_generate_one(synth, next);
    m.val.push_back(record("val", name("val", i), s.image, s.mask));
  }
  for (int i = 0; i < cfg.splits.n_test; ++i, ++next) {
    SynthSample s = synth_generate_one(synth, next);
    std::string id = name("test", i);
    m.test_id.push_back(record("test_id", id, s.image, s.mask));

    const std::uint64_t shift_sub = shift_stream_index(next);
    Volume shifted =
        apply_domain_shift(s.image, cfg.shift, derive_seed(cfg.seed, shift_sub));
    ManifestEntry e;
    e.id = name("ood", i);
    e.image = "test_ood/" + e.id + "_img.nii.gz";
    e.mask = "test_ood/" + e.id + "_msk.nii.gz";
    e.domain = "ood";
    e.substream = next;
    e.shift_substream = shift_sub;
    e.twin = id;
    nifti_write_file(join(out_dir, e.image), shifted, img_opt);
    nifti_write_mask_file(join(out_dir, e.mask), s.mask, true);
    m.test_ood.push_back(e);
  }

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = "meseg_manifest";
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["config"] = json::parse(cfg.to_json_text(false));
  j["splits"] = json{{"train", entries_to_json(m.train)},
                     {"val", entries_to_json(m.val)},
                     {"test_id", entries_to_json(m.test_id)},
                     {"test_ood", entries_to_json(m.test_ood)}};
  write_text_file(join(out_dir, "manifest.json"), j.dump(2) + "\n");
  return m;
}

// Dataset loading ----------------------------------------------------------------

namespace {

Sample load_sample(const Manifest& m, const ManifestEntry& e) {
  Volume img = nifti_read_file(m.resolve(e.image)).volume;
  Volume msk = nifti_read_file(m.resolve(e.mask)).volume;
  return Sample{std::move(img), volume_to_mask(msk)};
}

std::vector<Sample> load_samples(const Manifest& m,
                                 const std::vector<ManifestEntry>& es) {
  std::vector<Sample> out;
  out.reserve(es.size());
  for (const auto& e : es) out.push_back(load_sample(m, e));
  return out;
}

}  // namespace

// cmd_train --------------------------------------------------------------------

TrainOutput cmd_train(const ExperimentConfig& cfg, const std::string& data_dir,
                      const std::string& strategy, std::optional<double> lambda,
                      const std::string& out_dir) {
  cfg.validate();
  strategy_loss(strategy, 0.0);  // reject unknown names before any I/O
  Manifest m = Manifest::load_file(join(data_dir, "manifest.json"));
  std::vector<Sample> train_set = load_samples(m, m.train);
  std::vector<Sample> val_set = load_samples(m, m.val);

  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, train_stream_index(strategy));

  make_dirs(out_dir);
  TrainOutput out;
  ModelParams params;
  const bool plain = strategy == "ce";
  if (plain || lambda.has_value()) {
    tc.loss = strategy_loss(strategy, plain ? 0.0 : *lambda);
    auto [p, hist] = train(train_set, val_set, tc);
    if (hist.diverged)
      throw Error(Errc::diverged, "training diverged for strategy " + strategy);
    params = std::move(p);
    out.history = std::move(hist);
    out.lambda = tc.loss.lambda;
  } else {
    tc.loss = strategy_loss(strategy, 0.0);
    GridSearchResult gs = lambda_grid_search(train_set, val_set, tc,
                                             cfg.lambda_grid);
    params = std::move(gs.best_params);
    out.history = std::move(gs.best_history);
    out.lambda = gs.best_lambda;
    out.grid = std::move(gs.reports);
    out.grid_searched = true;
    tc.loss.lambda = gs.best_lambda;
  }

  out.checkpoint_path = join(out_dir, strategy + ".ckpt");
  save_checkpoint(out.checkpoint_path, params, tc);

  std::string csv = "epoch,train_loss,val_dice,val_mean_fg_entropy\n";
  for (const auto& r : out.history.epochs) {
    csv += std::to_string(r.epoch);
    csv += ',';
    csv += fmt_double(r.train_loss);
    csv += ',';
    csv += fmt_double(r.val_dice);
    csv += ',';
    if (r.val_mean_fg_entropy) csv += fmt_double(*r.val_mean_fg_entropy);
    csv += '\n';
  }
  out.history_path = join(out_dir, strategy + "_history.csv");
  write_text_file(out.history_path, csv);

  json sj;
  sj["schema_version"] = kReportSchemaVersion;
  sj["kind"] = "meseg_train";
  sj["strategy"] = strategy;
  sj["lambda"] = out.lambda;
  sj["grid_searched"] = out.grid_searched;
  sj["seed"] = cfg.seed;
  sj["train_seed"] = tc.seed;
  sj["config_hash"] = cfg.config_hash_hex();
  sj["checkpoint"] = strategy + ".ckpt";
  json grid = json::array();
  for (const auto& r : out.grid) {
    json g{{"lambda", r.lambda},
           {"val_dice", r.val_dice},
           {"val_ece", r.val_ece},
           {"diverged", r.diverged}};
    if (r.val_mean_fg_entropy)
      g["val_mean_fg_entropy"] = *r.val_mean_fg_entropy;
    else
      g["val_mean_fg_entropy"] = nullptr;
    grid.push_back(g);
  }
  sj["grid"] = grid;
  if (!out.history.epochs.empty())
    sj["final_val_dice"] = out.history.epochs.back().val_dice;
  out.summary_path = join(out_dir, strategy + "_train.json");
  write_text_file(out.summary_path, sj.dump(2) + "\n");
  return out;
}

// cmd_predict --------------------------------------------------------------------

std::vector<std::string> cmd_predict(const std::string& checkpoint_path,
                                     const std::string& data_dir,
                                     const std::string& out_dir) {
  auto [params, tc] = load_checkpoint(checkpoint_path);
  (void)tc;
  Manifest m = Manifest::load_file(join(data_dir, "manifest.json"));
  make_dirs(out_dir);
  NiftiWriteOptions opt;
  opt.datatype = NiftiDatatype::float64;
  opt.gzip = true;
  std::vector<std::string> paths;
  auto run = [&](const std::vector<ManifestEntry>& es) {
    for (const auto& e : es) {
      Volume img = nifti_read_file(m.resolve(e.image)).volume;
      ProbMap y = forward(params, img);
      std::string p = join(out_dir, e.id + "_prob.nii.gz");
      nifti_write_file(p, y.volume(), opt);
      paths.push_back(p);
    }
  };
  run(m.test_id);
  run(m.test_ood);
  return paths;
}

// cmd_eval ---------------------------------------------------------------------

namespace {

// Everything pooled over one domain (or over both, for the "pooled" block).
struct Accum {
  std::vector<ScanReport> reports;
  std::vector<double> dices;
  std::vector<double> hds;
  std::vector<double> ents;
  std::vector<double> probs;
  std::vector<int> labels;
  std::array<std::size_t, 4> outcome_counts{};
  std::array<std::vector<double>, 4> outcome_entropy;
};

void accumulate(Accum& a, const ScanReport& r, const ProbMap& y,
                const BinaryMask& gt) {
  a.reports.push_back(r);
  a.dices.push_back(r.dice);
  if (r.hausdorff_mm) a.hds.push_back(*r.hausdorff_mm);
  if (r.mean_fg_entropy) a.ents.push_back(*r.mean_fg_entropy);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = y[i];
    const bool g = gt[i];
    a.probs.push_back(p);
    a.labels.push_back(g ? 1 : 0);
    const bool pred = p > 0.5;
    const Outcome o = pred ? (g ? Outcome::tp : Outcome::fp)
                           : (g ? Outcome::fn : Outcome::tn);
    a.outcome_counts[static_cast<std::size_t>(o)]++;
    a.outcome_entropy[static_cast<std::size_t>(o)].push_back(
        binary_entropy(p));
  }
}

const char* kOutcomeNames[4] = {"tp", "tn", "fp", "fn"};

json domain_block(const Accum& a) {
  json d;
  d["n_scans"] = a.reports.size();
  d["dice"] = stats_block(a.dices);
  d["hausdorff_mm"] = stats_block(a.hds);
  d["mean_fg_entropy"] = stats_block(a.ents);
  if (!a.probs.empty()) {
    CalibrationTable pos = ece(a.probs, a.labels, 10,
                               EceConvention::positive_prob);
    CalibrationTable mx = ece(a.probs, a.labels, 10, EceConvention::max_prob);
    d["ece"] = json{{"positive_prob", pos.ece}, {"max_prob", mx.ece}};
    d["calibration"] = json{{"positive_prob", table_json(pos)},
                            {"max_prob", table_json(mx)}};
  } else {
    d["ece"] = nullptr;
    d["calibration"] = nullptr;
  }
  json oc;
  for (std::size_t k = 0; k < 4; ++k) {
    json o;
    o["count"] = a.outcome_counts[k];
    if (a.outcome_entropy[k].empty()) {
      o["entropy"] = nullptr;
    } else {
      const auto& e = a.outcome_entropy[k];
      o["entropy"] = json{{"median", quantile(e, 0.5)},
                          {"q1", quantile(e, 0.25)},
                          {"q3", quantile(e, 0.75)}};
    }
    oc[kOutcomeNames[k]] = o;
  }
  d["outcomes"] = oc;
  return d;
}

void reliability_rows(std::string& csv, const char* domain,
                      const std::vector<double>& probs,
                      const std::vector<int>& labels) {
  if (probs.empty()) return;
  for (EceConvention conv :
       {EceConvention::positive_prob, EceConvention::max_prob}) {
    CalibrationTable t = ece(probs, labels, 10, conv);
    for (const auto& b : t.bins) {
      csv += domain;
      csv += ',';
      csv += to_string(conv);
      csv += ',';
      csv += fmt_double(b.lower);
      csv += ',';
      csv += fmt_double(b.upper);
      csv += ',';
      csv += std::to_string(b.count);
      csv += ',';
      csv += fmt_double(b.mean_confidence);
      csv += ',';
      csv += fmt_double(b.fraction_positive);
      csv += '\n';
    }
  }
}

std::string svg_circle(double cx, double cy, const char* color) {
  return "  <circle cx=\"" + fmt_double(cx) + "\" cy=\"" + fmt_double(cy) +
         "\" r=\"4\" fill=\"" + color + "\"/>\n";
}

// Reliability diagram (positive-probability convention), one series per
// domain. Pure-geometry SVG, never parsed back by any command.
std::string reliability_svg(const Accum& id, const Accum& ood,
                            const std::string& title) {
  auto px = [](double conf) { return 50.0 + 360.0 * conf; };
  auto py = [](double frac) { return 410.0 - 360.0 * frac; };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"470\" "
       "height=\"470\" viewBox=\"0 0 470 470\">\n";
  s += "  <rect width=\"470\" height=\"470\" fill=\"white\"/>\n";
  s += "  <text x=\"235\" y=\"24\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"14\">" +
       title + "</text>\n";
  s += "  <line x1=\"50\" y1=\"410\" x2=\"410\" y2=\"410\" "
       "stroke=\"black\"/>\n";
  s += "  <line x1=\"50\" y1=\"410\" x2=\"50\" y2=\"50\" stroke=\"black\"/>\n";
  s += "  <line x1=\"50\" y1=\"410\" x2=\"410\" y2=\"50\" stroke=\"gray\" "
       "stroke-dasharray=\"4 4\"/>\n";
  s += "  <text x=\"230\" y=\"445\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"12\">mean predicted "
       "probability</text>\n";
  s += "  <text x=\"18\" y=\"230\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 "
       "230)\">fraction of positives</text>\n";
  struct Series {
    const Accum* a;
    const char* color;
    const char* name;
  };
  const Series series[2] = {{&id, "#4477aa", "id"}, {&ood, "#ee6677", "ood"}};
  double legend_y = 60.0;
  for (const auto& sr : series) {
    if (sr.a->probs.empty()) continue;
    CalibrationTable t =
        ece(sr.a->probs, sr.a->labels, 10, EceConvention::positive_prob);
    std::string pts;
    for (const auto& p : reliability_points(t)) {
      if (!pts.empty()) pts += ' ';
      pts += fmt_double(px(p.confidence)) + "," +
             fmt_double(py(p.fraction_positive));
    }
    if (!pts.empty())
      s += "  <polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           sr.color + "\"/>\n";
    for (const auto& p : reliability_points(t))
      s += svg_circle(px(p.confidence), py(p.fraction_positive), sr.color);
    s += "  <circle cx=\"330\" cy=\"" + fmt_double(legend_y - 4.0) +
         "\" r=\"4\" fill=\"" + sr.color + "\"/>\n";
    s += "  <text x=\"340\" y=\"" + fmt_double(legend_y) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" + sr.name +
         "</text>\n";
    legend_y += 18.0;
  }
  s += "</svg>\n";
  return s;
}

std::string csv_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

}  // namespace

EvalOutput cmd_eval(const std::string& checkpoint_path,
                    const std::string& data_dir, const std::string& out_dir) {
  auto [params, tc] = load_checkpoint(checkpoint_path);
  const std::string label = strategy_name(tc.loss);
  Manifest m = Manifest::load_file(join(data_dir, "manifest.json"));
  make_dirs(out_dir);

  Accum acc_id, acc_ood, acc_all;
  auto eval_split = [&](const std::vector<ManifestEntry>& es, Accum& acc) {
    for (const auto& e : es) {
      try {
        Sample s = load_sample(m, e);
        require_same_dims(s.image.dim(), s.mask.dim(), "cmd_eval");
        ProbMap y = forward(params, s.image);
        BinaryMask pred = threshold(y, 0.5);
        ScanReport r;
        r.scan_id = e.id;
        r.domain = e.domain;
        r.dice = dice(s.mask, pred);
        if (s.mask.count_true() > 0 && pred.count_true() > 0)
          r.hausdorff_mm = hausdorff(s.mask, pred);
        r.mean_fg_entropy = mean_foreground_entropy(y);
        r.lesion_load_ml = static_cast<double>(s.mask.count_true()) *
                           s.mask.spacing().voxel_volume_mm3() / 1000.0;
        accumulate(acc, r, y, s.mask);
        accumulate(acc_all, r, y, s.mask);
      } catch (const Error& err) {
        if (err.code() == Errc::dim_mismatch) {
          std::fprintf(stderr, "warning: skipping scan %s: %s\n", e.id.c_str(),
                       err.what());
          continue;
        }
        throw;
      }
    }
  };
  eval_split(m.test_id, acc_id);
  eval_split(m.test_ood, acc_ood);

  EvalOutput out;
  out.reports = acc_all.reports;

  // Per-scan CSV. Column order is frozen; absent optionals are empty cells.
  std::string csv = "scan_id,domain,dice,hausdorff_mm,mean_fg_entropy,lesion_load_ml\n";
  for (const auto& r : acc_all.reports) {
    csv += r.scan_id;
    csv += ',';
    csv += r.domain;
    csv += ',';
    csv += fmt_double(r.dice);
    csv += ',';
    csv += csv_opt(r.hausdorff_mm);
    csv += ',';
    csv += csv_opt(r.mean_fg_entropy);
    csv += ',';
    csv += fmt_double(r.lesion_load_ml);
    csv += '\n';
  }
  out.per_scan_csv = join(out_dir, label + "_scans.csv");
  write_text_file(out.per_scan_csv, csv);

  json ag;
  ag["schema_version"] = kReportSchemaVersion;
  ag["kind"] = "meseg_eval";
  ag["strategy"] = label;
  ag["lambda"] = tc.loss.lambda;
  ag["seed"] = m.seed;
  ag["config_hash"] = m.config_hash;
  // basename only: aggregates must not depend on where the tree was rooted
  ag["checkpoint"] = fs::path(checkpoint_path).filename().string();
  ag["threshold"] = 0.5;
  ag["hausdorff_percentile"] = 100.0;
  ag["domains"] = json{{"id", domain_block(acc_id)},
                       {"ood", domain_block(acc_ood)}};

  json pooled = domain_block(acc_all);
  {
    std::vector<double> xs, ys;
    for (const auto& r : acc_all.reports)
      if (r.mean_fg_entropy) {
        xs.push_back(*r.mean_fg_entropy);
        ys.push_back(r.dice);
      }
    pooled["pearson_n"] = xs.size();
    if (xs.size() >= 2) {
      try {
        pooled["pearson_entropy_dice"] = pearson_r(xs, ys);
      } catch (const Error&) {
        pooled["pearson_entropy_dice"] = nullptr;  // zero variance
      }
    } else {
      pooled["pearson_entropy_dice"] = nullptr;
    }
  }
  {
    auto strata = stratify_by_lesion_load(acc_all.reports);
    const char* names[3] = {"lt5", "5to15", "gt15"};
    json st;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> se, sd;
      for (const auto& r : strata[static_cast<std::size_t>(k)]) {
        if (r.mean_fg_entropy) se.push_back(*r.mean_fg_entropy);
        sd.push_back(r.dice);
      }
      json g;
      g["n"] = strata[static_cast<std::size_t>(k)].size();
      g["median_fg_entropy"] =
          se.empty() ? json(nullptr) : json(quantile(se, 0.5));
      g["median_dice"] = sd.empty() ? json(nullptr) : json(quantile(sd, 0.5));
      st[names[k]] = g;
    }
    pooled["lesion_load_strata"] = st;
  }
  ag["pooled"] = pooled;

  if (!acc_id.ents.empty() && !acc_ood.ents.empty()) {
    MannWhitneyResult mw = mann_whitney_u(acc_id.ents, acc_ood.ents);
    ag["mann_whitney_entropy"] = json{{"u", mw.u},
                                      {"p", mw.p_two_sided},
                                      {"n_id", acc_id.ents.size()},
                                      {"n_ood", acc_ood.ents.size()}};
  } else {
    // Documented absence: with an empty group the test is undefined.
    ag["mann_whitney_entropy"] = nullptr;
  }

  out.aggregate_text = ag.dump(2) + "\n";
  out.aggregate_json = join(out_dir, label + "_aggregate.json");
  write_text_file(out.aggregate_json, out.aggregate_text);

  std::string rel =
      "domain,convention,bin_lower,bin_upper,count,mean_confidence,"
      "fraction_positive\n";
  reliability_rows(rel, "id", acc_id.probs, acc_id.labels);
  reliability_rows(rel, "ood", acc_ood.probs, acc_ood.labels);
  reliability_rows(rel, "pooled", acc_all.probs, acc_all.labels);
  out.reliability_csv = join(out_dir, label + "_reliability.csv");
  write_text_file(out.reliability_csv, rel);

  out.reliability_svg = join(out_dir, label + "_reliability.svg");
  write_text_file(out.reliability_svg,
                  reliability_svg(acc_id, acc_ood, label + " reliability"));
  return out;
}

// cmd_report -------------------------------------------------------------------

namespace {

// Numeric leaf at a path inside an aggregate document, formatted for CSV;
// null or missing becomes an empty cell.
std::string num_cell(const json& j, std::initializer_list<const char*> path) {
  const json* p = &j;
  for (const char* k : path) {
    if (!p->is_object() || !p->contains(k)) return std::string();
    p = &p->at(k);
  }
  if (p->is_null()) return std::string();
  if (p->is_number_unsigned())
    return std::to_string(p->get<unsigned long long>());
  if (p->is_number_integer()) return std::to_string(p->get<long long>());
  return fmt_double(p->get<double>());
}

std::string md_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) {
    s += ' ';
    s += c.empty() ? "-" : c;
    s += " |";
  }
  s += '\n';
  return s;
}

}  // namespace

ReportOutput cmd_report(const std::vector<std::string>& aggregate_paths,
                        const std::string& out_dir) {
  if (aggregate_paths.empty())
    throw Error(Errc::invalid_argument,
                "report: need at least one aggregate JSON input");
  make_dirs(out_dir);

  std::vector<json> ins;
  int version = -1;
  for (const auto& p : aggregate_paths) {
    json j = parse_json(read_text_file(p), p);
    if (!j.is_object() || !j.contains("schema_version"))
      throw Error(Errc::format, p + ": missing schema_version");
    const int v = j.at("schema_version").get<int>();
    if (version < 0)
      version = v;
    else if (v != version)
      throw Error(Errc::format,
                  p + ": schema_version " + std::to_string(v) +
                      " does not match first input's " +
                      std::to_string(version));
    if (j.value("kind", std::string()) != "meseg_eval")
      throw Error(Errc::format, p + ": not an eval aggregate document");
    ins.push_back(std::move(j));
  }

  ReportOutput out;

  std::string summary =
      "strategy,lambda,domain,n_scans,mean_dice,median_dice,"
      "mean_hausdorff_mm,median_hausdorff_mm,mean_fg_entropy,"
      "median_fg_entropy,ece_positive_prob,ece_max_prob,"
      "pearson_entropy_dice,mwu_p\n";
  const char* domains[3] = {"id", "ood", "pooled"};
  for (const auto& j : ins) {
    const std::string strategy = j.value("strategy", std::string());
    const std::string lambda = num_cell(j, {"lambda"});
    for (const char* dom : domains) {
      const bool pooled = std::string(dom) == "pooled";
      json block = pooled ? j.value("pooled", json())
                          : j.value("domains", json()).value(dom, json());
      std::vector<std::string> cells{
          strategy,
          lambda,
          dom,
          num_cell(block, {"n_scans"}),
          num_cell(block, {"dice", "mean"}),
          num_cell(block, {"dice", "median"}),
          num_cell(block, {"hausdorff_mm", "mean"}),
          num_cell(block, {"hausdorff_mm", "median"}),
          num_cell(block, {"mean_fg_entropy", "mean"}),
          num_cell(block, {"mean_fg_entropy", "median"}),
          num_cell(block, {"ece", "positive_prob"}),
          num_cell(block, {"ece", "max_prob"}),
          pooled ? num_cell(block, {"pearson_entropy_dice"}) : std::string(),
          pooled ? num_cell(j, {"mann_whitney_entropy", "p"}) : std::string()};
      for (std::size_t i = 0; i < cells.size(); ++i) {
        summary += cells[i];
        summary += i + 1 == cells.size() ? '\n' : ',';
      }
    }
  }
  out.summary_csv = join(out_dir, "report_summary.csv");
  write_text_file(out.summary_csv, summary);

  std::string outcomes =
      "strategy,domain,outcome,count,entropy_median,entropy_q1,entropy_q3\n";
  for (const auto& j : ins) {
    const std::string strategy = j.value("strategy", std::string());
    for (const char* dom : domains) {
      const bool pooled = std::string(dom) == "pooled";
      json block = pooled ? j.value("pooled", json())
                          : j.value("domains", json()).value(dom, json());
      for (const char* oc : kOutcomeNames) {
        outcomes += strategy;
        outcomes += ',';
        outcomes += dom;
        outcomes += ',';
        outcomes += oc;
        outcomes += ',';
        outcomes += num_cell(block, {"outcomes", oc, "count"});
        outcomes += ',';
        outcomes += num_cell(block, {"outcomes", oc, "entropy", "median"});
        outcomes += ',';
        outcomes += num_cell(block, {"outcomes", oc, "entropy", "q1"});
        outcomes += ',';
        outcomes += num_cell(block, {"outcomes", oc, "entropy", "q3"});
        outcomes += '\n';
      }
    }
  }
  out.outcome_csv = join(out_dir, "report_outcomes.csv");
  write_text_file(out.outcome_csv, outcomes);

  std::string strata = "strategy,stratum,n,median_fg_entropy,median_dice\n";
  const char* strata_names[3] = {"lt5", "5to15", "gt15"};
  for (const auto& j : ins) {
    const std::string strategy = j.value("strategy", std::string());
    for (const char* sn : strata_names) {
      strata += strategy;
      strata += ',';
      strata += sn;
      strata += ',';
      strata += num_cell(j, {"pooled", "lesion_load_strata", sn, "n"});
      strata += ',';
      strata += num_cell(
          j, {"pooled", "lesion_load_strata", sn, "median_fg_entropy"});
      strata += ',';
      strata +=
          num_cell(j, {"pooled", "lesion_load_strata", sn, "median_dice"});
      strata += '\n';
    }
  }
  out.strata_csv = join(out_dir, "report_strata.csv");
  write_text_file(out.strata_csv, strata);

  // Markdown mirror of the three tables, for humans.
  std::string md = "# Strategy comparison\n\n";
  md += "## Summary (per domain)\n\n";
  md += md_row({"strategy", "lambda", "domain", "mean dice", "mean HD (mm)",
                "mean FG entropy", "ECE (pos)", "ECE (max)", "pearson r",
                "MWU p"});
  md += md_row({"---", "---", "---", "---", "---", "---", "---", "---", "---",
                "---"});
  for (const auto& j : ins) {
    const std::string strategy = j.value("strategy", std::string());
    const std::string lambda = num_cell(j, {"lambda"});
    for (const char* dom : domains) {
      const bool pooled = std::string(dom) == "pooled";
      json block = pooled ? j.value("pooled", json())
                          : j.value("domains", json()).value(dom, json());
      md += md_row(
          {strategy, lambda, dom, num_cell(block, {"dice", "mean"}),
           num_cell(block, {"hausdorff_mm", "mean"}),
           num_cell(block, {"mean_fg_entropy", "mean"}),
           num_cell(block, {"ece", "positive_prob"}),
           num_cell(block, {"ece", "max_prob"}),
           pooled ? num_cell(block, {"pearson_entropy_dice"}) : std::string(),
           pooled ? num_cell(j, {"mann_whitney_entropy", "p"})
                  : std::string()});
    }
  }
  md += "\n## Median entropy per outcome (pooled)\n\n";
  md += md_row({"strategy", "tp", "tn", "fp", "fn"});
  md += md_row({"---", "---", "---", "---", "---"});
  for (const auto& j : ins) {
    std::vector<std::string> cells{j.value("strategy", std::string())};
    for (const char* oc : kOutcomeNames)
      cells.push_back(
          num_cell(j, {"pooled", "outcomes", oc, "entropy", "median"}));
    md += md_row(cells);
  }
  md += "\n## Median foreground entropy per lesion-load stratum (pooled)\n\n";
  md += md_row({"strategy", "< 5 mL", "5-15 mL", "> 15 mL"});
  md += md_row({"---", "---", "---", "---"});
  for (const auto& j : ins) {
    std::vector<std::string> cells{j.value("strategy", std::string())};
    for (const char* sn : strata_names)
      cells.push_back(num_cell(
          j, {"pooled", "lesion_load_strata", sn, "median_fg_entropy"}));
    md += md_row(cells);
  }
  out.markdown = join(out_dir, "report.md");
  write_text_file(out.markdown, md);
  return out;
}

}  // namespace meseg
