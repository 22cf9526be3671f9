#include "meseg/meseg.h"

#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meseg/error.hpp"
#include "meseg/experiment.hpp"
#include "meseg/losses.hpp"
#include "meseg/metrics.hpp"
#include "meseg/model.hpp"
#include "meseg/nifti.hpp"
#include "meseg/volume.hpp"

struct meseg_volume {
  meseg::Volume v;
};
struct meseg_mask {
  meseg::BinaryMask m;
};
struct meseg_model {
  meseg::ModelParams params;
  meseg::TrainConfig cfg;
};
struct meseg_config {
  meseg::ExperimentConfig cfg;
};

namespace {

thread_local std::string t_last_error;

// Runs the body, translating exceptions into status codes and capturing the
// message for meseg_last_error.
template <typename F>
int guarded(F&& body) {
  try {
    body();
    t_last_error.clear();
    return MESEG_OK;
  } catch (const meseg::Error& e) {
    t_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    t_last_error = "out of memory";
    return MESEG_ERR_UNKNOWN;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return MESEG_ERR_UNKNOWN;
  }
}

int null_arg(const char* what) {
  t_last_error = std::string(what) + " must not be NULL";
  return MESEG_ERR_INVALID_ARGUMENT;
}

int copy_string(const std::string& s, char* buf, size_t bufsz,
                const char* what) {
  if (buf == nullptr) return null_arg("buf");
  if (bufsz < s.size() + 1) {
    t_last_error = std::string(what) + ": buffer too small (need " +
                   std::to_string(s.size() + 1) + " bytes)";
    return MESEG_ERR_INVALID_ARGUMENT;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  t_last_error.clear();
  return MESEG_OK;
}

}  // namespace

extern "C" {

const char* meseg_version(void) { return "1.0.0"; }

const char* meseg_last_error(void) { return t_last_error.c_str(); }

/* Volumes ------------------------------------------------------------- */

int meseg_volume_create(int nx, int ny, int nz, double sx, double sy,
                        double sz, const double* data, meseg_volume** out) {
  if (out == nullptr) return null_arg("out");
  if (data == nullptr) return null_arg("data");
  return guarded([&] {
    meseg::Dim3 d{nx, ny, nz};
    std::vector<double> values(data, data + d.voxels());
    *out = new meseg_volume{
        meseg::Volume(d, meseg::Spacing{sx, sy, sz}, std::move(values))};
  });
}

int meseg_volume_read_nifti(const char* path, meseg_volume** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new meseg_volume{meseg::nifti_read_file(path).volume};
  });
}

int meseg_volume_write_nifti(const meseg_volume* v, const char* path,
                             int float64, int gzip) {
  if (v == nullptr) return null_arg("v");
  if (path == nullptr) return null_arg("path");
  return guarded([&] {
    meseg::NiftiWriteOptions opt;
    opt.datatype = float64 ? meseg::NiftiDatatype::float64
                           : meseg::NiftiDatatype::float32;
    opt.gzip = gzip != 0;
    meseg::nifti_write_file(path, v->v, opt);
  });
}

int meseg_volume_dims(const meseg_volume* v, int* nx, int* ny, int* nz) {
  if (v == nullptr) return null_arg("v");
  if (nx == nullptr || ny == nullptr || nz == nullptr)
    return null_arg("nx/ny/nz");
  *nx = v->v.dim().nx;
  *ny = v->v.dim().ny;
  *nz = v->v.dim().nz;
  t_last_error.clear();
  return MESEG_OK;
}

int meseg_volume_spacing(const meseg_volume* v, double* sx, double* sy,
                         double* sz) {
  if (v == nullptr) return null_arg("v");
  if (sx == nullptr || sy == nullptr || sz == nullptr)
    return null_arg("sx/sy/sz");
  *sx = v->v.spacing().sx;
  *sy = v->v.spacing().sy;
  *sz = v->v.spacing().sz;
  t_last_error.clear();
  return MESEG_OK;
}

int meseg_volume_data(const meseg_volume* v, const double** data, size_t* n) {
  if (v == nullptr) return null_arg("v");
  if (data == nullptr || n == nullptr) return null_arg("data/n");
  *data = v->v.data().data();
  *n = v->v.size();
  t_last_error.clear();
  return MESEG_OK;
}

void meseg_volume_free(meseg_volume* v) { delete v; }

/* Masks ---------------------------------------------------------------- */

int meseg_mask_from_volume(const meseg_volume* v, meseg_mask** out) {
  if (v == nullptr) return null_arg("v");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = new meseg_mask{meseg::volume_to_mask(v->v)}; });
}

int meseg_mask_threshold(const meseg_volume* probs, double t,
                         meseg_mask** out) {
  if (probs == nullptr) return null_arg("probs");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new meseg_mask{
        meseg::threshold(meseg::volume_to_probmap(probs->v), t)};
  });
}

int meseg_mask_count(const meseg_mask* m, size_t* n_true) {
  if (m == nullptr) return null_arg("m");
  if (n_true == nullptr) return null_arg("n_true");
  *n_true = m->m.count_true();
  t_last_error.clear();
  return MESEG_OK;
}

void meseg_mask_free(meseg_mask* m) { delete m; }

/* Losses and metrics ---------------------------------------------------- */

int meseg_binary_entropy(double p, double* out) {
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = meseg::binary_entropy(p); });
}

int meseg_entropy_map(const meseg_volume* probs, meseg_volume** out) {
  if (probs == nullptr) return null_arg("probs");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new meseg_volume{
        meseg::entropy_map(meseg::volume_to_probmap(probs->v))};
  });
}

int meseg_combined_loss(const meseg_volume* probs, const meseg_mask* gt,
                        const char* strategy, double lambda, double* value) {
  if (probs == nullptr) return null_arg("probs");
  if (gt == nullptr) return null_arg("gt");
  if (strategy == nullptr) return null_arg("strategy");
  if (value == nullptr) return null_arg("value");
  return guarded([&] {
    meseg::LossSpec spec = meseg::strategy_loss(strategy, lambda);
    *value = meseg::combined_loss(meseg::volume_to_probmap(probs->v), gt->m,
                                  spec)
                 .value;
  });
}

int meseg_dice(const meseg_mask* g, const meseg_mask* p, double* out) {
  if (g == nullptr || p == nullptr) return null_arg("g/p");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = meseg::dice(g->m, p->m); });
}

int meseg_hausdorff(const meseg_mask* g, const meseg_mask* p,
                    double percentile, double* out) {
  if (g == nullptr || p == nullptr) return null_arg("g/p");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = meseg::hausdorff(g->m, p->m, percentile); });
}

int meseg_ece(const double* probs, const int* labels, size_t n,
              int convention, double* out) {
  if (probs == nullptr || labels == nullptr) return null_arg("probs/labels");
  if (out == nullptr) return null_arg("out");
  if (convention != MESEG_ECE_POSITIVE_PROB &&
      convention != MESEG_ECE_MAX_PROB) {
    t_last_error = "convention must be MESEG_ECE_POSITIVE_PROB or "
                   "MESEG_ECE_MAX_PROB";
    return MESEG_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    std::vector<double> ps(probs, probs + n);
    std::vector<int> ls(labels, labels + n);
    *out = meseg::ece(ps, ls, 10,
                      convention == MESEG_ECE_POSITIVE_PROB
                          ? meseg::EceConvention::positive_prob
                          : meseg::EceConvention::max_prob)
               .ece;
  });
}

int meseg_mean_foreground_entropy(const meseg_volume* probs, double t,
                                  double* out, int* defined) {
  if (probs == nullptr) return null_arg("probs");
  if (out == nullptr || defined == nullptr) return null_arg("out/defined");
  return guarded([&] {
    std::optional<double> e =
        meseg::mean_foreground_entropy(meseg::volume_to_probmap(probs->v), t);
    *defined = e.has_value() ? 1 : 0;
    *out = e.value_or(0.0);
  });
}

int meseg_pearson_r(const double* xs, const double* ys, size_t n,
                    double* out) {
  if (xs == nullptr || ys == nullptr) return null_arg("xs/ys");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    std::vector<double> x(xs, xs + n), y(ys, ys + n);
    *out = meseg::pearson_r(x, y);
  });
}

int meseg_mann_whitney_u(const double* a, size_t na, const double* b,
                         size_t nb, double* u, double* p_two_sided) {
  if (a == nullptr || b == nullptr) return null_arg("a/b");
  if (u == nullptr || p_two_sided == nullptr) return null_arg("u/p");
  return guarded([&] {
    std::vector<double> va(a, a + na), vb(b, b + nb);
    meseg::MannWhitneyResult r = meseg::mann_whitney_u(va, vb);
    *u = r.u;
    *p_two_sided = r.p_two_sided;
  });
}

/* Models ---------------------------------------------------------------- */

int meseg_model_load(const char* checkpoint_path, meseg_model** out) {
  if (checkpoint_path == nullptr) return null_arg("checkpoint_path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    auto [params, cfg] = meseg::load_checkpoint(checkpoint_path);
    *out = new meseg_model{std::move(params), cfg};
  });
}

int meseg_model_predict(const meseg_model* m, const meseg_volume* image,
                        meseg_volume** probs_out) {
  if (m == nullptr) return null_arg("m");
  if (image == nullptr) return null_arg("image");
  if (probs_out == nullptr) return null_arg("probs_out");
  return guarded([&] {
    *probs_out =
        new meseg_volume{meseg::forward(m->params, image->v).volume()};
  });
}

void meseg_model_free(meseg_model* m) { delete m; }

/* Experiment pipeline ---------------------------------------------------- */

int meseg_config_load(const char* path, meseg_config** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new meseg_config{meseg::ExperimentConfig::load_file(path)};
  });
}

int meseg_config_default(meseg_config** out) {
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = new meseg_config{meseg::ExperimentConfig{}}; });
}

int meseg_config_set_seed(meseg_config* cfg, uint64_t seed) {
  if (cfg == nullptr) return null_arg("cfg");
  cfg->cfg.seed = seed;
  t_last_error.clear();
  return MESEG_OK;
}

int meseg_config_seed(const meseg_config* cfg, uint64_t* out) {
  if (cfg == nullptr) return null_arg("cfg");
  if (out == nullptr) return null_arg("out");
  *out = cfg->cfg.seed;
  t_last_error.clear();
  return MESEG_OK;
}

int meseg_config_dir(const meseg_config* cfg, const char* which, char* buf,
                     size_t bufsz) {
  if (cfg == nullptr) return null_arg("cfg");
  if (which == nullptr) return null_arg("which");
  const std::string w = which;
  const std::string* dir = nullptr;
  if (w == "data")
    dir = &cfg->cfg.paths.data_dir;
  else if (w == "model")
    dir = &cfg->cfg.paths.model_dir;
  else if (w == "report")
    dir = &cfg->cfg.paths.report_dir;
  else {
    t_last_error = "which must be \"data\", \"model\" or \"report\"";
    return MESEG_ERR_INVALID_ARGUMENT;
  }
  return copy_string(*dir, buf, bufsz, "meseg_config_dir");
}

int meseg_config_hash_hex(const meseg_config* cfg, char* buf, size_t bufsz) {
  if (cfg == nullptr) return null_arg("cfg");
  std::string hex;
  int rc = guarded([&] { hex = cfg->cfg.config_hash_hex(); });
  if (rc != MESEG_OK) return rc;
  return copy_string(hex, buf, bufsz, "meseg_config_hash_hex");
}

void meseg_config_free(meseg_config* cfg) { delete cfg; }

int meseg_cmd_synth(const meseg_config* cfg, const char* out_dir) {
  if (cfg == nullptr) return null_arg("cfg");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] { meseg::cmd_synth(cfg->cfg, out_dir); });
}

int meseg_cmd_train(const meseg_config* cfg, const char* data_dir,
                    const char* strategy, const double* lambda_or_null,
                    const char* out_dir, double* selected_lambda) {
  if (cfg == nullptr) return null_arg("cfg");
  if (data_dir == nullptr) return null_arg("data_dir");
  if (strategy == nullptr) return null_arg("strategy");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    std::optional<double> lambda;
    if (lambda_or_null != nullptr) lambda = *lambda_or_null;
    meseg::TrainOutput out =
        meseg::cmd_train(cfg->cfg, data_dir, strategy, lambda, out_dir);
    if (selected_lambda != nullptr) *selected_lambda = out.lambda;
  });
}

int meseg_cmd_predict(const char* checkpoint_path, const char* data_dir,
                      const char* out_dir) {
  if (checkpoint_path == nullptr) return null_arg("checkpoint_path");
  if (data_dir == nullptr) return null_arg("data_dir");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded(
      [&] { meseg::cmd_predict(checkpoint_path, data_dir, out_dir); });
}

int meseg_cmd_eval(const char* checkpoint_path, const char* data_dir,
                   const char* out_dir) {
  if (checkpoint_path == nullptr) return null_arg("checkpoint_path");
  if (data_dir == nullptr) return null_arg("data_dir");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] { meseg::cmd_eval(checkpoint_path, data_dir, out_dir); });
}

int meseg_cmd_report(const char* const* aggregate_paths, size_t n,
                     const char* out_dir) {
  if (aggregate_paths == nullptr) return null_arg("aggregate_paths");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    std::vector<std::string> paths;
    paths.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      if (aggregate_paths[i] == nullptr)
        throw meseg::Error(meseg::Errc::invalid_argument,
                           "aggregate_paths contains a NULL entry");
      paths.emplace_back(aggregate_paths[i]);
    }
    meseg::cmd_report(paths, out_dir);
  });
}

}  // extern "C"
