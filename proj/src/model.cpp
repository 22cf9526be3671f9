#include "meseg/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "meseg/metrics.hpp"
#include "meseg/rng.hpp"

namespace meseg {

namespace {

constexpr int kC = ModelParams::kChannels;
constexpr int kK = ModelParams::kKernel;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Intermediate activations kept for backpropagation.
struct ForwardPass {
  std::vector<double> z1, a1;  // [kC][n], pre- and post-ReLU
  std::vector<double> z2, a2;
  std::vector<double> y;       // [n]
};

// 3x3x3 correlation of one input channel into an accumulator, zero padded.
void conv3_accumulate(const std::vector<double>& in, const Dim3& d,
                      const double* w, std::vector<double>& acc) {
  const int nx = d.nx, ny = d.ny, nz = d.nz;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double s = 0.0;
        for (int kz = 0; kz < 3; ++kz) {
          const int iz = z + kz - 1;
          if (iz < 0 || iz >= nz) continue;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= ny) continue;
            const std::size_t row =
                (static_cast<std::size_t>(iz) * ny + iy) * nx;
            const double* wk = w + (kz * 3 + ky) * 3;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1;
              if (ix < 0 || ix >= nx) continue;
              s += wk[kx] * in[row + ix];
            }
          }
        }
        acc[(static_cast<std::size_t>(z) * ny + y) * nx + x] += s;
      }
}

// Backward pass of conv3_accumulate: scatters gradient into both the
// kernel and the input, in the same fixed loop order as the forward.
void conv3_backward(const std::vector<double>& in, const Dim3& d,
                    const double* w, const std::vector<double>& dout,
                    double* dw, std::vector<double>& din) {
  const int nx = d.nx, ny = d.ny, nz = d.nz;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const double g = dout[(static_cast<std::size_t>(z) * ny + y) * nx + x];
        if (g == 0.0) continue;
        for (int kz = 0; kz < 3; ++kz) {
          const int iz = z + kz - 1;
          if (iz < 0 || iz >= nz) continue;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= ny) continue;
            const std::size_t row =
                (static_cast<std::size_t>(iz) * ny + iy) * nx;
            const int kbase = (kz * 3 + ky) * 3;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1;
              if (ix < 0 || ix >= nx) continue;
              dw[kbase + kx] += g * in[row + ix];
              din[row + ix] += g * w[kbase + kx];
            }
          }
        }
      }
}

ForwardPass run_forward(const ModelParams& p, const Volume& x) {
  const Dim3 d = x.dim();
  const std::size_t n = x.size();
  ForwardPass fp;
  fp.z1.assign(static_cast<std::size_t>(kC) * n, 0.0);
  fp.z2.assign(static_cast<std::size_t>(kC) * n, 0.0);

  for (int c = 0; c < kC; ++c) {
    std::vector<double> acc(n, p.conv1_b[c]);
    // reuse the accumulate helper over the single input channel
    std::vector<double> tmp(n, 0.0);
    conv3_accumulate(x.data(), d, p.conv1_w.data() + c * kK, tmp);
    for (std::size_t i = 0; i < n; ++i)
      fp.z1[static_cast<std::size_t>(c) * n + i] = acc[i] + tmp[i];
  }
  fp.a1 = fp.z1;
  for (auto& v : fp.a1) v = v > 0.0 ? v : 0.0;

  for (int c = 0; c < kC; ++c) {
    std::vector<double> acc(n, 0.0);
    for (int ci = 0; ci < kC; ++ci) {
      std::vector<double> chan(fp.a1.begin() + static_cast<std::ptrdiff_t>(ci) * n,
                               fp.a1.begin() + static_cast<std::ptrdiff_t>(ci + 1) * n);
      conv3_accumulate(chan, d, p.conv2_w.data() + (c * kC + ci) * kK, acc);
    }
    for (std::size_t i = 0; i < n; ++i)
      fp.z2[static_cast<std::size_t>(c) * n + i] = acc[i] + p.conv2_b[c];
  }
  fp.a2 = fp.z2;
  for (auto& v : fp.a2) v = v > 0.0 ? v : 0.0;

  fp.y.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double logit = p.conv3_b[0];
    for (int c = 0; c < kC; ++c)
      logit += p.conv3_w[c] * fp.a2[static_cast<std::size_t>(c) * n + i];
    if (!std::isfinite(logit))
      throw Error(Errc::numeric, "forward: non-finite activation");
    fp.y[i] = sigmoid(logit);
  }
  return fp;
}

}  // namespace

ModelParams ModelParams::zeros() {
  ModelParams p;
  p.conv1_w.assign(static_cast<std::size_t>(kC) * kK, 0.0);
  p.conv1_b.assign(kC, 0.0);
  p.conv2_w.assign(static_cast<std::size_t>(kC) * kC * kK, 0.0);
  p.conv2_b.assign(kC, 0.0);
  p.conv3_w.assign(kC, 0.0);
  p.conv3_b.assign(1, 0.0);
  return p;
}

std::size_t ModelParams::num_params() const {
  return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() +
         conv3_w.size() + conv3_b.size();
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::vector<double>& t) {
    for (double v : t)
      if (!std::isfinite(v)) ok = false;
  });
  return ok;
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0) && learning_rate != 0.0)
    throw Error(Errc::invalid_argument, "TrainConfig: bad learning_rate");
  if (learning_rate < 0.0)
    throw Error(Errc::invalid_argument, "TrainConfig: negative learning_rate");
  if (epochs < 1)
    throw Error(Errc::invalid_argument, "TrainConfig: epochs must be >= 1");
  if (batch_size < 1)
    throw Error(Errc::invalid_argument, "TrainConfig: batch_size must be >= 1");
  if (!(init_scale >= 0.0))
    throw Error(Errc::invalid_argument, "TrainConfig: init_scale must be >= 0");
}

ModelParams init_params(std::uint64_t seed, double init_scale) {
  if (!(init_scale >= 0.0))
    throw Error(Errc::invalid_argument, "init_params: init_scale must be >= 0");
  ModelParams p = ModelParams::zeros();
  Rng rng(seed);
  auto fill = [&](std::vector<double>& w, int fan_in) {
    const double s = init_scale / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w) v = rng.normal() * s;
  };
  fill(p.conv1_w, kK);
  fill(p.conv2_w, kC * kK);
  fill(p.conv3_w, kC);
  return p;
}

ProbMap forward(const ModelParams& params, const Volume& x) {
  ForwardPass fp = run_forward(params, x);
  return ProbMap(x.dim(), x.spacing(), std::move(fp.y));
}

LossGradResult loss_grad_params(const ModelParams& p, const Volume& x,
                                const BinaryMask& gt, const LossSpec& spec) {
  require_same_dims(x.dim(), gt.dim(), "loss_grad_params");
  const Dim3 d = x.dim();
  const std::size_t n = x.size();

  ForwardPass fp = run_forward(p, x);
  ProbMap pred(d, x.spacing(), fp.y);
  LossEval loss = combined_loss(pred, gt, spec);

  ModelParams g = ModelParams::zeros();

  // sigmoid backward: dL/dlogit = dL/dy * y (1 - y)
  std::vector<double> dlogit(n);
  for (std::size_t i = 0; i < n; ++i)
    dlogit[i] = loss.grad[i] * fp.y[i] * (1.0 - fp.y[i]);

  // conv3 (1x1x1) backward
  std::vector<double> da2(static_cast<std::size_t>(kC) * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g.conv3_b[0] += dlogit[i];
    for (int c = 0; c < kC; ++c) {
      const std::size_t ci = static_cast<std::size_t>(c) * n + i;
      g.conv3_w[c] += dlogit[i] * fp.a2[ci];
      da2[ci] = dlogit[i] * p.conv3_w[c];
    }
  }

  // ReLU backward into z2
  std::vector<double> dz2(static_cast<std::size_t>(kC) * n);
  for (std::size_t i = 0; i < dz2.size(); ++i)
    dz2[i] = fp.z2[i] > 0.0 ? da2[i] : 0.0;

  // conv2 backward
  std::vector<double> da1(static_cast<std::size_t>(kC) * n, 0.0);
  for (int c = 0; c < kC; ++c) {
    std::vector<double> dout(dz2.begin() + static_cast<std::ptrdiff_t>(c) * n,
                             dz2.begin() + static_cast<std::ptrdiff_t>(c + 1) * n);
    for (std::size_t i = 0; i < n; ++i) g.conv2_b[c] += dout[i];
    for (int ci = 0; ci < kC; ++ci) {
      std::vector<double> chan(fp.a1.begin() + static_cast<std::ptrdiff_t>(ci) * n,
                               fp.a1.begin() + static_cast<std::ptrdiff_t>(ci + 1) * n);
      std::vector<double> dchan(n, 0.0);
      conv3_backward(chan, d, p.conv2_w.data() + (c * kC + ci) * kK, dout,
                     g.conv2_w.data() + (c * kC + ci) * kK, dchan);
      for (std::size_t i = 0; i < n; ++i)
        da1[static_cast<std::size_t>(ci) * n + i] += dchan[i];
    }
  }

  // ReLU backward into z1
  std::vector<double> dz1(static_cast<std::size_t>(kC) * n);
  for (std::size_t i = 0; i < dz1.size(); ++i)
    dz1[i] = fp.z1[i] > 0.0 ? da1[i] : 0.0;

  // conv1 backward (input gradient discarded)
  std::vector<double> dx(n, 0.0);
  for (int c = 0; c < kC; ++c) {
    std::vector<double> dout(dz1.begin() + static_cast<std::ptrdiff_t>(c) * n,
                             dz1.begin() + static_cast<std::ptrdiff_t>(c + 1) * n);
    for (std::size_t i = 0; i < n; ++i) g.conv1_b[c] += dout[i];
    std::fill(dx.begin(), dx.end(), 0.0);
    conv3_backward(x.data(), d, p.conv1_w.data() + c * kK, dout,
                   g.conv1_w.data() + c * kK, dx);
  }

  if (!g.all_finite())
    throw Error(Errc::numeric, "loss_grad_params: non-finite gradient");
  return {loss.value, std::move(g), std::move(pred)};
}

namespace {

double mean_val_dice(const ModelParams& p, const std::vector<Sample>& val) {
  if (val.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : val)
    sum += dice(s.mask, threshold(forward(p, s.image), 0.5));
  return sum / static_cast<double>(val.size());
}

std::optional<double> mean_val_fg_entropy(const ModelParams& p,
                                          const std::vector<Sample>& val) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : val) {
    auto e = mean_foreground_entropy(forward(p, s.image));
    if (e) {
      sum += *e;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

std::pair<ModelParams, TrainHistory> train(const std::vector<Sample>& dataset,
                                           const std::vector<Sample>& val,
                                           const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty())
    throw Error(Errc::invalid_argument, "train: empty dataset");

  ModelParams params = init_params(cfg.seed, cfg.init_scale);
  ModelParams m = ModelParams::zeros(), v = ModelParams::zeros();
  // Shuffle stream is substream 1 of the seed; substream 0 is reserved
  // for weight init should the two ever need to be decoupled.
  Rng shuffle_rng = Rng::substream(cfg.seed, 1);

  TrainHistory history;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;

    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      ModelParams grads = ModelParams::zeros();
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = dataset[order[k]];
        LossGradResult r = loss_grad_params(params, s.image, s.mask, cfg.loss);
        batch_loss += r.value;
        const ModelParams& gd = r.grads;
        auto add = [](std::vector<double>& into, const std::vector<double>& from) {
          for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
        };
        add(grads.conv1_w, gd.conv1_w);
        add(grads.conv1_b, gd.conv1_b);
        add(grads.conv2_w, gd.conv2_w);
        add(grads.conv2_b, gd.conv2_b);
        add(grads.conv3_w, gd.conv3_w);
        add(grads.conv3_b, gd.conv3_b);
      }
      const double bsize = static_cast<double>(end - begin);
      batch_loss /= bsize;
      if (!std::isfinite(batch_loss)) {
        history.diverged = true;
        return {std::move(params), std::move(history)};
      }
      loss_sum += batch_loss;
      ++batches;

      // Adam step with bias correction.
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      auto update = [&](std::vector<double>& theta, std::vector<double>& mi,
                        std::vector<double>& vi, const std::vector<double>& gi) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double gscaled = gi[i] / bsize;
          mi[i] = cfg.adam_beta1 * mi[i] + (1.0 - cfg.adam_beta1) * gscaled;
          vi[i] = cfg.adam_beta2 * vi[i] + (1.0 - cfg.adam_beta2) * gscaled * gscaled;
          const double mhat = mi[i] / bc1;
          const double vhat = vi[i] / bc2;
          theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
      };
      update(params.conv1_w, m.conv1_w, v.conv1_w, grads.conv1_w);
      update(params.conv1_b, m.conv1_b, v.conv1_b, grads.conv1_b);
      update(params.conv2_w, m.conv2_w, v.conv2_w, grads.conv2_w);
      update(params.conv2_b, m.conv2_b, v.conv2_b, grads.conv2_b);
      update(params.conv3_w, m.conv3_w, v.conv3_w, grads.conv3_w);
      update(params.conv3_b, m.conv3_b, v.conv3_b, grads.conv3_b);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    rec.val_dice = mean_val_dice(params, val);
    rec.val_mean_fg_entropy = mean_val_fg_entropy(params, val);
    history.epochs.push_back(rec);
  }
  return {std::move(params), std::move(history)};
}

GridSearchResult lambda_grid_search(const std::vector<Sample>& train_set,
                                    const std::vector<Sample>& val_set,
                                    const TrainConfig& cfg,
                                    const std::vector<double>& grid) {
  if (grid.empty())
    throw Error(Errc::invalid_argument, "lambda_grid_search: empty grid");

  GridSearchResult result;
  bool have_best = false;
  double best_dice = -1.0, best_ece = 2.0;

  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    TrainConfig c = cfg;
    c.loss.lambda = grid[gi];
    auto [params, history] = train(train_set, val_set, c);

    LambdaReport rep;
    rep.lambda = grid[gi];
    rep.diverged = history.diverged;
    if (!history.diverged) {
      rep.val_dice = mean_val_dice(params, val_set);
      rep.val_mean_fg_entropy = mean_val_fg_entropy(params, val_set);
      // pooled voxel-level calibration over the validation split
      std::vector<double> probs;
      std::vector<int> labels;
      for (const auto& s : val_set) {
        ProbMap pm = forward(params, s.image);
        for (std::size_t i = 0; i < pm.size(); ++i) {
          probs.push_back(pm[i]);
          labels.push_back(s.mask[i] ? 1 : 0);
        }
      }
      rep.val_ece = probs.empty() ? 0.0 : ece(probs, labels).ece;

      const bool better =
          !have_best || rep.val_dice > best_dice + 1e-12 ||
          (std::abs(rep.val_dice - best_dice) <= 1e-12 && rep.val_ece < best_ece);
      if (better) {
        have_best = true;
        best_dice = rep.val_dice;
        best_ece = rep.val_ece;
        result.best_lambda = grid[gi];
        result.best_index = gi;
        result.best_params = params;
        result.best_history = history;
      }
    }
    result.reports.push_back(std::move(rep));
  }
  if (!have_best)
    throw Error(Errc::diverged, "lambda_grid_search: every lambda diverged");
  return result;
}

// Checkpoint ------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'E', 'S', 'E', 'G', 'C', 'K', '1'};
constexpr std::uint32_t kCkptVersion = 1;
const char* kArchTag = "tinyconv3d-8-8-1";

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  write_u64(os, u);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error(Errc::format, "checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw Error(Errc::format, "checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64(std::istream& is) {
  std::uint64_t u = read_u64(is);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

void write_tensor(std::ostream& os, const std::vector<double>& t) {
  write_u64(os, t.size());
  for (double v : t) write_f64(os, v);
}

void read_tensor(std::istream& is, std::vector<double>& t) {
  const std::uint64_t n = read_u64(is);
  if (n != t.size())
    throw Error(Errc::format, "checkpoint: tensor size mismatch");
  for (auto& v : t) v = read_f64(is);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const TrainConfig& cfg) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io, "checkpoint: cannot write " + path);

  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_u32(os, kCkptVersion);
  const std::uint32_t tag_len = static_cast<std::uint32_t>(std::strlen(kArchTag));
  write_u32(os, tag_len);
  os.write(kArchTag, tag_len);

  write_u32(os, static_cast<std::uint32_t>(cfg.loss.seg_kind));
  write_u32(os, static_cast<std::uint32_t>(cfg.loss.reg_kind));
  write_f64(os, cfg.loss.lambda);
  write_f64(os, cfg.loss.clamp_eps);
  write_u32(os, static_cast<std::uint32_t>(cfg.loss.reduction));
  write_f64(os, cfg.learning_rate);
  write_f64(os, cfg.adam_beta1);
  write_f64(os, cfg.adam_beta2);
  write_f64(os, cfg.adam_eps);
  write_u32(os, static_cast<std::uint32_t>(cfg.epochs));
  write_u32(os, static_cast<std::uint32_t>(cfg.batch_size));
  write_u64(os, cfg.seed);
  write_f64(os, cfg.init_scale);

  params.for_each_tensor([&](const std::vector<double>& t) { write_tensor(os, t); });
  if (!os) throw Error(Errc::io, "checkpoint: write failed for " + path);
}

std::pair<ModelParams, TrainConfig> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io, "checkpoint: cannot open " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw Error(Errc::format, "checkpoint: bad magic");
  if (read_u32(is) != kCkptVersion)
    throw Error(Errc::format, "checkpoint: unsupported version");
  const std::uint32_t tag_len = read_u32(is);
  std::string tag(tag_len, '\0');
  is.read(tag.data(), tag_len);
  if (!is || tag != kArchTag)
    throw Error(Errc::format, "checkpoint: unknown architecture tag");

  TrainConfig cfg;
  cfg.loss.seg_kind = static_cast<SegKind>(read_u32(is));
  cfg.loss.reg_kind = static_cast<RegKind>(read_u32(is));
  cfg.loss.lambda = read_f64(is);
  cfg.loss.clamp_eps = read_f64(is);
  cfg.loss.reduction = static_cast<LossSpec::Reduction>(read_u32(is));
  cfg.learning_rate = read_f64(is);
  cfg.adam_beta1 = read_f64(is);
  cfg.adam_beta2 = read_f64(is);
  cfg.adam_eps = read_f64(is);
  cfg.epochs = static_cast<int>(read_u32(is));
  cfg.batch_size = static_cast<int>(read_u32(is));
  cfg.seed = read_u64(is);
  cfg.init_scale = read_f64(is);

  ModelParams params = ModelParams::zeros();
  params.for_each_tensor([&](std::vector<double>& t) { read_tensor(is, t); });
  return {std::move(params), cfg};
}

}  // namespace meseg
