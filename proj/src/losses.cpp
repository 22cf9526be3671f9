#include "meseg/losses.hpp"

#include <cmath>

namespace meseg {

namespace {

constexpr double kLn2 = 0.6931471805599453;

inline double clamp_prob(double p, double eps) {
  return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
}

inline double log2_(double x) { return std::log2(x); }

// Reduction divisor: total voxel count for mean, 1 for sum.
inline double divisor(const LossSpec& spec, std::size_t n) {
  return spec.reduction == LossSpec::Reduction::mean
             ? static_cast<double>(n)
             : 1.0;
}

}  // namespace

void LossSpec::validate() const {
  if (lambda < 0.0)
    throw Error(Errc::invalid_argument, "LossSpec: lambda must be >= 0");
  if (!(clamp_eps > 0.0) || !(clamp_eps < 0.5))
    throw Error(Errc::invalid_argument,
                "LossSpec: clamp_eps must be in (0, 0.5)");
}

double binary_entropy(double p) {
  if (p < 0.0 || p > 1.0)
    throw Error(Errc::invalid_argument, "binary_entropy: p outside [0,1]");
  double h = 0.0;
  if (p > 0.0) h -= p * log2_(p);
  if (p < 1.0) h -= (1.0 - p) * log2_(1.0 - p);
  return h;
}

Volume entropy_map(const ProbMap& y) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = binary_entropy(y[i]);
  return Volume(y.dim(), y.spacing(), std::move(out));
}

BinaryMask error_mask(const ProbMap& y, const BinaryMask& gt, double t) {
  require_same_dims(y.dim(), gt.dim(), "error_mask");
  BinaryMask pred = threshold(y, t);
  std::vector<std::uint8_t> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = pred[i] != gt[i] ? 1 : 0;
  return BinaryMask(y.dim(), y.spacing(), std::move(out));
}

LossEval cross_entropy(const ProbMap& y, const BinaryMask& gt,
                       const LossSpec& spec) {
  require_same_dims(y.dim(), gt.dim(), "cross_entropy");
  spec.validate();
  const double div = divisor(spec, y.size());
  double value = 0.0;
  std::vector<double> grad(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = clamp_prob(y[i], spec.clamp_eps);
    const double label = gt[i] ? 1.0 : 0.0;
    value -= label * log2_(p) + (1.0 - label) * log2_(1.0 - p);
    // d/dy of -[gt log2 y + (1-gt) log2(1-y)]; the 1/ln2 keeps the
    // gradient consistent with the base-2 value.
    grad[i] = (-label / p + (1.0 - label) / (1.0 - p)) / (kLn2 * div);
  }
  return {value / div, Volume(y.dim(), y.spacing(), std::move(grad))};
}

LossEval soft_dice(const ProbMap& y, const BinaryMask& gt,
                   const LossSpec& spec) {
  require_same_dims(y.dim(), gt.dim(), "soft_dice");
  spec.validate();
  constexpr double s = 1.0;
  double inter = 0.0, sum_y = 0.0, sum_gt = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double label = gt[i] ? 1.0 : 0.0;
    inter += y[i] * label;
    sum_y += y[i];
    sum_gt += label;
  }
  const double num = 2.0 * inter + s;
  const double den = sum_y + sum_gt + s;
  std::vector<double> grad(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double label = gt[i] ? 1.0 : 0.0;
    grad[i] = -(2.0 * label * den - num) / (den * den);
  }
  return {1.0 - num / den, Volume(y.dim(), y.spacing(), std::move(grad))};
}

namespace {

// Shared body of meall/meep: negative binary entropy over the voxels
// selected by `wrong` (all voxels when null).
LossEval neg_entropy(const ProbMap& y, const BinaryMask* wrong,
                     const LossSpec& spec) {
  const double div = divisor(spec, y.size());
  double value = 0.0;
  std::vector<double> grad(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (wrong && !(*wrong)[i]) continue;
    const double p = clamp_prob(y[i], spec.clamp_eps);
    value -= binary_entropy(p);
    grad[i] = log2_(p / (1.0 - p)) / div;
  }
  return {value / div, Volume(y.dim(), y.spacing(), std::move(grad))};
}

}  // namespace

LossEval reg_meall(const ProbMap& y, const LossSpec& spec) {
  spec.validate();
  return neg_entropy(y, nullptr, spec);
}

LossEval reg_meep(const ProbMap& y, const BinaryMask& wrong,
                  const LossSpec& spec) {
  require_same_dims(y.dim(), wrong.dim(), "reg_meep");
  spec.validate();
  return neg_entropy(y, &wrong, spec);
}

double kl_uniform_to_bernoulli(double y, double clamp_eps) {
  const double p = clamp_prob(y, clamp_eps);
  return -1.0 - 0.5 * log2_(p * (1.0 - p));
}

LossEval reg_kl(const ProbMap& y, const BinaryMask& wrong,
                const LossSpec& spec) {
  require_same_dims(y.dim(), wrong.dim(), "reg_kl");
  spec.validate();
  const double div = divisor(spec, y.size());
  double value = 0.0;
  std::vector<double> grad(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!wrong[i]) continue;
    const double p = clamp_prob(y[i], spec.clamp_eps);
    value += kl_uniform_to_bernoulli(p, spec.clamp_eps);
    grad[i] = 0.5 * (1.0 / (1.0 - p) - 1.0 / p) / (kLn2 * div);
  }
  return {value / div, Volume(y.dim(), y.spacing(), std::move(grad))};
}

LossEval combined_loss(const ProbMap& y, const BinaryMask& gt,
                       const LossSpec& spec) {
  require_same_dims(y.dim(), gt.dim(), "combined_loss");
  spec.validate();

  LossEval data = spec.seg_kind == SegKind::cross_entropy
                      ? cross_entropy(y, gt, spec)
                      : soft_dice(y, gt, spec);
  if (spec.reg_kind == RegKind::none || spec.lambda == 0.0) return data;

  LossEval reg = [&] {
    switch (spec.reg_kind) {
      case RegKind::meall:
        return reg_meall(y, spec);
      case RegKind::meep:
        return reg_meep(y, error_mask(y, gt), spec);
      default:
        return reg_kl(y, error_mask(y, gt), spec);
    }
  }();

  std::vector<double> grad(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    grad[i] = data.grad[i] + spec.lambda * reg.grad[i];
  return {data.value + spec.lambda * reg.value,
          Volume(y.dim(), y.spacing(), std::move(grad))};
}

const char* to_string(SegKind k) {
  return k == SegKind::cross_entropy ? "cross_entropy" : "soft_dice";
}

const char* to_string(RegKind k) {
  switch (k) {
    case RegKind::none: return "none";
    case RegKind::meall: return "meall";
    case RegKind::meep: return "meep";
    default: return "kl";
  }
}

}  // namespace meseg
