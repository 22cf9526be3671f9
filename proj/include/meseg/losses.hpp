#ifndef MESEG_LOSSES_HPP
#define MESEG_LOSSES_HPP

#include <string>

#include "meseg/volume.hpp"

namespace meseg {

enum class SegKind { cross_entropy, soft_dice };
enum class RegKind { none, meall, meep, kl };

// Full description of a training loss: data term, entropy regularizer and
// its weight. Every log in every term is base 2, so all entropy-flavored
// quantities are in bits and lambda means the same thing for each
// regularizer. With reduction == mean, per-voxel sums are divided by the
// total voxel count n (also for the masked regularizers, so an empty error
// mask contributes exactly 0 and lambda stays comparable across grids).
struct LossSpec {
  SegKind seg_kind = SegKind::cross_entropy;
  RegKind reg_kind = RegKind::none;
  double lambda = 0.0;
  double clamp_eps = 1e-6;  // probabilities are clamped to [eps, 1-eps]
  enum class Reduction { sum, mean } reduction = Reduction::mean;

  void validate() const;
};

// Scalar loss plus the per-voxel gradient dL/dy_i.
struct LossEval {
  double value = 0.0;
  Volume grad;
};

// H_b(p) = -p log2 p - (1-p) log2(1-p), in bits, with 0 log 0 := 0.
double binary_entropy(double p);

// Per-voxel H_b of a probability map.
Volume entropy_map(const ProbMap& y);

// Voxels where the thresholded prediction disagrees with the ground truth.
BinaryMask error_mask(const ProbMap& y, const BinaryMask& gt, double t = 0.5);

// Data terms ----------------------------------------------------------------

// Binary cross entropy in bits:
//   per voxel -[gt_i log2 y_i + (1-gt_i) log2(1-y_i)], y clamped first.
LossEval cross_entropy(const ProbMap& y, const BinaryMask& gt,
                       const LossSpec& spec);

// Soft Dice loss 1 - (2*sum(y*gt) + s) / (sum(y) + sum(gt) + s), s = 1.
// Already normalized, so the reduction setting does not apply.
LossEval soft_dice(const ProbMap& y, const BinaryMask& gt,
                   const LossSpec& spec);

// Regularizers ---------------------------------------------------------------

// Confidence penalty over all voxels: -H_b(y_i) summed/averaged.
// d/dy of -H_b(y) is log2(y / (1-y)), zero exactly at y = 0.5.
LossEval reg_meall(const ProbMap& y, const LossSpec& spec);

// Same penalty restricted to the error set. The mask is treated as a
// constant: no gradient flows through its construction.
LossEval reg_meep(const ProbMap& y, const BinaryMask& wrong,
                  const LossSpec& spec);

// KL divergence from the uniform Bernoulli to the prediction, per wrong
// voxel: D_KL(Q || Bern(y)) = -1 - 0.5*log2(y(1-y)) bits. Added with
// positive sign so minimizing the total loss drives wrong voxels toward
// y = 0.5. Mask is a constant, as in reg_meep.
LossEval reg_kl(const ProbMap& y, const BinaryMask& wrong,
                const LossSpec& spec);

// Closed form of the per-voxel KL term above, exposed for analysis code.
double kl_uniform_to_bernoulli(double y, double clamp_eps = 1e-6);

// Combined loss --------------------------------------------------------------

// Data term plus lambda times the selected regularizer. For meep/kl the
// error mask is recomputed from the current y at threshold 0.5. With
// lambda == 0 or reg == none the result is bit-identical to the data term.
LossEval combined_loss(const ProbMap& y, const BinaryMask& gt,
                       const LossSpec& spec);

const char* to_string(SegKind k);
const char* to_string(RegKind k);

}  // namespace meseg

#endif
