#ifndef MESEG_SYNTH_HPP
#define MESEG_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "meseg/volume.hpp"

namespace meseg {

// Parameters of the seeded lesion-image generator. Images are a two-level
// background/foreground painting (axis-aligned ellipsoidal lesions), then
// optional Gaussian blur, then additive Gaussian noise. The ground-truth
// mask is the pre-blur, pre-noise lesion mask.
struct SynthConfig {
  Dim3 dim{48, 48, 1};
  Spacing spacing{5.0, 5.0, 2.0};
  int min_lesions = 1;
  int max_lesions = 4;
  double min_radius = 3.0;  // semi-axis range, in voxels
  double max_radius = 8.0;
  double fg_mean = 0.8;
  double bg_mean = 0.2;
  double noise_sigma = 0.05;
  double blur_sigma = 0.0;
  std::uint64_t seed = 0;

  // Throws Errc::invalid_argument on bad ranges or lesions that cannot
  // fit inside the grid (impossible geometry).
  void validate() const;
};

// Parametric intensity shift standing in for an acquisition change:
//   out = gain * clamp_01(v)^gamma + offset, then extra blur, then noise.
struct ShiftParams {
  double gain = 1.0;
  double offset = 0.0;
  double gamma = 1.0;
  double noise_sigma = 0.0;
  double blur_delta = 0.0;

  void validate() const;  // gain > 0, gamma > 0, sigmas/blur >= 0
  bool is_identity() const;

  // Fixed out-of-distribution recipe used by the shipped experiments so
  // results are comparable across runs.
  static ShiftParams ood_preset();  // gain 1.3, offset 0.1, gamma 0.8, +0.05 noise
};

struct SynthSample {
  Volume image;
  BinaryMask mask;
};

// Sample `index` of the stream rooted at cfg.seed. Distinct indices use
// independent substreams, so samples may be produced in any order.
SynthSample synth_generate_one(const SynthConfig& cfg, std::uint64_t index);

// Samples 0..n-1 in order.
std::vector<SynthSample> synth_generate(const SynthConfig& cfg, int n);

// Applies the shift deterministically under `seed` (only consumed when
// noise_sigma > 0). Identity parameters return the input bit-identically.
Volume apply_domain_shift(const Volume& v, const ShiftParams& s,
                          std::uint64_t seed);

// Separable Gaussian blur with sigma in voxel units, kernel truncated at
// 3 sigma and renormalized at the borders (constant inputs stay constant).
// sigma <= 0 is the identity.
Volume gaussian_blur(const Volume& v, double sigma);

}  // namespace meseg

#endif
