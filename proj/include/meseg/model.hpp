#ifndef MESEG_MODEL_HPP
#define MESEG_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meseg/losses.hpp"
#include "meseg/volume.hpp"

namespace meseg {

// Fixed fully-convolutional architecture:
//   conv 3x3x3 (1 -> 8) + ReLU
//   conv 3x3x3 (8 -> 8) + ReLU
//   conv 1x1x1 (8 -> 1) + sigmoid
// Zero padding everywhere, so output dims equal input dims. On nz == 1
// grids the z taps fall into the padding and the kernels act as 3x3.
struct ModelParams {
  static constexpr int kChannels = 8;
  static constexpr int kKernel = 27;  // 3x3x3, index kx + 3*(ky + 3*kz)

  std::vector<double> conv1_w;  // [kChannels][kKernel]
  std::vector<double> conv1_b;  // [kChannels]
  std::vector<double> conv2_w;  // [kChannels][kChannels][kKernel]
  std::vector<double> conv2_b;  // [kChannels]
  std::vector<double> conv3_w;  // [kChannels]
  std::vector<double> conv3_b;  // [1]

  static ModelParams zeros();
  std::size_t num_params() const;
  bool all_finite() const;

  // Applies f to each tensor; the visit order is the field order above,
  // which is also the checkpoint serialization order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f(conv1_w); f(conv1_b); f(conv2_w); f(conv2_b); f(conv3_w); f(conv3_b);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f(conv1_w); f(conv1_b); f(conv2_w); f(conv2_b); f(conv3_w); f(conv3_b);
  }
};

struct TrainConfig {
  LossSpec loss;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  double init_scale = 1.0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  std::optional<double> val_mean_fg_entropy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
};

struct Sample {
  Volume image;
  BinaryMask mask;
};

// Weights drawn from Rng(seed) in storage order, scaled by
// init_scale / sqrt(fan_in); biases zero. Same seed, same params.
ModelParams init_params(std::uint64_t seed, double init_scale = 1.0);

// Deterministic forward pass; throws on non-finite intermediates.
ProbMap forward(const ModelParams& params, const Volume& x);

struct LossGradResult {
  double value = 0.0;
  ModelParams grads;
  ProbMap prediction;
};

// Loss value and the gradient w.r.t. every weight and bias, by manual
// backpropagation of the per-voxel gradient from combined_loss.
LossGradResult loss_grad_params(const ModelParams& params, const Volume& x,
                                const BinaryMask& gt, const LossSpec& spec);

// Adam over whole-image batches. Shuffling and accumulation order are
// fixed by cfg.seed, so the result is bit-reproducible. On a non-finite
// batch loss training stops and the history is returned with
// diverged = true.
std::pair<ModelParams, TrainHistory> train(const std::vector<Sample>& dataset,
                                           const std::vector<Sample>& val,
                                           const TrainConfig& cfg);

struct LambdaReport {
  double lambda = 0.0;
  double val_dice = 0.0;
  double val_ece = 0.0;
  std::optional<double> val_mean_fg_entropy;
  bool diverged = false;
};

struct GridSearchResult {
  double best_lambda = 0.0;
  std::size_t best_index = 0;
  std::vector<LambdaReport> reports;
  ModelParams best_params;
  TrainHistory best_history;
};

// Trains one model per lambda and selects the best validation Dice;
// exact Dice ties go to the lower validation ECE.
GridSearchResult lambda_grid_search(const std::vector<Sample>& train_set,
                                    const std::vector<Sample>& val_set,
                                    const TrainConfig& cfg,
                                    const std::vector<double>& grid);

// Checkpoint container: versioned binary file holding the architecture
// tag, the TrainConfig and all weights; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const TrainConfig& cfg);
std::pair<ModelParams, TrainConfig> load_checkpoint(const std::string& path);

}  // namespace meseg

#endif
