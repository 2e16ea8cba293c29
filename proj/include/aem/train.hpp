#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "aem/data.hpp"
#include "aem/losses.hpp"
#include "aem/model.hpp"

namespace aem::train {

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Index warmup_steps = 0;
};

/// Linear warmup over warmup_steps, then cosine decay to 0 at total_steps.
/// `step` is 0-based.
double learning_rate(const OptimizerConfig& cfg, Index step, Index total_steps);

/// Adaptive-moment optimizer with bias correction. Moments accumulate in
/// double and are keyed by parameter name.
template <typename T>
class Adam {
 public:
  explicit Adam(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the current gradients; parameters without a
  /// gradient are left alone.
  void step(ParameterSet<T>& params, double lr);
  Index steps_taken() const { return t_; }

  std::vector<std::uint8_t> state_bytes() const;
  void load_state(const std::vector<std::uint8_t>& bytes);

 private:
  OptimizerConfig cfg_;
  Index t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainConfig {
  Index patch_size = 64;
  Index steps = 300;
  Index batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  bool augment = false;
  data::AugmentConfig augmentation;
  loss::LossConfig loss;

  void validate() const;
};

struct StepRecord {
  Index step = 0;
  double lr = 0;
  double total = 0, l1 = 0, charbonnier = 0, laplacian = 0;
  bool operator==(const StepRecord&) const = default;
};

inline constexpr const char* kLossLogHeader = "step,lr,total,l1,charbonnier,laplacian";
std::string format_step(const StepRecord& r);

/// Sample order: position p = step * batch + b walks epoch e = p / n through a
/// permutation seeded by (seed, e). Depends only on its arguments.
std::vector<Index> batch_indices(std::uint64_t seed, Index step, Index batch, Index n);

/// One training run over float weights. Every step is a pure function of the
/// weights, optimizer state, step counter and config, so a restored trainer
/// continues exactly where the saved one stopped.
class Trainer {
 public:
  Trainer(ModelWeights<float>& weights, std::vector<data::CompositeSample> samples, TrainConfig cfg);

  /// Runs one step. Throws NumericError (and leaves the weights untouched)
  /// when the loss or any gradient is not finite.
  StepRecord step();
  Index current_step() const { return step_; }
  bool done() const { return step_ >= cfg_.steps; }
  const TrainConfig& config() const { return cfg_; }

  /// Tagged checkpoint sections holding the step counter and optimizer state.
  std::vector<CheckpointSection> state_sections() const;
  /// Throws CheckpointError when the sections are absent or malformed.
  void restore(const std::vector<CheckpointSection>& sections);

 private:
  ModelWeights<float>* weights_;
  std::vector<data::CompositeSample> samples_;
  TrainConfig cfg_;
  Adam<float> adam_;
  Index step_ = 0;
};

/// Stacks samples into model-ready tensors.
struct Batch {
  Tensor<float> image, trimap, alpha;
};
Batch make_batch(const std::vector<data::CompositeSample>& samples);

/// Clipped alpha prediction for a single image, no gradient recording.
Plane predict(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap);

}  // namespace aem::train
