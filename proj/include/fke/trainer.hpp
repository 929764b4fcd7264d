#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fke/concept_model.hpp"

namespace fke {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { kMomentum, kAdam };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::kMomentum;
  // Learning rate for the transition scores; <= 0 reuses learning_rate.
  double noise_learning_rate = 0;
  double lambda_weak = 1.0;
  double trace_weight = 0.0;
  bool noise_layer = true;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 5.0;
  // L2 penalty on model parameters (not transition scores), added to the gradient.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  // Model shape used when a trainer builds a fresh model.
  ModelDims dims;
  EncoderMode mode = EncoderMode::kContextual;

  void validate() const;
  LossOptions loss_options() const { return {lambda_weak, trace_weight, noise_layer}; }

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, std::vector<ad::Parameter*> model_params,
            std::vector<ad::Parameter*> noise_params);

  void zero_grad();
  // Applies one update from the accumulated gradients; returns the
  // pre-clip global gradient norm.
  double step();

 private:
  struct Slot {
    ad::Parameter* param;
    double lr;
    double decay;
    std::vector<double> m, v;
  };
  TrainConfig config_;
  std::vector<Slot> slots_;
  std::size_t steps_ = 0;
};

struct StepResult {
  double loss = 0;
  double clean_ce = 0;
  double weak_ce = 0;
  double grad_norm = 0;
};

// Reverse-mode pass over the batch loss followed by one optimizer update.
// Throws TrainingError when the loss is not finite.
StepResult backward_and_step(ConceptModel& model, NoiseModel& noise,
                             std::span<const LabeledPost* const> batch, const TrainConfig& config,
                             Optimizer& optimizer);

// Accuracy per task (occasion, category, attributes...) against the given labels.
struct TaskAccuracy {
  std::vector<double> per_task;
  double mean() const;
};

TaskAccuracy evaluate(const ConceptModel& model, std::span<const LabeledPost> posts);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double clean_ce = 0;
  double weak_ce = 0;
  TaskAccuracy heldout;  // empty when no held-out set is given
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

// Each epoch visits the clean set once in batches of batch_size; the weak set
// is spread evenly over the same number of steps. Clean and weak orders are
// shuffled by independent streams derived from the seed.
TrainResult train(ConceptModel& model, NoiseModel& noise, std::span<const LabeledPost> clean,
                  std::span<const LabeledPost> weak, const TrainConfig& config,
                  std::span<const LabeledPost> heldout = {});

}  // namespace fke
