#include "fke/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fke {
namespace {

constexpr std::uint64_t kWeakStream = 0x9e3779b97f4a7c15ULL;

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "momentum"; }

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw TrainingError("epochs must be positive");
  if (batch_size == 0) throw TrainingError("batch_size must be positive");
  if (!(learning_rate >= 0)) throw TrainingError("learning_rate must be non-negative");
  if (!(lambda_weak >= 0)) throw TrainingError("lambda_weak must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw TrainingError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw TrainingError("weight_decay must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"optimizer", to_string(optimizer)},
          {"noise_learning_rate", noise_learning_rate},
          {"lambda_weak", lambda_weak},
          {"trace_weight", trace_weight},
          {"noise_layer", noise_layer},
          {"clip_norm", clip_norm},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"context", mode == EncoderMode::kContextual},
          {"dims",
           {{"garment_hidden", dims.garment_hidden},
            {"slot_hidden", dims.slot_hidden},
            {"slot_embedding", dims.slot_embedding}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    const auto opt = j.value("optimizer", std::string("momentum"));
    if (opt == "adam") {
      c.optimizer = OptimizerKind::kAdam;
    } else if (opt == "momentum") {
      c.optimizer = OptimizerKind::kMomentum;
    } else {
      throw TrainingError("unknown optimizer '" + opt + "'");
    }
    c.noise_learning_rate = j.value("noise_learning_rate", c.noise_learning_rate);
    c.lambda_weak = j.value("lambda_weak", c.lambda_weak);
    c.trace_weight = j.value("trace_weight", c.trace_weight);
    c.noise_layer = j.value("noise_layer", c.noise_layer);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.mode = j.value("context", true) ? EncoderMode::kContextual : EncoderMode::kNoContext;
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      c.dims.garment_hidden = d.value("garment_hidden", c.dims.garment_hidden);
      c.dims.slot_hidden = d.value("slot_hidden", c.dims.slot_hidden);
      c.dims.slot_embedding = d.value("slot_embedding", c.dims.slot_embedding);
    }
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

Optimizer::Optimizer(const TrainConfig& config, std::vector<ad::Parameter*> model_params,
                     std::vector<ad::Parameter*> noise_params)
    : config_(config) {
  const double noise_lr = config.noise_learning_rate > 0 ? config.noise_learning_rate : config.learning_rate;
  for (auto* p : model_params) slots_.push_back({p, config.learning_rate, config.weight_decay, {}, {}});
  for (auto* p : noise_params) slots_.push_back({p, noise_lr, 0.0, {}, {}});
  for (auto& s : slots_) {
    s.m.assign(s.param->value.size(), 0.0);
    if (config.optimizer == OptimizerKind::kAdam) s.v.assign(s.param->value.size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& s : slots_) s.param->zero_grad();
}

double Optimizer::step() {
  double sq = 0.0;
  for (const auto& s : slots_)
    for (double g : s.param->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
  ++steps_;
  for (auto& s : slots_) {
    auto& value = s.param->value.data;
    const auto& grad = s.param->grad;
    if (config_.optimizer == OptimizerKind::kMomentum) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        s.m[i] = config_.momentum * s.m[i] + clip * grad[i] + s.decay * value[i];
        value[i] -= s.lr * s.m[i];
      }
    } else {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = clip * grad[i] + s.decay * value[i];
        s.m[i] = b1 * s.m[i] + (1 - b1) * g;
        s.v[i] = b2 * s.v[i] + (1 - b2) * g * g;
        value[i] -= s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
      }
    }
  }
  return norm;
}

StepResult backward_and_step(ConceptModel& model, NoiseModel& noise,
                             std::span<const LabeledPost* const> batch, const TrainConfig& config,
                             Optimizer& optimizer) {
  optimizer.zero_grad();
  ad::Tape tape;
  const LossTerms terms = build_loss(tape, model, noise, batch, config.loss_options());
  StepResult r;
  r.loss = tape.scalar(terms.total);
  r.clean_ce = terms.clean_ce;
  r.weak_ce = terms.weak_ce;
  if (!std::isfinite(r.loss))
    throw TrainingError("non-finite loss (" + std::to_string(r.loss) + ") with clean CE " +
                        std::to_string(r.clean_ce) + ", weak CE " + std::to_string(r.weak_ce) +
                        " over " + std::to_string(batch.size()) + " posts");
  tape.backward(terms.total);
  r.grad_norm = optimizer.step();
  return r;
}

double TaskAccuracy::mean() const {
  if (per_task.empty()) return 0.0;
  return std::accumulate(per_task.begin(), per_task.end(), 0.0) / static_cast<double>(per_task.size());
}

TaskAccuracy evaluate(const ConceptModel& model, std::span<const LabeledPost> posts) {
  const auto& vocab = model.vocabulary();
  std::vector<std::size_t> correct(vocab.num_tasks(), 0), total(vocab.num_tasks(), 0);
  for (const auto& lp : posts) {
    if (lp.post.garments.empty()) continue;
    const EncodedLabels labels = encode_labels(vocab, lp.labels);
    const DecodedPrediction d = decode(model.forward(lp.post));
    ++total[0];
    correct[0] += d.occasion == labels.occasion;
    for (std::size_t g = 0; g < d.garments.size(); ++g) {
      ++total[1];
      correct[1] += d.garments[g].category == labels.garments[g][0];
      for (std::size_t a = 0; a < d.garments[g].attributes.size(); ++a) {
        ++total[2 + a];
        correct[2 + a] += d.garments[g].attributes[a] == labels.garments[g][1 + a];
      }
    }
  }
  TaskAccuracy acc;
  for (std::size_t k = 0; k < total.size(); ++k)
    acc.per_task.push_back(total[k] ? static_cast<double>(correct[k]) / static_cast<double>(total[k]) : 0.0);
  return acc;
}

TrainResult train(ConceptModel& model, NoiseModel& noise, std::span<const LabeledPost> clean,
                  std::span<const LabeledPost> weak, const TrainConfig& config,
                  std::span<const LabeledPost> heldout) {
  config.validate();
  std::vector<const LabeledPost*> clean_set, weak_set;
  for (const auto& lp : clean)
    if (!lp.post.garments.empty()) clean_set.push_back(&lp);
  for (const auto& lp : weak)
    if (!lp.post.garments.empty()) weak_set.push_back(&lp);
  if (clean_set.empty()) throw TrainingError("training needs a non-empty clean set");

  Optimizer optimizer(config, model.parameters(), noise.parameters());
  std::mt19937_64 clean_rng(config.seed);
  std::mt19937_64 weak_rng(config.seed ^ kWeakStream);

  const std::size_t steps = (clean_set.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t weak_batch = (weak_set.size() + steps - 1) / steps;

  TrainResult result;
  std::vector<const LabeledPost*> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(clean_set.begin(), clean_set.end(), clean_rng);
    std::shuffle(weak_set.begin(), weak_set.end(), weak_rng);
    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      batch.clear();
      const std::size_t c0 = s * config.batch_size;
      const std::size_t c1 = std::min(clean_set.size(), c0 + config.batch_size);
      batch.insert(batch.end(), clean_set.begin() + static_cast<std::ptrdiff_t>(c0),
                   clean_set.begin() + static_cast<std::ptrdiff_t>(c1));
      const std::size_t w0 = std::min(weak_set.size(), s * weak_batch);
      const std::size_t w1 = std::min(weak_set.size(), w0 + weak_batch);
      batch.insert(batch.end(), weak_set.begin() + static_cast<std::ptrdiff_t>(w0),
                   weak_set.begin() + static_cast<std::ptrdiff_t>(w1));
      const StepResult r = backward_and_step(model, noise, batch, config, optimizer);
      m.loss += r.loss;
      m.clean_ce += r.clean_ce;
      m.weak_ce += r.weak_ce;
    }
    m.loss /= static_cast<double>(steps);
    m.clean_ce /= static_cast<double>(steps);
    m.weak_ce /= static_cast<double>(steps);
    if (!heldout.empty()) m.heldout = evaluate(model, heldout);
    result.history.push_back(std::move(m));
  }
  return result;
}

}  // namespace fke
