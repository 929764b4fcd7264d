#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fke/corpus.hpp"

namespace fke {

class FilterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FilterThresholds {
  double max_face_body_ratio = 0.2;
  double min_body_image_ratio = 0.5;
  double ad_threshold = 0.5;

  void validate() const;
};

enum class DropReason { kNone, kNoFaceBodyPair, kRatioViolation, kAdLike };

std::string_view to_string(DropReason r);

struct FilterOutcome {
  bool keep = false;
  DropReason reason = DropReason::kNone;
  std::vector<PersonPair> pairs;  // kept posts only
  double ad_score = 0;
};

// Fraction of the face area inside the body box; zero unless the face
// centre lies within the top 40% of the body box height.
double pair_score(const BoundingBox& face, const BoundingBox& body);

// Greedy one-to-one matching by descending pair_score. Ties go to the lower
// face index, then the lower body index. Zero-score pairs and pairs whose
// face is taller than the body are never emitted.
std::vector<PersonPair> pair_faces_bodies(std::span<const Detection> faces,
                                          std::span<const Detection> bodies);

// Strict inequalities: face/body < max_face_body_ratio and body/image > min_body_image_ratio.
bool ratio_check(const PersonPair& pair, double image_height, const FilterThresholds& t);

using AdFeatureFn = std::function<std::vector<double>(const Post&)>;

// text density, hashtag count, engagement ratio, face-area fraction, body coverage.
std::vector<double> default_ad_features(const Post& post);
inline constexpr std::size_t kDefaultAdFeatures = 5;

struct AdClassifier {
  std::vector<double> weights;
  double bias = 0;
  AdFeatureFn features = default_ad_features;

  double score(const Post& post) const;

  nlohmann::json to_json() const;
  static AdClassifier from_json(const nlohmann::json& j);
};

// Hand-set weights that separate promotional posts (long captions, many
// hashtags, little visible person) from personal ones.
AdClassifier default_ad_classifier();

double ad_score(const Post& post, const AdClassifier& clf);

struct AdExample {
  Post post;
  bool is_ad = false;
};

struct AdTrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.5;
  // 0 means full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

struct AdTrainResult {
  AdClassifier classifier;
  double train_accuracy = 0;
  double holdout_accuracy = 0;  // NaN when the holdout set is empty
};

// Logistic-loss gradient descent from zero weights. Throws FilterError when
// the training set lacks either class.
AdTrainResult train_ad_classifier(std::span<const AdExample> train,
                                  std::span<const AdExample> holdout, const AdTrainConfig& config,
                                  const AdFeatureFn& features = default_ad_features);

// Assigns a gender to a kept pair. The default reads the post's gender_hint.
using GenderHook = std::function<std::optional<Gender>(const Post&, const PersonPair&)>;

FilterOutcome run_filters(const Post& post, const FilterThresholds& t, const AdClassifier& clf,
                          const GenderHook& gender = {});

struct FilterReport {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t no_face_body_pair = 0;
  std::size_t ratio_violation = 0;
  std::size_t ad_like = 0;

  void add(const FilterOutcome& o);
  nlohmann::json to_json() const;
};

}  // namespace fke
