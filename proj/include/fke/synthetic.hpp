#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fke/corpus.hpp"
#include "fke/vocab.hpp"

namespace fke {

using Matrix = std::vector<std::vector<double>>;

class SyntheticConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// What a synthetic post was built to trip in the filter stage.
enum class PlantedDefect { kNone, kNoFaceBodyPair, kRatioViolation, kAdLike };

std::string_view to_string(PlantedDefect d);

struct SyntheticConfig {
  std::size_t n_posts = 0;
  ConceptVocabulary vocabulary;

  std::vector<double> occasion_marginals;                      // [occasion]
  std::vector<double> garment_count_probs;                     // [k] = P(k + 1 garments)
  Matrix category_given_occasion;                              // [occasion][category]
  std::vector<Matrix> value_given_category;                    // [attribute][category][value]

  std::size_t image_dim = 64;
  std::size_t region_dim = 64;
  double feature_noise_sigma = 0.35;
  // Scale of the occasion prototype inside the image feature.
  double image_signal = 0.3;
  // Scale of each attribute-value prototype inside a garment feature.
  double attribute_signal = 0.6;

  double weak_fraction = 0.0;
  // Per task (occasion, category, attributes...). Empty means no corruption.
  std::vector<Matrix> transitions;

  double no_pair_fraction = 0.0;
  double ratio_violation_fraction = 0.0;
  double ad_fraction = 0.0;
  // Posts whose hashtags carry no occasion tag.
  double untagged_fraction = 0.0;
  // Probability that a garment region carries its true category as rough_category.
  double rough_category_rate = 0.0;
  std::map<std::string, std::vector<std::string>> occasion_hashtags;

  // Prototype vectors are drawn from world_seed, everything else from seed,
  // so corpora generated with different seeds share one feature space.
  std::uint64_t world_seed = 1234;
  std::uint64_t seed = 0;
  std::string id_prefix = "p";

  // Throws SyntheticConfigError.
  void validate() const;
};

// Planted structure with fixed arithmetic (no randomness): each occasion
// favours three categories, each category favours two values per attribute.
SyntheticConfig default_synthetic_config(const ConceptVocabulary& vocab, std::size_t n_posts,
                                         std::uint64_t seed);

// Row i moves `off_mass` of class i to class (i + 1) mod n.
Matrix pair_flip_transition(std::size_t n, double off_mass);
// Row i spreads `off_mass` uniformly over the other classes.
Matrix uniform_transition(std::size_t n, double off_mass);
Matrix identity_matrix(std::size_t n);

struct SyntheticTruth {
  std::vector<PostLabels> true_labels;  // parallel to the corpus
  std::vector<PlantedDefect> defects;   // parallel to the corpus
  std::vector<Matrix> transitions;      // planted, per task (empty when none)
  // confusion[task][true][emitted], counted over weak posts.
  std::vector<std::vector<std::vector<std::size_t>>> confusion;

  nlohmann::json to_json(const ConceptVocabulary& vocab) const;
  static SyntheticTruth from_json(const nlohmann::json& j, const ConceptVocabulary& vocab);
};

struct SyntheticCorpus {
  std::vector<LabeledPost> posts;
  SyntheticTruth truth;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

// Draws an index from a probability row.
std::size_t sample_row(std::mt19937_64& rng, const std::vector<double>& row);

nlohmann::json synthetic_config_to_json(const SyntheticConfig& config);
// Scalars are read from `j`; tables not present in `j` come from the defaults.
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, const ConceptVocabulary& vocab);

}  // namespace fke
