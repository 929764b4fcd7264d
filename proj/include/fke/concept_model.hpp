#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fke/autodiff.hpp"
#include "fke/corpus.hpp"
#include "fke/vocab.hpp"

namespace fke {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Gated recurrent cell. Input projection w [3H, I] + bx, recurrent u [3H, H] + bh.
struct GruCell {
  ad::Parameter w, u, bx, bh;

  GruCell() = default;
  GruCell(const std::string& name, std::size_t input_dim, std::size_t hidden);

  std::size_t input_dim() const { return w.value.cols(); }
  std::size_t hidden() const { return u.value.cols(); }

  ad::Var project(ad::Tape& t, ad::Var x) const { return ad::affine(t, w, &bx, x); }
  ad::Var step(ad::Tape& t, ad::Var xproj, ad::Var h) const { return ad::gru_step(t, xproj, h, u, bh); }
};

// Bi-directional pass over input projections: position t gets
// [forward state after x_0..x_t || backward state after x_T..x_t].
std::vector<ad::Var> birnn_encode_projected(ad::Tape& t, const GruCell& fwd, const GruCell& bwd,
                                            std::span<const ad::Var> proj_fwd,
                                            std::span<const ad::Var> proj_bwd);

// Throws ModelError on an empty sequence or mismatched input dimension.
std::vector<ad::Var> birnn_encode(ad::Tape& t, const GruCell& fwd, const GruCell& bwd,
                                  std::span<const ad::Var> sequence);

// Value-level convenience over a throwaway tape.
std::vector<std::vector<double>> birnn_encode(const GruCell& fwd, const GruCell& bwd,
                                              const std::vector<std::vector<double>>& sequence);

struct ModelDims {
  std::size_t image_dim = 64;
  std::size_t region_dim = 64;
  std::size_t garment_hidden = 32;
  std::size_t slot_hidden = 32;
  std::size_t slot_embedding = 16;

  bool operator==(const ModelDims&) const = default;
};

// Per-item features are the garment input x and, per slot, [x || slot embedding].
// kContextual appends the bi-directional encoder states to both: garment
// state [x || garment context], slot state [x || embedding || slot context].
// kNoContext drops the encoders, leaving the per-item identity.
enum class EncoderMode { kContextual, kNoContext };

struct GarmentPrediction {
  std::vector<double> category;
  std::vector<std::vector<double>> attributes;  // per attribute type, vocabulary order
};

struct ConceptPrediction {
  std::vector<double> occasion;
  std::vector<GarmentPrediction> garments;
};

class ConceptModel {
 public:
  struct Graph {
    ad::Var occasion;
    // slots[g][s]: distribution for garment g, slot s (0 = category, 1 + a = attribute a).
    std::vector<std::vector<ad::Var>> slots;
  };

  ConceptModel() = default;
  ConceptModel(ConceptVocabulary vocab, ModelDims dims, EncoderMode mode, std::uint64_t seed);

  const ConceptVocabulary& vocabulary() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  EncoderMode mode() const { return mode_; }
  std::size_t num_slots() const { return 1 + vocab_.num_attributes(); }
  std::size_t garment_input_dim() const { return dims_.region_dim + vocab_.num_categories(); }

  // Records the forward computation of one post. Throws ModelError on a post
  // without garments or with mismatched feature dimensions.
  Graph build(ad::Tape& t, const Post& post) const;
  ConceptPrediction forward(const Post& post) const;

  // Input vector of a garment region: feature || one-hot rough category.
  std::vector<double> garment_input(const GarmentRegion& region) const;

  std::vector<const ad::Parameter*> parameters() const;
  std::vector<ad::Parameter*> parameters();

  const GruCell& garment_fwd() const { return garment_fwd_; }
  const GruCell& garment_bwd() const { return garment_bwd_; }
  const GruCell& slot_fwd() const { return slot_fwd_; }
  const GruCell& slot_bwd() const { return slot_bwd_; }
  const ad::Parameter& slot_embedding() const { return slot_embedding_; }
  const ad::Parameter& occasion_w() const { return occasion_w_; }
  const ad::Parameter& occasion_b() const { return occasion_b_; }
  const ad::Parameter& head_w(std::size_t slot) const { return head_w_.at(slot); }
  const ad::Parameter& head_b(std::size_t slot) const { return head_b_.at(slot); }

 private:
  ConceptVocabulary vocab_;
  ModelDims dims_;
  EncoderMode mode_ = EncoderMode::kContextual;
  GruCell garment_fwd_, garment_bwd_, slot_fwd_, slot_bwd_;
  ad::Parameter slot_embedding_;
  ad::Parameter occasion_w_, occasion_b_;
  std::vector<ad::Parameter> head_w_, head_b_;
};

// Per-task label transition matrices, stored as unconstrained scores and
// realised through a row-wise softmax.
class NoiseModel {
 public:
  NoiseModel() = default;
  // Rows start at `self_mass` on the diagonal, the rest spread evenly.
  explicit NoiseModel(const ConceptVocabulary& vocab, double self_mass = 0.9);

  std::size_t num_tasks() const { return scores_.size(); }
  std::vector<std::vector<double>> transition(std::size_t task) const;
  ad::Var transition_var(ad::Tape& t, std::size_t task) const { return ad::row_softmax(t, scores_.at(task)); }

  std::vector<const ad::Parameter*> parameters() const;
  std::vector<ad::Parameter*> parameters();

 private:
  std::vector<ad::Parameter> scores_;
};

// p_noisy[j] = sum_i p_clean[i] * T[i][j].
std::vector<double> apply_noise(std::span<const double> p_clean,
                                const std::vector<std::vector<double>>& transition);

// Labels resolved to vocabulary indices.
struct EncodedLabels {
  std::size_t occasion = 0;
  std::vector<std::vector<std::size_t>> garments;  // [garment][slot]
  LabelSource source = LabelSource::kClean;
};

// Throws ModelError on a label outside the vocabulary.
EncodedLabels encode_labels(const ConceptVocabulary& vocab, const PostLabels& labels);

struct LossOptions {
  double lambda_weak = 1.0;
  double trace_weight = 0.0;
  // When false, weak labels supervise p_clean directly.
  bool noise_layer = true;
};

struct LossTerms {
  ad::Var total;
  double clean_ce = 0;  // mean over clean terms
  double weak_ce = 0;   // mean over weak terms
  std::size_t clean_terms = 0;
  std::size_t weak_terms = 0;
};

// mean clean cross-entropy + lambda_weak * mean weak cross-entropy
//   - trace_weight * sum_k trace(T_k) / C_k
// Each post contributes one occasion term and one term per garment slot.
LossTerms build_loss(ad::Tape& t, const ConceptModel& model, const NoiseModel& noise,
                     std::span<const LabeledPost* const> batch, const LossOptions& options);

double loss(const ConceptModel& model, const NoiseModel& noise,
            std::span<const LabeledPost* const> batch, const LossOptions& options);

struct DecodedGarment {
  std::size_t category = 0;
  std::vector<std::size_t> attributes;
};

struct DecodedPrediction {
  std::size_t occasion = 0;
  std::vector<DecodedGarment> garments;
};

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> p);
DecodedPrediction decode(const ConceptPrediction& prediction);

}  // namespace fke
