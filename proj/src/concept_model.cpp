#include "fke/concept_model.hpp"

#include <cmath>
#include <random>

namespace fke {
namespace {

using ad::Parameter;
using ad::Tape;
using ad::Var;

void init_uniform(Parameter& p, std::mt19937_64& rng, double limit) {
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : p.value.data) v = u(rng);
}

void init_glorot(Parameter& p, std::mt19937_64& rng) {
  const double fan = static_cast<double>(p.value.rows() + p.value.cols());
  init_uniform(p, rng, std::sqrt(6.0 / fan));
}

void init_cell(GruCell& c, std::mt19937_64& rng) {
  init_glorot(c.w, rng);
  init_glorot(c.u, rng);
}

}  // namespace

GruCell::GruCell(const std::string& name, std::size_t input_dim, std::size_t hidden)
    : w(name + ".w", {3 * hidden, input_dim}),
      u(name + ".u", {3 * hidden, hidden}),
      bx(name + ".bx", {3 * hidden}),
      bh(name + ".bh", {3 * hidden}) {}

std::vector<Var> birnn_encode_projected(Tape& t, const GruCell& fwd, const GruCell& bwd,
                                        std::span<const Var> proj_fwd, std::span<const Var> proj_bwd) {
  const std::size_t n = proj_fwd.size();
  if (n == 0) throw ModelError("birnn_encode: empty sequence");
  if (proj_bwd.size() != n) throw ModelError("birnn_encode: projection count mismatch");
  std::vector<Var> forward(n), backward(n);
  Var h = t.zeros(fwd.hidden());
  for (std::size_t i = 0; i < n; ++i) h = forward[i] = fwd.step(t, proj_fwd[i], h);
  h = t.zeros(bwd.hidden());
  for (std::size_t i = n; i-- > 0;) h = backward[i] = bwd.step(t, proj_bwd[i], h);
  std::vector<Var> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Var parts[] = {forward[i], backward[i]};
    out[i] = ad::concat(t, parts);
  }
  return out;
}

std::vector<Var> birnn_encode(Tape& t, const GruCell& fwd, const GruCell& bwd,
                              std::span<const Var> sequence) {
  if (sequence.empty()) throw ModelError("birnn_encode: empty sequence");
  std::vector<Var> pf, pb;
  for (Var x : sequence) {
    if (t.dim(x) != fwd.input_dim() || t.dim(x) != bwd.input_dim())
      throw ModelError("birnn_encode: input dimension " + std::to_string(t.dim(x)) +
                       " does not match cell input " + std::to_string(fwd.input_dim()));
    pf.push_back(fwd.project(t, x));
    pb.push_back(bwd.project(t, x));
  }
  return birnn_encode_projected(t, fwd, bwd, pf, pb);
}

std::vector<std::vector<double>> birnn_encode(const GruCell& fwd, const GruCell& bwd,
                                              const std::vector<std::vector<double>>& sequence) {
  Tape t(false);
  std::vector<Var> xs;
  for (const auto& x : sequence) xs.push_back(t.constant(x));
  std::vector<std::vector<double>> out;
  for (Var v : birnn_encode(t, fwd, bwd, xs)) out.push_back(t.value(v));
  return out;
}

ConceptModel::ConceptModel(ConceptVocabulary vocab, ModelDims dims, EncoderMode mode,
                           std::uint64_t seed)
    : vocab_(std::move(vocab)), dims_(dims), mode_(mode) {
  std::mt19937_64 rng(seed);
  const std::size_t gin = garment_input_dim();
  const std::size_t e = dims_.slot_embedding;
  std::size_t garment_state = gin, slot_state = gin + e;
  if (mode_ == EncoderMode::kContextual) {
    garment_fwd_ = GruCell("garment_fwd", gin, dims_.garment_hidden);
    garment_bwd_ = GruCell("garment_bwd", gin, dims_.garment_hidden);
    slot_fwd_ = GruCell("slot_fwd", 2 * dims_.garment_hidden + e, dims_.slot_hidden);
    slot_bwd_ = GruCell("slot_bwd", 2 * dims_.garment_hidden + e, dims_.slot_hidden);
    garment_state += 2 * dims_.garment_hidden;
    slot_state += 2 * dims_.slot_hidden;
    for (GruCell* c : {&garment_fwd_, &garment_bwd_, &slot_fwd_, &slot_bwd_}) init_cell(*c, rng);
  }
  slot_embedding_ = Parameter("slot_embedding", {num_slots(), e});
  init_uniform(slot_embedding_, rng, 0.5);
  occasion_w_ = Parameter("occasion.w", {vocab_.num_occasions(), dims_.image_dim + garment_state});
  occasion_b_ = Parameter("occasion.b", {vocab_.num_occasions()});
  init_glorot(occasion_w_, rng);
  for (std::size_t s = 0; s < num_slots(); ++s) {
    const std::size_t c = vocab_.task_size(1 + s);
    const std::string name = "head." + vocab_.task_name(1 + s);
    head_w_.emplace_back(name + ".w", std::vector<std::size_t>{c, slot_state});
    head_b_.emplace_back(name + ".b", std::vector<std::size_t>{c});
    init_glorot(head_w_.back(), rng);
  }
}

std::vector<double> ConceptModel::garment_input(const GarmentRegion& region) const {
  if (region.feature.size() != dims_.region_dim)
    throw ModelError("region feature has dimension " + std::to_string(region.feature.size()) +
                     ", model expects " + std::to_string(dims_.region_dim));
  std::vector<double> x(garment_input_dim(), 0.0);
  std::copy(region.feature.begin(), region.feature.end(), x.begin());
  if (region.rough_category) {
    auto idx = vocab_.category_index(*region.rough_category);
    if (!idx) throw ModelError("rough category '" + *region.rough_category + "' not in vocabulary");
    x[dims_.region_dim + *idx] = 1.0;
  }
  return x;
}

ConceptModel::Graph ConceptModel::build(Tape& t, const Post& post) const {
  if (post.garments.empty()) throw ModelError("post " + post.post_id + " has no garment regions");
  if (post.image_feature.size() != dims_.image_dim)
    throw ModelError("image feature has dimension " + std::to_string(post.image_feature.size()) +
                     ", model expects " + std::to_string(dims_.image_dim));
  const bool contextual = mode_ == EncoderMode::kContextual;
  const std::size_t n = post.garments.size();

  std::vector<Var> inputs;
  for (const auto& g : post.garments) inputs.push_back(t.constant(garment_input(g)));
  std::vector<Var> context, states = inputs;
  if (contextual) {
    context = birnn_encode(t, garment_fwd_, garment_bwd_, inputs);
    for (std::size_t g = 0; g < n; ++g) {
      const Var parts[] = {inputs[g], context[g]};
      states[g] = ad::concat(t, parts);
    }
  }

  Graph graph;
  const Var pooled = ad::mean(t, states);
  const Var occ_parts[] = {t.constant(post.image_feature), pooled};
  graph.occasion = ad::softmax(t, ad::affine(t, occasion_w_, &occasion_b_, ad::concat(t, occ_parts)));

  const std::size_t slots = num_slots();
  std::vector<Var> embeddings;
  for (std::size_t s = 0; s < slots; ++s) embeddings.push_back(ad::param_row(t, slot_embedding_, s));

  // Slot-dependent half of the slot encoder's input projection is shared by all garments.
  std::vector<Var> emb_fwd, emb_bwd;
  const std::size_t gdim = contextual ? 2 * dims_.garment_hidden : 0;
  if (contextual) {
    for (std::size_t s = 0; s < slots; ++s) {
      emb_fwd.push_back(ad::affine_cols(t, slot_fwd_.w, gdim, embeddings[s], &slot_fwd_.bx));
      emb_bwd.push_back(ad::affine_cols(t, slot_bwd_.w, gdim, embeddings[s], &slot_bwd_.bx));
    }
  }

  graph.slots.resize(n);
  for (std::size_t g = 0; g < n; ++g) {
    std::vector<Var> slot_states(slots);
    for (std::size_t s = 0; s < slots; ++s) {
      const Var parts[] = {inputs[g], embeddings[s]};
      slot_states[s] = ad::concat(t, parts);
    }
    if (contextual) {
      const Var gf = ad::affine_cols(t, slot_fwd_.w, 0, context[g]);
      const Var gb = ad::affine_cols(t, slot_bwd_.w, 0, context[g]);
      std::vector<Var> pf(slots), pb(slots);
      for (std::size_t s = 0; s < slots; ++s) {
        pf[s] = ad::add(t, gf, emb_fwd[s]);
        pb[s] = ad::add(t, gb, emb_bwd[s]);
      }
      const std::vector<Var> slot_context = birnn_encode_projected(t, slot_fwd_, slot_bwd_, pf, pb);
      for (std::size_t s = 0; s < slots; ++s) {
        const Var parts[] = {slot_states[s], slot_context[s]};
        slot_states[s] = ad::concat(t, parts);
      }
    }
    for (std::size_t s = 0; s < slots; ++s)
      graph.slots[g].push_back(ad::softmax(t, ad::affine(t, head_w_[s], &head_b_[s], slot_states[s])));
  }
  return graph;
}

ConceptPrediction ConceptModel::forward(const Post& post) const {
  Tape t(false);
  const Graph g = build(t, post);
  ConceptPrediction p;
  p.occasion = t.value(g.occasion);
  for (const auto& slots : g.slots) {
    GarmentPrediction gp;
    gp.category = t.value(slots[0]);
    for (std::size_t s = 1; s < slots.size(); ++s) gp.attributes.push_back(t.value(slots[s]));
    p.garments.push_back(std::move(gp));
  }
  return p;
}

std::vector<const Parameter*> ConceptModel::parameters() const {
  std::vector<const Parameter*> out;
  if (mode_ == EncoderMode::kContextual) {
    for (const GruCell* c : {&garment_fwd_, &garment_bwd_, &slot_fwd_, &slot_bwd_})
      for (const Parameter* p : {&c->w, &c->u, &c->bx, &c->bh}) out.push_back(p);
  }
  out.push_back(&slot_embedding_);
  out.push_back(&occasion_w_);
  out.push_back(&occasion_b_);
  for (std::size_t s = 0; s < head_w_.size(); ++s) {
    out.push_back(&head_w_[s]);
    out.push_back(&head_b_[s]);
  }
  return out;
}

std::vector<Parameter*> ConceptModel::parameters() {
  std::vector<Parameter*> out;
  for (const Parameter* p : std::as_const(*this).parameters()) out.push_back(const_cast<Parameter*>(p));
  return out;
}

NoiseModel::NoiseModel(const ConceptVocabulary& vocab, double self_mass) {
  for (std::size_t k = 0; k < vocab.num_tasks(); ++k) {
    const std::size_t c = vocab.task_size(k);
    Parameter p("transition." + vocab.task_name(k), {c, c});
    // softmax row: exp(d) / (exp(d) + c - 1) = self_mass
    const double d = std::log(self_mass * static_cast<double>(c - 1) / (1.0 - self_mass));
    for (std::size_t i = 0; i < c; ++i) p.value.at(i, i) = d;
    scores_.push_back(std::move(p));
  }
}

std::vector<std::vector<double>> NoiseModel::transition(std::size_t task) const {
  Tape t(false);
  const auto& flat = t.value(transition_var(t, task));
  const std::size_t c = scores_.at(task).value.rows();
  std::vector<std::vector<double>> m(c);
  for (std::size_t i = 0; i < c; ++i)
    m[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * c),
                flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return m;
}

std::vector<const Parameter*> NoiseModel::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : scores_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> NoiseModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : scores_) out.push_back(&p);
  return out;
}

std::vector<double> apply_noise(std::span<const double> p_clean,
                                const std::vector<std::vector<double>>& transition) {
  const std::size_t c = p_clean.size();
  if (transition.size() != c) throw ModelError("apply_noise: transition has wrong row count");
  std::vector<double> q(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    if (transition[i].size() != c) throw ModelError("apply_noise: transition row has wrong width");
    for (std::size_t j = 0; j < c; ++j) q[j] += p_clean[i] * transition[i][j];
  }
  return q;
}

EncodedLabels encode_labels(const ConceptVocabulary& vocab, const PostLabels& labels) {
  EncodedLabels out;
  out.source = labels.source;
  auto occ = vocab.occasion_index(labels.occasion);
  if (!occ) throw ModelError("unknown occasion label '" + labels.occasion + "'");
  out.occasion = *occ;
  for (const auto& g : labels.garments) {
    std::vector<std::size_t> slots;
    auto cat = vocab.category_index(g.category);
    if (!cat) throw ModelError("unknown category label '" + g.category + "'");
    slots.push_back(*cat);
    for (const auto& attr : vocab.attributes()) {
      auto it = g.attributes.find(attr.name);
      if (it == g.attributes.end()) throw ModelError("missing label for attribute '" + attr.name + "'");
      auto v = std::find(attr.values.begin(), attr.values.end(), it->second);
      if (v == attr.values.end())
        throw ModelError("unknown value '" + it->second + "' for attribute '" + attr.name + "'");
      slots.push_back(static_cast<std::size_t>(v - attr.values.begin()));
    }
    out.garments.push_back(std::move(slots));
  }
  return out;
}

LossTerms build_loss(Tape& t, const ConceptModel& model, const NoiseModel& noise,
                     std::span<const LabeledPost* const> batch, const LossOptions& options) {
  const auto& vocab = model.vocabulary();
  std::vector<Var> clean_terms, weak_terms;
  std::vector<Var> transitions;
  auto transition = [&](std::size_t task) {
    if (transitions.empty())
      for (std::size_t k = 0; k < noise.num_tasks(); ++k) transitions.push_back(noise.transition_var(t, k));
    return transitions[task];
  };

  for (const LabeledPost* lp : batch) {
    const EncodedLabels labels = encode_labels(vocab, lp->labels);
    const bool weak = labels.source == LabelSource::kWeak;
    if (weak && options.lambda_weak == 0.0) continue;
    const auto graph = model.build(t, lp->post);
    auto term = [&](Var p, std::size_t task, std::size_t label) {
      if (weak && options.noise_layer) p = ad::vecmat(t, p, transition(task));
      (weak ? weak_terms : clean_terms).push_back(ad::nll(t, p, label));
    };
    term(graph.occasion, 0, labels.occasion);
    for (std::size_t g = 0; g < graph.slots.size(); ++g)
      for (std::size_t s = 0; s < graph.slots[g].size(); ++s) term(graph.slots[g][s], 1 + s, labels.garments[g][s]);
  }

  LossTerms out;
  out.clean_terms = clean_terms.size();
  out.weak_terms = weak_terms.size();
  std::vector<Var> parts;
  if (!clean_terms.empty()) {
    const Var s = ad::sum(t, clean_terms);
    out.clean_ce = t.scalar(s) / static_cast<double>(clean_terms.size());
    parts.push_back(ad::scale(t, s, 1.0 / static_cast<double>(clean_terms.size())));
  }
  if (!weak_terms.empty()) {
    const Var s = ad::sum(t, weak_terms);
    out.weak_ce = t.scalar(s) / static_cast<double>(weak_terms.size());
    parts.push_back(ad::scale(t, s, options.lambda_weak / static_cast<double>(weak_terms.size())));
  }
  if (options.trace_weight != 0.0) {
    for (std::size_t k = 0; k < noise.num_tasks(); ++k)
      parts.push_back(ad::scale(t, ad::trace_mean(t, transition(k), vocab.task_size(k)), -options.trace_weight));
  }
  out.total = parts.empty() ? t.constant({0.0}) : ad::sum(t, parts);
  return out;
}

double loss(const ConceptModel& model, const NoiseModel& noise,
            std::span<const LabeledPost* const> batch, const LossOptions& options) {
  Tape t(false);
  return t.scalar(build_loss(t, model, noise, batch, options).total);
}

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

DecodedPrediction decode(const ConceptPrediction& prediction) {
  DecodedPrediction out;
  out.occasion = argmax(prediction.occasion);
  for (const auto& g : prediction.garments) {
    DecodedGarment d;
    d.category = argmax(g.category);
    for (const auto& a : g.attributes) d.attributes.push_back(argmax(a));
    out.garments.push_back(std::move(d));
  }
  return out;
}

}  // namespace fke
