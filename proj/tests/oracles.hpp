#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fke/filters.hpp"
#include "fke/knowledge_base.hpp"
#include "fke/search.hpp"
#include "fke/synthetic.hpp"

namespace fke::testing {

// Filter rules restated from scratch, one loop per rule.
struct OracleVerdict {
  bool keep = false;
  DropReason reason = DropReason::kNone;
  std::size_t pairs = 0;
};

inline double oracle_pair_score(const BoundingBox& f, const BoundingBox& b) {
  const double cy = f.y + f.height / 2;
  if (!(cy >= b.y && cy <= b.y + 0.4 * b.height)) return 0;
  const double left = std::max(f.x, b.x), right = std::min(f.x + f.width, b.x + b.width);
  const double top = std::max(f.y, b.y), bottom = std::min(f.y + f.height, b.y + b.height);
  if (right <= left || bottom <= top) return 0;
  return (right - left) * (bottom - top) / (f.width * f.height);
}

inline OracleVerdict oracle_filter(const Post& post, const FilterThresholds& t, const AdClassifier& clf) {
  std::vector<bool> face_used(post.faces.size()), body_used(post.bodies.size());
  std::vector<std::pair<std::size_t, std::size_t>> matched;
  for (;;) {
    double best = 0;
    std::optional<std::pair<std::size_t, std::size_t>> pick;
    for (std::size_t f = 0; f < post.faces.size(); ++f) {
      if (face_used[f]) continue;
      for (std::size_t b = 0; b < post.bodies.size(); ++b) {
        if (body_used[b] || post.faces[f].box.height > post.bodies[b].box.height) continue;
        const double s = oracle_pair_score(post.faces[f].box, post.bodies[b].box);
        if (s > best) {
          best = s;
          pick = {f, b};
        }
      }
    }
    if (!pick) break;
    face_used[pick->first] = body_used[pick->second] = true;
    matched.push_back(*pick);
  }
  if (matched.empty()) return {false, DropReason::kNoFaceBodyPair, 0};
  std::size_t passing = 0;
  for (const auto& [f, b] : matched) {
    const double fh = post.faces[f].box.height, bh = post.bodies[b].box.height;
    if (fh / bh < t.max_face_body_ratio && bh / post.image_height > t.min_body_image_ratio) ++passing;
  }
  if (passing == 0) return {false, DropReason::kRatioViolation, 0};
  const auto feats = clf.features(post);
  double z = clf.bias;
  for (std::size_t i = 0; i < feats.size(); ++i) z += clf.weights[i] * feats[i];
  if (1.0 / (1.0 + std::exp(-z)) >= t.ad_threshold) return {false, DropReason::kAdLike, 0};
  return {true, DropReason::kNone, passing};
}

struct RatioCase {
  int face = 0, body = 0, image = 0;
  bool expected = false;
};

// 200 integer-height cases clustered on face/body = 0.2 and body/image = 0.5.
// Expectations use integer cross-multiplication, free of rounding.
inline std::vector<RatioCase> ratio_boundary_table() {
  std::vector<RatioCase> out;
  for (int i = 0; i < 200; ++i) {
    const int body = 5 * (10 + i);
    const int faces[] = {body / 5 - 1, body / 5, body / 5 + 1, body / 10, body / 5};
    const int images[] = {2 * body - 1, 2 * body, 2 * body + 1, 3 * body};
    const int face = faces[i % 5], image = images[(i / 5) % 4];
    out.push_back({face, body, image, 5 * face < body && 2 * body > image});
  }
  return out;
}

// Synthetic posts with planted defects; every third post gets random extra
// faces and bodies so that multi-person matching is exercised.
inline std::vector<Post> mixed_filter_posts(const ConceptVocabulary& vocab, std::size_t n, std::uint64_t seed) {
  auto cfg = default_synthetic_config(vocab, n, seed);
  cfg.image_dim = cfg.region_dim = 4;
  cfg.no_pair_fraction = 0.15;
  cfg.ratio_violation_fraction = 0.15;
  cfg.ad_fraction = 0.15;
  std::vector<Post> posts;
  for (auto& lp : generate_synthetic(cfg).posts) posts.push_back(std::move(lp.post));
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < posts.size(); i += 3) {
    auto& p = posts[i];
    const std::size_t extra_faces = rng() % 3, extra_bodies = rng() % 3;
    for (std::size_t k = 0; k < extra_bodies; ++k) {
      BoundingBox b;
      b.height = p.image_height * (0.3 + 0.65 * u(rng));
      b.width = p.image_width * (0.1 + 0.3 * u(rng));
      b.x = (p.image_width - b.width) * u(rng);
      b.y = (p.image_height - b.height) * u(rng);
      p.bodies.push_back({b, 0.9});
    }
    for (std::size_t k = 0; k < extra_faces; ++k) {
      BoundingBox f;
      f.height = p.image_height * (0.03 + 0.15 * u(rng));
      f.width = f.height * 0.8;
      f.x = (p.image_width - f.width) * u(rng);
      f.y = (p.image_height - f.height) * u(rng);
      p.faces.push_back({f, 0.9});
    }
  }
  return posts;
}

// Knowledge base built from filtered synthetic posts with their true labels
// standing in for model predictions.
struct KbFixture {
  KnowledgeBase kb;
  std::vector<Post> posts;
};

inline KbFixture make_kb_fixture(const ConceptVocabulary& vocab, std::size_t n, std::uint64_t seed) {
  auto cfg = default_synthetic_config(vocab, n, seed);
  cfg.image_dim = cfg.region_dim = 4;
  const auto corpus = generate_synthetic(cfg);
  KbFixture fx{KnowledgeBase(vocab), {}};
  std::mt19937_64 rng(seed);
  const std::vector<std::string> places = {"paris", "tokyo", "lagos", "lima"};
  const FilterThresholds t;
  const auto clf = default_ad_classifier();
  for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
    Post p = corpus.posts[i].post;
    auto outcome = run_filters(p, t, clf);
    if (!outcome.keep) continue;
    p.person_pairs = outcome.pairs;
    // Coarse metadata so that ties and shared values occur.
    p.likes = static_cast<std::int64_t>(rng() % 40) * 5;
    p.comments = static_cast<std::int64_t>(rng() % 20);
    p.timestamp = 1'500'000'000 + static_cast<std::int64_t>(rng() % 50) * 86'400;
    if (rng() % 4 == 0) p.location.reset();
    else p.location = places[rng() % places.size()];
    const auto& labels = corpus.truth.true_labels[i];
    DecodedPrediction d;
    d.occasion = *vocab.occasion_index(labels.occasion);
    for (const auto& g : labels.garments) {
      DecodedGarment dg;
      dg.category = *vocab.category_index(g.category);
      for (const auto& attr : vocab.attributes()) {
        const auto& v = g.attributes.at(attr.name);
        dg.attributes.push_back(static_cast<std::size_t>(
            std::find(attr.values.begin(), attr.values.end(), v) - attr.values.begin()));
      }
      d.garments.push_back(std::move(dg));
    }
    fx.kb.insert(post_meta(p), build_triplets(p, d, vocab));
    fx.posts.push_back(std::move(p));
  }
  return fx;
}

inline bool in_set(const std::vector<std::string>& set, const std::string& v) {
  return set.empty() || std::find(set.begin(), set.end(), v) != set.end();
}

inline bool oracle_concepts(const KnowledgeBase& kb, const FashionTriplet& t, const Query& q) {
  if (!in_set(q.occasions, t.occasion) || !in_set(q.genders, t.gender) || !in_set(q.categories, t.category))
    return false;
  std::map<std::string, std::vector<std::string>> by_type;
  for (const auto& v : q.attribute_values) {
    const auto ref = kb.vocabulary().find_attribute_value(v);
    by_type[kb.vocabulary().attributes().at(ref->attribute).name].push_back(v);
  }
  for (const auto& [type, values] : by_type)
    if (!in_set(values, t.attributes.at(type))) return false;
  return true;
}

inline bool oracle_metadata(const PostMeta& m, const Query& q) {
  if (!q.hashtags.empty()) {
    bool any = false;
    for (const auto& h : q.hashtags) any = any || std::find(m.hashtags.begin(), m.hashtags.end(), h) != m.hashtags.end();
    if (!any) return false;
  }
  if (!q.locations.empty() && (!m.location || !in_set(q.locations, *m.location))) return false;
  if (q.time_from && m.timestamp < *q.time_from) return false;
  if (q.time_to && m.timestamp > *q.time_to) return false;
  if (q.min_likes && m.likes < *q.min_likes) return false;
  if (q.min_comments && m.comments < *q.min_comments) return false;
  return true;
}

template <typename T>
std::vector<T> oracle_page(const std::vector<T>& all, std::size_t offset, std::size_t limit) {
  std::vector<T> out;
  for (std::size_t i = offset; i < all.size() && out.size() < limit; ++i) out.push_back(all[i]);
  return out;
}

inline TripletPage oracle_triplets(const KnowledgeBase& kb, const Query& q) {
  std::vector<const FashionTriplet*> hits;
  for (const auto& t : kb.instances())
    if (oracle_concepts(kb, t, q) && oracle_metadata(kb.posts().at(t.provenance.post_id), q)) hits.push_back(&t);
  std::sort(hits.begin(), hits.end(), [](auto* a, auto* b) { return a->provenance < b->provenance; });
  std::map<TripletKey, TripletResult> groups;
  for (const auto* t : hits) {
    auto& g = groups[key_of(*t)];
    g.key = key_of(*t);
    ++g.count;
    if (g.samples.size() < kMaxSamples) g.samples.push_back(t->provenance);
  }
  std::vector<TripletResult> all;
  for (auto& [k, g] : groups) all.push_back(g);
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  return {oracle_page(all, q.offset, q.limit), all.size(), q.offset, q.limit};
}

inline PostPage oracle_posts(const KnowledgeBase& kb, const Query& q) {
  std::vector<PostResult> all;
  for (const auto& [id, meta] : kb.posts()) {
    if (!oracle_metadata(meta, q)) continue;
    std::vector<FashionTriplet> mine;
    for (const auto& t : kb.instances())
      if (t.provenance.post_id == id) mine.push_back(t);
    std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.provenance < b.provenance; });
    if (q.has_concept_facets() &&
        std::none_of(mine.begin(), mine.end(), [&](const auto& t) { return oracle_concepts(kb, t, q); }))
      continue;
    all.push_back({meta, mine});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.meta.likes != b.meta.likes ? a.meta.likes > b.meta.likes : a.meta.post_id < b.meta.post_id;
  });
  return {oracle_page(all, q.offset, q.limit), all.size(), q.offset, q.limit};
}

// Random valid query drawing facet values from what the knowledge base holds.
inline Query random_query(const KnowledgeBase& kb, std::mt19937_64& rng, QueryMode mode) {
  Query q;
  q.mode = mode;
  auto coin = [&](int one_in) { return rng() % one_in == 0; };
  auto pick_keys = [&](const auto& index, std::vector<std::string>& into, int one_in) {
    if (index.empty() || !coin(one_in)) return;
    const std::size_t n = 1 + rng() % 2;
    for (std::size_t i = 0; i < n; ++i) {
      auto it = index.begin();
      std::advance(it, rng() % index.size());
      if (std::find(into.begin(), into.end(), it->first) == into.end()) into.push_back(it->first);
    }
  };
  pick_keys(kb.occasion_index(), q.occasions, 2);
  pick_keys(kb.gender_index(), q.genders, 3);
  pick_keys(kb.category_index(), q.categories, 3);
  pick_keys(kb.attribute_index(), q.attribute_values, 3);
  pick_keys(kb.hashtag_index(), q.hashtags, 5);
  pick_keys(kb.location_index(), q.locations, 4);
  if (coin(4)) q.time_from = 1'500'000'000 + static_cast<std::int64_t>(rng() % 25) * 86'400;
  if (coin(4)) q.time_to = 1'500'000'000 + static_cast<std::int64_t>(25 + rng() % 25) * 86'400;
  if (coin(3)) q.min_likes = static_cast<std::int64_t>(rng() % 150);
  if (coin(4)) q.min_comments = static_cast<std::int64_t>(rng() % 15);
  if (coin(3)) q.offset = rng() % 10;
  q.limit = 1 + rng() % 60;
  return q;
}

}  // namespace fke::testing
