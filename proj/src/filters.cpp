#include "fke/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fke {
namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double dot(const std::vector<double>& w, const std::vector<double>& f) {
  if (w.size() != f.size())
    throw FilterError("ad classifier expects " + std::to_string(w.size()) + " features, got " +
                      std::to_string(f.size()));
  return std::inner_product(w.begin(), w.end(), f.begin(), 0.0);
}

}  // namespace

void FilterThresholds::validate() const {
  if (!(max_face_body_ratio > 0 && max_face_body_ratio < 1))
    throw FilterError("max_face_body_ratio must lie in (0, 1)");
  if (!(min_body_image_ratio > 0 && min_body_image_ratio < 1))
    throw FilterError("min_body_image_ratio must lie in (0, 1)");
  if (!(ad_threshold >= 0 && ad_threshold <= 1)) throw FilterError("ad_threshold must lie in [0, 1]");
}

std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::kNone: return "none";
    case DropReason::kNoFaceBodyPair: return "no_face_body_pair";
    case DropReason::kRatioViolation: return "ratio_violation";
    case DropReason::kAdLike: return "ad_like";
  }
  return "none";
}

double pair_score(const BoundingBox& face, const BoundingBox& body) {
  const double cy = face.center_y();
  if (cy < body.y || cy > body.y + 0.4 * body.height) return 0.0;
  const double ix = std::max(0.0, std::min(face.x + face.width, body.x + body.width) - std::max(face.x, body.x));
  const double iy = std::max(0.0, std::min(face.y + face.height, body.y + body.height) - std::max(face.y, body.y));
  return ix * iy / face.area();
}

std::vector<PersonPair> pair_faces_bodies(std::span<const Detection> faces,
                                          std::span<const Detection> bodies) {
  struct Candidate {
    double score;
    std::size_t face, body;
  };
  std::vector<Candidate> candidates;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      if (faces[f].box.height > bodies[b].box.height) continue;
      const double s = pair_score(faces[f].box, bodies[b].box);
      if (s > 0) candidates.push_back({s, f, b});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.face != b.face) return a.face < b.face;
    return a.body < b.body;
  });
  std::vector<bool> face_used(faces.size()), body_used(bodies.size());
  std::vector<PersonPair> pairs;
  for (const auto& c : candidates) {
    if (face_used[c.face] || body_used[c.body]) continue;
    face_used[c.face] = body_used[c.body] = true;
    pairs.push_back({faces[c.face].box, bodies[c.body].box, c.score, std::nullopt});
  }
  return pairs;
}

bool ratio_check(const PersonPair& pair, double image_height, const FilterThresholds& t) {
  return pair.face.height / pair.body.height < t.max_face_body_ratio &&
         pair.body.height / image_height > t.min_body_image_ratio;
}

std::vector<double> default_ad_features(const Post& post) {
  const double image_area = post.image_width * post.image_height;
  double face_area = 0;
  for (const auto& f : post.faces) face_area += f.box.area();
  double body_cover = 0;
  for (const auto& b : post.bodies) body_cover = std::max(body_cover, b.box.height / post.image_height);
  return {static_cast<double>(post.caption.size()) / 280.0,
          static_cast<double>(post.hashtags.size()) / 10.0,
          static_cast<double>(post.comments) / (static_cast<double>(post.likes) + 1.0),
          face_area / image_area, body_cover};
}

double AdClassifier::score(const Post& post) const {
  return logistic(dot(weights, features(post)) + bias);
}

nlohmann::json AdClassifier::to_json() const { return {{"weights", weights}, {"bias", bias}}; }

AdClassifier AdClassifier::from_json(const nlohmann::json& j) {
  AdClassifier c;
  c.weights = j.at("weights").get<std::vector<double>>();
  c.bias = j.at("bias").get<double>();
  return c;
}

AdClassifier default_ad_classifier() {
  AdClassifier c;
  c.weights = {3.0, 3.0, 0.0, -2.0, -1.0};
  c.bias = -5.0;
  return c;
}

double ad_score(const Post& post, const AdClassifier& clf) { return clf.score(post); }

AdTrainResult train_ad_classifier(std::span<const AdExample> train,
                                  std::span<const AdExample> holdout, const AdTrainConfig& config,
                                  const AdFeatureFn& features) {
  const bool has_pos = std::any_of(train.begin(), train.end(), [](const AdExample& e) { return e.is_ad; });
  const bool has_neg = std::any_of(train.begin(), train.end(), [](const AdExample& e) { return !e.is_ad; });
  if (!has_pos || !has_neg) throw FilterError("ad classifier training needs both classes");

  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& e : train) {
    x.push_back(features(e.post));
    y.push_back(e.is_ad ? 1.0 : 0.0);
  }
  const std::size_t k = x.front().size();
  AdClassifier clf;
  clf.weights.assign(k, 0.0);
  clf.features = features;

  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  const std::size_t batch = config.batch_size == 0 ? x.size() : std::min(config.batch_size, x.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < x.size()) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<double> gw(k, 0.0);
      double gb = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& f = x[order[i]];
        const double err = logistic(dot(clf.weights, f) + clf.bias) - y[order[i]];
        for (std::size_t d = 0; d < k; ++d) gw[d] += err * f[d];
        gb += err;
      }
      const double scale = config.learning_rate / static_cast<double>(end - start);
      for (std::size_t d = 0; d < k; ++d) clf.weights[d] -= scale * gw[d];
      clf.bias -= scale * gb;
    }
  }

  auto accuracy = [&](std::span<const AdExample> set) {
    if (set.empty()) return std::nan("");
    std::size_t ok = 0;
    for (const auto& e : set) ok += (clf.score(e.post) >= 0.5) == e.is_ad;
    return static_cast<double>(ok) / static_cast<double>(set.size());
  };
  return {clf, accuracy(train), accuracy(holdout)};
}

FilterOutcome run_filters(const Post& post, const FilterThresholds& t, const AdClassifier& clf,
                          const GenderHook& gender) {
  FilterOutcome out;
  auto pairs = pair_faces_bodies(post.faces, post.bodies);
  if (pairs.empty()) {
    out.reason = DropReason::kNoFaceBodyPair;
    return out;
  }
  std::erase_if(pairs, [&](const PersonPair& p) { return !ratio_check(p, post.image_height, t); });
  if (pairs.empty()) {
    out.reason = DropReason::kRatioViolation;
    return out;
  }
  out.ad_score = clf.score(post);
  if (out.ad_score >= t.ad_threshold) {
    out.reason = DropReason::kAdLike;
    return out;
  }
  for (auto& p : pairs) p.gender = gender ? gender(post, p) : post.gender_hint;
  out.keep = true;
  out.pairs = std::move(pairs);
  return out;
}

void FilterReport::add(const FilterOutcome& o) {
  ++read;
  switch (o.reason) {
    case DropReason::kNone: ++kept; break;
    case DropReason::kNoFaceBodyPair: ++no_face_body_pair; break;
    case DropReason::kRatioViolation: ++ratio_violation; break;
    case DropReason::kAdLike: ++ad_like; break;
  }
}

nlohmann::json FilterReport::to_json() const {
  return {{"read", read},
          {"kept", kept},
          {"dropped", {{"no_face_body_pair", no_face_body_pair},
                       {"ratio_violation", ratio_violation},
                       {"ad_like", ad_like}}}};
}

}  // namespace fke
