#include "fke/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace fke {
namespace {

constexpr double kRowTolerance = 1e-9;
constexpr std::int64_t kEpoch2019 = 1546300800;

const std::vector<std::string> kGenericTags = {"ootd", "fashion", "style", "outfit",
                                               "instafashion", "lookoftheday"};
const std::vector<std::string> kAdTags = {"sale", "shopnow", "discount", "newarrivals",
                                          "limitedoffer", "freeshipping", "linkinbio"};
const std::vector<std::string> kWords = {"loving", "this", "look", "tonight", "today", "with",
                                         "my", "favourite", "new", "outfit", "feeling", "great",
                                         "so", "happy", "friends", "weekend", "vibes"};
const std::vector<std::string> kLocations = {"Singapore", "New York", "London", "Paris",
                                             "Tokyo", "Milan", "Sydney", "Seoul"};

void check_row(const std::vector<double>& row, std::size_t width, const std::string& what) {
  if (row.size() != width)
    throw SyntheticConfigError(what + ": expected " + std::to_string(width) + " entries, got " +
                               std::to_string(row.size()));
  double sum = 0;
  for (double p : row) {
    if (!(p >= 0)) throw SyntheticConfigError(what + ": negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowTolerance)
    throw SyntheticConfigError(what + ": row sums to " + std::to_string(sum));
}

void check_table(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.size() != rows)
    throw SyntheticConfigError(what + ": expected " + std::to_string(rows) + " rows");
  for (std::size_t r = 0; r < rows; ++r) check_row(m[r], cols, what + " row " + std::to_string(r));
}

void check_fraction(double f, const char* what) {
  if (!(f >= 0 && f <= 1)) throw SyntheticConfigError(std::string(what) + " outside [0, 1]");
}

std::vector<double> normalized(std::vector<double> v) {
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

std::string random_caption(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
  std::uniform_int_distribution<std::size_t> count(min_words, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
  std::string out;
  for (std::size_t n = count(rng); n > 0; --n) {
    if (!out.empty()) out += ' ';
    out += kWords[pick(rng)];
  }
  return out;
}

struct Prototypes {
  Matrix occasion;  // [occasion][image_dim]
  Matrix category;  // [category][region_dim]
  std::vector<Matrix> value;  // [attribute][value][region_dim]
};

Prototypes draw_prototypes(const SyntheticConfig& c) {
  std::mt19937_64 rng(c.world_seed);
  auto draw = [&](std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    return v;
  };
  Prototypes p;
  const auto& v = c.vocabulary;
  for (std::size_t o = 0; o < v.num_occasions(); ++o) p.occasion.push_back(draw(c.image_dim));
  for (std::size_t k = 0; k < v.num_categories(); ++k) p.category.push_back(draw(c.region_dim));
  for (const auto& a : v.attributes()) {
    Matrix m;
    for (std::size_t i = 0; i < a.values.size(); ++i) m.push_back(draw(c.region_dim));
    p.value.push_back(std::move(m));
  }
  return p;
}

BoundingBox clamp_into(BoundingBox b, double w, double h) {
  b.width = std::min(b.width, w);
  b.height = std::min(b.height, h);
  b.x = std::clamp(b.x, 0.0, w - b.width);
  b.y = std::clamp(b.y, 0.0, h - b.height);
  return b;
}

struct Person {
  BoundingBox face;
  BoundingBox body;
};

// Body/face geometry satisfying both height-ratio rules with margin.
Person sample_person(std::mt19937_64& rng, double w, double h, double body_lo, double body_hi,
                     double face_lo, double face_hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  Person p;
  p.body.height = std::floor(h * in(body_lo, body_hi));
  p.body.width = std::floor(p.body.height * in(0.3, 0.5));
  p.body.x = std::floor(in(0.0, w - p.body.width));
  p.body.y = std::floor(in(0.0, h - p.body.height));
  p.face.height = std::max(1.0, std::floor(p.body.height * in(face_lo, face_hi)));
  p.face.width = std::max(1.0, std::floor(p.face.height * 0.8));
  p.face.x = std::floor(p.body.center_x() - p.face.width / 2);
  p.face.y = std::floor(p.body.y + p.body.height * in(0.0, 0.08));
  p.face = clamp_into(p.face, w, h);
  return p;
}

}  // namespace

std::string_view to_string(PlantedDefect d) {
  switch (d) {
    case PlantedDefect::kNone: return "none";
    case PlantedDefect::kNoFaceBodyPair: return "no_face_body_pair";
    case PlantedDefect::kRatioViolation: return "ratio_violation";
    case PlantedDefect::kAdLike: return "ad_like";
  }
  return "none";
}

void SyntheticConfig::validate() const {
  const auto& v = vocabulary;
  check_row(occasion_marginals, v.num_occasions(), "occasion marginals");
  if (garment_count_probs.empty()) throw SyntheticConfigError("garment count distribution is empty");
  check_row(garment_count_probs, garment_count_probs.size(), "garment count distribution");
  check_table(category_given_occasion, v.num_occasions(), v.num_categories(),
              "category-given-occasion");
  if (value_given_category.size() != v.num_attributes())
    throw SyntheticConfigError("value-given-category: one table per attribute expected");
  for (std::size_t a = 0; a < v.num_attributes(); ++a)
    check_table(value_given_category[a], v.num_categories(), v.attributes()[a].values.size(),
                "value-given-category[" + v.attributes()[a].name + "]");
  if (!transitions.empty()) {
    if (transitions.size() != v.num_tasks())
      throw SyntheticConfigError("transitions: one matrix per task expected");
    for (std::size_t k = 0; k < v.num_tasks(); ++k)
      check_table(transitions[k], v.task_size(k), v.task_size(k),
                  "transition[" + v.task_name(k) + "]");
  }
  if (image_dim == 0 || region_dim == 0) throw SyntheticConfigError("feature dimensions must be positive");
  if (!(feature_noise_sigma >= 0)) throw SyntheticConfigError("feature noise sigma must be >= 0");
  check_fraction(weak_fraction, "weak_fraction");
  check_fraction(no_pair_fraction, "no_pair_fraction");
  check_fraction(ratio_violation_fraction, "ratio_violation_fraction");
  check_fraction(ad_fraction, "ad_fraction");
  check_fraction(untagged_fraction, "untagged_fraction");
  check_fraction(rough_category_rate, "rough_category_rate");
  if (no_pair_fraction + ratio_violation_fraction + ad_fraction > 1.0)
    throw SyntheticConfigError("defect fractions sum above 1");
}

Matrix identity_matrix(std::size_t n) {
  Matrix m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

Matrix pair_flip_transition(std::size_t n, double off_mass) {
  Matrix m = identity_matrix(n);
  if (n < 2) return m;
  for (std::size_t i = 0; i < n; ++i) {
    m[i][i] = 1.0 - off_mass;
    m[i][(i + 1) % n] = off_mass;
  }
  return m;
}

Matrix uniform_transition(std::size_t n, double off_mass) {
  Matrix m(n, std::vector<double>(n, n > 1 ? off_mass / static_cast<double>(n - 1) : 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = n > 1 ? 1.0 - off_mass : 1.0;
  return m;
}

SyntheticConfig default_synthetic_config(const ConceptVocabulary& vocab, std::size_t n_posts,
                                         std::uint64_t seed) {
  SyntheticConfig c;
  c.vocabulary = vocab;
  c.n_posts = n_posts;
  c.seed = seed;
  const std::size_t n_occ = vocab.num_occasions();
  const std::size_t n_cat = vocab.num_categories();
  c.occasion_marginals.assign(n_occ, 1.0 / static_cast<double>(n_occ));
  c.garment_count_probs = {0.3, 0.35, 0.25, 0.1};

  for (std::size_t o = 0; o < n_occ; ++o) {
    std::vector<double> row(n_cat, 0.05 / static_cast<double>(n_cat));
    const double favoured[] = {0.5, 0.3, 0.15};
    for (std::size_t j = 0; j < 3; ++j) row[(o * 2 + j * 7) % n_cat] += favoured[j];
    c.category_given_occasion.push_back(normalized(std::move(row)));
  }
  for (std::size_t a = 0; a < vocab.num_attributes(); ++a) {
    const std::size_t n_val = vocab.attributes()[a].values.size();
    Matrix table;
    for (std::size_t k = 0; k < n_cat; ++k) {
      std::vector<double> row(n_val, 0.2 / static_cast<double>(n_val));
      std::size_t first = (k + 2 * a) % n_val;
      std::size_t second = (k * 5 + a + 1) % n_val;
      if (second == first) second = (second + 1) % n_val;
      row[first] += 0.55;
      row[second] += 0.25;
      table.push_back(normalized(std::move(row)));
    }
    c.value_given_category.push_back(std::move(table));
  }
  for (const auto& occ : vocab.occasions()) c.occasion_hashtags[occ] = {occ};
  return c;
}

std::size_t sample_row(std::mt19937_64& rng, const std::vector<double>& row) {
  std::discrete_distribution<std::size_t> d(row.begin(), row.end());
  return d(rng);
}

SyntheticCorpus generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  const auto& v = c.vocabulary;
  const Prototypes protos = draw_prototypes(c);
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticCorpus out;
  out.truth.transitions = c.transitions;
  for (std::size_t k = 0; k < v.num_tasks(); ++k)
    out.truth.confusion.emplace_back(v.task_size(k), std::vector<std::size_t>(v.task_size(k), 0));

  auto emit_label = [&](std::size_t task, std::size_t truth, bool weak) {
    if (!weak || c.transitions.empty()) return truth;
    std::size_t emitted = sample_row(rng, c.transitions[task][truth]);
    ++out.truth.confusion[task][truth][emitted];
    return emitted;
  };

  const double w = 1080, h = 1350;
  for (std::size_t i = 0; i < c.n_posts; ++i) {
    LabeledPost lp;
    Post& post = lp.post;
    PostLabels truth;
    post.post_id = c.id_prefix + std::to_string(i);
    post.image_width = w;
    post.image_height = h;

    const std::size_t occ = sample_row(rng, c.occasion_marginals);
    const Gender gender = u(rng) < 0.5 ? Gender::kFemale : Gender::kMale;
    const std::size_t n_garments = sample_row(rng, c.garment_count_probs) + 1;
    truth.occasion = v.occasions()[occ];
    truth.source = LabelSource::kClean;

    // Defect roll, then geometry.
    PlantedDefect defect = PlantedDefect::kNone;
    const double roll = u(rng);
    if (roll < c.no_pair_fraction) {
      defect = PlantedDefect::kNoFaceBodyPair;
    } else if (roll < c.no_pair_fraction + c.ratio_violation_fraction) {
      defect = PlantedDefect::kRatioViolation;
    } else if (roll < c.no_pair_fraction + c.ratio_violation_fraction + c.ad_fraction) {
      defect = PlantedDefect::kAdLike;
    }
    const std::size_t n_people = u(rng) < 0.8 ? 1 : 2;
    std::vector<Person> people;
    for (std::size_t p = 0; p < n_people; ++p) {
      if (defect == PlantedDefect::kRatioViolation) {
        if (u(rng) < 0.5) {
          people.push_back(sample_person(rng, w, h, 0.55, 0.95, 0.22, 0.35));
        } else {
          people.push_back(sample_person(rng, w, h, 0.15, 0.45, 0.08, 0.18));
        }
      } else {
        people.push_back(sample_person(rng, w, h, 0.55, 0.95, 0.08, 0.18));
      }
    }
    for (const auto& p : people) post.bodies.push_back({p.body, 0.7 + 0.3 * u(rng)});
    if (defect == PlantedDefect::kNoFaceBodyPair) {
      if (u(rng) < 0.5) {
        // Faces sit in the lower half of the body box, so no head-position match.
        for (const auto& p : people) {
          BoundingBox f = p.face;
          f.y = std::floor(p.body.y + p.body.height * 0.7);
          post.faces.push_back({clamp_into(f, w, h), 0.7 + 0.3 * u(rng)});
        }
      }
    } else {
      for (const auto& p : people) post.faces.push_back({p.face, 0.7 + 0.3 * u(rng)});
    }

    // Metadata.
    const bool ad = defect == PlantedDefect::kAdLike;
    post.caption = ad ? random_caption(rng, 45, 70) : random_caption(rng, 3, 18);
    post.timestamp = kEpoch2019 + static_cast<std::int64_t>(u(rng) * 365.0 * 86400.0);
    if (u(rng) < 0.8)
      post.location = kLocations[static_cast<std::size_t>(u(rng) * kLocations.size()) % kLocations.size()];
    post.likes = static_cast<std::int64_t>(std::floor(std::exp(4.0 + noise(rng))));
    post.comments = static_cast<std::int64_t>(std::floor(post.likes * (0.01 + 0.09 * u(rng))));
    post.gender_hint = gender;
    const bool untagged = u(rng) < c.untagged_fraction;
    if (!untagged) {
      auto it = c.occasion_hashtags.find(truth.occasion);
      if (it != c.occasion_hashtags.end() && !it->second.empty()) {
        const auto& tags = it->second;
        std::string tag = tags[static_cast<std::size_t>(u(rng) * tags.size()) % tags.size()];
        if (u(rng) < 0.2 && !tag.empty()) tag[0] = static_cast<char>(std::toupper(tag[0]));
        post.hashtags.push_back(tag);
      }
    }
    const std::size_t n_generic = ad ? 12 + static_cast<std::size_t>(u(rng) * 8) : static_cast<std::size_t>(u(rng) * 4);
    for (std::size_t t = 0; t < n_generic; ++t) {
      const auto& pool = (ad && t % 2 == 0) ? kAdTags : kGenericTags;
      std::string tag = pool[t / 2 % pool.size()];
      if (std::find(post.hashtags.begin(), post.hashtags.end(), tag) == post.hashtags.end())
        post.hashtags.push_back(std::move(tag));
    }

    // Image feature: occasion prototype + noise.
    post.image_feature.resize(c.image_dim);
    for (std::size_t d = 0; d < c.image_dim; ++d)
      post.image_feature[d] =
          c.image_signal * protos.occasion[occ][d] + c.feature_noise_sigma * noise(rng);

    // Garments.
    const BoundingBox& body = people.front().body;
    for (std::size_t g = 0; g < n_garments; ++g) {
      GarmentLabels gl;
      const std::size_t cat = sample_row(rng, c.category_given_occasion[occ]);
      gl.category = v.categories()[cat];
      std::vector<double> feature = protos.category[cat];
      for (std::size_t a = 0; a < v.num_attributes(); ++a) {
        const std::size_t val = sample_row(rng, c.value_given_category[a][cat]);
        gl.attributes[v.attributes()[a].name] = v.attributes()[a].values[val];
        for (std::size_t d = 0; d < c.region_dim; ++d)
          feature[d] += c.attribute_signal * protos.value[a][val][d];
      }
      for (auto& x : feature) x += c.feature_noise_sigma * noise(rng);

      GarmentRegion region;
      region.region_id = "r" + std::to_string(g);
      region.box.width = std::max(1.0, std::floor(body.width * (0.5 + 0.4 * u(rng))));
      region.box.height = std::max(1.0, std::floor(body.height * (0.2 + 0.3 * u(rng))));
      region.box.x = std::floor(body.x + (body.width - region.box.width) * u(rng));
      region.box.y = std::floor(body.y + (body.height - region.box.height) * u(rng));
      region.box = clamp_into(region.box, w, h);
      if (u(rng) < c.rough_category_rate) region.rough_category = gl.category;
      region.feature = std::move(feature);
      post.garments.push_back(std::move(region));
      truth.garments.push_back(std::move(gl));
    }

    // Emitted labels: clean copy or corrupted through the planted matrices.
    const bool weak = u(rng) < c.weak_fraction;
    lp.labels = truth;
    if (weak) {
      lp.labels.source = LabelSource::kWeak;
      lp.labels.occasion = v.occasions()[emit_label(0, occ, true)];
      for (auto& gl : lp.labels.garments) {
        const std::size_t cat = *v.category_index(gl.category);
        gl.category = v.categories()[emit_label(1, cat, true)];
        for (std::size_t a = 0; a < v.num_attributes(); ++a) {
          auto& value = gl.attributes[v.attributes()[a].name];
          const std::size_t val = v.find_attribute_value(value)->value;
          value = v.attributes()[a].values[emit_label(2 + a, val, true)];
        }
      }
    }

    out.truth.true_labels.push_back(std::move(truth));
    out.truth.defects.push_back(defect);
    out.posts.push_back(std::move(lp));
  }
  return out;
}

nlohmann::json SyntheticTruth::to_json(const ConceptVocabulary& vocab) const {
  using nlohmann::json;
  json posts = json::array();
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    json garments = json::array();
    for (const auto& g : true_labels[i].garments)
      garments.push_back({{"category", g.category}, {"attributes", g.attributes}});
    posts.push_back({{"occasion", true_labels[i].occasion},
                     {"garments", garments},
                     {"defect", to_string(defects[i])}});
  }
  json trans = json::object();
  json conf = json::object();
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    if (!transitions.empty()) trans[vocab.task_name(k)] = transitions[k];
    conf[vocab.task_name(k)] = confusion[k];
  }
  return {{"posts", posts}, {"transitions", trans}, {"confusion", conf}};
}

SyntheticTruth SyntheticTruth::from_json(const nlohmann::json& j, const ConceptVocabulary& vocab) {
  SyntheticTruth t;
  for (const auto& p : j.at("posts")) {
    PostLabels l;
    l.occasion = p.at("occasion").get<std::string>();
    for (const auto& g : p.at("garments"))
      l.garments.push_back({g.at("category").get<std::string>(),
                            g.at("attributes").get<std::map<std::string, std::string>>()});
    t.true_labels.push_back(std::move(l));
    const auto d = p.value("defect", std::string("none"));
    PlantedDefect defect = PlantedDefect::kNone;
    for (auto cand : {PlantedDefect::kNoFaceBodyPair, PlantedDefect::kRatioViolation,
                      PlantedDefect::kAdLike})
      if (d == to_string(cand)) defect = cand;
    t.defects.push_back(defect);
  }
  const auto& trans = j.value("transitions", nlohmann::json::object());
  const auto& conf = j.value("confusion", nlohmann::json::object());
  for (std::size_t k = 0; k < vocab.num_tasks(); ++k) {
    const auto name = vocab.task_name(k);
    if (trans.contains(name)) t.transitions.push_back(trans[name].get<Matrix>());
    if (conf.contains(name))
      t.confusion.push_back(conf[name].get<std::vector<std::vector<std::size_t>>>());
  }
  return t;
}

nlohmann::json synthetic_config_to_json(const SyntheticConfig& c) {
  return {{"n_posts", c.n_posts},
          {"occasion_marginals", c.occasion_marginals},
          {"garment_count_probs", c.garment_count_probs},
          {"category_given_occasion", c.category_given_occasion},
          {"value_given_category", c.value_given_category},
          {"image_dim", c.image_dim},
          {"region_dim", c.region_dim},
          {"feature_noise_sigma", c.feature_noise_sigma},
          {"image_signal", c.image_signal},
          {"attribute_signal", c.attribute_signal},
          {"weak_fraction", c.weak_fraction},
          {"transitions", c.transitions},
          {"no_pair_fraction", c.no_pair_fraction},
          {"ratio_violation_fraction", c.ratio_violation_fraction},
          {"ad_fraction", c.ad_fraction},
          {"untagged_fraction", c.untagged_fraction},
          {"rough_category_rate", c.rough_category_rate},
          {"occasion_hashtags", c.occasion_hashtags},
          {"world_seed", c.world_seed},
          {"seed", c.seed},
          {"id_prefix", c.id_prefix}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, const ConceptVocabulary& vocab) {
  try {
    SyntheticConfig c = default_synthetic_config(vocab, j.value("n_posts", std::size_t{0}),
                                                 j.value("seed", std::uint64_t{0}));
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    read("occasion_marginals", c.occasion_marginals);
    read("garment_count_probs", c.garment_count_probs);
    read("category_given_occasion", c.category_given_occasion);
    read("value_given_category", c.value_given_category);
    read("image_dim", c.image_dim);
    read("region_dim", c.region_dim);
    read("feature_noise_sigma", c.feature_noise_sigma);
    read("image_signal", c.image_signal);
    read("attribute_signal", c.attribute_signal);
    read("weak_fraction", c.weak_fraction);
    read("transitions", c.transitions);
    read("no_pair_fraction", c.no_pair_fraction);
    read("ratio_violation_fraction", c.ratio_violation_fraction);
    read("ad_fraction", c.ad_fraction);
    read("untagged_fraction", c.untagged_fraction);
    read("rough_category_rate", c.rough_category_rate);
    read("occasion_hashtags", c.occasion_hashtags);
    read("world_seed", c.world_seed);
    read("id_prefix", c.id_prefix);
    // Shorthand: one transition family applied to every task.
    if (j.contains("transition")) {
      const auto& t = j["transition"];
      const auto kind = t.at("kind").get<std::string>();
      const double mass = t.at("off_mass").get<double>();
      c.transitions.clear();
      for (std::size_t k = 0; k < vocab.num_tasks(); ++k) {
        if (kind == "pair_flip") {
          c.transitions.push_back(pair_flip_transition(vocab.task_size(k), mass));
        } else if (kind == "uniform") {
          c.transitions.push_back(uniform_transition(vocab.task_size(k), mass));
        } else {
          throw SyntheticConfigError("unknown transition kind '" + kind + "'");
        }
      }
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SyntheticConfigError(std::string("malformed synthetic config: ") + e.what());
  }
}

}  // namespace fke
