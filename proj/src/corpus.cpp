#include "fke/corpus.hpp"

#include <fstream>
#include <unordered_set>

namespace fke {
namespace {

using nlohmann::json;

json box_to_json(const BoundingBox& b) { return json::array({b.x, b.y, b.width, b.height}); }

BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw CorpusError("box must be [x, y, width, height]");
  BoundingBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.width > 0) || !(b.height > 0)) throw CorpusError("box with non-positive extent");
  return b;
}

json detection_to_json(const Detection& d) {
  return {{"box", box_to_json(d.box)}, {"confidence", d.confidence}};
}

Detection detection_from_json(const json& j) {
  Detection d{box_from_json(j.at("box")), j.value("confidence", 1.0)};
  if (d.confidence < 0 || d.confidence > 1) throw CorpusError("confidence outside [0, 1]");
  return d;
}

json pair_to_json(const PersonPair& p) {
  json j = {{"face", box_to_json(p.face)}, {"body", box_to_json(p.body)}, {"score", p.pair_score}};
  if (p.gender) j["gender"] = to_string(*p.gender);
  return j;
}

PersonPair pair_from_json(const json& j) {
  PersonPair p{box_from_json(j.at("face")), box_from_json(j.at("body")),
               j.at("score").get<double>(), std::nullopt};
  if (j.contains("gender")) p.gender = parse_gender(j["gender"].get<std::string>());
  return p;
}

void check_boxes(const Post& p) {
  auto check = [&](const BoundingBox& b, const char* what) {
    if (!b.valid_in(p.image_width, p.image_height))
      throw CorpusError(std::string(what) + " box outside image bounds in post " + p.post_id);
  };
  for (const auto& f : p.faces) check(f.box, "face");
  for (const auto& b : p.bodies) check(b.box, "body");
  for (const auto& g : p.garments) check(g.box, "garment");
}

}  // namespace

bool BoundingBox::valid_in(double image_width, double image_height) const {
  return width > 0 && height > 0 && x >= 0 && y >= 0 && x + width <= image_width &&
         y + height <= image_height;
}

std::string_view to_string(Gender g) { return g == Gender::kFemale ? "female" : "male"; }

std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "female") return Gender::kFemale;
  if (s == "male") return Gender::kMale;
  return std::nullopt;
}

std::string_view to_string(LabelSource s) { return s == LabelSource::kClean ? "clean" : "weak"; }

json post_to_json(const Post& p) {
  json j;
  j["post_id"] = p.post_id;
  j["image_width"] = p.image_width;
  j["image_height"] = p.image_height;
  j["caption"] = p.caption;
  j["hashtags"] = p.hashtags;
  j["timestamp"] = p.timestamp;
  j["location"] = p.location ? json(*p.location) : json(nullptr);
  j["likes"] = p.likes;
  j["comments"] = p.comments;
  j["faces"] = json::array();
  for (const auto& f : p.faces) j["faces"].push_back(detection_to_json(f));
  j["bodies"] = json::array();
  for (const auto& b : p.bodies) j["bodies"].push_back(detection_to_json(b));
  j["garments"] = json::array();
  for (const auto& g : p.garments) {
    j["garments"].push_back({{"region_id", g.region_id},
                             {"box", box_to_json(g.box)},
                             {"rough_category", g.rough_category ? json(*g.rough_category) : json(nullptr)},
                             {"feature", g.feature}});
  }
  j["gender_hint"] = p.gender_hint ? json(to_string(*p.gender_hint)) : json(nullptr);
  j["image_feature"] = p.image_feature;
  if (p.person_pairs) {
    j["person_pairs"] = json::array();
    for (const auto& pp : *p.person_pairs) j["person_pairs"].push_back(pair_to_json(pp));
  }
  return j;
}

Post post_from_json(const json& j) {
  Post p;
  if (!j.contains("post_id") || !j["post_id"].is_string() || j["post_id"].get<std::string>().empty())
    throw CorpusError("record missing post_id");
  p.post_id = j["post_id"].get<std::string>();
  p.image_width = j.at("image_width").get<double>();
  p.image_height = j.at("image_height").get<double>();
  if (!(p.image_width > 0) || !(p.image_height > 0))
    throw CorpusError("non-positive image size in post " + p.post_id);
  p.caption = j.value("caption", std::string{});
  p.hashtags = j.value("hashtags", std::vector<std::string>{});
  p.timestamp = j.at("timestamp").get<std::int64_t>();
  if (j.contains("location") && !j["location"].is_null()) p.location = j["location"].get<std::string>();
  p.likes = j.value("likes", std::int64_t{0});
  p.comments = j.value("comments", std::int64_t{0});
  if (p.likes < 0 || p.comments < 0) throw CorpusError("negative engagement in post " + p.post_id);
  for (const auto& f : j.value("faces", json::array())) p.faces.push_back(detection_from_json(f));
  for (const auto& b : j.value("bodies", json::array())) p.bodies.push_back(detection_from_json(b));
  std::unordered_set<std::string> region_ids;
  for (const auto& g : j.value("garments", json::array())) {
    GarmentRegion r;
    r.region_id = g.at("region_id").get<std::string>();
    if (!region_ids.insert(r.region_id).second)
      throw CorpusError("duplicate region_id " + r.region_id + " in post " + p.post_id);
    r.box = box_from_json(g.at("box"));
    if (g.contains("rough_category") && !g["rough_category"].is_null())
      r.rough_category = g["rough_category"].get<std::string>();
    r.feature = g.at("feature").get<std::vector<double>>();
    p.garments.push_back(std::move(r));
  }
  if (j.contains("gender_hint") && !j["gender_hint"].is_null()) {
    p.gender_hint = parse_gender(j["gender_hint"].get<std::string>());
    if (!p.gender_hint) throw CorpusError("unknown gender_hint in post " + p.post_id);
  }
  p.image_feature = j.at("image_feature").get<std::vector<double>>();
  if (j.contains("person_pairs")) {
    p.person_pairs.emplace();
    for (const auto& pp : j["person_pairs"]) p.person_pairs->push_back(pair_from_json(pp));
  }
  check_boxes(p);
  return p;
}

std::string format_record(const CorpusRecord& r) {
  json j = post_to_json(r.post);
  if (r.labels) {
    json garments = json::array();
    for (const auto& g : r.labels->garments)
      garments.push_back({{"category", g.category}, {"attributes", g.attributes}});
    j["labels"] = {{"occasion", r.labels->occasion},
                   {"garments", garments},
                   {"source", to_string(r.labels->source)}};
  }
  return j.dump();
}

CorpusRecord parse_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw CorpusError("record is not an object");
  try {
    CorpusRecord r{post_from_json(j), std::nullopt};
    if (j.contains("labels") && !j["labels"].is_null()) {
      const auto& l = j["labels"];
      PostLabels labels;
      labels.occasion = l.at("occasion").get<std::string>();
      for (const auto& g : l.at("garments")) {
        labels.garments.push_back({g.at("category").get<std::string>(),
                                   g.at("attributes").get<std::map<std::string, std::string>>()});
      }
      auto src = l.value("source", std::string("clean"));
      if (src == "clean") {
        labels.source = LabelSource::kClean;
      } else if (src == "weak") {
        labels.source = LabelSource::kWeak;
      } else {
        throw CorpusError("unknown label source '" + src + "'");
      }
      if (labels.garments.size() != r.post.garments.size())
        throw CorpusError("label count does not match garment count in post " + r.post.post_id);
      r.labels = std::move(labels);
    }
    return r;
  } catch (const json::exception& e) {
    throw CorpusError(std::string("schema violation: ") + e.what());
  }
}

void validate_corpus(std::span<const CorpusRecord> records) {
  std::unordered_set<std::string> ids;
  std::optional<std::size_t> img_dim, reg_dim;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Post& p = records[i].post;
    if (!ids.insert(p.post_id).second) throw CorpusError("duplicate post_id " + p.post_id, i + 1);
    if (!img_dim) img_dim = p.image_feature.size();
    if (p.image_feature.size() != *img_dim)
      throw CorpusError("image feature dimension mismatch: " + std::to_string(p.image_feature.size()) +
                            " vs " + std::to_string(*img_dim),
                        i + 1);
    for (const auto& g : p.garments) {
      if (!reg_dim) reg_dim = g.feature.size();
      if (g.feature.size() != *reg_dim)
        throw CorpusError("region feature dimension mismatch: " + std::to_string(g.feature.size()) +
                              " vs " + std::to_string(*reg_dim),
                          i + 1);
    }
  }
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(parse_record(line));
    } catch (const CorpusError& e) {
      throw CorpusError(e.what(), line_no);
    }
  }
  validate_corpus(records);
  return records;
}

void write_corpus(std::span<const CorpusRecord> records, const std::filesystem::path& path) {
  validate_corpus(records);
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus " + path.string());
  for (const auto& r : records) out << format_record(r) << '\n';
  if (!out) throw CorpusError("write failed for " + path.string());
}

std::vector<LabeledPost> read_labeled_corpus(const std::filesystem::path& path) {
  auto records = read_corpus(path);
  std::vector<LabeledPost> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].labels) throw CorpusError("record has no labels", i + 1);
    out.push_back({std::move(records[i].post), std::move(*records[i].labels)});
  }
  return out;
}

void write_corpus(std::span<const LabeledPost> posts, const std::filesystem::path& path) {
  std::vector<CorpusRecord> records;
  records.reserve(posts.size());
  for (const auto& lp : posts) records.push_back({lp.post, lp.labels});
  write_corpus(records, path);
}

void write_corpus(std::span<const Post> posts, const std::filesystem::path& path) {
  std::vector<CorpusRecord> records;
  records.reserve(posts.size());
  for (const auto& p : posts) records.push_back({p, std::nullopt});
  write_corpus(records, path);
}

}  // namespace fke
