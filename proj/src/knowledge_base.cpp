#include "fke/knowledge_base.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "fke/ingest.hpp"

namespace fke {
namespace {

constexpr char kMagic[4] = {'F', 'K', 'K', 'B'};
constexpr std::uint8_t kVersion = 1;

void add_post_id(std::vector<std::string>& ids, const std::string& id) {
  ids.insert(std::lower_bound(ids.begin(), ids.end(), id), id);
}

nlohmann::json meta_to_json(const PostMeta& m) {
  nlohmann::json j = {{"post_id", m.post_id},
                      {"hashtags", m.hashtags},
                      {"timestamp", m.timestamp},
                      {"likes", m.likes},
                      {"comments", m.comments}};
  if (m.location) j["location"] = *m.location;
  return j;
}

PostMeta meta_from_json(const nlohmann::json& j) {
  PostMeta m;
  m.post_id = j.at("post_id");
  m.hashtags = j.at("hashtags").get<std::vector<std::string>>();
  m.timestamp = j.at("timestamp");
  m.likes = j.at("likes");
  m.comments = j.at("comments");
  if (j.contains("location")) m.location = j["location"].get<std::string>();
  return m;
}

nlohmann::json triplet_to_json(const FashionTriplet& t) {
  return {{"occasion", t.occasion},
          {"gender", t.gender},
          {"category", t.category},
          {"attributes", t.attributes},
          {"post_id", t.provenance.post_id},
          {"region_id", t.provenance.region_id}};
}

FashionTriplet triplet_from_json(const nlohmann::json& j) {
  FashionTriplet t;
  t.occasion = j.at("occasion");
  t.gender = j.at("gender");
  t.category = j.at("category");
  t.attributes = j.at("attributes").get<std::map<std::string, std::string>>();
  t.provenance = {j.at("post_id"), j.at("region_id")};
  return t;
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

PostMeta post_meta(const Post& post) {
  PostMeta m;
  m.post_id = post.post_id;
  std::set<std::string> tags;
  for (const auto& h : post.hashtags) {
    auto n = normalize_hashtag(h);
    if (!n.empty()) tags.insert(std::move(n));
  }
  m.hashtags.assign(tags.begin(), tags.end());
  m.timestamp = post.timestamp;
  m.location = post.location;
  m.likes = post.likes;
  m.comments = post.comments;
  return m;
}

std::vector<FashionTriplet> build_triplets(const Post& post, const DecodedPrediction& prediction,
                                           const ConceptVocabulary& vocab) {
  std::vector<FashionTriplet> out;
  if (post.garments.empty()) return out;
  if (prediction.garments.size() != post.garments.size())
    throw KnowledgeBaseError("post " + post.post_id + " has " + std::to_string(post.garments.size()) +
                             " garments but the prediction has " + std::to_string(prediction.garments.size()));
  std::size_t female = 0, male = 0;
  if (post.person_pairs) {
    for (const auto& p : *post.person_pairs) {
      if (p.gender == Gender::kFemale) ++female;
      if (p.gender == Gender::kMale) ++male;
    }
  }
  const std::string gender = female > male   ? std::string(to_string(Gender::kFemale))
                             : male > female ? std::string(to_string(Gender::kMale))
                                             : std::string(kUnknownGender);
  const std::string occasion = vocab.occasions().at(prediction.occasion);
  for (std::size_t g = 0; g < post.garments.size(); ++g) {
    const auto& dg = prediction.garments[g];
    FashionTriplet t;
    t.occasion = occasion;
    t.gender = gender;
    t.category = vocab.categories().at(dg.category);
    for (std::size_t a = 0; a < vocab.num_attributes(); ++a)
      t.attributes[vocab.attributes()[a].name] = vocab.attributes()[a].values.at(dg.attributes.at(a));
    t.provenance = {post.post_id, post.garments[g].region_id};
    out.push_back(std::move(t));
  }
  return out;
}

void KnowledgeBase::add_posting(PostingList& list, InstanceId id) {
  const auto& key = instances_[id].provenance;
  auto pos = std::lower_bound(list.begin(), list.end(), key,
                              [&](InstanceId a, const Provenance& k) { return instances_[a].provenance < k; });
  list.insert(pos, id);
}

void KnowledgeBase::insert(const PostMeta& meta, std::span<const FashionTriplet> triplets) {
  auto existing = posts_.find(meta.post_id);
  if (existing != posts_.end() && !(existing->second == meta))
    throw KnowledgeBaseError("post " + meta.post_id + " already indexed with different metadata");
  std::set<Provenance> batch;
  for (const auto& t : triplets) {
    const std::string where = " (" + t.provenance.post_id + ", " + t.provenance.region_id + ")";
    if (t.provenance.post_id != meta.post_id)
      throw KnowledgeBaseError("triplet" + where + " does not belong to post " + meta.post_id);
    if (provenance_.count(t.provenance) || !batch.insert(t.provenance).second)
      throw KnowledgeBaseError("duplicate provenance" + where);
    if (!vocab_.occasion_index(t.occasion)) throw KnowledgeBaseError("unknown occasion '" + t.occasion + "'" + where);
    if (!vocab_.category_index(t.category)) throw KnowledgeBaseError("unknown category '" + t.category + "'" + where);
    if (t.gender != "female" && t.gender != "male" && t.gender != kUnknownGender)
      throw KnowledgeBaseError("unknown gender '" + t.gender + "'" + where);
    for (const auto& [type, value] : t.attributes) {
      auto ref = vocab_.find_attribute_value(value);
      if (!ref || vocab_.attributes()[ref->attribute].name != type)
        throw KnowledgeBaseError("'" + value + "' is not a value of attribute '" + type + "'" + where);
    }
  }

  if (existing == posts_.end()) {
    posts_.emplace(meta.post_id, meta);
    by_post_[meta.post_id];
    if (meta.location) add_post_id(location_[*meta.location], meta.post_id);
    for (const auto& tag : meta.hashtags) add_post_id(hashtag_[tag], meta.post_id);
    add_post_id(timestamp_[meta.timestamp], meta.post_id);
    add_post_id(likes_[meta.likes], meta.post_id);
    add_post_id(comments_[meta.comments], meta.post_id);
  }
  for (const auto& t : triplets) {
    const auto id = static_cast<InstanceId>(instances_.size());
    instances_.push_back(t);
    provenance_.emplace(t.provenance, id);
    ++counts_[key_of(t)];
    add_posting(by_post_[meta.post_id], id);
    add_posting(occasion_[t.occasion], id);
    add_posting(gender_[t.gender], id);
    add_posting(category_[t.category], id);
    for (const auto& [type, value] : t.attributes) add_posting(attribute_[value], id);
  }
}

nlohmann::json KnowledgeBase::to_json() const {
  nlohmann::json posts = nlohmann::json::array();
  for (const auto& [id, meta] : posts_) posts.push_back(meta_to_json(meta));
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& [prov, id] : provenance_) instances.push_back(triplet_to_json(instances_[id]));
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [k, n] : counts_)
    counts.push_back({{"occasion", k.occasion}, {"gender", k.gender}, {"category", k.category}, {"count", n}});
  return {{"vocabulary", vocab_.to_json()}, {"posts", posts}, {"instances", instances}, {"counts", counts}};
}

KnowledgeBase KnowledgeBase::from_json(const nlohmann::json& j) {
  try {
    KnowledgeBase kb(ConceptVocabulary::from_json(j.at("vocabulary")));
    std::map<std::string, std::vector<FashionTriplet>> by_post;
    for (const auto& jt : j.at("instances")) {
      auto t = triplet_from_json(jt);
      by_post[t.provenance.post_id].push_back(std::move(t));
    }
    for (const auto& jp : j.at("posts")) {
      const PostMeta meta = meta_from_json(jp);
      auto it = by_post.find(meta.post_id);
      if (it == by_post.end()) {
        kb.insert(meta, {});
      } else {
        kb.insert(meta, it->second);
        by_post.erase(it);
      }
    }
    if (!by_post.empty())
      throw KnowledgeBaseError("instances reference post " + by_post.begin()->first + " which has no metadata");
    std::map<TripletKey, std::size_t> stored;
    for (const auto& jc : j.at("counts"))
      stored[{jc.at("occasion"), jc.at("gender"), jc.at("category")}] = jc.at("count");
    if (stored != kb.counts_) throw KnowledgeBaseError("stored counts disagree with the instances");
    return kb;
  } catch (const nlohmann::json::exception& e) {
    throw KnowledgeBaseError(std::string("malformed knowledge base: ") + e.what());
  } catch (const VocabularyError& e) {
    throw KnowledgeBaseError(std::string("malformed knowledge base vocabulary: ") + e.what());
  }
}

bool KnowledgeBase::operator==(const KnowledgeBase& other) const {
  if (!(vocab_ == other.vocab_) || counts_ != other.counts_ || posts_ != other.posts_ ||
      instances_.size() != other.instances_.size() || hashtag_ != other.hashtag_ || location_ != other.location_ ||
      timestamp_ != other.timestamp_ || likes_ != other.likes_ || comments_ != other.comments_)
    return false;
  for (auto a = provenance_.begin(), b = other.provenance_.begin(); a != provenance_.end(); ++a, ++b)
    if (!(instances_[a->second] == other.instances_[b->second])) return false;
  // Posting lists hold ids, which depend on insertion order; compare the provenances they point at.
  auto same = [&](const std::map<std::string, PostingList>& x, const std::map<std::string, PostingList>& y) {
    if (x.size() != y.size()) return false;
    for (auto i = x.begin(), k = y.begin(); i != x.end(); ++i, ++k) {
      if (i->first != k->first || i->second.size() != k->second.size()) return false;
      for (std::size_t n = 0; n < i->second.size(); ++n)
        if (instances_[i->second[n]].provenance != other.instances_[k->second[n]].provenance) return false;
    }
    return true;
  };
  return same(by_post_, other.by_post_) && same(occasion_, other.occasion_) && same(gender_, other.gender_) &&
         same(category_, other.category_) && same(attribute_, other.attribute_);
}

void kb_save(const KnowledgeBase& kb, const std::filesystem::path& path) {
  const std::string payload = kb.to_json().dump();
  std::string bytes(kMagic, kMagic + 4);
  bytes.push_back(static_cast<char>(kVersion));
  put_le(bytes, payload.size(), 8);
  bytes += payload;
  put_le(bytes, crc(payload.data(), payload.size()), 4);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw KnowledgeBaseError("cannot write knowledge base " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw KnowledgeBaseError("write failed for knowledge base " + path.string());
}

KnowledgeBase kb_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw KnowledgeBaseError("cannot open knowledge base " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string where = " in knowledge base " + path.string();
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw KnowledgeBaseError("corrupt: bad magic" + where);
  if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
    throw KnowledgeBaseError("version mismatch: file has " + std::to_string(static_cast<unsigned char>(bytes[4])) +
                             ", expected " + std::to_string(kVersion) + where);
  if (bytes.size() < 17) throw KnowledgeBaseError("corrupt: truncated header" + where);
  const std::uint64_t n = get_le(bytes, 5, 8);
  if (bytes.size() != 13 + n + 4) throw KnowledgeBaseError("corrupt: truncated or padded payload" + where);
  if (get_le(bytes, 13 + n, 4) != crc(bytes.data() + 13, n)) throw KnowledgeBaseError("corrupt: checksum mismatch" + where);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + 13, bytes.begin() + 13 + static_cast<std::ptrdiff_t>(n));
  } catch (const nlohmann::json::exception& e) {
    throw KnowledgeBaseError(std::string("corrupt: ") + e.what() + where);
  }
  return KnowledgeBase::from_json(j);
}

}  // namespace fke
