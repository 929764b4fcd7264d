#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fke/concept_model.hpp"
#include "fke/corpus.hpp"
#include "fke/vocab.hpp"

namespace fke {

class KnowledgeBaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Gender as stored in the knowledge base: "female", "male" or "unknown".
inline constexpr std::string_view kUnknownGender = "unknown";

struct Provenance {
  std::string post_id;
  std::string region_id;

  auto operator<=>(const Provenance&) const = default;
};

struct FashionTriplet {
  std::string occasion;
  std::string gender;
  std::string category;
  std::map<std::string, std::string> attributes;  // attribute type -> value
  Provenance provenance;

  bool operator==(const FashionTriplet&) const = default;
};

// Aggregation identity, ordered lexicographically by field.
struct TripletKey {
  std::string occasion;
  std::string gender;
  std::string category;

  auto operator<=>(const TripletKey&) const = default;
};

inline TripletKey key_of(const FashionTriplet& t) { return {t.occasion, t.gender, t.category}; }

// Post-level metadata indexed alongside the triplets.
struct PostMeta {
  std::string post_id;
  std::vector<std::string> hashtags;  // normalized, sorted, unique
  std::int64_t timestamp = 0;
  std::optional<std::string> location;
  std::int64_t likes = 0;
  std::int64_t comments = 0;

  bool operator==(const PostMeta&) const = default;
};

PostMeta post_meta(const Post& post);

// One triplet per garment region. Gender is the majority over the post's
// person pairs; a tie or no gendered pair gives "unknown".
std::vector<FashionTriplet> build_triplets(const Post& post, const DecodedPrediction& prediction,
                                           const ConceptVocabulary& vocab);

using InstanceId = std::uint32_t;
// Instance ids ordered by provenance.
using PostingList = std::vector<InstanceId>;

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(ConceptVocabulary vocab) : vocab_(std::move(vocab)) {}

  // Adds a post and its triplets atomically. Throws KnowledgeBaseError, with
  // the knowledge base unchanged, on duplicate provenance, a triplet whose
  // post_id differs from meta, names outside the vocabulary, or a post_id
  // already present with different metadata.
  void insert(const PostMeta& meta, std::span<const FashionTriplet> triplets);

  const ConceptVocabulary& vocabulary() const { return vocab_; }
  const std::vector<FashionTriplet>& instances() const { return instances_; }
  const FashionTriplet& instance(InstanceId id) const { return instances_.at(id); }
  const std::map<TripletKey, std::size_t>& counts() const { return counts_; }
  const std::map<std::string, PostMeta>& posts() const { return posts_; }

  // Instances of each post, ordered by region id.
  const std::map<std::string, PostingList>& by_post() const { return by_post_; }
  const std::map<std::string, PostingList>& occasion_index() const { return occasion_; }
  const std::map<std::string, PostingList>& gender_index() const { return gender_; }
  const std::map<std::string, PostingList>& category_index() const { return category_; }
  // Keyed by attribute value name (values are unique across attribute types).
  const std::map<std::string, PostingList>& attribute_index() const { return attribute_; }
  // Metadata maps: value -> post ids (sorted).
  const std::map<std::string, std::vector<std::string>>& hashtag_index() const { return hashtag_; }
  const std::map<std::string, std::vector<std::string>>& location_index() const { return location_; }
  const std::map<std::int64_t, std::vector<std::string>>& timestamp_index() const { return timestamp_; }
  const std::map<std::int64_t, std::vector<std::string>>& likes_index() const { return likes_; }
  const std::map<std::int64_t, std::vector<std::string>>& comments_index() const { return comments_; }

  // Canonical form: instances sorted by provenance; independent of insertion order.
  nlohmann::json to_json() const;
  static KnowledgeBase from_json(const nlohmann::json& j);

  // Same content, counts and indexes (compared in canonical form).
  bool operator==(const KnowledgeBase& other) const;

 private:
  void add_posting(PostingList& list, InstanceId id);

  ConceptVocabulary vocab_;
  std::vector<FashionTriplet> instances_;
  std::map<Provenance, InstanceId> provenance_;
  std::map<TripletKey, std::size_t> counts_;
  std::map<std::string, PostMeta> posts_;
  std::map<std::string, PostingList> by_post_, occasion_, gender_, category_, attribute_;
  std::map<std::string, std::vector<std::string>> hashtag_, location_;
  std::map<std::int64_t, std::vector<std::string>> timestamp_, likes_, comments_;
};

// Snapshot layout, integers little-endian:
//   "FKKB" | u8 version | u64 payload length | payload (canonical JSON) | u32 crc32 of payload
// Indexes are rebuilt on load and the stored counts are checked against them.
void kb_save(const KnowledgeBase& kb, const std::filesystem::path& path);

// Throws KnowledgeBaseError on a missing file, version mismatch, truncation or checksum failure.
KnowledgeBase kb_load(const std::filesystem::path& path);

}  // namespace fke
