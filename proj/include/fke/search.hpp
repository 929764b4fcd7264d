#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fke/corpus.hpp"
#include "fke/knowledge_base.hpp"

namespace fke {

enum class QueryMode { kTriplets, kPosts };

inline constexpr std::size_t kDefaultLimit = 24;
inline constexpr std::size_t kMaxLimit = 200;

// Facets combine with AND. Several values for one facet combine with OR;
// attribute values are grouped by attribute type, so "red" and "blue" are
// alternatives while "red" and "slim" must both hold.
struct Query {
  QueryMode mode = QueryMode::kTriplets;
  std::vector<std::string> occasions;
  std::vector<std::string> genders;
  std::vector<std::string> categories;
  std::vector<std::string> attribute_values;
  std::vector<std::string> hashtags;  // normalized on parse
  std::vector<std::string> locations;
  std::optional<std::int64_t> time_from;  // inclusive
  std::optional<std::int64_t> time_to;    // inclusive
  std::optional<std::int64_t> min_likes;
  std::optional<std::int64_t> min_comments;
  std::size_t offset = 0;
  std::size_t limit = kDefaultLimit;

  bool has_concept_facets() const {
    return !occasions.empty() || !genders.empty() || !categories.empty() || !attribute_values.empty();
  }
  bool operator==(const Query&) const = default;
};

// Client error with a stable machine-readable code: unknown_parameter,
// malformed_value, malformed_range or unknown_facet_value.
class SearchError : public std::invalid_argument {
 public:
  SearchError(std::string code, std::string facet, std::string message,
              std::vector<std::string> valid_values = {})
      : std::invalid_argument(message),
        code_(std::move(code)),
        facet_(std::move(facet)),
        valid_values_(std::move(valid_values)) {}

  const std::string& code() const { return code_; }
  const std::string& facet() const { return facet_; }
  const std::vector<std::string>& valid_values() const { return valid_values_; }
  nlohmann::json to_json() const;

 private:
  std::string code_, facet_;
  std::vector<std::string> valid_values_;
};

// Parameters use the snake_case field names: occasion, gender, category,
// attribute_value, hashtag, location, time_from, time_to, min_likes,
// min_comments, offset, limit. A facet may repeat or carry comma-separated values.
Query parse_query(const std::multimap<std::string, std::string>& params, QueryMode mode);

// Canonical, order-stable encoding; parse_query(to_query_string(q)) == q.
std::string to_query_string(const Query& q);
std::multimap<std::string, std::string> parse_query_string(std::string_view qs);

// Throws SearchError for facet values absent from the vocabulary or indexes,
// and for an inverted time range.
void validate_query(const KnowledgeBase& kb, const Query& q);

struct TripletResult {
  TripletKey key;
  std::size_t count = 0;
  std::vector<Provenance> samples;  // first matching instances by provenance, at most kMaxSamples

  bool operator==(const TripletResult&) const = default;
};
inline constexpr std::size_t kMaxSamples = 8;

struct TripletPage {
  std::vector<TripletResult> results;
  std::size_t total = 0;
  std::size_t offset = 0;
  std::size_t limit = 0;
};

struct PostResult {
  PostMeta meta;
  std::vector<FashionTriplet> triplets;  // all of the post's instances, by region id

  bool operator==(const PostResult&) const = default;
};

struct PostPage {
  std::vector<PostResult> results;
  std::size_t total = 0;
  std::size_t offset = 0;
  std::size_t limit = 0;
};

// Counts only instances matching every facet; ranked by count descending, then key.
TripletPage query_triplets(const KnowledgeBase& kb, const Query& q);

// Posts satisfying the metadata predicates with at least one instance
// matching the concept facets (any post when no concept facet is given);
// ranked by likes descending, then post_id.
PostPage query_posts(const KnowledgeBase& kb, const Query& q);

nlohmann::json to_json(const TripletPage& page);
// `corpus`, when given, adds caption and image size to each post.
nlohmann::json to_json(const PostPage& page, const std::map<std::string, Post>* corpus = nullptr);

// Facet options for clients: vocabulary plus genders, hashtags and locations present in the index.
nlohmann::json vocab_response(const KnowledgeBase& kb);

}  // namespace fke
