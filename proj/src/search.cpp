#include "fke/search.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "fke/ingest.hpp"

namespace fke {
namespace {

const std::vector<std::string> kParams = {"occasion", "gender",   "category",  "attribute_value",
                                          "hashtag",  "location", "time_from", "time_to",
                                          "min_likes", "min_comments", "offset", "limit"};
const std::vector<std::string> kGenders = {"female", "male", "unknown"};

std::int64_t parse_int(const std::string& facet, const std::string& text) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw SearchError("malformed_value", facet, facet + " must be an integer, got '" + text + "'");
  return v;
}

void add_unique(std::vector<std::string>& out, std::string v) {
  if (!v.empty() && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(std::move(v));
}

void split_into(std::vector<std::string>& out, const std::string& value, bool hashtag) {
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    const std::size_t end = comma == std::string::npos ? value.size() : comma;
    std::string item = value.substr(start, end - start);
    add_unique(out, hashtag ? normalize_hashtag(item) : item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

std::string percent_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

std::string percent_decode(std::string_view s) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out.push_back(' ');
    } else if (s[i] == '%' && i + 2 < s.size() && nibble(s[i + 1]) >= 0 && nibble(s[i + 2]) >= 0) {
      out.push_back(static_cast<char>(nibble(s[i + 1]) * 16 + nibble(s[i + 2])));
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

void require_known(const std::string& facet, const std::vector<std::string>& values,
                   const std::vector<std::string>& valid) {
  for (const auto& v : values)
    if (std::find(valid.begin(), valid.end(), v) == valid.end())
      throw SearchError("unknown_facet_value", facet, "unknown " + facet + " '" + v + "'", valid);
}

template <class Map>
std::vector<std::string> keys_of(const Map& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

// Sorted instance ids of the union of the postings for `values`.
std::vector<InstanceId> union_of(const std::map<std::string, PostingList>& index,
                                 const std::vector<std::string>& values) {
  std::vector<InstanceId> out;
  for (const auto& v : values) {
    auto it = index.find(v);
    if (it != index.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<InstanceId> intersect(const std::vector<InstanceId>& a, const std::vector<InstanceId>& b) {
  std::vector<InstanceId> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::set<std::string> posts_of(const std::map<std::string, std::vector<std::string>>& index,
                               const std::vector<std::string>& values) {
  std::set<std::string> s;
  for (const auto& v : values) {
    auto it = index.find(v);
    if (it != index.end()) s.insert(it->second.begin(), it->second.end());
  }
  return s;
}

// Posts satisfying every metadata predicate; nullopt means unrestricted.
std::optional<std::set<std::string>> metadata_posts(const KnowledgeBase& kb, const Query& q) {
  std::optional<std::set<std::string>> allowed;
  auto restrict = [&](std::set<std::string> s) {
    if (!allowed) {
      allowed = std::move(s);
      return;
    }
    std::set<std::string> both;
    std::set_intersection(allowed->begin(), allowed->end(), s.begin(), s.end(), std::inserter(both, both.end()));
    allowed = std::move(both);
  };
  if (!q.hashtags.empty()) restrict(posts_of(kb.hashtag_index(), q.hashtags));
  if (!q.locations.empty()) restrict(posts_of(kb.location_index(), q.locations));
  auto range = [&](const std::map<std::int64_t, std::vector<std::string>>& index, std::optional<std::int64_t> lo,
                   std::optional<std::int64_t> hi) {
    std::set<std::string> s;
    auto it = lo ? index.lower_bound(*lo) : index.begin();
    auto end = hi ? index.upper_bound(*hi) : index.end();
    for (; it != end && (!hi || it->first <= *hi); ++it) s.insert(it->second.begin(), it->second.end());
    restrict(std::move(s));
  };
  if (q.time_from || q.time_to) range(kb.timestamp_index(), q.time_from, q.time_to);
  if (q.min_likes) range(kb.likes_index(), q.min_likes, std::nullopt);
  if (q.min_comments) range(kb.comments_index(), q.min_comments, std::nullopt);
  return allowed;
}

// Instances matching every facet, sorted by id; nullopt when no facet restricts instances.
std::optional<std::vector<InstanceId>> matching_instances(const KnowledgeBase& kb, const Query& q,
                                                          bool include_metadata) {
  std::optional<std::vector<InstanceId>> ids;
  auto restrict = [&](std::vector<InstanceId> s) { ids = ids ? intersect(*ids, s) : std::move(s); };
  if (!q.occasions.empty()) restrict(union_of(kb.occasion_index(), q.occasions));
  if (!q.genders.empty()) restrict(union_of(kb.gender_index(), q.genders));
  if (!q.categories.empty()) restrict(union_of(kb.category_index(), q.categories));
  if (!q.attribute_values.empty()) {
    std::map<std::size_t, std::vector<std::string>> by_type;
    for (const auto& v : q.attribute_values) by_type[kb.vocabulary().find_attribute_value(v)->attribute].push_back(v);
    for (const auto& [type, values] : by_type) restrict(union_of(kb.attribute_index(), values));
  }
  if (include_metadata) {
    if (auto posts = metadata_posts(kb, q)) {
      std::vector<InstanceId> s;
      for (const auto& id : *posts) {
        const auto& list = kb.by_post().at(id);
        s.insert(s.end(), list.begin(), list.end());
      }
      std::sort(s.begin(), s.end());
      restrict(std::move(s));
    }
  }
  return ids;
}

template <class T>
std::vector<T> page_of(const std::vector<T>& all, std::size_t offset, std::size_t limit) {
  if (offset >= all.size()) return {};
  const auto first = all.begin() + static_cast<std::ptrdiff_t>(offset);
  return {first, first + static_cast<std::ptrdiff_t>(std::min(limit, all.size() - offset))};
}

nlohmann::json key_json(const TripletKey& k) {
  return {{"occasion", k.occasion}, {"gender", k.gender}, {"category", k.category}};
}

nlohmann::json triplet_json(const FashionTriplet& t) {
  return {{"occasion", t.occasion},
          {"gender", t.gender},
          {"category", t.category},
          {"attributes", t.attributes},
          {"post_id", t.provenance.post_id},
          {"region_id", t.provenance.region_id}};
}

}  // namespace

nlohmann::json SearchError::to_json() const {
  nlohmann::json e = {{"code", code_}, {"message", what()}};
  if (!facet_.empty()) e["facet"] = facet_;
  if (!valid_values_.empty()) e["valid_values"] = valid_values_;
  return {{"error", e}};
}

Query parse_query(const std::multimap<std::string, std::string>& params, QueryMode mode) {
  Query q;
  q.mode = mode;
  for (const auto& [key, value] : params) {
    if (key == "occasion") {
      split_into(q.occasions, value, false);
    } else if (key == "gender") {
      split_into(q.genders, value, false);
    } else if (key == "category") {
      split_into(q.categories, value, false);
    } else if (key == "attribute_value") {
      split_into(q.attribute_values, value, false);
    } else if (key == "hashtag") {
      split_into(q.hashtags, value, true);
    } else if (key == "location") {
      add_unique(q.locations, value);
    } else if (key == "time_from") {
      q.time_from = parse_int(key, value);
    } else if (key == "time_to") {
      q.time_to = parse_int(key, value);
    } else if (key == "min_likes" || key == "min_comments") {
      const auto v = parse_int(key, value);
      if (v < 0) throw SearchError("malformed_value", key, key + " must be non-negative");
      (key == "min_likes" ? q.min_likes : q.min_comments) = v;
    } else if (key == "offset") {
      const auto v = parse_int(key, value);
      if (v < 0) throw SearchError("malformed_value", key, "offset must be non-negative");
      q.offset = static_cast<std::size_t>(v);
    } else if (key == "limit") {
      const auto v = parse_int(key, value);
      if (v < 1 || v > static_cast<std::int64_t>(kMaxLimit))
        throw SearchError("malformed_value", key, "limit must lie in [1, " + std::to_string(kMaxLimit) + "]");
      q.limit = static_cast<std::size_t>(v);
    } else {
      throw SearchError("unknown_parameter", key, "unknown query parameter '" + key + "'", kParams);
    }
  }
  if (q.time_from && q.time_to && *q.time_from > *q.time_to)
    throw SearchError("malformed_range", "time_from", "time_from is after time_to");
  return q;
}

std::string to_query_string(const Query& q) {
  std::string out;
  auto emit = [&](const std::string& key, const std::string& value) {
    if (!out.empty()) out += '&';
    out += key + "=" + percent_encode(value);
  };
  for (const auto& v : q.occasions) emit("occasion", v);
  for (const auto& v : q.genders) emit("gender", v);
  for (const auto& v : q.categories) emit("category", v);
  for (const auto& v : q.attribute_values) emit("attribute_value", v);
  for (const auto& v : q.hashtags) emit("hashtag", v);
  for (const auto& v : q.locations) emit("location", v);
  if (q.time_from) emit("time_from", std::to_string(*q.time_from));
  if (q.time_to) emit("time_to", std::to_string(*q.time_to));
  if (q.min_likes) emit("min_likes", std::to_string(*q.min_likes));
  if (q.min_comments) emit("min_comments", std::to_string(*q.min_comments));
  if (q.offset) emit("offset", std::to_string(q.offset));
  if (q.limit != kDefaultLimit) emit("limit", std::to_string(q.limit));
  return out;
}

std::multimap<std::string, std::string> parse_query_string(std::string_view qs) {
  std::multimap<std::string, std::string> out;
  while (!qs.empty()) {
    const auto amp = qs.find('&');
    const auto part = qs.substr(0, amp);
    if (!part.empty()) {
      const auto eq = part.find('=');
      out.emplace(percent_decode(part.substr(0, eq)),
                  eq == std::string_view::npos ? std::string() : percent_decode(part.substr(eq + 1)));
    }
    if (amp == std::string_view::npos) break;
    qs.remove_prefix(amp + 1);
  }
  return out;
}

void validate_query(const KnowledgeBase& kb, const Query& q) {
  const auto& v = kb.vocabulary();
  require_known("occasion", q.occasions, v.occasions());
  require_known("gender", q.genders, kGenders);
  require_known("category", q.categories, v.categories());
  for (const auto& a : q.attribute_values) {
    if (!v.find_attribute_value(a)) {
      std::vector<std::string> all;
      for (const auto& t : v.attributes()) all.insert(all.end(), t.values.begin(), t.values.end());
      throw SearchError("unknown_facet_value", "attribute_value", "unknown attribute value '" + a + "'", all);
    }
  }
  require_known("hashtag", q.hashtags, keys_of(kb.hashtag_index()));
  require_known("location", q.locations, keys_of(kb.location_index()));
  if (q.time_from && q.time_to && *q.time_from > *q.time_to)
    throw SearchError("malformed_range", "time_from", "time_from is after time_to");
}

TripletPage query_triplets(const KnowledgeBase& kb, const Query& q) {
  validate_query(kb, q);
  std::map<TripletKey, TripletResult> agg;
  auto add = [&](InstanceId id) {
    const auto& t = kb.instance(id);
    auto& r = agg[key_of(t)];
    r.key = key_of(t);
    ++r.count;
  };
  const auto ids = matching_instances(kb, q, true);
  if (ids) {
    for (InstanceId id : *ids) add(id);
  } else {
    for (InstanceId id = 0; id < kb.instances().size(); ++id) add(id);
  }
  // Samples in provenance order: walk each key's instances via the post index.
  std::vector<char> matched;
  if (ids) {
    matched.assign(kb.instances().size(), 0);
    for (InstanceId id : *ids) matched[id] = 1;
  }
  for (const auto& [post, list] : kb.by_post()) {
    for (InstanceId id : list) {
      if (ids && !matched[id]) continue;
      auto& r = agg.at(key_of(kb.instance(id)));
      if (r.samples.size() < kMaxSamples) r.samples.push_back(kb.instance(id).provenance);
    }
  }
  std::vector<TripletResult> all;
  for (auto& [k, r] : agg) all.push_back(std::move(r));
  std::stable_sort(all.begin(), all.end(), [](const TripletResult& a, const TripletResult& b) {
    return a.count != b.count ? a.count > b.count : a.key < b.key;
  });
  return {page_of(all, q.offset, q.limit), all.size(), q.offset, q.limit};
}

PostPage query_posts(const KnowledgeBase& kb, const Query& q) {
  validate_query(kb, q);
  std::set<std::string> candidates;
  if (q.has_concept_facets()) {
    const auto ids = matching_instances(kb, q, false);
    for (InstanceId id : *ids) candidates.insert(kb.instance(id).provenance.post_id);
  } else {
    for (const auto& [id, meta] : kb.posts()) candidates.insert(id);
  }
  if (auto allowed = metadata_posts(kb, q)) {
    std::set<std::string> both;
    std::set_intersection(candidates.begin(), candidates.end(), allowed->begin(), allowed->end(),
                          std::inserter(both, both.end()));
    candidates = std::move(both);
  }
  std::vector<const PostMeta*> ranked;
  for (const auto& id : candidates) ranked.push_back(&kb.posts().at(id));
  std::sort(ranked.begin(), ranked.end(), [](const PostMeta* a, const PostMeta* b) {
    return a->likes != b->likes ? a->likes > b->likes : a->post_id < b->post_id;
  });
  PostPage page{{}, ranked.size(), q.offset, q.limit};
  for (const PostMeta* m : page_of(ranked, q.offset, q.limit)) {
    PostResult r{*m, {}};
    for (InstanceId id : kb.by_post().at(m->post_id)) r.triplets.push_back(kb.instance(id));
    page.results.push_back(std::move(r));
  }
  return page;
}

nlohmann::json to_json(const TripletPage& page) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& r : page.results) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& p : r.samples) samples.push_back({{"post_id", p.post_id}, {"region_id", p.region_id}});
    results.push_back({{"key", key_json(r.key)}, {"count", r.count}, {"samples", samples}});
  }
  return {{"results", results}, {"total", page.total}, {"offset", page.offset}, {"limit", page.limit}};
}

nlohmann::json to_json(const PostPage& page, const std::map<std::string, Post>* corpus) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& r : page.results) {
    nlohmann::json triplets = nlohmann::json::array();
    for (const auto& t : r.triplets) triplets.push_back(triplet_json(t));
    nlohmann::json j = {{"post_id", r.meta.post_id},
                        {"hashtags", r.meta.hashtags},
                        {"timestamp", r.meta.timestamp},
                        {"likes", r.meta.likes},
                        {"comments", r.meta.comments},
                        {"location", r.meta.location ? nlohmann::json(*r.meta.location) : nlohmann::json()},
                        {"triplets", triplets}};
    if (corpus) {
      auto it = corpus->find(r.meta.post_id);
      if (it != corpus->end()) {
        j["caption"] = it->second.caption;
        j["image_width"] = it->second.image_width;
        j["image_height"] = it->second.image_height;
      }
    }
    results.push_back(std::move(j));
  }
  return {{"results", results}, {"total", page.total}, {"offset", page.offset}, {"limit", page.limit}};
}

nlohmann::json vocab_response(const KnowledgeBase& kb) {
  nlohmann::json j = kb.vocabulary().to_json();
  j["genders"] = kGenders;
  j["hashtags"] = keys_of(kb.hashtag_index());
  j["locations"] = keys_of(kb.location_index());
  j["limits"] = {{"default", kDefaultLimit}, {"max", kMaxLimit}};
  return j;
}

}  // namespace fke
