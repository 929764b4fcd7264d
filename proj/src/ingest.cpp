#include "fke/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

namespace fke {

std::string normalize_hashtag(std::string_view tag) {
  if (!tag.empty() && tag.front() == '#') tag.remove_prefix(1);
  std::string out(tag);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

HashtagMap::HashtagMap(std::map<std::string, std::vector<std::string>> tags,
                       const ConceptVocabulary& vocab) {
  for (const auto& [occasion, list] : tags) {
    if (!vocab.occasion_index(occasion))
      throw IngestError("hashtag map names unknown occasion '" + occasion + "'");
  }
  for (const auto& occasion : vocab.occasions()) {
    auto it = tags.find(occasion);
    if (it == tags.end() || it->second.empty())
      throw IngestError("occasion '" + occasion + "' has no hashtags");
    std::vector<std::string> normalized;
    for (const auto& t : it->second) {
      auto n = normalize_hashtag(t);
      if (n.empty()) throw IngestError("empty hashtag for occasion '" + occasion + "'");
      auto [pos, inserted] = owner_.emplace(n, occasion);
      if (!inserted && pos->second != occasion)
        throw IngestError("hashtag '" + n + "' claimed by '" + pos->second + "' and '" + occasion + "'");
      if (inserted) normalized.push_back(n);
    }
    tags_[occasion] = std::move(normalized);
  }
}

std::optional<std::string> HashtagMap::occasion_for(std::string_view hashtag) const {
  auto it = owner_.find(normalize_hashtag(hashtag));
  if (it == owner_.end()) return std::nullopt;
  return it->second;
}

HashtagMap load_hashtag_map(const std::filesystem::path& path, const ConceptVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open hashtag map " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    return HashtagMap(j.get<std::map<std::string, std::vector<std::string>>>(), vocab);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("malformed hashtag map " + path.string() + ": " + e.what());
  }
}

nlohmann::json IngestReport::to_json() const {
  return {{"read", read_count},
          {"kept", kept_count},
          {"dropped_no_hashtag", dropped_no_hashtag},
          {"dropped_duplicate", dropped_duplicate},
          {"malformed", malformed}};
}

ArchiveStream::ArchiveStream(const std::filesystem::path& path, const HashtagMap& map,
                             IngestOptions options)
    : in_(path), map_(map), options_(std::move(options)) {
  if (!in_) throw IngestError("cannot open archive " + path.string());
  if (!options_.sleep) options_.sleep = [](std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); };
}

void ArchiveStream::throttle() {
  if (options_.max_posts_per_second <= 0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::nanoseconds>(
      std::chrono::duration<double>(1.0 / options_.max_posts_per_second));
  const auto now = std::chrono::steady_clock::now();
  if (last_emit_ && now - *last_emit_ < interval) options_.sleep(interval - (now - *last_emit_));
  last_emit_ = std::chrono::steady_clock::now();
}

std::optional<Post> ArchiveStream::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    Post post;
    try {
      post = parse_record(line).post;
    } catch (const CorpusError& e) {
      ++report_.malformed;
      if (options_.on_malformed) options_.on_malformed(line_no_, e.what());
      continue;
    }
    ++report_.read_count;
    const bool mapped = std::any_of(post.hashtags.begin(), post.hashtags.end(),
                                    [&](const std::string& t) { return map_.occasion_for(t).has_value(); });
    if (!mapped) {
      ++report_.dropped_no_hashtag;
      continue;
    }
    if (!seen_.insert(post.post_id).second) {
      ++report_.dropped_duplicate;
      continue;
    }
    ++report_.kept_count;
    throttle();
    return post;
  }
  return std::nullopt;
}

IngestResult ingest_archive(const std::filesystem::path& path, const HashtagMap& map,
                            IngestOptions options) {
  ArchiveStream stream(path, map, std::move(options));
  IngestResult result;
  while (auto post = stream.next()) result.posts.push_back(std::move(*post));
  result.report = stream.report();
  return result;
}

}  // namespace fke
