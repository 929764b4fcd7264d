#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fke/corpus.hpp"
#include "fke/vocab.hpp"

namespace fke {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Occasion -> hashtags chosen to cover it. Tags are stored lowercase without '#'.
class HashtagMap {
 public:
  HashtagMap() = default;
  // Throws IngestError when an occasion is missing, has no tags, is not in
  // the vocabulary, or when a tag is claimed by two occasions.
  HashtagMap(std::map<std::string, std::vector<std::string>> tags, const ConceptVocabulary& vocab);

  // Occasion the tag maps to, case-insensitive, leading '#' ignored.
  std::optional<std::string> occasion_for(std::string_view hashtag) const;
  const std::map<std::string, std::vector<std::string>>& tags() const { return tags_; }

 private:
  std::map<std::string, std::vector<std::string>> tags_;
  std::unordered_map<std::string, std::string> owner_;
};

std::string normalize_hashtag(std::string_view tag);

HashtagMap load_hashtag_map(const std::filesystem::path& path, const ConceptVocabulary& vocab);

struct IngestReport {
  std::size_t read_count = 0;
  std::size_t kept_count = 0;
  std::size_t dropped_no_hashtag = 0;
  std::size_t dropped_duplicate = 0;
  // Unparseable lines; not part of read_count.
  std::size_t malformed = 0;

  bool consistent() const { return read_count == kept_count + dropped_no_hashtag + dropped_duplicate; }
  nlohmann::json to_json() const;
};

struct IngestOptions {
  // 0 disables throttling.
  double max_posts_per_second = 0;
  std::function<void(std::chrono::nanoseconds)> sleep;  // defaults to this_thread::sleep_for
  std::function<void(std::size_t line, const std::string& error)> on_malformed;
};

// Streams kept posts from a line-delimited archive. Single consumer; owns
// its dedup set.
class ArchiveStream {
 public:
  ArchiveStream(const std::filesystem::path& path, const HashtagMap& map, IngestOptions options = {});

  std::optional<Post> next();
  const IngestReport& report() const { return report_; }

 private:
  void throttle();

  std::ifstream in_;
  const HashtagMap& map_;
  IngestOptions options_;
  IngestReport report_;
  std::unordered_set<std::string> seen_;
  std::size_t line_no_ = 0;
  std::optional<std::chrono::steady_clock::time_point> last_emit_;
};

struct IngestResult {
  std::vector<Post> posts;
  IngestReport report;
};

IngestResult ingest_archive(const std::filesystem::path& path, const HashtagMap& map,
                            IngestOptions options = {});

}  // namespace fke
