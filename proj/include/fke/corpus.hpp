#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fke {

class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Pixel box, top-left origin.
struct BoundingBox {
  double x = 0, y = 0, width = 0, height = 0;

  double area() const { return width * height; }
  double center_x() const { return x + width / 2; }
  double center_y() const { return y + height / 2; }
  bool valid_in(double image_width, double image_height) const;

  bool operator==(const BoundingBox&) const = default;
};

struct Detection {
  BoundingBox box;
  double confidence = 1.0;

  bool operator==(const Detection&) const = default;
};

enum class Gender { kFemale, kMale };

std::string_view to_string(Gender g);
std::optional<Gender> parse_gender(std::string_view s);

// One matched face/body for a person. Produced by the filter stage.
struct PersonPair {
  BoundingBox face;
  BoundingBox body;
  double pair_score = 0;
  std::optional<Gender> gender;

  bool operator==(const PersonPair&) const = default;
};

struct GarmentRegion {
  std::string region_id;
  BoundingBox box;
  std::optional<std::string> rough_category;
  std::vector<double> feature;

  bool operator==(const GarmentRegion&) const = default;
};

struct Post {
  std::string post_id;
  double image_width = 0;
  double image_height = 0;
  std::string caption;
  std::vector<std::string> hashtags;
  std::int64_t timestamp = 0;
  std::optional<std::string> location;
  std::int64_t likes = 0;
  std::int64_t comments = 0;
  std::vector<Detection> faces;
  std::vector<Detection> bodies;
  std::vector<GarmentRegion> garments;
  std::optional<Gender> gender_hint;
  std::vector<double> image_feature;
  // Set by the filter stage on kept posts.
  std::optional<std::vector<PersonPair>> person_pairs;

  bool operator==(const Post&) const = default;
};

enum class LabelSource { kClean, kWeak };

std::string_view to_string(LabelSource s);

struct GarmentLabels {
  std::string category;
  // attribute type name -> value name
  std::map<std::string, std::string> attributes;

  bool operator==(const GarmentLabels&) const = default;
};

struct PostLabels {
  std::string occasion;
  std::vector<GarmentLabels> garments;  // parallel to Post::garments
  LabelSource source = LabelSource::kClean;

  bool operator==(const PostLabels&) const = default;
};

struct LabeledPost {
  Post post;
  PostLabels labels;

  bool operator==(const LabeledPost&) const = default;
};

// A corpus line: a post, labeled or not.
struct CorpusRecord {
  Post post;
  std::optional<PostLabels> labels;

  bool operator==(const CorpusRecord&) const = default;
};

nlohmann::json post_to_json(const Post& post);
Post post_from_json(const nlohmann::json& j);

std::string format_record(const CorpusRecord& record);
// Throws CorpusError (without line number) on schema violations.
CorpusRecord parse_record(std::string_view line);

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);
void write_corpus(std::span<const CorpusRecord> records, const std::filesystem::path& path);

std::vector<LabeledPost> read_labeled_corpus(const std::filesystem::path& path);
void write_corpus(std::span<const LabeledPost> posts, const std::filesystem::path& path);
void write_corpus(std::span<const Post> posts, const std::filesystem::path& path);

// Checks id uniqueness and feature-dimension uniformity; throws CorpusError.
void validate_corpus(std::span<const CorpusRecord> records);

}  // namespace fke
