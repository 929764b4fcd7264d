#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fke {

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AttributeType {
  std::string name;
  std::vector<std::string> values;

  bool operator==(const AttributeType&) const = default;
};

// Where an attribute value lives: attribute type index and value index within it.
struct AttributeValueRef {
  std::size_t attribute = 0;
  std::size_t value = 0;
};

// Closed concept worlds: occasions, garment categories, attribute types.
// Immutable once constructed; the constructor enforces every invariant.
class ConceptVocabulary {
 public:
  ConceptVocabulary() = default;
  ConceptVocabulary(std::string version, std::vector<std::string> occasions,
                    std::vector<std::string> categories,
                    std::vector<AttributeType> attributes);

  const std::string& version() const { return version_; }
  const std::vector<std::string>& occasions() const { return occasions_; }
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<AttributeType>& attributes() const { return attributes_; }

  std::size_t num_occasions() const { return occasions_.size(); }
  std::size_t num_categories() const { return categories_.size(); }
  std::size_t num_attributes() const { return attributes_.size(); }
  std::size_t num_attribute_values() const;

  std::optional<std::size_t> occasion_index(std::string_view name) const;
  std::optional<std::size_t> category_index(std::string_view name) const;
  std::optional<std::size_t> attribute_index(std::string_view name) const;
  std::optional<AttributeValueRef> find_attribute_value(std::string_view value) const;

  // Tasks are numbered occasion = 0, category = 1, attribute a = 2 + a.
  std::size_t num_tasks() const { return 2 + attributes_.size(); }
  std::size_t task_size(std::size_t task) const;
  std::string task_name(std::size_t task) const;
  const std::vector<std::string>& task_labels(std::size_t task) const;

  nlohmann::json to_json() const;
  static ConceptVocabulary from_json(const nlohmann::json& j);

  bool operator==(const ConceptVocabulary&) const = default;

 private:
  std::string version_;
  std::vector<std::string> occasions_;
  std::vector<std::string> categories_;
  std::vector<AttributeType> attributes_;
};

ConceptVocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const ConceptVocabulary& vocab, const std::filesystem::path& path);

}  // namespace fke
