#include "fke/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace fke {
namespace {

void require_unique(const std::vector<std::string>& names, const std::string& what) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw VocabularyError("empty name in " + what);
    if (!seen.insert(n).second) throw VocabularyError("duplicate name '" + n + "' in " + what);
  }
}

std::optional<std::size_t> index_of(const std::vector<std::string>& names, std::string_view name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

ConceptVocabulary::ConceptVocabulary(std::string version, std::vector<std::string> occasions,
                                     std::vector<std::string> categories,
                                     std::vector<AttributeType> attributes)
    : version_(std::move(version)),
      occasions_(std::move(occasions)),
      categories_(std::move(categories)),
      attributes_(std::move(attributes)) {
  if (occasions_.empty()) throw VocabularyError("vocabulary has no occasions");
  if (categories_.empty()) throw VocabularyError("vocabulary has no categories");
  require_unique(occasions_, "occasions");
  require_unique(categories_, "categories");

  std::vector<std::string> type_names;
  std::unordered_map<std::string, std::string> owner;
  for (const auto& attr : attributes_) {
    type_names.push_back(attr.name);
    if (attr.values.size() < 2)
      throw VocabularyError("attribute '" + attr.name + "' needs at least 2 values");
    require_unique(attr.values, "attribute '" + attr.name + "'");
    for (const auto& v : attr.values) {
      auto [it, inserted] = owner.emplace(v, attr.name);
      if (!inserted)
        throw VocabularyError("attribute value '" + v + "' appears under both '" + it->second +
                              "' and '" + attr.name + "'");
    }
  }
  require_unique(type_names, "attribute types");
}

std::size_t ConceptVocabulary::num_attribute_values() const {
  return std::accumulate(attributes_.begin(), attributes_.end(), std::size_t{0},
                         [](std::size_t n, const AttributeType& a) { return n + a.values.size(); });
}

std::optional<std::size_t> ConceptVocabulary::occasion_index(std::string_view name) const {
  return index_of(occasions_, name);
}

std::optional<std::size_t> ConceptVocabulary::category_index(std::string_view name) const {
  return index_of(categories_, name);
}

std::optional<std::size_t> ConceptVocabulary::attribute_index(std::string_view name) const {
  for (std::size_t a = 0; a < attributes_.size(); ++a)
    if (attributes_[a].name == name) return a;
  return std::nullopt;
}

std::optional<AttributeValueRef> ConceptVocabulary::find_attribute_value(
    std::string_view value) const {
  for (std::size_t a = 0; a < attributes_.size(); ++a)
    if (auto v = index_of(attributes_[a].values, value)) return AttributeValueRef{a, *v};
  return std::nullopt;
}

std::size_t ConceptVocabulary::task_size(std::size_t task) const {
  return task_labels(task).size();
}

std::string ConceptVocabulary::task_name(std::size_t task) const {
  if (task == 0) return "occasion";
  if (task == 1) return "category";
  return attributes_.at(task - 2).name;
}

const std::vector<std::string>& ConceptVocabulary::task_labels(std::size_t task) const {
  if (task == 0) return occasions_;
  if (task == 1) return categories_;
  return attributes_.at(task - 2).values;
}

nlohmann::json ConceptVocabulary::to_json() const {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : attributes_) attrs.push_back({{"name", a.name}, {"values", a.values}});
  return {{"version", version_},
          {"occasions", occasions_},
          {"categories", categories_},
          {"attributes", attrs}};
}

ConceptVocabulary ConceptVocabulary::from_json(const nlohmann::json& j) {
  try {
    std::vector<AttributeType> attrs;
    for (const auto& a : j.at("attributes")) {
      attrs.push_back({a.at("name").get<std::string>(),
                       a.at("values").get<std::vector<std::string>>()});
    }
    return ConceptVocabulary(j.value("version", std::string{}),
                             j.at("occasions").get<std::vector<std::string>>(),
                             j.at("categories").get<std::vector<std::string>>(), std::move(attrs));
  } catch (const nlohmann::json::exception& e) {
    throw VocabularyError(std::string("malformed vocabulary: ") + e.what());
  }
}

ConceptVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VocabularyError("cannot open vocabulary file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw VocabularyError("cannot parse " + path.string() + ": " + e.what());
  }
  return ConceptVocabulary::from_json(j);
}

void save_vocabulary(const ConceptVocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw VocabularyError("cannot write " + path.string());
  out << vocab.to_json().dump(2) << '\n';
}

}  // namespace fke
