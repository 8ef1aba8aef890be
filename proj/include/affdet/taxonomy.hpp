#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace affdet {

// Flat label alignment: every (dataset, raw label) pair resolves to one
// super-category index or to a drop. Immutable after construction.
class TaxonomyMapping {
 public:
  // Outcome of a lookup. nullopt means the annotation is discarded.
  using Outcome = std::optional<std::size_t>;

  explicit TaxonomyMapping(std::vector<std::string> super_categories);

  // Registers a rule. target == "DROP" discards the label. Throws
  // ValidationError on duplicates or undeclared super-categories.
  void add_rule(const std::string& dataset_id, const std::string& raw_label,
                const std::string& target);

  // Throws UnknownLabelError for unregistered pairs.
  Outcome map_label(const std::string& dataset_id,
                    const std::string& raw_label) const;

  bool contains(const std::string& dataset_id,
                const std::string& raw_label) const;

  const std::vector<std::string>& super_categories() const {
    return super_categories_;
  }
  std::size_t num_classes() const { return super_categories_.size(); }
  std::size_t num_rules() const { return rules_.size(); }
  std::optional<std::size_t> class_index(std::string_view name) const;

  // SHA-256 over a canonical rendering (declaration order + sorted rules).
  std::string digest() const;

 private:
  std::vector<std::string> super_categories_;
  std::map<std::pair<std::string, std::string>, Outcome> rules_;
};

inline constexpr std::string_view kDropTarget = "DROP";

// Parses the YAML taxonomy format:
//
//   super_categories: [vehicle]
//   rules:
//     - {dataset: DETRAC, label: van, target: vehicle}
//     - {dataset: MS_COCO, label: person, target: DROP}
TaxonomyMapping load_taxonomy(std::string_view config_text);
TaxonomyMapping load_taxonomy_file(const std::string& path);

inline TaxonomyMapping::Outcome map_label(const std::string& dataset_id,
                                          const std::string& raw_label,
                                          const TaxonomyMapping& taxonomy) {
  return taxonomy.map_label(dataset_id, raw_label);
}

}  // namespace affdet
