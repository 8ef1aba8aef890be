#include "affdet/taxonomy.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "affdet/digest.hpp"
#include "affdet/errors.hpp"

namespace affdet {

TaxonomyMapping::TaxonomyMapping(std::vector<std::string> super_categories)
    : super_categories_(std::move(super_categories)) {
  if (super_categories_.empty()) {
    throw ValidationError("taxonomy: super_categories must not be empty");
  }
  std::set<std::string> seen;
  for (const auto& name : super_categories_) {
    if (name.empty()) throw ValidationError("taxonomy: empty super-category name");
    if (name == kDropTarget) {
      throw ValidationError("taxonomy: 'DROP' is reserved");
    }
    if (!seen.insert(name).second) {
      throw ValidationError("taxonomy: duplicate super-category '" + name + "'");
    }
  }
}

std::optional<std::size_t> TaxonomyMapping::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < super_categories_.size(); ++i) {
    if (super_categories_[i] == name) return i;
  }
  return std::nullopt;
}

void TaxonomyMapping::add_rule(const std::string& dataset_id,
                               const std::string& raw_label,
                               const std::string& target) {
  Outcome outcome;
  if (target != kDropTarget) {
    outcome = class_index(target);
    if (!outcome) {
      throw ValidationError("taxonomy: rule (" + dataset_id + ", " + raw_label +
                            ") references undeclared super-category '" +
                            target + "'");
    }
  }
  auto [it, inserted] = rules_.emplace(std::make_pair(dataset_id, raw_label), outcome);
  if (!inserted) {
    throw ValidationError("taxonomy: duplicate rule for (" + dataset_id + ", " +
                          raw_label + ")");
  }
}

TaxonomyMapping::Outcome TaxonomyMapping::map_label(
    const std::string& dataset_id, const std::string& raw_label) const {
  auto it = rules_.find({dataset_id, raw_label});
  if (it == rules_.end()) throw UnknownLabelError(dataset_id, raw_label);
  return it->second;
}

bool TaxonomyMapping::contains(const std::string& dataset_id,
                               const std::string& raw_label) const {
  return rules_.count({dataset_id, raw_label}) > 0;
}

std::string TaxonomyMapping::digest() const {
  std::ostringstream os;
  os << "super:";
  for (const auto& s : super_categories_) os << s << '\n';
  os << "rules:";
  for (const auto& [key, outcome] : rules_) {
    os << key.first << '\t' << key.second << '\t';
    if (outcome) {
      os << super_categories_[*outcome];
    } else {
      os << kDropTarget;
    }
    os << '\n';
  }
  return sha256_hex(os.str());
}

namespace {

std::string scalar(const YAML::Node& node, const char* key) {
  const auto v = node[key];
  if (!v || !v.IsScalar()) {
    throw ValidationError(std::string("taxonomy: rule is missing '") + key + "'");
  }
  return v.as<std::string>();
}

}  // namespace

TaxonomyMapping load_taxonomy(std::string_view config_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(config_text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("taxonomy: parse failure: ") + e.what());
  }
  if (!root.IsMap()) throw ValidationError("taxonomy: top level must be a mapping");
  const auto supers = root["super_categories"];
  if (!supers || !supers.IsSequence()) {
    throw ValidationError("taxonomy: 'super_categories' list is required");
  }
  std::vector<std::string> names;
  for (const auto& s : supers) names.push_back(s.as<std::string>());
  TaxonomyMapping mapping(std::move(names));

  const auto rules = root["rules"];
  if (rules && !rules.IsNull()) {
    if (!rules.IsSequence()) throw ValidationError("taxonomy: 'rules' must be a list");
    for (const auto& rule : rules) {
      if (!rule.IsMap()) throw ValidationError("taxonomy: each rule must be a mapping");
      mapping.add_rule(scalar(rule, "dataset"), scalar(rule, "label"),
                       scalar(rule, "target"));
    }
  }
  return mapping;
}

TaxonomyMapping load_taxonomy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("taxonomy: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_taxonomy(ss.str());
}

}  // namespace affdet
