#include "cascademine/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cascademine {

ClassGroup group_for_count(std::int64_t instance_count, GroupScheme scheme) {
  switch (scheme) {
    case GroupScheme::lvis3:
      if (instance_count < 10) return ClassGroup::rare;
      if (instance_count < 100) return ClassGroup::common;
      return ClassGroup::frequent;
    case GroupScheme::cocolt4:
      if (instance_count < 20) return ClassGroup::bin1;
      if (instance_count < 400) return ClassGroup::bin2;
      if (instance_count < 8000) return ClassGroup::bin3;
      return ClassGroup::bin4;
  }
  throw ConfigError("unknown group scheme");
}

const char* to_string(ClassGroup group) {
  switch (group) {
    case ClassGroup::rare: return "rare";
    case ClassGroup::common: return "common";
    case ClassGroup::frequent: return "frequent";
    case ClassGroup::bin1: return "bin1";
    case ClassGroup::bin2: return "bin2";
    case ClassGroup::bin3: return "bin3";
    case ClassGroup::bin4: return "bin4";
  }
  return "?";
}

const char* to_string(GroupScheme scheme) {
  return scheme == GroupScheme::lvis3 ? "lvis3" : "cocolt4";
}

GroupScheme group_scheme_from_string(const std::string& name) {
  if (name == "lvis3") return GroupScheme::lvis3;
  if (name == "cocolt4") return GroupScheme::cocolt4;
  throw ConfigError("unknown group scheme: " + name);
}

int argmax_foreground(const std::vector<double>& class_probs) {
  if (class_probs.size() < 2) {
    throw ValidationError("class_probs needs at least one foreground class");
  }
  int best = 0;
  for (int c = 1; c + 1 < static_cast<int>(class_probs.size()); ++c) {
    if (class_probs[c] > class_probs[best]) best = c;
  }
  return best;
}

double max_foreground(const std::vector<double>& class_probs) {
  return class_probs[argmax_foreground(class_probs)];
}

void validate_class_probs(const std::vector<double>& class_probs,
                          ScoreSemantics semantics) {
  if (class_probs.size() < 2) {
    throw ValidationError("class_probs needs C foreground entries plus a background slot");
  }
  double sum = 0.0;
  for (double p : class_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("class probability outside [0,1]");
    }
    sum += p;
  }
  if (semantics == ScoreSemantics::softmax && std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("softmax probabilities must sum to 1 within 1e-9");
  }
}

CategoryIndex::CategoryIndex(const std::vector<Category>& categories) {
  ids_.reserve(categories.size());
  for (const auto& c : categories) ids_.push_back(c.id);
  std::sort(ids_.begin(), ids_.end());
  for (int i = 0; i < static_cast<int>(ids_.size()); ++i) {
    index_by_id_[ids_[i]] = i;
  }
}

int CategoryIndex::index_of(int category_id) const {
  auto it = index_by_id_.find(category_id);
  if (it == index_by_id_.end()) {
    throw ReferentialIntegrityError("unknown category id " + std::to_string(category_id));
  }
  return it->second;
}

int CategoryIndex::id_of(int class_index) const {
  if (class_index < 0 || class_index >= static_cast<int>(ids_.size())) {
    throw ReferentialIntegrityError("class index out of range: " + std::to_string(class_index));
  }
  return ids_[class_index];
}

bool CategoryIndex::contains(int category_id) const {
  return index_by_id_.count(category_id) > 0;
}

DatasetBundle assign_class_groups(DatasetBundle bundle, GroupScheme scheme) {
  std::map<int, std::int64_t> counts;
  for (const auto& c : bundle.categories) counts[c.id] = 0;
  for (const auto& a : bundle.annotations) {
    auto it = counts.find(a.category_id);
    if (it == counts.end()) {
      throw ReferentialIntegrityError(
          "annotation " + std::to_string(a.id) + " references unknown category " +
          std::to_string(a.category_id));
    }
    ++it->second;
  }
  for (auto& c : bundle.categories) {
    c.instance_count = counts[c.id];
    c.group = group_for_count(c.instance_count, scheme);
  }
  return bundle;
}

}  // namespace cascademine
