#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/random.hpp"

namespace lithopatch {

using Fold = std::vector<std::size_t>;

/// k disjoint folds covering 0..n-1. Each class is shuffled and dealt round-robin,
/// with the dealing position carried across classes, so per-class fold counts
/// differ by at most one and fold sizes stay balanced.
///
/// With `strict` every class needs at least k members (ClassTooSmall otherwise);
/// non-strict mode only requires n >= k.
inline std::vector<Fold> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed, bool strict = true) {
  if (k < 2) throw Error(ErrorCode::TooFewSamples, "k must be at least 2");
  if (labels.size() < static_cast<std::size_t>(k))
    throw Error(ErrorCode::ClassTooSmall, std::to_string(labels.size()) + " samples for " + std::to_string(k) + " folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (strict)
    for (const auto& [label, members] : by_class)
      if (members.size() < static_cast<std::size_t>(k))
        throw Error(ErrorCode::ClassTooSmall, "class " + std::to_string(label) + " has " +
                                                  std::to_string(members.size()) + " samples for " +
                                                  std::to_string(k) + " folds");

  Rng rng(seed);
  std::vector<Fold> folds(k);
  std::size_t position = 0;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    for (std::size_t i : members) folds[position++ % k].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline std::vector<Fold> leave_one_out(std::size_t n) {
  if (n < 2) throw Error(ErrorCode::TooFewSamples, "leave-one-out needs at least 2 samples");
  std::vector<Fold> folds(n);
  for (std::size_t i = 0; i < n; ++i) folds[i] = {i};
  return folds;
}

enum class SplitPart { train = 0, val = 1, test = 2 };

struct ThreeWaySplit {
  std::vector<std::size_t> train, val, test;
};

/// One item to split: its group key (e.g. source image id) and class label.
struct SplitItem {
  std::string group;
  int label = 0;
};

struct GroupSplitOptions {
  std::array<double, 3> fractions = {0.72, 0.18, 0.10};
  bool group_by_source = true;  ///< false: every item is its own group
  bool stratify = true;         ///< balance parts within each class label
};

/// Train/validation/test split that never separates a group.
///
/// Groups are shuffled, then assigned one at a time to the part whose item
/// count is furthest below its target (ties: train, val, test). With
/// stratification the assignment runs independently per class label.
inline ThreeWaySplit group_split(std::span<const SplitItem> items, const GroupSplitOptions& options, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : options.fractions) {
    if (!(f >= 0.0)) throw Error(ErrorCode::BadFractions, "fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::BadFractions, "fractions must sum to 1");

  // group key -> member indices, in first-appearance order
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::size_t>> members;
  std::map<std::string, int> group_label;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string key = options.group_by_source ? items[i].group : std::to_string(i);
    auto [it, fresh] = members.try_emplace(key);
    if (fresh) {
      keys.push_back(key);
      group_label[key] = items[i].label;
    }
    it->second.push_back(i);
  }

  std::map<int, std::vector<std::string>> strata;
  for (const auto& key : keys) strata[options.stratify ? group_label[key] : 0].push_back(key);

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& [label, groups] : strata) {
    rng.shuffle(groups);
    double total = 0.0;
    for (const auto& g : groups) total += static_cast<double>(members[g].size());
    std::array<double, 3> assigned{};
    for (const auto& g : groups) {
      int pick = 0;
      double best = -1e300;
      for (int p = 0; p < 3; ++p) {
        const double deficit = options.fractions[p] * total - assigned[p];
        if (options.fractions[p] > 0.0 && deficit > best) {
          best = deficit;
          pick = p;
        }
      }
      assigned[pick] += static_cast<double>(members[g].size());
      for (std::size_t i : members[g]) parts[pick].push_back(i);
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {parts[0], parts[1], parts[2]};
}

}  // namespace lithopatch
