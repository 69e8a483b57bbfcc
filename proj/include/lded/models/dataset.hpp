#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lded/error.hpp"
#include "lded/mfcc.hpp"
#include "lded/random.hpp"

namespace lded {

inline constexpr int kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"defect-free", "cracks", "keyhole pores"};

/// Homogeneous labelled items. `feature_names` names the columns of tabular items.
template <typename Item>
struct LabeledDataset {
  std::vector<Item> items;
  std::vector<int> labels;
  std::vector<std::string> feature_names;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }

  void push(Item item, int label) {
    items.push_back(std::move(item));
    labels.push_back(label);
  }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.feature_names = feature_names;
    out.items.reserve(idx.size());
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      out.items.push_back(items.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }

  void validate(int n_classes = kNumClasses) const {
    if (items.size() != labels.size()) fail(ErrorKind::data, "dataset item and label counts differ");
    for (int l : labels)
      if (l < 0 || l >= n_classes) fail(ErrorKind::data, "label out of range");
  }
};

using FeatureDataset = LabeledDataset<std::vector<double>>;
using MfccDataset = LabeledDataset<MfccMatrix>;

inline std::vector<std::size_t> class_counts(std::span<const int> labels, int n_classes = kNumClasses) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes) fail(ErrorKind::data, "label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

inline int infer_class_count(std::span<const int> labels) {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return std::max(mx + 1, 2);
}

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

/// argmax with lowest-index tie-break.
inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified shuffle split. Each class contributes round-to-allocation test rows
/// (largest-remainder apportionment of round(test_fraction * n)), at least one row
/// in each side.
inline SplitIndices stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                                     int n_classes = kNumClasses) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must be in (0, 1)");
  const auto counts = class_counts(labels, n_classes);
  for (auto c : counts)
    if (c == 1) fail(ErrorKind::data, "every present class needs at least two rows for a stratified split");
  for (int c = 0; c < n_classes; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0 && n_classes == kNumClasses)
      fail(ErrorKind::data, "class " + std::to_string(c) + " has fewer than two rows");

  const std::size_t n = labels.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> alloc(counts.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double exact = static_cast<double>(n_test) * static_cast<double>(counts[c]) / static_cast<double>(n);
    alloc[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += alloc[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n_test && i < remainders.size(); ++i, ++assigned) ++alloc[remainders[i].second];
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    alloc[c] = std::clamp<std::size_t>(alloc[c], 1, counts[c] - 1);
  }

  Rng rng(seed);
  SplitIndices out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<std::size_t>(labels[i]) == c) idx.push_back(i);
    rng.shuffle(std::span(idx));
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(alloc[c]));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(alloc[c]), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Stratified k folds: each class is shuffled and dealt round-robin.
inline std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t folds, std::uint64_t seed,
                                                              int n_classes = kNumClasses) {
  require(folds >= 2, "need at least two folds");
  const auto counts = class_counts(labels, n_classes);
  for (auto c : counts)
    if (c > 0 && c < folds) fail(ErrorKind::invalid_argument, "fold count exceeds the size of the smallest class");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> out(folds);
  std::size_t next = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (static_cast<std::size_t>(labels[i]) == c) idx.push_back(i);
    rng.shuffle(std::span(idx));
    for (auto i : idx) out[next++ % folds].push_back(i);
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

}  // namespace lded
