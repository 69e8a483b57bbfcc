#pragma once

// CART classification tree (Gini) and a bootstrap random forest over it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "lded/error.hpp"
#include "lded/models/classic.hpp"
#include "lded/models/dataset.hpp"
#include "lded/random.hpp"

namespace lded {

inline double gini(std::span<const double> counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

struct TreeOptions {
  std::size_t max_depth = 6;
  std::size_t min_samples_split = 3;
  std::size_t max_features = 0;  // 0: consider every feature at each split
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> distribution;  // class frequencies at the node
  double samples = 0.0;
  double impurity = 0.0;
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;  // parent impurity minus weighted child impurity
};

namespace detail {

/// Best Gini split over `features` for the rows in `idx`. Candidates are
/// midpoints between consecutive distinct values; a later candidate replaces
/// the incumbent only if strictly better, so ties go to the lowest feature
/// index, then the lowest threshold.
inline SplitChoice best_split(std::span<const Row> rows, std::span<const int> labels, std::span<const std::size_t> idx,
                              std::span<const std::size_t> features, int n_classes) {
  const auto K = static_cast<std::size_t>(n_classes);
  std::vector<double> total(K, 0.0);
  for (auto i : idx) total[static_cast<std::size_t>(labels[i])] += 1.0;
  const double n = static_cast<double>(idx.size());
  const double parent = gini(total, n);

  SplitChoice best;
  std::vector<std::size_t> order(idx.begin(), idx.end());
  std::vector<double> left(K), right(K);
  for (auto f : features) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rows[a][f] < rows[b][f] || (rows[a][f] == rows[b][f] && a < b);
    });
    std::fill(left.begin(), left.end(), 0.0);
    right = total;
    for (std::size_t p = 0; p + 1 < order.size(); ++p) {
      const auto c = static_cast<std::size_t>(labels[order[p]]);
      left[c] += 1.0;
      right[c] -= 1.0;
      const double v = rows[order[p]][f];
      const double next = rows[order[p + 1]][f];
      if (!(next > v)) continue;
      const double nl = static_cast<double>(p + 1);
      const double nr = n - nl;
      const double child = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
      const double decrease = parent - child;
      double threshold = v + (next - v) / 2.0;
      if (!(threshold < next)) threshold = v;  // adjacent doubles
      if (decrease > best.decrease + 1e-12) best = {static_cast<int>(f), threshold, decrease};
    }
  }
  return best;
}

}  // namespace detail

struct DecisionTree {
  int n_classes = kNumClasses;
  std::size_t n_features = 0;
  TreeOptions options;
  std::vector<TreeNode> nodes;

  /// `sample_idx` may repeat rows (bootstrap); an empty span means all rows.
  static DecisionTree fit(const FeatureDataset& train, const TreeOptions& opt = {}, int n_classes = kNumClasses,
                          std::span<const std::size_t> sample_idx = {}, Rng* rng = nullptr) {
    require_rectangular(train.items);
    train.validate(n_classes);
    DecisionTree t;
    t.n_classes = n_classes;
    t.n_features = train.items.front().size();
    t.options = opt;
    std::vector<std::size_t> idx(sample_idx.begin(), sample_idx.end());
    if (idx.empty()) {
      idx.resize(train.size());
      std::iota(idx.begin(), idx.end(), 0);
    }
    t.grow(train, idx, 0, rng);
    return t;
  }

  const TreeNode& leaf_for(std::span<const double> x) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(at)];
      at = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(at)];
  }

  /// Leaf class frequencies are the probabilities.
  Prediction predict(std::span<const double> x) const {
    const auto& leaf = leaf_for(x);
    std::vector<double> p(leaf.distribution);
    for (auto& v : p) v /= leaf.samples;
    return {argmax(p), std::move(p)};
  }

  std::size_t depth() const { return depth_of(0); }

  /// Total weighted Gini decrease per feature, normalised to sum to 1 (all zero
  /// for a single-leaf tree).
  std::vector<double> feature_importance() const {
    std::vector<double> imp(n_features, 0.0);
    for (const auto& n : nodes) {
      if (n.feature < 0) continue;
      const auto& l = nodes[static_cast<std::size_t>(n.left)];
      const auto& r = nodes[static_cast<std::size_t>(n.right)];
      imp[static_cast<std::size_t>(n.feature)] += n.samples * n.impurity - l.samples * l.impurity - r.samples * r.impurity;
    }
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0)
      for (auto& v : imp) v /= total;
    return imp;
  }

 private:
  std::size_t depth_of(std::size_t i) const {
    const auto& n = nodes[i];
    if (n.feature < 0) return 0;
    return 1 + std::max(depth_of(static_cast<std::size_t>(n.left)), depth_of(static_cast<std::size_t>(n.right)));
  }

  int grow(const FeatureDataset& data, const std::vector<std::size_t>& idx, std::size_t depth, Rng* rng) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    {
      auto& node = nodes.back();
      node.distribution.assign(static_cast<std::size_t>(n_classes), 0.0);
      for (auto i : idx) node.distribution[static_cast<std::size_t>(data.labels[i])] += 1.0;
      node.samples = static_cast<double>(idx.size());
      node.impurity = gini(node.distribution, node.samples);
    }
    const double impurity = nodes.back().impurity;
    if (impurity <= 0.0 || depth >= options.max_depth || idx.size() < options.min_samples_split) return id;

    std::vector<std::size_t> features(n_features);
    std::iota(features.begin(), features.end(), 0);
    if (options.max_features > 0 && options.max_features < n_features && rng) {
      rng->shuffle(std::span(features));
      features.resize(options.max_features);
      std::sort(features.begin(), features.end());
    }
    const auto split = detail::best_split(data.items, data.labels, idx, features, n_classes);
    if (split.feature < 0) return id;

    std::vector<std::size_t> li, ri;
    for (auto i : idx) (data.items[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? li : ri).push_back(i);
    if (li.empty() || ri.empty()) return id;

    const int l = grow(data, li, depth + 1, rng);
    const int r = grow(data, ri, depth + 1, rng);
    auto& node = nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

struct ForestOptions {
  std::size_t n_estimators = 10;
  std::size_t max_depth = 4;
  std::size_t min_samples_split = 3;
  std::uint64_t seed = 0;
};

struct RandomForest {
  int n_classes = kNumClasses;
  std::size_t n_features = 0;
  ForestOptions options;
  std::vector<DecisionTree> trees;

  /// Bootstrap rows per tree; ceil(sqrt(d)) candidate features per split.
  static RandomForest fit(const FeatureDataset& train, const ForestOptions& opt = {}, int n_classes = kNumClasses) {
    require_rectangular(train.items);
    train.validate(n_classes);
    require(opt.n_estimators >= 1, "forest needs at least one tree");
    RandomForest f;
    f.n_classes = n_classes;
    f.n_features = train.items.front().size();
    f.options = opt;
    TreeOptions topt{opt.max_depth, opt.min_samples_split,
                     static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(f.n_features))))};
    Rng root(opt.seed);
    for (std::size_t t = 0; t < opt.n_estimators; ++t) {
      Rng rng = root.fork(t);
      std::vector<std::size_t> boot(train.size());
      for (auto& b : boot) b = static_cast<std::size_t>(rng.index(train.size()));
      f.trees.push_back(DecisionTree::fit(train, topt, n_classes, boot, &rng));
    }
    return f;
  }

  Prediction predict(std::span<const double> x) const {
    std::vector<double> p(static_cast<std::size_t>(n_classes), 0.0);
    for (const auto& t : trees) {
      const auto tp = t.predict(x);
      for (std::size_t c = 0; c < p.size(); ++c) p[c] += tp.probabilities[c];
    }
    for (auto& v : p) v /= static_cast<double>(trees.size());
    return {argmax(p), std::move(p)};
  }

  /// Mean of per-tree normalised Gini importances, renormalised to sum to 1.
  std::vector<double> feature_importance() const {
    if (trees.empty()) fail(ErrorKind::invalid_argument, "forest is untrained");
    std::vector<double> imp(n_features, 0.0);
    for (const auto& t : trees) {
      const auto ti = t.feature_importance();
      for (std::size_t j = 0; j < n_features; ++j) imp[j] += ti[j];
    }
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0)
      for (auto& v : imp) v /= total;
    return imp;
  }
};

}  // namespace lded
