#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lded/error.hpp"
#include "lded/models/dataset.hpp"

namespace lded {

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (false positive rate, true positive rate), from (0,0) to (1,1)
  std::optional<double> auc;                      // empty when the test set lacks positives or negatives
};

/// One-vs-rest ROC with a threshold at every distinct score; AUC by trapezoids,
/// which equals P(score_pos > score_neg) + P(tie)/2.
inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels, int positive_class) {
  if (scores.size() != labels.size()) fail(ErrorKind::invalid_argument, "score and label counts differ");
  RocCurve roc;
  auto positive = [&](std::size_t i) { return labels[i] == positive_class; };
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), positive_class));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, area = 0;
  roc.points.emplace_back(0.0, 0.0);
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const double tp0 = tp, fp0 = fp;
    while (i < order.size() && scores[order[i]] == s) {
      (positive(order[i]) ? tp : fp) += 1.0;
      ++i;
    }
    area += (fp - fp0) * (tp + tp0) / 2.0;
    roc.points.emplace_back(n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0);
  }
  if (n_pos > 0 && n_neg > 0) roc.auc = area / (n_pos * n_neg);
  return roc;
}

struct Metrics {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // rows = true class, cols = predicted
  std::vector<RocCurve> roc;                        // one per class
  std::optional<double> macro_auc;                  // mean of the defined per-class AUCs
  double false_positive_rate = 0.0;                 // true defects (class 1 or 2) predicted defect-free
  std::size_t total = 0;
};

inline Metrics evaluate_predictions(std::span<const int> truth, std::span<const Prediction> pred, int n_classes = kNumClasses) {
  if (truth.empty()) fail(ErrorKind::invalid_argument, "empty test set");
  if (truth.size() != pred.size()) fail(ErrorKind::invalid_argument, "prediction count differs from label count");
  const auto K = static_cast<std::size_t>(n_classes);
  Metrics m;
  m.total = truth.size();
  m.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::size_t correct = 0, defects = 0, missed = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(pred[i].label);
    if (t >= K || p >= K) fail(ErrorKind::data, "label out of range");
    ++m.confusion[t][p];
    if (t == p) ++correct;
    if (t != 0) {
      ++defects;
      if (p == 0) ++missed;
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  m.false_positive_rate = defects > 0 ? static_cast<double>(missed) / static_cast<double>(defects) : 0.0;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<double> scores(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i].probabilities.size() != K) fail(ErrorKind::data, "probability vector has the wrong length");
      scores[i] = pred[i].probabilities[c];
    }
    m.roc.push_back(roc_curve(scores, truth, static_cast<int>(c)));
    if (m.roc.back().auc) {
      auc_sum += *m.roc.back().auc;
      ++auc_count;
    }
  }
  if (auc_count > 0) m.macro_auc = auc_sum / static_cast<double>(auc_count);
  return m;
}

/// Evaluates any model exposing `Prediction predict(const Item&)`.
template <typename Model, typename Item>
Metrics evaluate(const Model& model, const LabeledDataset<Item>& test, int n_classes = kNumClasses) {
  std::vector<Prediction> preds;
  preds.reserve(test.size());
  for (const auto& item : test.items) preds.push_back(model.predict(item));
  return evaluate_predictions(test.labels, preds, n_classes);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation across runs
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  for (double x : v) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(v.size()));
  return r;
}

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["confusion"] = m.confusion;
  j["total"] = m.total;
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < m.roc.size(); ++c) {
    nlohmann::json rc;
    rc["class"] = c;
    rc["auc"] = m.roc[c].auc ? nlohmann::json(*m.roc[c].auc) : nlohmann::json(nullptr);
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& [x, y] : m.roc[c].points) pts.push_back({x, y});
    rc["roc"] = pts;
    per_class.push_back(rc);
  }
  j["per_class"] = per_class;
  j["macro_auc"] = m.macro_auc ? nlohmann::json(*m.macro_auc) : nlohmann::json(nullptr);
  j["false_positive_rate"] = m.false_positive_rate;
  return j;
}

/// Report over repeated runs: per-metric mean and std plus every run.
inline nlohmann::json summarize_runs(std::span<const Metrics> runs) {
  if (runs.empty()) fail(ErrorKind::invalid_argument, "no runs to summarize");
  auto collect = [&](auto getter) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(getter(r));
    const auto ms = mean_std(v);
    return nlohmann::json{{"mean", ms.mean}, {"std", ms.std}};
  };
  nlohmann::json j;
  j["runs"] = runs.size();
  j["accuracy"] = collect([](const Metrics& m) { return m.accuracy; });
  j["macro_auc"] = collect([](const Metrics& m) { return m.macro_auc.value_or(std::nan("")); });
  j["false_positive_rate"] = collect([](const Metrics& m) { return m.false_positive_rate; });
  const std::size_t K = runs.front().confusion.size();
  nlohmann::json per_class_auc = nlohmann::json::array();
  nlohmann::json per_class_acc = nlohmann::json::array();
  for (std::size_t c = 0; c < K; ++c) {
    per_class_auc.push_back(collect([c](const Metrics& m) { return m.roc[c].auc.value_or(std::nan("")); }));
    per_class_acc.push_back(collect([c](const Metrics& m) {
      const auto& row = m.confusion[c];
      const double total = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
      return total > 0 ? static_cast<double>(row[c]) / total : std::nan("");
    }));
  }
  j["per_class_auc"] = per_class_auc;
  j["per_class_recall"] = per_class_acc;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : runs) all.push_back(to_json(r));
  j["per_run"] = all;
  return j;
}

}  // namespace lded
