#pragma once

// Type-erased classifier wrappers: a tabular model bundles its feature
// selection and standardizer with one of the classic learners; AnyModel adds
// the CNN.

#include <array>
#include <cstdint>
#include <map>
#include <string_view>
#include <string>
#include <variant>
#include <vector>

#include "lded/error.hpp"
#include "lded/features.hpp"
#include "lded/mfcc.hpp"
#include "lded/models/classic.hpp"
#include "lded/models/cnn.hpp"
#include "lded/models/dataset.hpp"
#include "lded/models/tree.hpp"

namespace lded {

using Hyperparameters = std::map<std::string, double>;

using TabularLearner = std::variant<GaussianNaiveBayes, KNearestNeighbors, LogisticRegression, DecisionTree, RandomForest>;

inline constexpr std::array<std::string_view, 5> kTabularFamilies = {"gaussian_nb", "knn", "logistic", "decision_tree",
                                                                     "random_forest"};

inline std::string family_of(const TabularLearner& l) {
  return std::string(kTabularFamilies[l.index()]);
}

inline double param_or(const Hyperparameters& hp, const std::string& key, double fallback) {
  auto it = hp.find(key);
  return it == hp.end() ? fallback : it->second;
}

/// Defaults follow the tuned values: NB smoothing 1e-9; KNN 4 neighbours with
/// distance weights; tree depth 6 / min split 3; forest 10 trees, depth 4, min split 3.
inline Hyperparameters default_hyperparameters(std::string_view family) {
  if (family == "gaussian_nb") return {{"var_smoothing", 1e-9}};
  if (family == "knn") return {{"k", 4}, {"distance_weighting", 1}};
  if (family == "logistic") return {{"l2", 1e-3}, {"max_iter", 2000}, {"tol", 1e-6}};
  if (family == "decision_tree") return {{"max_depth", 6}, {"min_samples_split", 3}};
  if (family == "random_forest") return {{"n_estimators", 10}, {"max_depth", 4}, {"min_samples_split", 3}, {"seed", 0}};
  fail(ErrorKind::invalid_argument, "unknown model family: " + std::string(family));
}

/// Trains a learner on already-standardized rows.
inline TabularLearner train_learner(std::string_view family, const Hyperparameters& given, const FeatureDataset& train) {
  Hyperparameters hp = default_hyperparameters(family);
  for (const auto& [k, v] : given) hp[k] = v;
  auto as_size = [&](const char* key) { return static_cast<std::size_t>(std::llround(hp.at(key))); };
  if (family == "gaussian_nb") return GaussianNaiveBayes::fit(train, hp.at("var_smoothing"));
  if (family == "knn")
    return KNearestNeighbors::fit(train, as_size("k"), hp.at("distance_weighting") != 0.0 ? KnnWeighting::distance : KnnWeighting::uniform);
  if (family == "logistic") return LogisticRegression::fit(train, {hp.at("l2"), as_size("max_iter"), hp.at("tol")});
  if (family == "decision_tree") return DecisionTree::fit(train, {as_size("max_depth"), as_size("min_samples_split"), 0});
  if (family == "random_forest")
    return RandomForest::fit(train, {as_size("n_estimators"), as_size("max_depth"), as_size("min_samples_split"),
                                     static_cast<std::uint64_t>(hp.at("seed"))});
  fail(ErrorKind::invalid_argument, "unknown model family: " + std::string(family));
}

inline Prediction learner_predict(const TabularLearner& l, std::span<const double> x) {
  return std::visit([&](const auto& m) { return m.predict(x); }, l);
}

struct TabularModel {
  TabularLearner learner;
  Hyperparameters hyperparameters;
  Standardizer scaler;
  std::vector<std::string> features;

  std::string family() const { return family_of(learner); }

  /// `train` rows are raw feature values in `train.feature_names` order.
  static TabularModel fit(std::string_view family, const Hyperparameters& hp, const FeatureDataset& train) {
    if (train.empty()) fail(ErrorKind::invalid_argument, "empty training set");
    TabularModel m;
    m.features = train.feature_names;
    m.hyperparameters = default_hyperparameters(family);
    for (const auto& [k, v] : hp) m.hyperparameters[k] = v;
    m.scaler = Standardizer::fit(train.items);
    FeatureDataset scaled = train;
    scaled.items = m.scaler.apply(train.items);
    m.learner = train_learner(family, m.hyperparameters, scaled);
    return m;
  }

  Prediction predict(std::span<const double> raw_row) const { return learner_predict(learner, scaler.apply(raw_row)); }
  Prediction predict(const std::vector<double>& raw_row) const { return predict(std::span<const double>(raw_row)); }

  Prediction predict(const SegmentFeatureVector& v) const {
    const auto row = v.select(features);
    return predict(std::span<const double>(row));
  }
};

using AnyModel = std::variant<TabularModel, CnnModel>;

inline std::string model_kind(const AnyModel& m) {
  if (const auto* t = std::get_if<TabularModel>(&m)) return t->family();
  return "cnn";
}

inline bool wants_mfcc(const AnyModel& m) { return std::holds_alternative<CnnModel>(m); }

/// Predicts a segment with whatever representation the model consumes.
inline Prediction predict_segment(const AnyModel& model, const Segment& seg) {
  if (const auto* cnn = std::get_if<CnnModel>(&model)) return cnn->predict(mfcc_segment_tensor(seg));
  const auto& tab = std::get<TabularModel>(model);
  return tab.predict(segment_features(seg));
}

}  // namespace lded
