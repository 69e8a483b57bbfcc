#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lded/error.hpp"
#include "lded/models/dataset.hpp"
#include "lded/models/model.hpp"

namespace lded {

/// Axis values per hyperparameter; cells enumerate the Cartesian product with
/// the last axis varying fastest (axes in key order).
using ParamGrid = std::vector<std::pair<std::string, std::vector<double>>>;

inline std::vector<Hyperparameters> expand_grid(const ParamGrid& grid) {
  if (grid.empty()) fail(ErrorKind::invalid_argument, "empty grid");
  for (const auto& [name, values] : grid)
    if (values.empty()) fail(ErrorKind::invalid_argument, "grid axis '" + name + "' has no values");
  std::vector<Hyperparameters> cells{{}};
  for (const auto& [name, values] : grid) {
    std::vector<Hyperparameters> next;
    for (const auto& cell : cells)
      for (double v : values) {
        auto c = cell;
        c[name] = v;
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  return cells;
}

struct GridSearchResult {
  std::vector<Hyperparameters> cells;
  std::vector<std::vector<double>> fold_accuracy;  // [cell][fold]
  std::vector<double> mean_accuracy;               // per cell
  std::size_t best = 0;

  const Hyperparameters& best_params() const { return cells[best]; }
};

/// Exhaustive grid with stratified k-fold CV; the best mean accuracy wins and
/// ties go to the earliest cell. Each fold standardizes on its own training part.
inline GridSearchResult grid_search_cv(std::string_view family, const ParamGrid& grid, const FeatureDataset& data,
                                       std::size_t folds = 5, std::uint64_t seed = 0) {
  data.validate();
  GridSearchResult r;
  r.cells = expand_grid(grid);
  if (r.cells.empty()) fail(ErrorKind::invalid_argument, "empty grid");
  const auto fold_idx = stratified_folds(data.labels, folds, seed);

  std::vector<FeatureDataset> train_parts, test_parts;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < folds; ++g)
      if (g != f) train_idx.insert(train_idx.end(), fold_idx[g].begin(), fold_idx[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    train_parts.push_back(data.subset(train_idx));
    test_parts.push_back(data.subset(fold_idx[f]));
  }

  for (const auto& cell : r.cells) {
    std::vector<double> acc;
    for (std::size_t f = 0; f < folds; ++f) {
      const auto model = TabularModel::fit(family, cell, train_parts[f]);
      std::size_t correct = 0;
      const auto& test = test_parts[f];
      for (std::size_t i = 0; i < test.size(); ++i)
        if (model.predict(test.items[i]).label == test.labels[i]) ++correct;
      acc.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    r.mean_accuracy.push_back(mean / static_cast<double>(folds));
    r.fold_accuracy.push_back(std::move(acc));
  }
  for (std::size_t c = 1; c < r.cells.size(); ++c)
    if (r.mean_accuracy[c] > r.mean_accuracy[r.best]) r.best = c;
  return r;
}

inline nlohmann::json to_json(const GridSearchResult& r) {
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t c = 0; c < r.cells.size(); ++c)
    table.push_back({{"params", r.cells[c]}, {"fold_accuracy", r.fold_accuracy[c]}, {"mean_accuracy", r.mean_accuracy[c]}});
  return {{"best", r.best_params()}, {"best_index", r.best}, {"cells", table}};
}

}  // namespace lded
