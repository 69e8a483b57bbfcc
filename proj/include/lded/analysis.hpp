#pragma once

// Feature-table analysis: rank correlation, PCA, forest importances and the
// CSV format the CLI exchanges feature tables in.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lded/error.hpp"
#include "lded/features.hpp"
#include "lded/models/dataset.hpp"
#include "lded/models/tree.hpp"

namespace lded {

struct RowKey {
  std::string clip_id;
  std::size_t segment_index = 0;
  double start_s = 0.0;
};

struct FeatureTable {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;   // empty for an unlabelled table
  std::vector<RowKey> keys;  // optional

  std::size_t size() const { return rows.size(); }
  bool labeled() const { return !labels.empty() || rows.empty(); }

  void require_labels() const {
    if (!labeled()) fail(ErrorKind::data, "feature table has no labels");
  }

  void validate() const {
    if (!labels.empty() && rows.size() != labels.size()) fail(ErrorKind::data, "feature table row and label counts differ");
    if (!keys.empty() && keys.size() != rows.size()) fail(ErrorKind::data, "feature table key count differs from row count");
    for (const auto& r : rows)
      if (r.size() != feature_names.size()) fail(ErrorKind::data, "feature table is not rectangular");
    for (int l : labels)
      if (l < 0 || l >= kNumClasses) fail(ErrorKind::data, "label out of range");
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> c(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) c[i] = rows[i][j];
    return c;
  }

  FeatureDataset dataset() const {
    validate();
    require_labels();
    FeatureDataset d;
    d.items = rows;
    d.labels = labels;
    d.feature_names = feature_names;
    return d;
  }

  /// Keeps only the named columns, in the given order.
  FeatureTable select(std::span<const std::string> names) const {
    std::vector<std::size_t> cols;
    for (const auto& n : names) {
      auto it = std::find(feature_names.begin(), feature_names.end(), n);
      if (it == feature_names.end()) fail(ErrorKind::invalid_argument, "unknown feature: " + n);
      cols.push_back(static_cast<std::size_t>(it - feature_names.begin()));
    }
    FeatureTable t;
    t.feature_names.assign(names.begin(), names.end());
    t.labels = labels;
    t.keys = keys;
    for (const auto& r : rows) {
      std::vector<double> out;
      for (auto c : cols) out.push_back(r[c]);
      t.rows.push_back(std::move(out));
    }
    return t;
  }
};

/// 1-based ranks; tied values share the mean of the positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline bool has_ties(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation; empty when either column is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::invalid_argument, "spearman: length mismatch");
  if (x.size() < 2) fail(ErrorKind::invalid_argument, "spearman: need at least two points");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) fail(ErrorKind::data, "spearman: non-finite value");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  if (has_ties(x) || has_ties(y)) return pearson(rx, ry);
  const double n = static_cast<double>(x.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

struct CorrelationMatrix {
  std::vector<std::string> names;  // feature columns, then "label" for a labelled table
  std::vector<std::vector<std::optional<double>>> r;
};

inline CorrelationMatrix correlation_matrix(const FeatureTable& t) {
  t.validate();
  if (t.size() < 2) fail(ErrorKind::invalid_argument, "correlation matrix needs at least two rows");
  CorrelationMatrix m;
  m.names = t.feature_names;
  std::vector<std::vector<double>> cols;
  for (std::size_t j = 0; j < t.feature_names.size(); ++j) cols.push_back(t.column(j));
  if (!t.labels.empty()) {
    m.names.push_back("label");
    cols.emplace_back(t.labels.begin(), t.labels.end());
  }
  const std::size_t p = cols.size();
  m.r.assign(p, std::vector<std::optional<double>>(p));
  for (std::size_t a = 0; a < p; ++a) {
    const bool constant = std::all_of(cols[a].begin(), cols[a].end(), [&](double v) { return v == cols[a].front(); });
    if (!constant) m.r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < p; ++b) m.r[a][b] = m.r[b][a] = spearman(cols[a], cols[b]);
  }
  return m;
}

struct Eigen {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[k] pairs with values[k]
};

/// Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
/// Frobenius norm falls below `tol`.
inline Eigen jacobi_eigen(std::vector<std::vector<double>> a, double tol = 1e-10, std::size_t max_sweeps = 100) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  auto off = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i][j] * a[i][j];
    return std::sqrt(s);
  };
  for (std::size_t sweep = 0; sweep < max_sweeps && off() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  Eigen e;
  for (auto k : order) {
    e.values.push_back(a[k][k]);
    std::vector<double> vec(n);
    for (std::size_t i = 0; i < n; ++i) vec[i] = v[i][k];
    e.vectors.push_back(std::move(vec));
  }
  return e;
}

struct PcaResult {
  std::vector<std::string> used_features;     // non-constant columns, in input order
  std::vector<std::string> dropped_features;  // constant columns
  std::vector<std::vector<double>> components;  // k x used, unit length
  std::vector<double> eigenvalues;              // all, descending
  std::vector<double> explained_variance_ratio;  // first k
  std::vector<std::vector<double>> projection;   // n x k
};

/// Standardized-column PCA; each component's largest-magnitude loading is positive.
inline PcaResult pca_project(const FeatureTable& t, std::size_t k = 2) {
  t.validate();
  const std::size_t n = t.size();
  if (k == 0) fail(ErrorKind::invalid_argument, "PCA needs at least one component");
  if (n <= k) fail(ErrorKind::invalid_argument, "PCA needs more rows than components");
  PcaResult r;
  std::vector<std::vector<double>> z;  // standardized used columns
  for (std::size_t j = 0; j < t.feature_names.size(); ++j) {
    auto c = t.column(j);
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (!(var > 0.0)) {
      r.dropped_features.push_back(t.feature_names[j]);
      continue;
    }
    const double sd = std::sqrt(var);
    for (auto& v : c) v = (v - mean) / sd;
    r.used_features.push_back(t.feature_names[j]);
    z.push_back(std::move(c));
  }
  const std::size_t d = z.size();
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += z[a][i] * z[b][i];
      cov[a][b] = cov[b][a] = s / static_cast<double>(n);
    }
  const auto eig = jacobi_eigen(cov);
  r.eigenvalues = eig.values;
  const double total = std::accumulate(eig.values.begin(), eig.values.end(), 0.0);
  std::size_t rank = 0;
  for (double v : eig.values)
    if (v > 1e-10 * std::max(total, 1.0)) ++rank;
  if (k > rank) fail(ErrorKind::invalid_argument, "PCA: requested " + std::to_string(k) + " components but the data has rank " + std::to_string(rank));
  for (std::size_t c = 0; c < k; ++c) {
    auto vec = eig.vectors[c];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(vec[i]) > std::abs(vec[arg])) arg = i;
    if (vec[arg] < 0)
      for (auto& v : vec) v = -v;
    r.components.push_back(std::move(vec));
    r.explained_variance_ratio.push_back(eig.values[c] / total);
  }
  r.projection.assign(n, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) r.projection[i][c] += z[j][i] * r.components[c][j];
  return r;
}

inline std::vector<double> rf_feature_importance(const RandomForest& forest) { return forest.feature_importance(); }

/// Trains a forest with the given options on the whole table and returns its
/// mean-decrease-in-Gini importances, one per feature column.
inline std::vector<double> rf_feature_importance(const FeatureTable& t, const ForestOptions& opt = {}) {
  return RandomForest::fit(t.dataset(), opt).feature_importance();
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Columns: clip_id, segment_index, start_s, one per feature, then label if the
/// table is labelled. Rows without keys get their row number as the segment index.
inline void write_feature_csv(const FeatureTable& t, std::ostream& out) {
  t.validate();
  const bool with_labels = !t.labels.empty();
  out << "clip_id,segment_index,start_s";
  for (const auto& n : t.feature_names) out << ',' << n;
  if (with_labels) out << ",label";
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.keys.empty())
      out << ',' << i << ',';
    else
      out << t.keys[i].clip_id << ',' << t.keys[i].segment_index << ',' << format_double(t.keys[i].start_s);
    for (double v : t.rows[i]) out << ',' << format_double(v);
    if (with_labels) out << ',' << t.labels[i];
    out << '\n';
  }
}

inline void write_feature_csv(const FeatureTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  write_feature_csv(t, out);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline FeatureTable read_feature_csv(std::istream& in, const std::string& what = "feature CSV") {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, what + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "clip_id" || header[1] != "segment_index" || header[2] != "start_s")
    fail(ErrorKind::data, what + ": header must start with clip_id,segment_index,start_s");
  const bool with_labels = header.back() == "label";
  FeatureTable t;
  t.feature_names.assign(header.begin() + 3, header.end() - (with_labels ? 1 : 0));
  if (t.feature_names.empty()) fail(ErrorKind::data, what + ": no feature columns");
  auto number = [](const std::string& cell) {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  };
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) fail(ErrorKind::data, what + ": line " + std::to_string(line_no) + " has the wrong column count");
    try {
      RowKey key;
      key.clip_id = cells[0];
      key.segment_index = static_cast<std::size_t>(std::stoull(cells[1]));
      key.start_s = cells[2].empty() ? 0.0 : number(cells[2]);
      t.keys.push_back(std::move(key));
      std::vector<double> row;
      for (std::size_t c = 3; c < 3 + t.feature_names.size(); ++c) row.push_back(number(cells[c]));
      t.rows.push_back(std::move(row));
      if (with_labels) {
        std::size_t used = 0;
        t.labels.push_back(std::stoi(cells.back(), &used));
        if (used != cells.back().size()) throw std::invalid_argument(cells.back());
      }
    } catch (const std::logic_error&) {
      fail(ErrorKind::data, what + ": unparsable value on line " + std::to_string(line_no));
    }
  }
  t.validate();
  return t;
}

inline FeatureTable read_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return read_feature_csv(in, path);
}

}  // namespace lded
