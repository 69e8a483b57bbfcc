#pragma once

// Standardizer, Gaussian naive Bayes, k-nearest neighbours and multinomial
// logistic regression over tabular feature rows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "lded/error.hpp"
#include "lded/models/dataset.hpp"

namespace lded {

using Row = std::vector<double>;

inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

inline void require_rectangular(std::span<const Row> rows) {
  if (rows.empty()) fail(ErrorKind::invalid_argument, "empty training set");
  const std::size_t d = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != d) fail(ErrorKind::data, "rows have differing widths");
}

// ---------------------------------------------------------------------------

struct Standardizer {
  static constexpr double kStdFloor = 1e-12;
  std::vector<double> mean;
  std::vector<double> stddev;

  /// Learns population mean/std from the training rows only.
  static Standardizer fit(std::span<const Row> train) {
    require_rectangular(train);
    const std::size_t d = train.front().size();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (const auto& r : train)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (auto& m : s.mean) m /= static_cast<double>(train.size());
    for (const auto& r : train)
      for (std::size_t j = 0; j < d; ++j) s.stddev[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    for (auto& v : s.stddev) v = std::max(std::sqrt(v / static_cast<double>(train.size())), kStdFloor);
    return s;
  }

  Row apply(std::span<const double> row) const {
    if (row.size() != mean.size()) fail(ErrorKind::data, "standardizer width mismatch");
    Row out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / stddev[j];
    return out;
  }

  std::vector<Row> apply(std::span<const Row> rows) const {
    std::vector<Row> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(apply(r));
    return out;
  }
};

// ---------------------------------------------------------------------------

struct GaussianNaiveBayes {
  double var_smoothing = 1e-9;
  int n_classes = kNumClasses;
  std::vector<double> log_prior;
  std::vector<Row> mean;      // per class
  std::vector<Row> variance;  // per class, smoothed

  /// Variances are smoothed by var_smoothing times the largest feature variance.
  static GaussianNaiveBayes fit(const FeatureDataset& train, double var_smoothing = 1e-9, int n_classes = kNumClasses) {
    require_rectangular(train.items);
    train.validate(n_classes);
    const std::size_t d = train.items.front().size();
    const auto counts = class_counts(train.labels, n_classes);
    for (auto c : counts)
      if (c == 0) fail(ErrorKind::invalid_argument, "every class must be present to train naive Bayes");

    double max_var = 0.0;
    {
      Row mu(d, 0.0), var(d, 0.0);
      for (const auto& r : train.items)
        for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
      for (auto& m : mu) m /= static_cast<double>(train.size());
      for (const auto& r : train.items)
        for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
      for (auto v : var) max_var = std::max(max_var, v / static_cast<double>(train.size()));
    }
    const double eps = var_smoothing * max_var;

    GaussianNaiveBayes m;
    m.var_smoothing = var_smoothing;
    m.n_classes = n_classes;
    m.mean.assign(static_cast<std::size_t>(n_classes), Row(d, 0.0));
    m.variance.assign(static_cast<std::size_t>(n_classes), Row(d, 0.0));
    for (std::size_t i = 0; i < train.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) m.mean[static_cast<std::size_t>(train.labels[i])][j] += train.items[i][j];
    for (std::size_t c = 0; c < counts.size(); ++c)
      for (auto& v : m.mean[c]) v /= static_cast<double>(counts[c]);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto c = static_cast<std::size_t>(train.labels[i]);
      for (std::size_t j = 0; j < d; ++j) {
        const double dv = train.items[i][j] - m.mean[c][j];
        m.variance[c][j] += dv * dv;
      }
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
      for (auto& v : m.variance[c]) v = v / static_cast<double>(counts[c]) + eps;
      m.log_prior.push_back(std::log(static_cast<double>(counts[c]) / static_cast<double>(train.size())));
    }
    for (auto& row : m.variance)
      for (auto& v : row)
        if (!(v > 0.0)) v = std::numeric_limits<double>::min();
    return m;
  }

  Prediction predict(std::span<const double> x) const {
    std::vector<double> joint(static_cast<std::size_t>(n_classes));
    for (std::size_t c = 0; c < joint.size(); ++c) {
      double ll = log_prior[c];
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double v = variance[c][j];
        const double d = x[j] - mean[c][j];
        ll += -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * d * d / v;
      }
      joint[c] = ll;
    }
    auto p = softmax(joint);
    return {argmax(p), std::move(p)};
  }
};

// ---------------------------------------------------------------------------

enum class KnnWeighting { uniform, distance };

struct KNearestNeighbors {
  std::size_t k = 4;
  KnnWeighting weighting = KnnWeighting::distance;
  int n_classes = kNumClasses;
  std::vector<Row> rows;
  std::vector<int> labels;

  static KNearestNeighbors fit(const FeatureDataset& train, std::size_t k = 4, KnnWeighting w = KnnWeighting::distance,
                               int n_classes = kNumClasses) {
    require_rectangular(train.items);
    train.validate(n_classes);
    require(k >= 1, "k must be at least 1");
    if (k > train.size()) fail(ErrorKind::invalid_argument, "k exceeds the training set size");
    return {k, w, n_classes, train.items, train.labels};
  }

  /// Euclidean neighbours (ties broken by training order). With distance
  /// weighting, an exact match outvotes everything else.
  Prediction predict(std::span<const double> x) const {
    std::vector<std::pair<double, std::size_t>> dist(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) acc += (rows[i][j] - x[j]) * (rows[i][j] - x[j]);
      dist[i] = {std::sqrt(acc), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<double> votes(static_cast<std::size_t>(n_classes), 0.0);
    bool exact = false;
    if (weighting == KnnWeighting::distance)
      for (std::size_t i = 0; i < k; ++i)
        if (dist[i].first == 0.0) {
          exact = true;
          votes[static_cast<std::size_t>(labels[dist[i].second])] += 1.0;
        }
    if (!exact)
      for (std::size_t i = 0; i < k; ++i)
        votes[static_cast<std::size_t>(labels[dist[i].second])] += weighting == KnnWeighting::distance ? 1.0 / dist[i].first : 1.0;
    const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
    for (auto& v : votes) v /= total;
    return {argmax(votes), std::move(votes)};
  }
};

// ---------------------------------------------------------------------------

struct LogisticOptions {
  double l2 = 1e-3;  // objective: mean cross-entropy + (l2 / 2) * ||W||^2, intercepts unpenalised
  std::size_t max_iter = 2000;
  double tol = 1e-6;  // stop when the gradient 2-norm drops below this
};

struct LogisticRegression {
  int n_classes = kNumClasses;
  std::size_t n_features = 0;
  std::vector<double> weights;  // n_classes x n_features
  std::vector<double> bias;     // n_classes
  double l2 = 1e-3;
  bool converged = false;
  std::size_t iterations = 0;
  double final_gradient_norm = 0.0;

  std::vector<double> logits(std::span<const double> x) const {
    std::vector<double> z(bias);
    for (std::size_t c = 0; c < z.size(); ++c)
      for (std::size_t j = 0; j < n_features; ++j) z[c] += weights[c * n_features + j] * x[j];
    return z;
  }

  Prediction predict(std::span<const double> x) const {
    auto p = softmax(logits(x));
    return {argmax(p), std::move(p)};
  }

  /// Packed parameter vector [weights..., bias...].
  std::vector<double> parameters() const {
    std::vector<double> p(weights);
    p.insert(p.end(), bias.begin(), bias.end());
    return p;
  }
  void set_parameters(std::span<const double> p) {
    std::copy_n(p.begin(), weights.size(), weights.begin());
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(weights.size()), bias.size(), bias.begin());
  }

  /// Objective value; fills `grad` (same layout as parameters()) when non-null.
  double objective(const FeatureDataset& data, std::vector<double>* grad) const {
    const std::size_t K = static_cast<std::size_t>(n_classes);
    const std::size_t d = n_features;
    if (grad) grad->assign(K * d + K, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& x = data.items[i];
      const auto z = logits(x);
      const double lse = log_sum_exp(z);
      const auto y = static_cast<std::size_t>(data.labels[i]);
      loss += lse - z[y];
      if (grad)
        for (std::size_t c = 0; c < K; ++c) {
          const double g = std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0);
          for (std::size_t j = 0; j < d; ++j) (*grad)[c * d + j] += g * x[j];
          (*grad)[K * d + c] += g;
        }
    }
    const double n = static_cast<double>(data.size());
    loss /= n;
    double reg = 0.0;
    for (double w : weights) reg += w * w;
    loss += 0.5 * l2 * reg;
    if (grad) {
      for (auto& g : *grad) g /= n;
      for (std::size_t i = 0; i < K * d; ++i) (*grad)[i] += l2 * weights[i];
    }
    return loss;
  }

  /// Full-batch gradient descent with Armijo backtracking.
  static LogisticRegression fit(const FeatureDataset& train, const LogisticOptions& opt = {}, int n_classes = kNumClasses) {
    require_rectangular(train.items);
    train.validate(n_classes);
    LogisticRegression m;
    m.n_classes = n_classes;
    m.n_features = train.items.front().size();
    m.weights.assign(static_cast<std::size_t>(n_classes) * m.n_features, 0.0);
    m.bias.assign(static_cast<std::size_t>(n_classes), 0.0);
    m.l2 = opt.l2;

    std::vector<double> grad;
    double f = m.objective(train, &grad);
    double step = 1.0;
    for (m.iterations = 0; m.iterations < opt.max_iter; ++m.iterations) {
      double gnorm2 = 0.0;
      for (double g : grad) gnorm2 += g * g;
      m.final_gradient_norm = std::sqrt(gnorm2);
      if (m.final_gradient_norm < opt.tol) {
        m.converged = true;
        break;
      }
      const auto params = m.parameters();
      std::vector<double> trial(params.size());
      step = std::min(step * 2.0, 1e6);
      double f_new = f;
      while (true) {
        for (std::size_t i = 0; i < params.size(); ++i) trial[i] = params[i] - step * grad[i];
        m.set_parameters(trial);
        f_new = m.objective(train, nullptr);
        if (f_new <= f - 1e-4 * step * gnorm2) break;
        step *= 0.5;
        if (step < 1e-16) {
          m.set_parameters(params);
          m.converged = false;
          return m;
        }
      }
      f = m.objective(train, &grad);
    }
    if (!m.converged) {
      double gnorm2 = 0.0;
      for (double g : grad) gnorm2 += g * g;
      m.final_gradient_norm = std::sqrt(gnorm2);
      m.converged = m.final_gradient_norm < opt.tol;
    }
    return m;
  }
};

}  // namespace lded
