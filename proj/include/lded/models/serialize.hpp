#pragma once

// Model files: a JSON container holding a kind tag, hyperparameters and
// base64 little-endian weight arrays. CNN weights are stored as float32 (they
// are kept float-representable), tabular models as float64 so reloading
// reproduces predictions exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lded/error.hpp"
#include "lded/models/model.hpp"

namespace lded {

inline constexpr std::string_view kModelFormat = "lded-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += rest == 2 ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (s.size() % 4 != 0) fail(ErrorKind::data, "corrupt payload: base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<std::size_t>(k)];
      if (c == '=' && i + 4 == s.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad > 0 || (v[k] = value(c)) < 0) fail(ErrorKind::data, "corrupt payload: invalid base64");
    }
    const std::uint32_t w = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                            (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(p[b]) << (8 * b);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

enum class Dtype { f32, f64 };

inline nlohmann::json encode_array(std::span<const double> values, std::vector<std::size_t> shape, Dtype dtype) {
  std::size_t expected = 1;
  for (auto s : shape) expected *= s;
  if (expected != values.size()) fail(ErrorKind::internal, "array shape does not match its length");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * (dtype == Dtype::f32 ? 4 : 8));
  for (double v : values) {
    if (dtype == Dtype::f32)
      detail::put_le(bytes, static_cast<float>(v));
    else
      detail::put_le(bytes, v);
  }
  return {{"dtype", dtype == Dtype::f32 ? "float32" : "float64"}, {"shape", shape}, {"data", detail::base64_encode(bytes)}};
}

inline std::vector<double> decode_array(const nlohmann::json& j, std::vector<std::size_t>* shape_out = nullptr) {
  try {
    const auto dtype = j.at("dtype").get<std::string>();
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    const auto bytes = detail::base64_decode(j.at("data").get<std::string>());
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::size_t width = 0;
    if (dtype == "float32")
      width = 4;
    else if (dtype == "float64")
      width = 8;
    else
      fail(ErrorKind::data, "corrupt payload: unknown dtype " + dtype);
    if (bytes.size() != n * width) fail(ErrorKind::data, "corrupt payload: array byte count does not match its shape");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
      v[i] = width == 4 ? static_cast<double>(detail::get_le<float>(bytes.data() + 4 * i)) : detail::get_le<double>(bytes.data() + 8 * i);
    if (shape_out) *shape_out = shape;
    return v;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("corrupt payload: ") + e.what());
  }
}

namespace detail {

inline std::vector<double> flatten_rows(const std::vector<Row>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return flat;
}

inline std::vector<Row> unflatten_rows(const std::vector<double>& flat, std::size_t n_rows, std::size_t n_cols) {
  if (flat.size() != n_rows * n_cols) fail(ErrorKind::data, "corrupt payload: matrix size mismatch");
  std::vector<Row> rows(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i)
    rows[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * n_cols), flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_cols));
  return rows;
}

inline std::vector<double> matrix(const nlohmann::json& arrays, const char* name, std::size_t& rows, std::size_t& cols) {
  std::vector<std::size_t> shape;
  auto v = decode_array(arrays.at(name), &shape);
  if (shape.size() != 2) fail(ErrorKind::data, std::string("corrupt payload: ") + name + " is not a matrix");
  rows = shape[0];
  cols = shape[1];
  return v;
}

inline std::vector<Row> matrix_rows(const nlohmann::json& arrays, const char* name, std::size_t& rows, std::size_t& cols) {
  const auto flat = matrix(arrays, name, rows, cols);
  return unflatten_rows(flat, rows, cols);
}

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  const std::size_t n = t.nodes.size();
  const auto K = static_cast<std::size_t>(t.n_classes);
  std::vector<double> feature, threshold, left, right, dist, samples, impurity;
  for (const auto& node : t.nodes) {
    feature.push_back(node.feature);
    threshold.push_back(node.threshold);
    left.push_back(node.left);
    right.push_back(node.right);
    dist.insert(dist.end(), node.distribution.begin(), node.distribution.end());
    samples.push_back(node.samples);
    impurity.push_back(node.impurity);
  }
  return {{"n_classes", t.n_classes},
          {"n_features", t.n_features},
          {"max_depth", t.options.max_depth},
          {"min_samples_split", t.options.min_samples_split},
          {"max_features", t.options.max_features},
          {"arrays",
           {{"feature", encode_array(feature, {n}, Dtype::f64)},
            {"threshold", encode_array(threshold, {n}, Dtype::f64)},
            {"left", encode_array(left, {n}, Dtype::f64)},
            {"right", encode_array(right, {n}, Dtype::f64)},
            {"distribution", encode_array(dist, {n, K}, Dtype::f64)},
            {"samples", encode_array(samples, {n}, Dtype::f64)},
            {"impurity", encode_array(impurity, {n}, Dtype::f64)}}}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  DecisionTree t;
  t.n_classes = j.at("n_classes").get<int>();
  t.n_features = j.at("n_features").get<std::size_t>();
  t.options = {j.at("max_depth").get<std::size_t>(), j.at("min_samples_split").get<std::size_t>(),
               j.at("max_features").get<std::size_t>()};
  const auto& a = j.at("arrays");
  const auto feature = decode_array(a.at("feature"));
  const auto threshold = decode_array(a.at("threshold"));
  const auto left = decode_array(a.at("left"));
  const auto right = decode_array(a.at("right"));
  const auto samples = decode_array(a.at("samples"));
  const auto impurity = decode_array(a.at("impurity"));
  std::size_t rows = 0, cols = 0;
  const auto dist = matrix(a, "distribution", rows, cols);
  const std::size_t n = feature.size();
  if (threshold.size() != n || left.size() != n || right.size() != n || samples.size() != n || impurity.size() != n || rows != n ||
      cols != static_cast<std::size_t>(t.n_classes) || n == 0)
    fail(ErrorKind::data, "corrupt payload: inconsistent tree arrays");
  t.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = t.nodes[i];
    node.feature = static_cast<int>(feature[i]);
    node.threshold = threshold[i];
    node.left = static_cast<int>(left[i]);
    node.right = static_cast<int>(right[i]);
    node.samples = samples[i];
    node.impurity = impurity[i];
    node.distribution.assign(dist.begin() + static_cast<std::ptrdiff_t>(i * cols), dist.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
    const bool leaf = node.feature < 0;
    const auto in_range = [n](int c) { return c > 0 && static_cast<std::size_t>(c) < n; };
    if (!leaf && (static_cast<std::size_t>(node.feature) >= t.n_features || !in_range(node.left) || !in_range(node.right)))
      fail(ErrorKind::data, "corrupt payload: tree node out of range");
  }
  return t;
}

inline nlohmann::json learner_arrays(const TabularLearner& learner) {
  nlohmann::json a = nlohmann::json::object();
  if (const auto* nb = std::get_if<GaussianNaiveBayes>(&learner)) {
    const std::size_t K = nb->mean.size(), d = K ? nb->mean.front().size() : 0;
    a["log_prior"] = encode_array(nb->log_prior, {K}, Dtype::f64);
    a["mean"] = encode_array(flatten_rows(nb->mean), {K, d}, Dtype::f64);
    a["variance"] = encode_array(flatten_rows(nb->variance), {K, d}, Dtype::f64);
  } else if (const auto* knn = std::get_if<KNearestNeighbors>(&learner)) {
    const std::size_t n = knn->rows.size(), d = n ? knn->rows.front().size() : 0;
    a["rows"] = encode_array(flatten_rows(knn->rows), {n, d}, Dtype::f64);
    std::vector<double> labels(knn->labels.begin(), knn->labels.end());
    a["labels"] = encode_array(labels, {n}, Dtype::f64);
  } else if (const auto* lr = std::get_if<LogisticRegression>(&learner)) {
    const auto K = static_cast<std::size_t>(lr->n_classes);
    a["weights"] = encode_array(lr->weights, {K, lr->n_features}, Dtype::f64);
    a["bias"] = encode_array(lr->bias, {K}, Dtype::f64);
  }
  return a;
}

}  // namespace detail

inline nlohmann::json model_to_json(const TabularModel& m, std::uint64_t seed = 0, std::uint64_t config_hash = 0) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["kind"] = m.family();
  j["hyperparameters"] = m.hyperparameters;
  j["features"] = m.features;
  j["meta"] = {{"seed", seed}, {"config_hash", config_hash}};
  auto arrays = detail::learner_arrays(m.learner);
  const std::size_t d = m.scaler.mean.size();
  arrays["scaler.mean"] = encode_array(m.scaler.mean, {d}, Dtype::f64);
  arrays["scaler.std"] = encode_array(m.scaler.stddev, {d}, Dtype::f64);
  j["arrays"] = arrays;
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianNaiveBayes>) {
          j["n_classes"] = l.n_classes;
        } else if constexpr (std::is_same_v<T, KNearestNeighbors>) {
          j["n_classes"] = l.n_classes;
        } else if constexpr (std::is_same_v<T, LogisticRegression>) {
          j["n_classes"] = l.n_classes;
          j["training"] = {{"converged", l.converged}, {"iterations", l.iterations}, {"gradient_norm", l.final_gradient_norm}};
        } else if constexpr (std::is_same_v<T, DecisionTree>) {
          j["n_classes"] = l.n_classes;
          j["tree"] = detail::tree_to_json(l);
        } else {
          j["n_classes"] = l.n_classes;
          j["n_features"] = l.n_features;
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : l.trees) trees.push_back(detail::tree_to_json(t));
          j["trees"] = trees;
        }
      },
      m.learner);
  return j;
}

inline nlohmann::json architecture_to_json(const CnnArchitecture& a) {
  return {{"input_height", a.input_height},       {"input_width", a.input_width},     {"filters", a.filters},
          {"kernels", a.kernels},                 {"dense_units", a.dense_units},     {"n_classes", a.n_classes},
          {"dropout_conv3", a.dropout_conv3},     {"dropout_flatten", a.dropout_flatten}, {"dropout_dense", a.dropout_dense},
          {"bn_momentum", a.bn_momentum},         {"bn_eps", a.bn_eps}};
}

inline CnnArchitecture architecture_from_json(const nlohmann::json& j) {
  CnnArchitecture a;
  a.input_height = j.at("input_height").get<std::size_t>();
  a.input_width = j.at("input_width").get<std::size_t>();
  a.filters = j.at("filters").get<std::array<std::size_t, 3>>();
  a.kernels = j.at("kernels").get<std::array<std::size_t, 3>>();
  a.dense_units = j.at("dense_units").get<std::size_t>();
  a.n_classes = j.at("n_classes").get<std::size_t>();
  a.dropout_conv3 = j.at("dropout_conv3").get<double>();
  a.dropout_flatten = j.at("dropout_flatten").get<double>();
  a.dropout_dense = j.at("dropout_dense").get<double>();
  a.bn_momentum = j.at("bn_momentum").get<double>();
  a.bn_eps = j.at("bn_eps").get<double>();
  a.validate();
  return a;
}

inline nlohmann::json model_to_json(const CnnModel& model, const TrainConfig& cfg = {}, std::uint64_t config_hash = 0) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["kind"] = "cnn";
  j["architecture"] = architecture_to_json(model.architecture());
  j["hyperparameters"] = {{"learning_rate", cfg.learning_rate}, {"beta1", cfg.beta1},         {"beta2", cfg.beta2},
                          {"adam_eps", cfg.adam_eps},           {"l2", cfg.l2},               {"batch_size", cfg.batch_size},
                          {"epochs", cfg.epochs}};
  j["meta"] = {{"seed", cfg.seed}, {"config_hash", config_hash}};
  nlohmann::json arrays = nlohmann::json::object();
  CnnModel copy = model;
  for (const auto& ref : copy.state()) arrays[ref.name] = encode_array(*ref.value, {ref.value->size()}, Dtype::f32);
  j["arrays"] = arrays;
  return j;
}

namespace detail {

inline void check_header(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kModelFormat) fail(ErrorKind::data, "not a model file");
  const int version = j.value("version", -1);
  if (version != kModelVersion) fail(ErrorKind::data, "unsupported model version " + std::to_string(version));
}

inline CnnModel cnn_from_json(const nlohmann::json& j) {
  CnnModel m(architecture_from_json(j.at("architecture")), 0);
  const auto& arrays = j.at("arrays");
  for (auto& ref : m.state()) {
    if (!arrays.contains(ref.name)) fail(ErrorKind::data, "corrupt payload: missing array " + ref.name);
    auto v = decode_array(arrays.at(ref.name));
    if (v.size() != ref.value->size()) fail(ErrorKind::data, "corrupt payload: array " + ref.name + " has the wrong size");
    *ref.value = std::move(v);
  }
  return m;
}

inline TabularModel tabular_from_json(const nlohmann::json& j, const std::string& kind) {
  TabularModel m;
  m.hyperparameters = j.at("hyperparameters").get<Hyperparameters>();
  m.features = j.at("features").get<std::vector<std::string>>();
  const auto& a = j.at("arrays");
  m.scaler.mean = decode_array(a.at("scaler.mean"));
  m.scaler.stddev = decode_array(a.at("scaler.std"));
  const std::size_t d = m.scaler.mean.size();
  if (m.scaler.stddev.size() != d || m.features.size() != d) fail(ErrorKind::data, "corrupt payload: feature count mismatch");
  const int K = j.at("n_classes").get<int>();
  std::size_t rows = 0, cols = 0;
  if (kind == "gaussian_nb") {
    GaussianNaiveBayes nb;
    nb.var_smoothing = param_or(m.hyperparameters, "var_smoothing", 1e-9);
    nb.n_classes = K;
    nb.log_prior = decode_array(a.at("log_prior"));
    nb.mean = matrix_rows(a, "mean", rows, cols);
    nb.variance = matrix_rows(a, "variance", rows, cols);
    if (nb.log_prior.size() != static_cast<std::size_t>(K) || nb.mean.size() != nb.log_prior.size() || cols != d)
      fail(ErrorKind::data, "corrupt payload: naive Bayes shape mismatch");
    m.learner = nb;
  } else if (kind == "knn") {
    KNearestNeighbors knn;
    knn.n_classes = K;
    knn.k = static_cast<std::size_t>(param_or(m.hyperparameters, "k", 4));
    knn.weighting = param_or(m.hyperparameters, "distance_weighting", 1) != 0.0 ? KnnWeighting::distance : KnnWeighting::uniform;
    knn.rows = matrix_rows(a, "rows", rows, cols);
    for (double v : decode_array(a.at("labels"))) knn.labels.push_back(static_cast<int>(v));
    if (knn.labels.size() != knn.rows.size() || cols != d || knn.k > knn.rows.size())
      fail(ErrorKind::data, "corrupt payload: neighbour table shape mismatch");
    m.learner = knn;
  } else if (kind == "logistic") {
    LogisticRegression lr;
    lr.n_classes = K;
    lr.weights = matrix(a, "weights", rows, cols);
    lr.n_features = cols;
    lr.bias = decode_array(a.at("bias"));
    if (rows != static_cast<std::size_t>(K) || cols != d || lr.bias.size() != rows)
      fail(ErrorKind::data, "corrupt payload: logistic shape mismatch");
    if (j.contains("training")) {
      lr.converged = j["training"].value("converged", false);
      lr.iterations = j["training"].value("iterations", std::size_t{0});
      lr.final_gradient_norm = j["training"].value("gradient_norm", 0.0);
    }
    m.learner = lr;
  } else if (kind == "decision_tree") {
    auto t = tree_from_json(j.at("tree"));
    if (t.n_features != d) fail(ErrorKind::data, "corrupt payload: tree feature count mismatch");
    m.learner = std::move(t);
  } else if (kind == "random_forest") {
    RandomForest f;
    f.n_classes = K;
    f.n_features = j.at("n_features").get<std::size_t>();
    f.options = {static_cast<std::size_t>(param_or(m.hyperparameters, "n_estimators", 10)),
                 static_cast<std::size_t>(param_or(m.hyperparameters, "max_depth", 4)),
                 static_cast<std::size_t>(param_or(m.hyperparameters, "min_samples_split", 3)),
                 static_cast<std::uint64_t>(param_or(m.hyperparameters, "seed", 0))};
    for (const auto& t : j.at("trees")) f.trees.push_back(tree_from_json(t));
    if (f.trees.empty() || f.n_features != d) fail(ErrorKind::data, "corrupt payload: forest shape mismatch");
    m.learner = std::move(f);
  } else {
    fail(ErrorKind::data, "unknown model kind: " + kind);
  }
  return m;
}

}  // namespace detail

/// Parses a model container. `expected_kind` ("cnn", a tabular family, or
/// "tabular" for any of them) turns a kind mismatch into a typed error.
inline AnyModel model_from_json(const nlohmann::json& j, std::string_view expected_kind = {}) {
  detail::check_header(j);
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (!expected_kind.empty()) {
      const bool tabular_ok = expected_kind == "tabular" && kind != "cnn";
      if (!tabular_ok && kind != expected_kind)
        fail(ErrorKind::data, "model kind mismatch: expected " + std::string(expected_kind) + ", found " + kind);
    }
    if (kind == "cnn") return detail::cnn_from_json(j);
    return detail::tabular_from_json(j, kind);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("corrupt payload: ") + e.what());
  }
}

inline void write_json_file(const nlohmann::json& j, const std::string& path, int indent = -1) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << j.dump(indent) << '\n';
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::data, path + ": malformed or truncated JSON (" + e.what() + ")");
  }
}

inline void save_model(const AnyModel& m, const std::string& path) {
  if (const auto* t = std::get_if<TabularModel>(&m))
    write_json_file(model_to_json(*t), path);
  else
    write_json_file(model_to_json(std::get<CnnModel>(m)), path);
}

inline AnyModel load_model(const std::string& path, std::string_view expected_kind = {}) {
  return model_from_json(read_json_file(path), expected_kind);
}

}  // namespace lded
