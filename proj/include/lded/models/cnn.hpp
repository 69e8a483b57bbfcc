#pragma once

// MFCC-CNN: three conv stages (conv 'same' -> batch norm -> ReLU -> 2x2 max
// pool), flatten, dense + ReLU, dense softmax. Trained with mini-batch Adam on
// cross-entropy plus a coupled L2 penalty on conv/dense kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lded/error.hpp"
#include "lded/mfcc.hpp"
#include "lded/models/classic.hpp"
#include "lded/models/dataset.hpp"
#include "lded/random.hpp"

namespace lded {

struct CnnArchitecture {
  std::size_t input_height = 20;
  std::size_t input_width = 85;
  std::array<std::size_t, 3> filters = {16, 16, 32};
  std::array<std::size_t, 3> kernels = {2, 2, 3};
  std::size_t dense_units = 256;
  std::size_t n_classes = 3;
  double dropout_conv3 = 0.2;
  double dropout_flatten = 0.5;
  double dropout_dense = 0.2;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  /// Spatial size after stage `s` (0-based) pooling.
  std::pair<std::size_t, std::size_t> pooled_shape(std::size_t s) const {
    std::size_t h = input_height, w = input_width;
    for (std::size_t i = 0; i <= s; ++i) {
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }

  std::size_t flattened_size() const {
    const auto [h, w] = pooled_shape(2);
    return h * w * filters[2];
  }

  void validate() const {
    require(input_height >= 8 && input_width >= 8, "CNN input must be at least 8x8 to survive three poolings");
    for (auto f : filters) require(f >= 1, "filter counts must be positive");
    for (auto k : kernels) require(k >= 1, "kernel sizes must be positive");
    require(dense_units >= 1 && n_classes >= 2, "invalid dense or output size");
    for (double r : {dropout_conv3, dropout_flatten, dropout_dense}) require(r >= 0.0 && r < 1.0, "dropout must be in [0, 1)");
  }
};

/// Dense NCHW tensor.
struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_) : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, 0.0) {}
  double* plane(std::size_t i, std::size_t ch) { return data.data() + (i * c + ch) * h * w; }
  const double* plane(std::size_t i, std::size_t ch) const { return data.data() + (i * c + ch) * h * w; }
  std::size_t per_item() const { return c * h * w; }
};

struct ConvStage {
  std::size_t in_channels = 0, out_channels = 0, kernel = 0;
  std::vector<double> weight;  // out x in x k x k
  std::vector<double> bias;
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
};

struct DenseLayer {
  std::size_t in = 0, out = 0;
  std::vector<double> weight;  // out x in
  std::vector<double> bias;
};

/// Gradient/parameter view: one entry per trainable tensor, in a fixed order.
struct ParamRef {
  std::string name;
  std::vector<double>* value;
  bool decays;  // receives the L2 penalty
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double l2 = 0.1;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0.0, "learning rate must be positive");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch size must be >= 1");
    require(l2 >= 0.0, "L2 factor must be non-negative");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

class CnnModel {
 public:
  CnnModel() : CnnModel(CnnArchitecture{}, 0) {}

  /// Glorot-uniform kernels, zero biases, identity batch norm.
  CnnModel(const CnnArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    arch_.validate();
    Rng rng(seed);
    std::size_t in_c = 1;
    for (std::size_t s = 0; s < 3; ++s) {
      auto& st = stages_[s];
      st.in_channels = in_c;
      st.out_channels = arch_.filters[s];
      st.kernel = arch_.kernels[s];
      const std::size_t kk = st.kernel * st.kernel;
      const double limit = std::sqrt(6.0 / static_cast<double>((st.in_channels + st.out_channels) * kk));
      st.weight.resize(st.out_channels * st.in_channels * kk);
      for (auto& w : st.weight) w = rng.uniform(-limit, limit);
      st.bias.assign(st.out_channels, 0.0);
      st.gamma.assign(st.out_channels, 1.0);
      st.beta.assign(st.out_channels, 0.0);
      st.running_mean.assign(st.out_channels, 0.0);
      st.running_var.assign(st.out_channels, 1.0);
      in_c = st.out_channels;
    }
    init_dense(dense1_, arch_.flattened_size(), arch_.dense_units, rng);
    init_dense(dense2_, arch_.dense_units, arch_.n_classes, rng);
    round_to_float();
  }

  const CnnArchitecture& architecture() const { return arch_; }
  std::array<ConvStage, 3>& stages() { return stages_; }
  const std::array<ConvStage, 3>& stages() const { return stages_; }
  DenseLayer& dense1() { return dense1_; }
  DenseLayer& dense2() { return dense2_; }
  const DenseLayer& dense1() const { return dense1_; }
  const DenseLayer& dense2() const { return dense2_; }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> p;
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string pre = "conv" + std::to_string(s + 1) + ".";
      p.push_back({pre + "weight", &stages_[s].weight, true});
      p.push_back({pre + "bias", &stages_[s].bias, false});
      p.push_back({pre + "gamma", &stages_[s].gamma, false});
      p.push_back({pre + "beta", &stages_[s].beta, false});
    }
    p.push_back({"dense1.weight", &dense1_.weight, true});
    p.push_back({"dense1.bias", &dense1_.bias, false});
    p.push_back({"dense2.weight", &dense2_.weight, true});
    p.push_back({"dense2.bias", &dense2_.bias, false});
    return p;
  }

  /// Parameters plus batch-norm running statistics, for serialization.
  std::vector<ParamRef> state() {
    auto p = parameters();
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string pre = "conv" + std::to_string(s + 1) + ".";
      p.push_back({pre + "running_mean", &stages_[s].running_mean, false});
      p.push_back({pre + "running_var", &stages_[s].running_var, false});
    }
    return p;
  }

  /// Rounds every stored value to the nearest float so a float32 save is lossless.
  void round_to_float() {
    for (auto& ref : state())
      for (auto& v : *ref.value) v = static_cast<double>(static_cast<float>(v));
  }

  Tensor make_batch(std::span<const MfccMatrix* const> items) const {
    Tensor x(items.size(), 1, arch_.input_height, arch_.input_width);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& m = *items[i];
      if (m.n_coeffs != arch_.input_height || m.n_frames != arch_.input_width)
        fail(ErrorKind::invalid_argument, "CNN input shape mismatch: expected " + std::to_string(arch_.input_height) + "x" +
                                              std::to_string(arch_.input_width));
      std::copy(m.values.begin(), m.values.end(), x.plane(i, 0));
    }
    return x;
  }

  /// Inference-mode class probabilities (dropout off, running batch-norm stats).
  std::vector<double> forward(const MfccMatrix& input) const {
    const MfccMatrix* p = &input;
    Tensor x = make_batch(std::span(&p, 1));
    Cache cache;
    auto logits = run_forward(x, false, nullptr, cache);
    return softmax(std::span(logits.data(), arch_.n_classes));
  }

  Prediction predict(const MfccMatrix& input) const {
    auto p = forward(input);
    return {argmax(p), std::move(p)};
  }

  /// Mean cross-entropy of a batch in training mode plus L2 penalty; fills
  /// gradients (same order as parameters()) when `grads` is non-null. Batch-norm
  /// running statistics are updated only when `update_running` is set.
  struct BatchResult {
    double data_loss = 0.0;
    double penalty = 0.0;
    std::size_t correct = 0;
  };

  BatchResult train_batch(const Tensor& x, std::span<const int> labels, double l2, Rng* dropout_rng,
                          std::vector<std::vector<double>>* grads, bool update_running) {
    Cache cache;
    cache.update_target = update_running ? this : nullptr;
    const auto logits = run_forward(x, true, dropout_rng, cache);
    const std::size_t n = x.n, K = arch_.n_classes;
    BatchResult res;
    std::vector<double> dlogits(n * K);
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const double> z(logits.data() + i * K, K);
      const double lse = log_sum_exp(z);
      const auto y = static_cast<std::size_t>(labels[i]);
      res.data_loss += lse - z[y];
      if (argmax(z) == labels[i]) ++res.correct;
      for (std::size_t c = 0; c < K; ++c) dlogits[i * K + c] = (std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
    }
    res.data_loss /= static_cast<double>(n);
    for (auto& ref : parameters())
      if (ref.decays)
        for (double w : *ref.value) res.penalty += l2 * w * w;
    if (grads) {
      run_backward(dlogits, cache, *grads);
      auto params = parameters();
      for (std::size_t p = 0; p < params.size(); ++p)
        if (params[p].decays)
          for (std::size_t i = 0; i < params[p].value->size(); ++i) (*grads)[p][i] += 2.0 * l2 * (*params[p].value)[i];
    }
    return res;
  }

 private:
  static void init_dense(DenseLayer& d, std::size_t in, std::size_t out, Rng& rng) {
    d.in = in;
    d.out = out;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    d.weight.resize(in * out);
    for (auto& w : d.weight) w = rng.uniform(-limit, limit);
    d.bias.assign(out, 0.0);
  }

  struct StageCache {
    Tensor input, conv, xhat, relu;
    std::vector<double> mean, inv_std;
    std::vector<std::uint32_t> argmax;  // index into relu plane per pooled output
    Tensor pooled;
    std::vector<double> dropout;  // multiplicative mask (empty if none)
  };

  struct Cache {
    std::array<StageCache, 3> stages;
    std::vector<double> flat;          // after flatten dropout
    std::vector<double> flat_mask;
    std::vector<double> hidden_pre;    // dense1 pre-activation
    std::vector<double> hidden;        // after ReLU and dropout
    std::vector<double> hidden_mask;
    CnnModel* update_target = nullptr;  // receives running batch-norm statistics
  };

  static std::size_t pad_before(std::size_t k) { return (k - 1) / 2; }

  static void conv_forward(const Tensor& in, const ConvStage& st, Tensor& out) {
    out = Tensor(in.n, st.out_channels, in.h, in.w);
    const std::size_t k = st.kernel, pb = pad_before(k), H = in.h, W = in.w;
    for (std::size_t n = 0; n < in.n; ++n)
      for (std::size_t o = 0; o < st.out_channels; ++o) {
        double* dst = out.plane(n, o);
        std::fill(dst, dst + H * W, st.bias[o]);
        for (std::size_t i = 0; i < st.in_channels; ++i) {
          const double* src = in.plane(n, i);
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double wv = st.weight[((o * st.in_channels + i) * k + ky) * k + kx];
              const auto dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pb);
              const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pb);
              const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
              const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
              for (std::size_t y = 0; y < H; ++y) {
                const auto iy = static_cast<std::ptrdiff_t>(y) + dy;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* srow = src + static_cast<std::size_t>(iy) * W;
                double* drow = dst + y * W;
                for (std::size_t x = x0; x < x1; ++x) drow[x] += wv * srow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx)];
              }
            }
        }
      }
  }

  static void conv_backward(const Tensor& in, const ConvStage& st, const Tensor& dout, Tensor* din, std::vector<double>& dw,
                            std::vector<double>& db) {
    const std::size_t k = st.kernel, pb = pad_before(k), H = in.h, W = in.w;
    if (din) *din = Tensor(in.n, in.c, H, W);
    for (std::size_t n = 0; n < in.n; ++n)
      for (std::size_t o = 0; o < st.out_channels; ++o) {
        const double* g = dout.plane(n, o);
        double bsum = 0.0;
        for (std::size_t p = 0; p < H * W; ++p) bsum += g[p];
        db[o] += bsum;
        for (std::size_t i = 0; i < st.in_channels; ++i) {
          const double* src = in.plane(n, i);
          double* dsrc = din ? din->plane(n, i) : nullptr;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((o * st.in_channels + i) * k + ky) * k + kx;
              const double wv = st.weight[widx];
              const auto dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pb);
              const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pb);
              const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
              const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
              double acc = 0.0;
              for (std::size_t y = 0; y < H; ++y) {
                const auto iy = static_cast<std::ptrdiff_t>(y) + dy;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* srow = src + static_cast<std::size_t>(iy) * W;
                const double* grow = g + y * W;
                double* dsrow = dsrc ? dsrc + static_cast<std::size_t>(iy) * W : nullptr;
                for (std::size_t x = x0; x < x1; ++x) {
                  const auto ix = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dx);
                  acc += grow[x] * srow[ix];
                  if (dsrow) dsrow[ix] += wv * grow[x];
                }
              }
              dw[widx] += acc;
            }
        }
      }
  }

  void stage_forward(std::size_t s, const Tensor& in, bool training, Rng* rng, Cache& cache) const {
    const auto& st = stages_[s];
    auto& sc = cache.stages[s];
    sc.input = in;
    conv_forward(in, st, sc.conv);
    const std::size_t C = st.out_channels, HW = in.h * in.w, N = in.n;
    sc.xhat = Tensor(N, C, in.h, in.w);
    sc.relu = Tensor(N, C, in.h, in.w);
    sc.mean.assign(C, 0.0);
    sc.inv_std.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (training) {
        const double m = static_cast<double>(N * HW);
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* z = sc.conv.plane(n, c);
          for (std::size_t p = 0; p < HW; ++p) acc += z[p];
        }
        mean = acc / m;
        double vacc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* z = sc.conv.plane(n, c);
          for (std::size_t p = 0; p < HW; ++p) vacc += (z[p] - mean) * (z[p] - mean);
        }
        var = vacc / m;
        if (cache.update_target) {
          auto& self = cache.update_target->stages_[s];
          self.running_mean[c] = arch_.bn_momentum * self.running_mean[c] + (1.0 - arch_.bn_momentum) * mean;
          self.running_var[c] = arch_.bn_momentum * self.running_var[c] + (1.0 - arch_.bn_momentum) * var;
        }
      } else {
        mean = st.running_mean[c];
        var = st.running_var[c];
      }
      const double inv = 1.0 / std::sqrt(var + arch_.bn_eps);
      sc.mean[c] = mean;
      sc.inv_std[c] = inv;
      for (std::size_t n = 0; n < N; ++n) {
        const double* z = sc.conv.plane(n, c);
        double* xh = sc.xhat.plane(n, c);
        double* r = sc.relu.plane(n, c);
        for (std::size_t p = 0; p < HW; ++p) {
          xh[p] = (z[p] - mean) * inv;
          r[p] = std::max(0.0, st.gamma[c] * xh[p] + st.beta[c]);
        }
      }
    }
    const std::size_t PH = in.h / 2, PW = in.w / 2;
    sc.pooled = Tensor(N, C, PH, PW);
    sc.argmax.assign(N * C * PH * PW, 0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double* r = sc.relu.plane(n, c);
        double* p = sc.pooled.plane(n, c);
        for (std::size_t y = 0; y < PH; ++y)
          for (std::size_t x = 0; x < PW; ++x) {
            std::size_t best = (2 * y) * in.w + 2 * x;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = (2 * y + dy) * in.w + 2 * x + dx;
                if (r[idx] > r[best]) best = idx;
              }
            p[y * PW + x] = r[best];
            sc.argmax[((n * C + c) * PH + y) * PW + x] = static_cast<std::uint32_t>(best);
          }
      }
    sc.dropout.clear();
    if (s == 2 && training && arch_.dropout_conv3 > 0.0 && rng) {
      const double keep = 1.0 - arch_.dropout_conv3;
      sc.dropout.resize(sc.pooled.data.size());
      for (std::size_t i = 0; i < sc.dropout.size(); ++i) {
        sc.dropout[i] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        sc.pooled.data[i] *= sc.dropout[i];
      }
    }
  }

  static std::vector<double> dropout_mask(std::size_t size, double rate, Rng& rng) {
    const double keep = 1.0 - rate;
    std::vector<double> mask(size);
    for (auto& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return mask;
  }

  std::vector<double> run_forward(const Tensor& x, bool training, Rng* rng, Cache& cache) const {
    const Tensor* cur = &x;
    for (std::size_t s = 0; s < 3; ++s) {
      stage_forward(s, *cur, training, rng, cache);
      cur = &cache.stages[s].pooled;
    }
    const std::size_t N = x.n, F = cur->per_item();
    if (F != dense1_.in) fail(ErrorKind::internal, "flattened size does not match dense layer");
    cache.flat = cur->data;  // NCHW flatten per item
    cache.flat_mask.clear();
    if (training && arch_.dropout_flatten > 0.0 && rng) {
      cache.flat_mask = dropout_mask(cache.flat.size(), arch_.dropout_flatten, *rng);
      for (std::size_t i = 0; i < cache.flat.size(); ++i) cache.flat[i] *= cache.flat_mask[i];
    }
    const std::size_t U = dense1_.out;
    cache.hidden_pre.assign(N * U, 0.0);
    cache.hidden.assign(N * U, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t u = 0; u < U; ++u) {
        double acc = dense1_.bias[u];
        const double* w = dense1_.weight.data() + u * F;
        const double* f = cache.flat.data() + n * F;
        for (std::size_t j = 0; j < F; ++j) acc += w[j] * f[j];
        cache.hidden_pre[n * U + u] = acc;
        cache.hidden[n * U + u] = std::max(0.0, acc);
      }
    cache.hidden_mask.clear();
    if (training && arch_.dropout_dense > 0.0 && rng) {
      cache.hidden_mask = dropout_mask(cache.hidden.size(), arch_.dropout_dense, *rng);
      for (std::size_t i = 0; i < cache.hidden.size(); ++i) cache.hidden[i] *= cache.hidden_mask[i];
    }
    const std::size_t K = dense2_.out;
    std::vector<double> logits(N * K);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k) {
        double acc = dense2_.bias[k];
        const double* w = dense2_.weight.data() + k * U;
        const double* h = cache.hidden.data() + n * U;
        for (std::size_t j = 0; j < U; ++j) acc += w[j] * h[j];
        logits[n * K + k] = acc;
      }
    return logits;
  }

  void run_backward(const std::vector<double>& dlogits, Cache& cache, std::vector<std::vector<double>>& grads) {
    auto params = parameters();
    grads.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) grads[p].assign(params[p].value->size(), 0.0);
    // gradient slots: conv s -> 4s..4s+3 (weight, bias, gamma, beta); dense1 12,13; dense2 14,15
    const std::size_t N = dlogits.size() / dense2_.out, K = dense2_.out, U = dense1_.out, F = dense1_.in;

    std::vector<double> dhidden(N * U, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k) {
        const double g = dlogits[n * K + k];
        grads[15][k] += g;
        const double* h = cache.hidden.data() + n * U;
        double* gw = grads[14].data() + k * U;
        const double* w = dense2_.weight.data() + k * U;
        for (std::size_t j = 0; j < U; ++j) {
          gw[j] += g * h[j];
          dhidden[n * U + j] += g * w[j];
        }
      }
    for (std::size_t i = 0; i < dhidden.size(); ++i) {
      if (!cache.hidden_mask.empty()) dhidden[i] *= cache.hidden_mask[i];
      if (cache.hidden_pre[i] <= 0.0) dhidden[i] = 0.0;
    }
    std::vector<double> dflat(N * F, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t u = 0; u < U; ++u) {
        const double g = dhidden[n * U + u];
        if (g == 0.0) continue;
        grads[13][u] += g;
        const double* f = cache.flat.data() + n * F;
        double* gw = grads[12].data() + u * F;
        const double* w = dense1_.weight.data() + u * F;
        double* df = dflat.data() + n * F;
        for (std::size_t j = 0; j < F; ++j) {
          gw[j] += g * f[j];
          df[j] += g * w[j];
        }
      }
    if (!cache.flat_mask.empty())
      for (std::size_t i = 0; i < dflat.size(); ++i) dflat[i] *= cache.flat_mask[i];

    Tensor dpooled = cache.stages[2].pooled;
    dpooled.data = std::move(dflat);
    for (std::size_t s = 3; s-- > 0;) {
      auto& sc = cache.stages[s];
      const auto& st = stages_[s];
      if (!sc.dropout.empty())
        for (std::size_t i = 0; i < dpooled.data.size(); ++i) dpooled.data[i] *= sc.dropout[i];
      const std::size_t C = st.out_channels, H = sc.relu.h, W = sc.relu.w, HW = H * W, PH = H / 2, PW = W / 2;
      Tensor dz(sc.relu.n, C, H, W);
      for (std::size_t n = 0; n < sc.relu.n; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const double* dp = dpooled.plane(n, c);
          double* d = dz.plane(n, c);
          for (std::size_t i = 0; i < PH * PW; ++i) d[sc.argmax[(n * C + c) * PH * PW + i]] += dp[i];
        }
      // ReLU and batch norm (training-mode statistics)
      const double M = static_cast<double>(sc.relu.n * HW);
      for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < sc.relu.n; ++n) {
          double* d = dz.plane(n, c);
          const double* r = sc.relu.plane(n, c);
          const double* xh = sc.xhat.plane(n, c);
          for (std::size_t p = 0; p < HW; ++p) {
            if (r[p] <= 0.0) d[p] = 0.0;
            sum_dy += d[p];
            sum_dy_xhat += d[p] * xh[p];
          }
        }
        grads[4 * s + 3][c] += sum_dy;
        grads[4 * s + 2][c] += sum_dy_xhat;
        const double g = st.gamma[c], inv = sc.inv_std[c];
        for (std::size_t n = 0; n < sc.relu.n; ++n) {
          double* d = dz.plane(n, c);
          const double* xh = sc.xhat.plane(n, c);
          for (std::size_t p = 0; p < HW; ++p) d[p] = g * inv * (d[p] - sum_dy / M - xh[p] * sum_dy_xhat / M);
        }
      }
      Tensor din;
      conv_backward(sc.input, st, dz, s > 0 ? &din : nullptr, grads[4 * s], grads[4 * s + 1]);
      if (s > 0) dpooled = std::move(din);
    }
  }

  CnnArchitecture arch_;
  std::array<ConvStage, 3> stages_;
  DenseLayer dense1_;
  DenseLayer dense2_;
};

// ---------------------------------------------------------------------------

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(std::vector<ParamRef> params, const std::vector<std::vector<double>>& grads) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->size(), 0.0);
        v_.emplace_back(p.value->size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& val = *params[p].value;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grads[p][i];
        m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g;
        v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[p][i] / bc1;
        const double vhat = v_[p][i] / bc2;
        val[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct CnnEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline CnnEvaluation evaluate_cnn(const CnnModel& model, const MfccDataset& data) {
  if (data.empty()) fail(ErrorKind::invalid_argument, "empty evaluation set");
  CnnEvaluation ev;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = model.forward(data.items[i]);
    ev.loss -= std::log(std::max(p[static_cast<std::size_t>(data.labels[i])], 1e-300));
    if (argmax(p) == data.labels[i]) ++correct;
  }
  ev.loss /= static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return ev;
}

struct CnnTrainResult {
  CnnModel model;
  std::vector<EpochLog> log;
};

/// Mini-batch Adam. train_loss / train_acc are training-mode running means over
/// the epoch's batches (cross-entropy only); test columns are inference-mode and
/// filled when `test` is given. `on_epoch` may return false to stop early.
inline CnnTrainResult cnn_train(const MfccDataset& train, const TrainConfig& cfg, const CnnArchitecture& arch = {},
                                const MfccDataset* test = nullptr,
                                const std::function<bool(const EpochLog&, const CnnModel&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) fail(ErrorKind::invalid_argument, "empty training set");
  train.validate(static_cast<int>(arch.n_classes));
  Rng root(cfg.seed);
  CnnTrainResult out{CnnModel(arch, root.next()), {}};
  Rng shuffle_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);
  AdamOptimizer adam(cfg);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> grads;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const MfccMatrix*> items;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        items.push_back(&train.items[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      const Tensor x = out.model.make_batch(items);
      const auto res = out.model.train_batch(x, labels, cfg.l2, &dropout_rng, &grads, true);
      if (!std::isfinite(res.data_loss))
        fail(ErrorKind::internal, "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      loss_sum += res.data_loss * static_cast<double>(end - start);
      correct += res.correct;
      adam.step(out.model.parameters(), grads);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    if (test && !test->empty()) {
      const auto ev = evaluate_cnn(out.model, *test);
      log.test_loss = ev.loss;
      log.test_acc = ev.accuracy;
    }
    out.log.push_back(log);
    if (on_epoch && !on_epoch(log, out.model)) break;
  }
  out.model.round_to_float();
  return out;
}

inline std::string epoch_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,train_acc,test_loss,test_acc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',';
    if (std::isfinite(e.test_loss)) os << e.test_loss;
    os << ',';
    if (std::isfinite(e.test_acc)) os << e.test_acc;
    os << '\n';
  }
  return os.str();
}

}  // namespace lded
