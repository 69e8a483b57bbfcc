#pragma once

// Block-wise versions of the denoising stages. Each reproduces the offline
// result exactly: the same frames are analysed, filtered and overlap-added in
// the same order, and the end of the stream is handled the way the offline
// transforms treat the end of a clip.

#include <deque>
#include <vector>

#include "lded/denoise.hpp"
#include "lded/pipeline.hpp"
#include "lded/signal.hpp"

namespace lded::stream {

/// Collects samples and hands out consecutive analysis frames.
class FrameFeeder {
 public:
  explicit FrameFeeder(const FramingConfig& cfg) : cfg_(cfg), window_(make_window(cfg.window, cfg.frame_size)) { cfg.validate(); }

  void push(std::span<const double> x) { buf_.insert(buf_.end(), x.begin(), x.end()); }

  /// Next frame's spectrum, if a whole frame is buffered.
  bool next(std::vector<cplx>& bins) {
    if (buf_.size() < cfg_.frame_size) return false;
    bins.resize(cfg_.n_bins());
    analyse_frame(std::span<const double>(buf_.data(), cfg_.frame_size), window_, bins);
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(cfg_.hop));
    return true;
  }

 private:
  FramingConfig cfg_;
  std::vector<double> window_;
  std::vector<double> buf_;
};

/// Overlap-add output with the offline length rule: after the last frame the
/// overlapped tail is emitted, then zeros up to the number of input samples.
class OlaWriter {
 public:
  explicit OlaWriter(const FramingConfig& cfg) : ola_(cfg) {}

  void push(std::span<const cplx> bins, std::vector<double>& out) {
    const auto chunk = ola_.push(bins);
    out.insert(out.end(), chunk.begin(), chunk.end());
    written_ += chunk.size();
    any_ = true;
  }

  void finish(std::size_t total_in, std::vector<double>& out) {
    if (any_) {
      const auto tail = ola_.flush();
      const std::size_t take = std::min(tail.size(), total_in - std::min(total_in, written_));
      out.insert(out.end(), tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(take));
      written_ += take;
    }
    if (written_ < total_in) {
      out.insert(out.end(), total_in - written_, 0.0);
      written_ = total_in;
    }
  }

 private:
  OverlapAdd ola_;
  std::size_t written_ = 0;
  bool any_ = false;
};

class StreamingEqualizer {
 public:
  StreamingEqualizer(const EqualizerProfile& profile, const FramingConfig& cfg, int sample_rate)
      : gains_(profile.bin_gains(sample_rate, cfg.frame_size)), feeder_(cfg), writer_(cfg) {}

  std::vector<double> process(std::span<const double> x) {
    total_ += x.size();
    feeder_.push(x);
    std::vector<double> out;
    while (feeder_.next(bins_)) {
      equalize_frame(bins_, gains_);
      writer_.push(bins_, out);
    }
    return out;
  }

  std::vector<double> finish() {
    std::vector<double> out;
    writer_.finish(total_, out);
    return out;
  }

 private:
  std::vector<double> gains_;
  FrameFeeder feeder_;
  OlaWriter writer_;
  std::vector<cplx> bins_;
  std::size_t total_ = 0;
};

/// Percussive output of median-filter HPSS with `kernel_time / 2` frames of
/// lookahead. At the end of the stream the last frame is replicated, as the
/// offline version clamps its time context.
class StreamingHpss {
 public:
  explicit StreamingHpss(const HpssConfig& cfg) : cfg_(cfg), feeder_(cfg.framing), writer_(cfg.framing), half_(cfg.kernel_time / 2) {
    cfg.validate();
  }

  std::size_t lookahead_frames() const { return half_; }

  std::vector<double> process(std::span<const double> x) {
    total_ += x.size();
    feeder_.push(x);
    std::vector<double> out;
    std::vector<cplx> bins;
    while (feeder_.next(bins)) {
      mags_.push_back(magnitudes(bins));
      spectra_.push_back(std::move(bins));
      ++available_;
      while (next_ + half_ < available_) emit(out);
    }
    return out;
  }

  std::vector<double> finish() {
    std::vector<double> out;
    while (next_ < available_) emit(out);
    writer_.finish(total_, out);
    return out;
  }

 private:
  // Frames are kept from index `base_` on; older ones are outside every future context.
  void emit(std::vector<double>& out) {
    std::vector<const std::vector<double>*> context(cfg_.kernel_time);
    const auto last = static_cast<std::ptrdiff_t>(available_) - 1;
    for (std::ptrdiff_t j = -static_cast<std::ptrdiff_t>(half_); j <= static_cast<std::ptrdiff_t>(half_); ++j) {
      const auto idx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(next_) + j, 0, last);
      context[static_cast<std::size_t>(j + static_cast<std::ptrdiff_t>(half_))] = &mags_[static_cast<std::size_t>(idx) - base_];
    }
    const auto h_env = time_median(context);
    const auto& frame = spectra_[next_ - base_];
    const auto p_env = frequency_median(mags_[next_ - base_], cfg_.kernel_freq);
    harm_.resize(frame.size());
    perc_.resize(frame.size());
    split_frame(frame, h_env, p_env, cfg_, harm_, perc_);
    writer_.push(perc_, out);
    ++next_;
    while (next_ > base_ + half_ && !mags_.empty()) {
      mags_.pop_front();
      spectra_.pop_front();
      ++base_;
    }
  }

  HpssConfig cfg_;
  FrameFeeder feeder_;
  OlaWriter writer_;
  std::size_t half_;
  std::deque<std::vector<double>> mags_;
  std::deque<std::vector<cplx>> spectra_;
  std::vector<cplx> harm_, perc_;
  std::size_t base_ = 0, next_ = 0, available_ = 0, total_ = 0;
};

/// The full chain up to `stage`, block in, block out. Output lags input by the
/// framing and lookahead delays; `finish` releases the rest so the total output
/// equals `apply_stage` on the concatenated input.
class StreamingDenoiser {
 public:
  StreamingDenoiser(const DenoiseConfig& cfg, Stage stage, int sample_rate) : stage_(stage) {
    cfg.validate(sample_rate);
    if (stage_ == Stage::raw) return;
    eq_.emplace(cfg.equalizer, cfg.framing, sample_rate);
    if (stage_ == Stage::equalized) return;
    bp_.emplace(design_butterworth_bandpass(cfg.bandpass, sample_rate));
    if (cfg.bandpass.mode != FilterMode::causal) fail(ErrorKind::invalid_argument, "streaming needs a causal bandpass");
    if (stage_ == Stage::bandpassed) return;
    hpss_.emplace(cfg.hpss);
  }

  /// Algorithmic delay in samples between input and output.
  std::size_t latency_samples(const DenoiseConfig& cfg) const {
    std::size_t d = 0;
    if (eq_) d += cfg.framing.frame_size;
    if (hpss_) d += cfg.hpss.framing.frame_size + hpss_->lookahead_frames() * cfg.hpss.framing.hop;
    return d;
  }

  std::vector<double> process(std::span<const double> x) { return run(std::vector<double>(x.begin(), x.end()), false); }
  std::vector<double> finish() { return run({}, true); }

 private:
  std::vector<double> run(std::vector<double> x, bool last) {
    if (stage_ == Stage::raw) return x;
    auto y = eq_->process(x);
    if (last) {
      auto tail = eq_->finish();
      y.insert(y.end(), tail.begin(), tail.end());
    }
    if (stage_ == Stage::equalized) return y;
    bp_->process(y);
    if (stage_ == Stage::bandpassed) return y;
    auto z = hpss_->process(y);
    if (last) {
      auto tail = hpss_->finish();
      z.insert(z.end(), tail.begin(), tail.end());
    }
    return z;
  }

  Stage stage_;
  std::optional<StreamingEqualizer> eq_;
  std::optional<SosFilter> bp_;
  std::optional<StreamingHpss> hpss_;
};

}  // namespace lded::stream
