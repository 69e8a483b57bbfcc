#pragma once

// Capture -> denoise -> segment -> predict -> register, each node on its own
// thread and talking only through the bus.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "lded/models/model.hpp"
#include "lded/pipeline.hpp"
#include "lded/stream/bus.hpp"
#include "lded/stream/denoise_stream.hpp"
#include "lded/synth.hpp"

namespace lded::stream {

using Clock = std::chrono::steady_clock;

struct AudioBlock {
  std::vector<double> samples;  // `valid` real samples, zero-padded to the block size if short
  std::size_t valid = 0;
  std::size_t first_sample = 0;
  int sample_rate = 44100;
  bool padded = false;
};

struct SegmentMessage {
  Segment segment;
};

struct PredictionMessage {
  std::size_t index = 0;
  double start = 0.0;
  double end = 0.0;
  Prediction prediction;
};

struct RegisteredPrediction {
  std::size_t index = 0;
  double start = 0.0;
  double end = 0.0;
  Vec3 position;
  bool clamped = false;  // midpoint outside the position stream; nearest sample used
  int label = 0;
  std::vector<double> probabilities;
};

using Payload = std::variant<AudioBlock, SegmentMessage, PredictionMessage, PositionSample, RegisteredPrediction>;
using PipelineBus = Bus<Payload>;

inline constexpr double kBlockRate = 30.0;

/// Samples per capture block; a rate that does not divide evenly rounds down
/// and the final block is zero-padded.
inline std::size_t block_size(int sample_rate, double block_rate = kBlockRate) {
  require(block_rate > 0.0, "block rate must be positive");
  const auto n = static_cast<std::size_t>(std::floor(sample_rate / block_rate));
  require(n >= 1, "block rate exceeds the sample rate");
  return n;
}

/// Splits a clip into capture blocks.
inline std::vector<AudioBlock> make_blocks(const AudioClip& clip, double block_rate = kBlockRate) {
  const std::size_t n = block_size(clip.sample_rate, block_rate);
  std::vector<AudioBlock> out;
  for (std::size_t s = 0; s < clip.size(); s += n) {
    AudioBlock b;
    b.first_sample = s;
    b.sample_rate = clip.sample_rate;
    b.valid = std::min(n, clip.size() - s);
    b.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(s), clip.samples.begin() + static_cast<std::ptrdiff_t>(s + b.valid));
    if (b.valid < n) {
      b.samples.resize(n, 0.0);
      b.padded = true;
    }
    out.push_back(std::move(b));
  }
  return out;
}

struct Interpolated {
  Vec3 position;
  bool clamped = false;
};

/// Linear interpolation in time; outside the covered range the nearest sample is used.
inline Interpolated interpolate_position(std::span<const PositionSample> positions, double t) {
  if (positions.empty()) fail(ErrorKind::data, "empty position stream");
  auto at = [](const PositionSample& p) { return Vec3{p.x, p.y, p.z}; };
  if (t < positions.front().t) return {at(positions.front()), true};
  if (t > positions.back().t) return {at(positions.back()), true};
  auto hi = std::lower_bound(positions.begin(), positions.end(), t, [](const PositionSample& p, double v) { return p.t < v; });
  if (hi->t == t) return {at(*hi), false};
  const auto lo = hi - 1;
  const double u = (t - lo->t) / (hi->t - lo->t);
  return {lerp(at(*lo), at(*hi), u), false};
}

inline RegisteredPrediction register_prediction(const PredictionMessage& p, std::span<const PositionSample> positions) {
  const auto where = interpolate_position(positions, 0.5 * (p.start + p.end));
  return {p.index, p.start, p.end, where.position, where.clamped, p.prediction.label, p.prediction.probabilities};
}

inline nlohmann::json to_json(const RegisteredPrediction& r) {
  return {{"segment", r.index},
          {"start", r.start},
          {"end", r.end},
          {"position", {r.position.x, r.position.y, r.position.z}},
          {"clamped", r.clamped},
          {"label", r.label},
          {"probabilities", r.probabilities}};
}

inline std::string to_jsonl(std::span<const RegisteredPrediction> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline PredictionMessage predict_message(const AnyModel& model, const Segment& seg) {
  return {seg.index, seg.start, seg.start + seg.duration, predict_segment(model, seg)};
}

/// Reference batch path: the whole clip denoised at once, cut into 500 ms
/// segments from its origin, predicted and registered one by one.
inline std::vector<RegisteredPrediction> batch_predictions(const AudioClip& clip, std::span<const PositionSample> positions,
                                                           const AnyModel& model, const DenoiseConfig& cfg, Stage stage) {
  const auto staged = apply_stage(clip, cfg, stage);
  std::vector<RegisteredPrediction> out;
  if (staged.size() < segment_length(staged.sample_rate)) return out;
  for (const auto& seg : segment_clip(staged)) out.push_back(register_prediction(predict_message(model, seg), positions));
  return out;
}

enum class Mode { offline, live };

struct PipelineOptions {
  Mode mode = Mode::offline;
  Stage stage = Stage::denoised;
  DenoiseConfig denoise = DenoiseConfig::defaults(44100);
  double block_rate = kBlockRate;
  std::size_t offline_capacity = 64;
  std::size_t live_capacity = 8;
  double max_seconds = 0.0;  // live mode: stop (truncating queues) after this much wall time; 0 = run to the end
};

struct LatencyStats {
  std::size_t count = 0;
  double mean = 0.0, p50 = 0.0, p95 = 0.0, max = 0.0;  // seconds
};

inline LatencyStats latency_stats(std::vector<double> v) {
  LatencyStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  auto pct = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
  };
  s.p50 = pct(0.5);
  s.p95 = pct(0.95);
  s.max = v.back();
  return s;
}

struct RunReport {
  Mode mode = Mode::offline;
  std::vector<RegisteredPrediction> records;
  std::size_t blocks = 0;
  bool padded_final_block = false;
  std::size_t segments = 0;
  std::size_t tail_samples_dropped = 0;
  std::map<std::string, std::size_t> drops;
  LatencyStats latency;  // live mode: prediction publish time minus segment end in wall time
  double lookahead_seconds = 0.0;
  std::size_t clamped = 0;
  bool truncated = false;
};

inline nlohmann::json to_json(const RunReport& r) {
  return {{"mode", r.mode == Mode::offline ? "offline" : "live"},
          {"blocks", r.blocks},
          {"padded_final_block", r.padded_final_block},
          {"segments", r.segments},
          {"predictions", r.records.size()},
          {"clamped_positions", r.clamped},
          {"tail_samples_dropped", r.tail_samples_dropped},
          {"drops", r.drops},
          {"truncated", r.truncated},
          {"lookahead_seconds", r.lookahead_seconds},
          {"latency",
           {{"count", r.latency.count}, {"mean", r.latency.mean}, {"p50", r.latency.p50}, {"p95", r.latency.p95}, {"max", r.latency.max}}}};
}

namespace topics {
inline const std::string raw_audio = "audio/raw";
inline const std::string denoised_audio = "audio/denoised";
inline const std::string segments = "segments";
inline const std::string predictions = "predictions";
inline const std::string positions = "positions";
inline const std::string registered = "registered";
}  // namespace topics

/// Runs the node graph over one recording. Offline mode publishes as fast as
/// the graph drains and loses nothing; live mode paces capture and positions at
/// wall-clock rate and bounds every audio-path queue with DropOldest.
inline RunReport run_pipeline(const AudioClip& clip, std::span<const PositionSample> positions, const AnyModel& model,
                              const PipelineOptions& opt = {}) {
  clip.validate();
  if (positions.empty()) fail(ErrorKind::data, "empty position stream");
  StreamingDenoiser probe(opt.denoise, opt.stage, clip.sample_rate);

  PipelineBus bus;
  for (const auto* t : {&topics::raw_audio, &topics::denoised_audio, &topics::segments, &topics::predictions, &topics::positions,
                        &topics::registered})
    bus.register_topic(*t);
  const bool live = opt.mode == Mode::live;
  const auto policy = live ? Overflow::drop_oldest : Overflow::block;
  const std::size_t cap = live ? opt.live_capacity : opt.offline_capacity;
  auto raw_sub = bus.subscribe(topics::raw_audio, cap, policy);
  auto den_sub = bus.subscribe(topics::denoised_audio, cap, policy);
  auto seg_sub = bus.subscribe(topics::segments, cap, policy);
  auto pred_sub = bus.subscribe(topics::predictions, cap, policy);
  // Registration consumes positions only as predictions need them, so this
  // subscription must hold a whole recording's worth without dropping.
  auto pos_sub = bus.subscribe(topics::positions, positions.size() + 1, Overflow::block);
  auto out_sub = bus.subscribe(topics::registered, live ? std::max<std::size_t>(cap, 1 << 16) : cap, policy);

  RunReport report;
  report.mode = opt.mode;
  report.lookahead_seconds = static_cast<double>(probe.latency_samples(opt.denoise)) / clip.sample_rate;
  const auto blocks = make_blocks(clip, opt.block_rate);
  report.blocks = blocks.size();
  report.padded_final_block = !blocks.empty() && blocks.back().padded;
  const double sr = static_cast<double>(clip.sample_rate);

  std::mutex err_mu;
  std::string failed_node, failure;
  ErrorKind failure_kind = ErrorKind::internal;
  std::atomic<bool> stopping{false};
  const auto wall_start = Clock::now();
  auto wall_at = [&](double stream_seconds) {
    return wall_start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(stream_seconds));
  };

  auto guarded = [&](const char* name, auto body) {
    return std::thread([&, name, body]() mutable {
      try {
        body();
      } catch (const std::exception& e) {
        {
          std::lock_guard lock(err_mu);
          if (failed_node.empty()) {
            failed_node = name;
            failure = e.what();
            if (const auto* le = dynamic_cast<const Error*>(&e)) failure_kind = le->kind();
          }
        }
        stopping = true;
        bus.close_all(true);
      }
    });
  };
  // Publishing after a shutdown began is not an error for the publisher.
  auto publish = [&](const std::string& topic, double ts, Payload p) {
    if (stopping) return false;
    try {
      bus.publish(topic, ts, std::move(p));
    } catch (const Error&) {
      if (stopping) return false;
      throw;
    }
    return true;
  };

  std::vector<std::thread> threads;
  threads.push_back(guarded("capture", [&] {
    for (const auto& b : blocks) {
      const double t = static_cast<double>(b.first_sample) / sr;
      if (live) std::this_thread::sleep_until(wall_at(static_cast<double>(b.first_sample + b.valid) / sr));
      if (!publish(topics::raw_audio, clip.origin + t, b)) return;
    }
    bus.close(topics::raw_audio);
  }));
  threads.push_back(guarded("positions", [&] {
    for (const auto& p : positions) {
      if (live) std::this_thread::sleep_until(wall_at(std::max(0.0, p.t - clip.origin)));
      if (!publish(topics::positions, p.t, p)) return;
    }
    bus.close(topics::positions);
  }));
  threads.push_back(guarded("denoise", [&] {
    StreamingDenoiser dn(opt.denoise, opt.stage, clip.sample_rate);
    std::size_t emitted = 0;
    auto send = [&](std::vector<double> y) {
      if (y.empty()) return true;
      AudioBlock out;
      out.first_sample = emitted;
      out.sample_rate = clip.sample_rate;
      out.valid = y.size();
      out.samples = std::move(y);
      emitted += out.valid;
      return publish(topics::denoised_audio, clip.origin + static_cast<double>(out.first_sample) / sr, std::move(out));
    };
    while (auto m = raw_sub->pop()) {
      const auto& b = std::get<AudioBlock>(*m->payload);
      if (b.sample_rate != clip.sample_rate) fail(ErrorKind::data, "block sample rate differs from the stream");
      if (!send(dn.process(std::span<const double>(b.samples.data(), b.valid)))) return;
    }
    if (stopping) return;
    send(dn.finish());
    bus.close(topics::denoised_audio);
  }));
  std::size_t tail_dropped = 0;
  threads.push_back(guarded("segment", [&] {
    const std::size_t len = segment_length(clip.sample_rate);
    std::vector<double> buf;
    std::size_t index = 0;
    while (auto m = den_sub->pop()) {
      const auto& b = std::get<AudioBlock>(*m->payload);
      buf.insert(buf.end(), b.samples.begin(), b.samples.begin() + static_cast<std::ptrdiff_t>(b.valid));
      std::size_t used = 0;
      while (buf.size() - used >= len) {
        Segment seg;
        seg.index = index;
        seg.duration = kSegmentSeconds;
        seg.start = clip.origin + kSegmentSeconds * static_cast<double>(index);
        seg.clip.sample_rate = clip.sample_rate;
        seg.clip.origin = seg.start;
        seg.clip.samples.assign(buf.begin() + static_cast<std::ptrdiff_t>(used), buf.begin() + static_cast<std::ptrdiff_t>(used + len));
        used += len;
        ++index;
        const double ts = seg.start;
        if (!publish(topics::segments, ts, SegmentMessage{std::move(seg)})) return;
      }
      buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(used));
    }
    if (stopping) return;
    tail_dropped = buf.size();
    bus.close(topics::segments);
  }));
  std::vector<double> latencies;
  threads.push_back(guarded("predict", [&] {
    while (auto m = seg_sub->pop()) {
      const auto& seg = std::get<SegmentMessage>(*m->payload).segment;
      auto p = predict_message(model, seg);
      if (live) latencies.push_back(std::chrono::duration<double>(Clock::now() - wall_at(p.end - clip.origin)).count());
      if (!publish(topics::predictions, p.start, std::move(p))) return;
    }
    if (stopping) return;
    bus.close(topics::predictions);
  }));
  threads.push_back(guarded("register", [&] {
    std::vector<PositionSample> seen;
    bool positions_done = false;
    while (auto m = pred_sub->pop()) {
      const auto& p = std::get<PredictionMessage>(*m->payload);
      const double mid = 0.5 * (p.start + p.end);
      // Wait for the first position at or past the midpoint (or the end of the stream).
      while (!positions_done && (seen.empty() || seen.back().t < mid)) {
        auto pm = pos_sub->pop();
        if (!pm) {
          positions_done = true;
          break;
        }
        seen.push_back(std::get<PositionSample>(*pm->payload));
      }
      if (stopping) return;
      if (!publish(topics::registered, p.start, register_prediction(p, seen))) return;
    }
    if (stopping) return;
    bus.close(topics::registered);
  }));

  std::thread stopper;
  std::atomic<bool> finished{false};
  if (live && opt.max_seconds > 0.0) {
    stopper = std::thread([&] {
      const auto deadline = wall_at(opt.max_seconds);
      while (!finished && Clock::now() < deadline) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      if (!finished) {
        report.truncated = true;
        stopping = true;
        bus.close_all(true);
      }
    });
  }

  while (auto m = out_sub->pop()) report.records.push_back(std::get<RegisteredPrediction>(*m->payload));
  for (auto& t : threads) t.join();
  finished = true;
  if (stopper.joinable()) stopper.join();

  if (!failed_node.empty() && !report.truncated) fail(failure_kind, "stream node '" + failed_node + "' failed: " + failure);
  report.segments = bus.published(topics::segments);
  report.tail_samples_dropped = tail_dropped;
  for (const auto& t : bus.topics()) report.drops[t] = bus.dropped(t);
  report.latency = latency_stats(latencies);
  for (const auto& r : report.records) report.clamped += r.clamped ? 1 : 0;
  return report;
}

}  // namespace lded::stream
