#include <catch_amalgamated.hpp>

#include <thread>

#include "lded/stream/pipeline.hpp"
#include "support.hpp"

using namespace lded;
using namespace lded::stream;

namespace {

using IntBus = Bus<int>;

std::vector<int> drain(const IntBus::Subscription& s) {
  std::vector<int> out;
  while (auto m = s->try_pop()) out.push_back(*m->payload);
  return out;
}

std::vector<double> feed_in_blocks(auto& proc, const std::vector<double>& x, std::size_t block) {
  std::vector<double> out;
  for (std::size_t s = 0; s < x.size(); s += block) {
    const auto n = std::min(block, x.size() - s);
    auto y = proc.process(std::span<const double>(x.data() + s, n));
    out.insert(out.end(), y.begin(), y.end());
  }
  auto tail = proc.finish();
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b, std::size_t from, std::size_t to) {
  double worst = 0.0;
  for (std::size_t i = from; i < to; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

AnyModel small_model() {
  CorpusConfig cfg;
  cfg.layers_per_class = {1, 1, 1};
  cfg.layers_per_file = 3;
  cfg.layer_seconds = 2.0;
  cfg.dwell_seconds = 0.5;
  const auto corpus = generate_corpus(cfg, 13);
  const auto segs = staged_segments(corpus, DenoiseConfig::defaults(44100), Stage::denoised);
  const auto table = feature_table(segs);
  FeatureDataset d;
  d.feature_names = table.feature_names;
  for (std::size_t i = 0; i < table.rows.size(); ++i) d.push(table.rows[i], table.labels[i]);
  return TabularModel::fit("gaussian_nb", {}, d);
}

struct Recording {
  AudioClip audio;
  std::vector<PositionSample> positions;
};

Recording recording(std::uint64_t seed) {
  ProcessScript script;
  script.layers.push_back({0, 1.6, {{0, 0, 0}, {16, 0, 0}}, 0.3});
  script.layers.push_back({2, 1.7, {{16, 0, 0.1}, {0, 0, 0.1}}, 0.0});
  auto f = render_script(script, RegimeModel::defaults(), NoiseModel{}, 5.0, 44100, seed);
  return {std::move(f.audio), std::move(f.positions)};
}

}  // namespace

TEST_CASE("bus delivers FIFO to every subscriber") {
  IntBus bus;
  bus.register_topic("t");
  auto a = bus.subscribe("t", 16, Overflow::block);
  auto b = bus.subscribe("t", 16, Overflow::block);
  for (int i = 1; i <= 3; ++i) bus.publish("t", i, i);
  REQUIRE(drain(a) == std::vector<int>{1, 2, 3});
  REQUIRE(drain(b) == std::vector<int>{1, 2, 3});
  REQUIRE(bus.published("t") == 3);
  REQUIRE(bus.dropped("t") == 0);
}

TEST_CASE("DropOldest keeps the newest messages and counts the drop") {
  IntBus bus;
  bus.register_topic("t");
  auto stalled = bus.subscribe("t", 2, Overflow::drop_oldest);
  for (int i = 1; i <= 3; ++i) bus.publish("t", i, i);
  REQUIRE(drain(stalled) == std::vector<int>{2, 3});
  REQUIRE(bus.dropped("t") == 1);
}

TEST_CASE("bus errors") {
  IntBus bus;
  REQUIRE_THROWS_AS(bus.publish("nope", 0, 1), Error);
  REQUIRE_THROWS_AS(bus.subscribe("nope", 1, Overflow::block), Error);
  bus.register_topic("t");
  REQUIRE_THROWS_AS(bus.subscribe("t", 0, Overflow::block), Error);
  bus.publish("t", 2.0, 1);
  REQUIRE_THROWS_AS(bus.publish("t", 1.0, 2), Error);
  bus.close("t");
  REQUIRE_THROWS_AS(bus.publish("t", 3.0, 3), Error);
  REQUIRE_FALSE(bus.subscribe("t", 1, Overflow::block)->pop().has_value());
}

TEST_CASE("closing drains or truncates") {
  IntBus bus;
  bus.register_topic("t");
  auto s = bus.subscribe("t", 8, Overflow::block);
  bus.publish("t", 0, 1);
  bus.publish("t", 1, 2);
  SECTION("drain") {
    bus.close("t");
    REQUIRE(s->pop().has_value());
    REQUIRE(s->pop().has_value());
    REQUIRE_FALSE(s->pop().has_value());
  }
  SECTION("truncate") {
    bus.close("t", true);
    REQUIRE_FALSE(s->pop().has_value());
    REQUIRE(bus.dropped("t") == 2);
  }
}

TEST_CASE("Block policy is lossless and ordered across threads") {
  IntBus bus;
  bus.register_topic("t");
  auto s = bus.subscribe("t", 3, Overflow::block);
  std::thread producer([&] {
    for (int i = 0; i < 5000; ++i) bus.publish("t", i, i);
    bus.close("t");
  });
  std::vector<int> got;
  while (auto m = s->pop()) got.push_back(*m->payload);
  producer.join();
  REQUIRE(got.size() == 5000);
  for (int i = 0; i < 5000; ++i) REQUIRE(got[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("capture blocks") {
  const auto clip = testing::clip_of(testing::white_noise(44100, 1));
  const auto blocks = make_blocks(clip);
  REQUIRE(blocks.size() == 30);
  std::vector<double> joined;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    REQUIRE(blocks[k].samples.size() == 1470);
    REQUIRE(blocks[k].first_sample == 1470 * k);
    REQUIRE_FALSE(blocks[k].padded);
    joined.insert(joined.end(), blocks[k].samples.begin(), blocks[k].samples.end());
  }
  REQUIRE(joined == clip.samples);

  const auto odd = make_blocks(testing::clip_of(testing::white_noise(1000, 2), 1000), 30.0);
  REQUIRE(odd.front().samples.size() == 33);
  REQUIRE(odd.back().padded);
  REQUIRE(odd.back().valid == 1000 % 33);
  REQUIRE(odd.back().samples.back() == 0.0);
}

TEST_CASE("streaming bandpass equals the offline recurrence") {
  const auto cfg = DenoiseConfig::defaults(44100);
  const auto x = testing::white_noise(4 * 44100, 3);
  const auto offline = bandpass(testing::clip_of(x), cfg.bandpass).samples;
  SosFilter filter(design_butterworth_bandpass(cfg.bandpass, 44100));
  std::vector<double> streamed;
  for (std::size_t s = 0; s < x.size(); s += 1470) {
    std::vector<double> block(x.begin() + static_cast<std::ptrdiff_t>(s), x.begin() + static_cast<std::ptrdiff_t>(std::min(x.size(), s + 1470)));
    filter.process(block);
    streamed.insert(streamed.end(), block.begin(), block.end());
  }
  REQUIRE(streamed.size() == offline.size());
  REQUIRE(max_abs_diff(streamed, offline, 0, x.size()) < 1e-9);
}

TEST_CASE("streaming denoise matches offline at every stage") {
  const auto cfg = DenoiseConfig::defaults(44100);
  const auto x = testing::white_noise(3 * 44100 + 777, 4, 0.1);
  const auto clip = testing::clip_of(x);
  for (Stage st : {Stage::raw, Stage::equalized, Stage::bandpassed, Stage::denoised}) {
    const auto offline = apply_stage(clip, cfg, st).samples;
    for (std::size_t block : {1470u, 100u, 4096u}) {
      StreamingDenoiser dn(cfg, st, 44100);
      const auto streamed = feed_in_blocks(dn, x, block);
      INFO("stage " << stage_name(st) << ", block " << block);
      REQUIRE(streamed.size() == offline.size());
      // The whole output agrees, not only the interior.
      REQUIRE(max_abs_diff(streamed, offline, 0, offline.size()) < 1e-9);
    }
  }
}

TEST_CASE("streaming HPSS lookahead and latency") {
  const auto cfg = DenoiseConfig::defaults(44100);
  StreamingDenoiser dn(cfg, Stage::denoised, 44100);
  // EQ frame + HPSS frame + 8 lookahead hops.
  REQUIRE(dn.latency_samples(cfg) == 512 + 512 + 8 * 256);
  REQUIRE(8.0 * 256 / 44100 == Catch::Approx(0.0464).margin(1e-4));
}

TEST_CASE("zero input gives zero output") {
  StreamingDenoiser dn(DenoiseConfig::defaults(44100), Stage::denoised, 44100);
  for (double v : feed_in_blocks(dn, std::vector<double>(44100, 0.0), 1470)) REQUIRE(v == 0.0);
}

TEST_CASE("position interpolation and clamping") {
  const std::vector<PositionSample> p{{0.0, 0.0, 0.0, 0.0}, {1.0, 10.0, 0.0, 0.0}};
  auto r = register_prediction(PredictionMessage{0, 0.0, 0.5, {1, {0.2, 0.5, 0.3}}}, p);
  REQUIRE(r.position.x == Catch::Approx(2.5));
  REQUIRE_FALSE(r.clamped);
  r = register_prediction(PredictionMessage{3, 1.5, 2.0, {0, {1.0, 0.0, 0.0}}}, p);
  REQUIRE(r.clamped);
  REQUIRE(r.position.x == 10.0);
  REQUIRE_THROWS_AS(interpolate_position({}, 0.0), Error);
  const auto line = to_jsonl(std::vector{r});
  REQUIRE(line.back() == '\n');
  REQUIRE(nlohmann::json::parse(line)["clamped"] == true);
}

TEST_CASE("latency percentiles") {
  const auto s = latency_stats({0.4, 0.1, 0.3, 0.2});
  REQUIRE(s.count == 4);
  REQUIRE(s.mean == Catch::Approx(0.25));
  REQUIRE(s.p50 == 0.2);
  REQUIRE(s.p95 == 0.4);
  REQUIRE(s.max == 0.4);
}

TEST_CASE("offline pipeline equals the batch path record for record") {
  const auto model = small_model();
  const auto rec = recording(5);
  const auto cfg = DenoiseConfig::defaults(44100);
  const auto batch = batch_predictions(rec.audio, rec.positions, model, cfg, Stage::denoised);
  PipelineOptions opt;
  const auto a = run_pipeline(rec.audio, rec.positions, model, opt);
  const auto b = run_pipeline(rec.audio, rec.positions, model, opt);
  REQUIRE(batch.size() == static_cast<std::size_t>(rec.audio.duration() / 0.5));
  REQUIRE(a.records.size() == batch.size());
  REQUIRE(a.segments == batch.size());
  REQUIRE(to_jsonl(a.records) == to_jsonl(batch));
  REQUIRE(to_jsonl(b.records) == to_jsonl(a.records));
  for (const auto& [topic, n] : a.drops) REQUIRE(n == 0);
  for (const auto& r : a.records) {
    REQUIRE(r.end - r.start == Catch::Approx(0.5));
    double sum = 0.0;
    for (double p : r.probabilities) sum += p;
    REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
  REQUIRE(a.tail_samples_dropped == rec.audio.size() % 22050);
  REQUIRE(a.lookahead_seconds > 0.0);
}

TEST_CASE("live pipeline paces capture and reports latency") {
  const auto model = small_model();
  const auto rec = recording(6);
  PipelineOptions opt;
  opt.mode = Mode::live;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_pipeline(rec.audio, rec.positions, model, opt);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(wall >= rec.audio.duration() * 0.95);
  REQUIRE(r.latency.count == r.segments);
  REQUIRE(r.latency.max < 0.5);
  std::size_t total_drops = 0;
  for (const auto& [t, n] : r.drops) total_drops += n;
  REQUIRE(r.records.size() + total_drops >= r.segments);
}

TEST_CASE("live pipeline stops at the wall-time limit") {
  const auto model = small_model();
  const auto rec = recording(7);
  PipelineOptions opt;
  opt.mode = Mode::live;
  opt.max_seconds = 1.0;
  const auto r = run_pipeline(rec.audio, rec.positions, model, opt);
  REQUIRE(r.truncated);
  REQUIRE(r.records.size() < static_cast<std::size_t>(rec.audio.duration() / 0.5));
}

TEST_CASE("pipeline input errors") {
  const auto model = small_model();
  const auto rec = recording(8);
  REQUIRE_THROWS_AS(run_pipeline(rec.audio, {}, model), Error);
  PipelineOptions opt;
  opt.denoise.bandpass.mode = FilterMode::zero_phase;
  REQUIRE_THROWS_AS(run_pipeline(rec.audio, rec.positions, model, opt), Error);
}
