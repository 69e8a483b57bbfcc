#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lded/synth.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LDED_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

// A small corpus shared by every test case (rendered once per process).
const fs::path& corpus_dir() {
  static testing::TempDir dir("cli");
  static bool made = false;
  if (!made) {
    lded::CorpusConfig c;
    c.layers_per_class = {2, 2, 2};
    c.layers_per_file = 3;
    c.layer_seconds = 3.0;
    c.dwell_seconds = 0.5;
    std::ofstream(dir / "corpus.json") << lded::to_json(c).dump();
    REQUIRE(run("synth --config " + (dir / "corpus.json").string() + " --seed 4 --out " + (dir / "corpus").string()) == 0);
    made = true;
  }
  return dir.path();
}

fs::path manifest() { return corpus_dir() / "corpus" / "manifest.json"; }

}  // namespace

TEST_CASE("usage errors exit with 1") {
  REQUIRE(run("") == 1);
  REQUIRE(run("frobnicate") == 1);
  REQUIRE(run("synth --out /tmp/x") == 1);
  REQUIRE(run("train --data " + manifest().string() + " --seed 1 --model nope --out " + (corpus_dir() / "bad").string()) == 1);
  REQUIRE(run("features --in " + manifest().string() + " --stage xx --out " + (corpus_dir() / "bad").string()) == 1);
  REQUIRE(run("--help") == 0);
}

TEST_CASE("data errors exit with 2") {
  testing::TempDir dir("cli_bad");
  std::ofstream(dir / "broken.json") << "{ not json";
  REQUIRE(run("features --in " + (dir / "broken.json").string() + " --out " + (dir / "o").string()) == 2);
  std::ofstream(dir / "fake.wav") << "RIFF....";
  REQUIRE(run("denoise --in " + (dir / "fake.wav").string() + " --out " + (dir / "o").string()) == 2);
}

TEST_CASE("synth writes a manifest with provenance") {
  const auto m = load(manifest());
  REQUIRE(m["files"].size() == 2);
  const auto prov = load(corpus_dir() / "corpus" / "synth.json");
  REQUIRE(prov["seed"] == 4);
  REQUIRE(prov["config_hash"].get<std::string>().size() == 16);
  const auto segs = lded::read_manifest(manifest()).class_counts();
  REQUIRE(segs == std::vector<std::size_t>{12, 12, 12});
}

TEST_CASE("synth is deterministic") {
  testing::TempDir dir("cli_synth");
  REQUIRE(run("synth --config " + (corpus_dir() / "corpus.json").string() + " --seed 4 --out " + (dir / "again").string()) == 0);
  for (const auto& e : fs::directory_iterator(corpus_dir() / "corpus")) REQUIRE(slurp(e.path()) == slurp(dir / "again" / e.path().filename()));
}

TEST_CASE("full chain emits every artifact") {
  const auto base = corpus_dir();
  const auto entry = lded::read_manifest(manifest()).files[0];
  const auto wav = base / "corpus" / entry.wav;
  REQUIRE(run("denoise --in " + wav.string() + " --out " + (base / "dn").string()) == 0);
  for (const char* s : {"raw", "eq", "bp", "dn"}) REQUIRE(fs::exists(base / "dn" / (wav.stem().string() + "." + s + ".wav")));

  REQUIRE(run("features --in " + manifest().string() + " --mfcc bin --out " + (base / "feat").string()) == 0);
  REQUIRE(fs::exists(base / "feat" / "features.csv"));
  REQUIRE(load(base / "feat" / "features.json")["rows"] == 36);
  REQUIRE(std::distance(fs::directory_iterator(base / "feat" / "mfcc"), fs::directory_iterator{}) == 36);

  REQUIRE(run("analyze --features " + (base / "feat" / "features.csv").string() + " --out " + (base / "an").string()) == 0);
  for (const char* f : {"correlation.csv", "pca.csv", "pca_loadings.csv", "importance.csv", "analysis.json"}) REQUIRE(fs::exists(base / "an" / f));

  REQUIRE(run("train --data " + manifest().string() + " --model cnn --epochs 2 --seed 1 --out " + (base / "cnn").string()) == 0);
  REQUIRE(fs::exists(base / "cnn" / "epoch_log.csv"));
  REQUIRE(load(base / "cnn" / "model.json")["kind"] == "cnn");

  REQUIRE(run("eval --data " + manifest().string() + " --seed 0 --model-file " + (base / "cnn" / "model.json").string() + " --out " +
              (base / "ev_saved").string()) == 0);
  REQUIRE(load(base / "ev_saved" / "metrics.json")["metrics"].contains("accuracy"));

  REQUIRE(run("stream --wav " + wav.string() + " --positions " + (base / "corpus" / entry.positions).string() +
              " --model " + (base / "cnn" / "model.json").string() + " --out " + (base / "st").string()) == 0);
  const auto report = load(base / "st" / "run_report.json");
  // The stream covers the whole recording, dwells included.
  const auto expected = static_cast<std::size_t>(std::floor(entry.duration / 0.5));
  REQUIRE(report["report"]["predictions"] == expected);
  std::istringstream lines(slurp(base / "st" / "predictions.jsonl"));
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line);) {
    REQUIRE(json::parse(line)["probabilities"].size() == 3);
    ++n;
  }
  REQUIRE(n == expected);
}

TEST_CASE("eval --runs reports mean and std per metric") {
  const auto out = corpus_dir() / "ev";
  REQUIRE(run("eval --data " + manifest().string() + " --model gaussian_nb --runs 5 --seed 3 --out " + out.string()) == 0);
  const auto m = load(out / "metrics.json");
  REQUIRE(m["summary"]["runs"] == 5);
  for (const char* k : {"accuracy", "macro_auc", "false_positive_rate"}) {
    REQUIRE(m["summary"][k].contains("mean"));
    REQUIRE(m["summary"][k].contains("std"));
  }
  REQUIRE(m["per_run"].size() == 5);
  REQUIRE(m.contains("config_hash"));
}

TEST_CASE("train twice with the same seed gives identical model files") {
  const auto base = corpus_dir();
  for (const char* model : {"random_forest", "cnn"}) {
    const std::string common = "train --data " + manifest().string() + " --model " + model + " --epochs 2 --seed 9 --out ";
    REQUIRE(run(common + (base / (std::string(model) + "_a")).string()) == 0);
    REQUIRE(run(common + (base / (std::string(model) + "_b")).string()) == 0);
    REQUIRE(slurp(base / (std::string(model) + "_a") / "model.json") == slurp(base / (std::string(model) + "_b") / "model.json"));
  }
}
