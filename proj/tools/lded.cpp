// lded: command-line front end for the acoustic defect-detection pipeline.
//
//   synth    render a labelled synthetic corpus (WAVs, position CSVs, manifest)
//   denoise  write the raw / equalized / bandpassed / denoised stages of recordings
//   features per-segment statistics CSV, optionally MFCC tensors
//   analyze  Spearman correlations, PCA projection, forest importances
//   train    fit a model, write model JSON (+ epoch log for the CNN)
//   eval     repeated split/train/test runs, metrics JSON with mean and std
//   stream   run the streaming node graph over one recording
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lded/analysis.hpp"
#include "lded/models/grid_search.hpp"
#include "lded/models/metrics.hpp"
#include "lded/models/serialize.hpp"
#include "lded/pipeline.hpp"
#include "lded/stream/pipeline.hpp"
#include "lded/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lded;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, internal_error = 3 };

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) { return read_json_file(path.string()); }

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json provenance(const json& config, std::optional<std::uint64_t> seed) {
  return {{"config_hash", hex(config_hash(config))}, {"seed", seed ? json(*seed) : json(nullptr)}, {"config", config}};
}

DenoiseConfig load_denoise_config(const std::string& path, int sample_rate) {
  if (path.empty()) return DenoiseConfig::defaults(sample_rate);
  try {
    return denoise_config_from_json(read_json(path), sample_rate);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path + ": malformed denoise config (" + e.what() + ")");
  }
}

bool is_manifest(const fs::path& p) { return p.extension() == ".json"; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) fail(ErrorKind::invalid_argument, "bad number '" + s + "' in " + what);
  return v;
}

// "key=value"
Hyperparameters parse_hyperparameters(const std::vector<std::string>& items) {
  Hyperparameters hp;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::invalid_argument, "hyperparameter must be key=value: " + it);
    hp[it.substr(0, eq)] = parse_number(it.substr(eq + 1), it);
  }
  return hp;
}

// "key=v1,v2,..."
ParamGrid parse_grid(const std::vector<std::string>& items) {
  ParamGrid g;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::invalid_argument, "grid axis must be key=v1,v2,...: " + it);
    std::vector<double> values;
    for (const auto& v : split_list(it.substr(eq + 1))) values.push_back(parse_number(v, it));
    if (values.empty()) fail(ErrorKind::invalid_argument, "grid axis has no values: " + it);
    g.emplace_back(it.substr(0, eq), values);
  }
  return g;
}

// A dataset source is either a corpus manifest (audio, features computed here)
// or, for tabular models, a feature CSV written by `features`.
struct DataSource {
  fs::path path;
  Stage stage = Stage::denoised;
  std::string denoise_config;

  bool csv() const { return path.extension() == ".csv"; }

  json describe() const {
    json j{{"data", path.filename().string()}, {"stage", stage_name(stage)}};
    if (!csv()) {
      const auto m = read_manifest(path);
      j["corpus_config_hash"] = hex(m.config_hash);
      j["corpus_seed"] = m.seed;
      j["denoise"] = to_json(load_denoise_config(denoise_config, manifest_rate(m)));
    }
    return j;
  }

  static int manifest_rate(const DatasetManifest& m) { return m.files.empty() ? 44100 : m.files.front().sample_rate; }

  std::vector<LabeledSegment> segments() const {
    const auto m = read_manifest(path);
    return staged_segments(path, load_denoise_config(denoise_config, manifest_rate(m)), stage);
  }

  FeatureTable table() const { return csv() ? read_feature_csv(path.string()) : feature_table(segments()); }
  MfccDataset mfcc() const {
    if (csv()) fail(ErrorKind::invalid_argument, "the CNN needs audio: pass a corpus manifest, not a feature CSV");
    return mfcc_dataset(segments());
  }
};

FeatureTable model_columns(const FeatureTable& t, const std::string& features) {
  if (features == "all") return t;
  if (features == "default") return t.select(default_model_features());
  return t.select(split_list(features));
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::uint64_t seed, const fs::path& out) {
  CorpusConfig c;
  if (!config_path.empty()) c = corpus_config_from_json(read_json(config_path));
  const auto corpus = generate_corpus(c, seed);
  write_corpus(corpus, out);
  write_json(out / "synth.json", provenance(to_json(c), seed));
  const auto counts = corpus.manifest.class_counts();
  std::cerr << "wrote " << corpus.files.size() << " files, " << corpus.manifest.segment_count() << " segments (" << counts[0] << "/"
            << counts[1] << "/" << counts[2] << ") to " << out.string() << "\n";
  return ok;
}

int cmd_denoise(const fs::path& in, const std::string& config_path, const std::string& stages, const fs::path& out) {
  std::vector<Stage> wanted;
  for (const auto& s : split_list(stages)) wanted.push_back(parse_stage(s));
  if (wanted.empty()) fail(ErrorKind::invalid_argument, "no stages requested");
  std::vector<fs::path> wavs;
  if (is_manifest(in)) {
    const auto m = read_manifest(in);
    for (const auto& f : m.files) wavs.push_back(in.parent_path() / f.wav);
  } else {
    wavs.push_back(in);
  }
  ensure_dir(out);
  json cfg_json;
  json files = json::array();
  for (const auto& w : wavs) {
    const auto clip = load_wav(w);
    const auto cfg = load_denoise_config(config_path, clip.sample_rate);
    cfg_json = to_json(cfg);
    const auto st = denoise_pipeline(clip, cfg);
    const std::string stem = w.stem().string();
    for (Stage s : wanted) {
      const AudioClip* c = s == Stage::raw ? &st.raw : s == Stage::equalized ? &st.equalized : s == Stage::bandpassed ? &st.bandpassed : &st.denoised;
      const auto name = stem + "." + std::string(stage_name(s)) + ".wav";
      save_wav(*c, out / name);
      files.push_back(name);
    }
  }
  auto report = provenance(cfg_json, std::nullopt);
  report["files"] = files;
  write_json(out / "denoise.json", report);
  return ok;
}

int cmd_features(const fs::path& in, Stage stage, const std::string& config_path, const std::string& mfcc_format, const fs::path& out) {
  if (!mfcc_format.empty() && mfcc_format != "csv" && mfcc_format != "bin")
    fail(ErrorKind::invalid_argument, "--mfcc must be csv or bin");
  std::vector<LabeledSegment> segs;
  bool labeled = true;
  json source;
  if (is_manifest(in)) {
    DataSource ds{in, stage, config_path};
    segs = ds.segments();
    source = ds.describe();
  } else {
    const auto clip = load_wav(in);
    const auto cfg = load_denoise_config(config_path, clip.sample_rate);
    const auto staged = apply_stage(clip, cfg, stage);
    std::size_t i = 0;
    for (auto& s : segment_clip(staged)) segs.push_back({std::move(s), 0, in.filename().string(), i++});
    labeled = false;
    source = {{"data", in.filename().string()}, {"stage", stage_name(stage)}, {"denoise", to_json(cfg)}};
  }
  ensure_dir(out);
  auto table = feature_table(segs);
  if (!labeled) table.labels.clear();
  write_feature_csv(table, (out / "features.csv").string());
  if (!mfcc_format.empty()) {
    const fs::path dir = out / "mfcc";
    ensure_dir(dir);
    for (const auto& s : segs) {
      const auto m = mfcc_segment_tensor(s.segment);
      const auto name = fs::path(s.clip_id).stem().string() + "_" + std::to_string(s.index) + "." + mfcc_format;
      std::ofstream f(dir / name, std::ios::binary);
      if (!f) fail(ErrorKind::io, "cannot write " + (dir / name).string());
      if (mfcc_format == "bin")
        write_mfcc_binary(m, f);
      else
        write_mfcc_csv(m, f);
    }
  }
  auto meta = provenance(source, std::nullopt);
  meta["rows"] = table.size();
  meta["columns"] = table.feature_names;
  write_json(out / "features.json", meta);
  return ok;
}

int cmd_analyze(const fs::path& in, std::size_t components, std::uint64_t seed, const fs::path& out) {
  const auto table = read_feature_csv(in.string());
  ensure_dir(out);
  const auto corr = correlation_matrix(table);
  {
    std::ostringstream os;
    os << "feature";
    for (const auto& n : corr.names) os << ',' << n;
    os << '\n';
    for (std::size_t a = 0; a < corr.names.size(); ++a) {
      os << corr.names[a];
      for (std::size_t b = 0; b < corr.names.size(); ++b) {
        os << ',';
        if (corr.r[a][b]) os << format_double(*corr.r[a][b]);
      }
      os << '\n';
    }
    write_text(out / "correlation.csv", os.str());
  }
  const auto pca = pca_project(table, components);
  {
    std::ostringstream os;
    os << "clip_id,segment_index";
    for (std::size_t k = 0; k < components; ++k) os << ",pc" << k + 1;
    if (!table.labels.empty()) os << ",label";
    os << '\n';
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (table.keys.empty())
        os << ',' << i;
      else
        os << table.keys[i].clip_id << ',' << table.keys[i].segment_index;
      for (std::size_t k = 0; k < components; ++k) os << ',' << format_double(pca.projection[i][k]);
      if (!table.labels.empty()) os << ',' << table.labels[i];
      os << '\n';
    }
    write_text(out / "pca.csv", os.str());
    std::ostringstream ld;
    ld << "feature";
    for (std::size_t k = 0; k < components; ++k) ld << ",pc" << k + 1;
    ld << '\n';
    for (std::size_t f = 0; f < pca.used_features.size(); ++f) {
      ld << pca.used_features[f];
      for (std::size_t k = 0; k < components; ++k) ld << ',' << format_double(pca.components[k][f]);
      ld << '\n';
    }
    write_text(out / "pca_loadings.csv", ld.str());
  }
  json meta{{"features", in.filename().string()}, {"components", components}};
  if (!table.labels.empty()) {
    ForestOptions opt;
    opt.seed = seed;
    const auto imp = rf_feature_importance(table, opt);
    std::ostringstream os;
    os << "feature,importance\n";
    for (std::size_t f = 0; f < imp.size(); ++f) os << table.feature_names[f] << ',' << format_double(imp[f]) << '\n';
    write_text(out / "importance.csv", os.str());
    meta["forest"] = {{"n_estimators", opt.n_estimators}, {"max_depth", opt.max_depth}, {"min_samples_split", opt.min_samples_split}};
  } else {
    std::cerr << "feature table has no labels; importance.csv not written\n";
  }
  auto report = provenance(meta, seed);
  report["pca"] = {{"used_features", pca.used_features},
                   {"dropped_features", pca.dropped_features},
                   {"eigenvalues", pca.eigenvalues},
                   {"explained_variance_ratio", pca.explained_variance_ratio}};
  write_json(out / "analysis.json", report);
  return ok;
}

struct TrainArgs {
  std::string model = "cnn";
  DataSource data;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double l2 = 0.1;
  std::vector<std::string> hp;
  std::vector<std::string> grid;
  std::size_t folds = 5;
  std::string features = "default";
};

TrainConfig cnn_config(const TrainArgs& a, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = a.epochs;
  c.batch_size = a.batch_size;
  c.learning_rate = a.learning_rate;
  c.l2 = a.l2;
  c.seed = seed;
  return c;
}

json train_config_json(const TrainArgs& a) {
  json j = a.data.describe();
  j["model"] = a.model;
  j["test_fraction"] = a.test_fraction;
  if (a.model == "cnn") {
    j["train"] = {{"epochs", a.epochs}, {"batch_size", a.batch_size}, {"learning_rate", a.learning_rate}, {"l2", a.l2}};
  } else {
    j["hyperparameters"] = parse_hyperparameters(a.hp);
    j["grid"] = a.grid;
    j["folds"] = a.folds;
    j["features"] = a.features;
  }
  return j;
}

struct Trained {
  AnyModel model;
  Metrics test;
  json extra;
  std::vector<EpochLog> log;
};

Trained train_once(const TrainArgs& a, std::uint64_t seed, const std::optional<MfccDataset>& mfcc, const std::optional<FeatureTable>& table) {
  Trained t;
  if (a.model == "cnn") {
    auto [train, test] = split_dataset(*mfcc, a.test_fraction, seed);
    auto res = cnn_train(train, cnn_config(a, seed), {}, test.empty() ? nullptr : &test);
    t.log = res.log;
    if (!test.empty()) t.test = evaluate(res.model, test);
    t.model = std::move(res.model);
    return t;
  }
  auto [train, test] = split_dataset(model_columns(*table, a.features).dataset(), a.test_fraction, seed);
  Hyperparameters hp = parse_hyperparameters(a.hp);
  if (a.model == "random_forest" && !hp.count("seed")) hp["seed"] = static_cast<double>(seed);
  if (!a.grid.empty()) {
    const auto gs = grid_search_cv(a.model, parse_grid(a.grid), train, a.folds, seed);
    for (const auto& [k, v] : gs.best_params()) hp[k] = v;
    t.extra["grid_search"] = to_json(gs);
  }
  auto m = TabularModel::fit(a.model, hp, train);
  if (!test.empty()) t.test = evaluate(m, test);
  t.model = std::move(m);
  return t;
}

void check_family(const std::string& model) {
  if (model == "cnn") return;
  for (auto f : kTabularFamilies)
    if (model == f) return;
  fail(ErrorKind::invalid_argument, "unknown model '" + model + "'");
}

int cmd_train(const TrainArgs& a, const fs::path& out) {
  check_family(a.model);
  std::optional<MfccDataset> mfcc;
  std::optional<FeatureTable> table;
  if (a.model == "cnn")
    mfcc = a.data.mfcc();
  else
    table = a.data.table();
  const json cfg = train_config_json(a);
  const std::uint64_t hash = config_hash(cfg);
  auto t = train_once(a, a.seed, mfcc, table);
  ensure_dir(out);
  json mj;
  if (const auto* cnn = std::get_if<CnnModel>(&t.model)) {
    mj = model_to_json(*cnn, cnn_config(a, a.seed), hash);
    write_text(out / "epoch_log.csv", epoch_log_csv(t.log));
  } else {
    mj = model_to_json(std::get<TabularModel>(t.model), a.seed, hash);
  }
  mj["meta"]["stage"] = stage_name(a.data.stage);
  write_text(out / "model.json", mj.dump() + "\n");
  auto report = provenance(cfg, a.seed);
  report["test"] = to_json(t.test);
  for (auto& [k, v] : t.extra.items()) report[k] = v;
  write_json(out / "train_report.json", report);
  std::cerr << a.model << " test accuracy " << t.test.accuracy << "\n";
  return ok;
}

int cmd_eval(const TrainArgs& a, std::size_t runs, const std::string& model_file, const fs::path& out) {
  ensure_dir(out);
  if (!model_file.empty()) {
    const auto model = load_model(model_file);
    const auto segs = a.data.segments();
    std::vector<int> truth;
    std::vector<Prediction> preds;
    for (const auto& s : segs) {
      truth.push_back(s.label);
      preds.push_back(predict_segment(model, s.segment));
    }
    json cfg = a.data.describe();
    cfg["model_file"] = fs::path(model_file).filename().string();
    cfg["model_kind"] = model_kind(model);
    auto report = provenance(cfg, std::nullopt);
    report["metrics"] = to_json(evaluate_predictions(truth, preds));
    write_json(out / "metrics.json", report);
    return ok;
  }
  check_family(a.model);
  if (runs == 0) fail(ErrorKind::invalid_argument, "--runs must be at least 1");
  std::optional<MfccDataset> mfcc;
  std::optional<FeatureTable> table;
  if (a.model == "cnn")
    mfcc = a.data.mfcc();
  else
    table = a.data.table();
  std::vector<Metrics> results;
  json per_run = json::array();
  for (std::size_t r = 0; r < runs; ++r) {
    const auto t = train_once(a, a.seed + r, mfcc, table);
    results.push_back(t.test);
    per_run.push_back({{"seed", a.seed + r}, {"metrics", to_json(t.test)}});
    std::cerr << "run " << r + 1 << "/" << runs << " accuracy " << t.test.accuracy << "\n";
  }
  json cfg = train_config_json(a);
  cfg["runs"] = runs;
  auto report = provenance(cfg, a.seed);
  report["summary"] = summarize_runs(results);
  report["per_run"] = per_run;
  write_json(out / "metrics.json", report);
  return ok;
}

int cmd_stream(const fs::path& wav, const fs::path& positions, const std::string& model_file, const std::string& stage_opt,
               const std::string& mode, const std::string& config_path, double max_seconds, const fs::path& out) {
  const auto model_json = read_json(model_file);
  const auto model = model_from_json(model_json);
  Stage stage = Stage::denoised;
  if (!stage_opt.empty())
    stage = parse_stage(stage_opt);
  else if (model_json.contains("meta") && model_json["meta"].contains("stage"))
    stage = parse_stage(model_json["meta"]["stage"].get<std::string>());
  const auto clip = load_wav(wav);
  const auto pos = read_positions_csv(positions);
  stream::PipelineOptions opt;
  if (mode == "live")
    opt.mode = stream::Mode::live;
  else if (mode != "offline")
    fail(ErrorKind::invalid_argument, "--mode must be offline or live");
  opt.stage = stage;
  opt.denoise = load_denoise_config(config_path, clip.sample_rate);
  opt.max_seconds = max_seconds;
  const auto report = stream::run_pipeline(clip, pos, model, opt);
  ensure_dir(out);
  write_text(out / "predictions.jsonl", stream::to_jsonl(report.records));
  json cfg{{"wav", wav.filename().string()},
           {"positions", positions.filename().string()},
           {"model_file", fs::path(model_file).filename().string()},
           {"model_kind", model_kind(model)},
           {"stage", stage_name(stage)},
           {"mode", mode},
           {"denoise", to_json(opt.denoise)}};
  auto j = provenance(cfg, std::nullopt);
  j["report"] = stream::to_json(report);
  write_json(out / "run_report.json", j);
  if (report.tail_samples_dropped > 0) std::cerr << "dropped a partial tail of " << report.tail_samples_dropped << " samples\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic defect detection for laser directed energy deposition"};
  app.require_subcommand(1);

  std::string config, stages = "raw,eq,bp,dn", stage = "dn", mfcc_format, model_file, mode = "offline";
  std::uint64_t seed = 0;
  fs::path out, in, positions;
  std::size_t components = 2, runs = 1;
  double max_seconds = 0.0;
  TrainArgs ta;
  std::string data_path;

  auto* synth = app.add_subcommand("synth", "Render a labelled synthetic corpus");
  synth->add_option("--config", config, "Corpus config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  synth->add_option("--seed", seed, "Generation seed")->required();
  synth->add_option("--out", out, "Output directory")->required();

  auto* denoise = app.add_subcommand("denoise", "Write denoising stages as WAV files");
  denoise->add_option("--in", in, "WAV file or corpus manifest.json")->required()->check(CLI::ExistingFile);
  denoise->add_option("--config", config, "Denoise config JSON")->check(CLI::ExistingFile);
  denoise->add_option("--stages", stages, "Comma-separated subset of raw,eq,bp,dn")->capture_default_str();
  denoise->add_option("--out", out, "Output directory")->required();

  auto* features = app.add_subcommand("features", "Per-segment feature CSV (and MFCC tensors)");
  features->add_option("--in", in, "Corpus manifest.json (labelled) or a WAV file")->required()->check(CLI::ExistingFile);
  features->add_option("--stage", stage, "raw, eq, bp or dn")->capture_default_str();
  features->add_option("--config", config, "Denoise config JSON")->check(CLI::ExistingFile);
  features->add_option("--mfcc", mfcc_format, "Also write 20x85 MFCC tensors per segment: csv or bin");
  features->add_option("--out", out, "Output directory")->required();

  auto* analyze = app.add_subcommand("analyze", "Correlation, PCA and importance CSVs from a feature CSV");
  analyze->add_option("--features", in, "Feature CSV from `features`")->required()->check(CLI::ExistingFile);
  analyze->add_option("--components", components, "PCA components")->capture_default_str();
  analyze->add_option("--seed", seed, "Random forest seed")->capture_default_str();
  analyze->add_option("--out", out, "Output directory")->required();

  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--data", data_path, "Corpus manifest.json, or a feature CSV for tabular models")->required()->check(CLI::ExistingFile);
    sub->add_option("--model", ta.model, "cnn, gaussian_nb, knn, logistic, decision_tree or random_forest")->capture_default_str();
    sub->add_option("--stage", stage, "raw, eq, bp or dn")->capture_default_str();
    sub->add_option("--config", config, "Denoise config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", ta.seed, "Split and training seed")->required();
    sub->add_option("--test-fraction", ta.test_fraction, "Held-out fraction")->capture_default_str();
    sub->add_option("--epochs", ta.epochs, "CNN epochs")->capture_default_str();
    sub->add_option("--batch-size", ta.batch_size, "CNN batch size")->capture_default_str();
    sub->add_option("--learning-rate", ta.learning_rate, "CNN Adam learning rate")->capture_default_str();
    sub->add_option("--l2", ta.l2, "CNN L2 factor")->capture_default_str();
    sub->add_option("--hp", ta.hp, "Tabular hyperparameter key=value (repeatable)");
    sub->add_option("--grid", ta.grid, "Grid axis key=v1,v2,... (repeatable; tabular only)");
    sub->add_option("--folds", ta.folds, "Grid search folds")->capture_default_str();
    sub->add_option("--features", ta.features, "Tabular inputs: default, all, or a comma-separated list")->capture_default_str();
    sub->add_option("--out", out, "Output directory")->required();
  };
  auto* train = app.add_subcommand("train", "Train a model");
  add_training(train);
  auto* eval = app.add_subcommand("eval", "Repeated train/test evaluation (or score a saved model)");
  add_training(eval);
  eval->add_option("--runs", runs, "Independent split/train runs")->capture_default_str();
  eval->add_option("--model-file", model_file, "Score this saved model on every segment instead of training")->check(CLI::ExistingFile);

  auto* stream_cmd = app.add_subcommand("stream", "Run the streaming pipeline over one recording");
  stream_cmd->add_option("--wav", in, "Recording")->required()->check(CLI::ExistingFile);
  stream_cmd->add_option("--positions", positions, "Position CSV t,x,y,z")->required()->check(CLI::ExistingFile);
  stream_cmd->add_option("--model", model_file, "Model JSON from `train`")->required()->check(CLI::ExistingFile);
  stream_cmd->add_option("--stage", stage, "raw, eq, bp or dn (default: the stage the model was trained on)");
  stream_cmd->add_option("--mode", mode, "offline or live")->capture_default_str();
  stream_cmd->add_option("--config", config, "Denoise config JSON")->check(CLI::ExistingFile);
  stream_cmd->add_option("--max-seconds", max_seconds, "Live mode: stop after this much wall time (0 = whole file)");
  stream_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, seed, out);
    if (denoise->parsed()) return cmd_denoise(in, config, stages, out);
    if (features->parsed()) return cmd_features(in, parse_stage(stage), config, mfcc_format, out);
    if (analyze->parsed()) return cmd_analyze(in, components, seed, out);
    ta.data = {data_path, parse_stage(stage), config};
    if (train->parsed()) return cmd_train(ta, out);
    if (eval->parsed()) return cmd_eval(ta, runs, model_file, out);
    if (stream_cmd->parsed()) {
      const bool stage_given = stream_cmd->count("--stage") > 0;
      return cmd_stream(in, positions, model_file, stage_given ? stage : "", mode, config, max_seconds, out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::invalid_argument: return usage;
      case ErrorKind::data:
      case ErrorKind::io: return data_error;
      case ErrorKind::internal: return internal_error;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return data_error;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return internal_error;
  }
  return internal_error;
}
