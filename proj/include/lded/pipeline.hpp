#pragma once

// Batch path from labelled recordings to model-ready datasets: denoise each
// whole file up to a chosen stage, cut the manifest segments, extract features.

#include <filesystem>
#include <string>
#include <vector>

#include "lded/analysis.hpp"
#include "lded/denoise.hpp"
#include "lded/features.hpp"
#include "lded/mfcc.hpp"
#include "lded/models/dataset.hpp"
#include "lded/synth.hpp"
#include "lded/wav.hpp"

namespace lded {

enum class Stage { raw, equalized, bandpassed, denoised };

inline Stage parse_stage(std::string_view s) {
  if (s == "raw") return Stage::raw;
  if (s == "eq") return Stage::equalized;
  if (s == "bp") return Stage::bandpassed;
  if (s == "dn") return Stage::denoised;
  fail(ErrorKind::invalid_argument, "unknown stage '" + std::string(s) + "' (expected raw, eq, bp or dn)");
}

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::raw: return "raw";
    case Stage::equalized: return "eq";
    case Stage::bandpassed: return "bp";
    case Stage::denoised: return "dn";
  }
  return "?";
}

/// Runs the denoising chain only as far as `stage` needs.
inline AudioClip apply_stage(const AudioClip& clip, const DenoiseConfig& cfg, Stage stage) {
  if (stage == Stage::raw) return clip;
  cfg.validate(clip.sample_rate);
  auto eq = equalize(clip, cfg.equalizer, cfg.framing);
  if (stage == Stage::equalized) return eq;
  auto bp = bandpass(eq, cfg.bandpass);
  if (stage == Stage::bandpassed) return bp;
  return hpss(bp, cfg.hpss).percussive;
}

struct LabeledSegment {
  Segment segment;
  int label = 0;
  std::string clip_id;  // wav file name
  std::size_t index = 0;  // position within the file's manifest segments
};

/// Segments of every file, each file processed to `stage` as one continuous clip.
template <typename AudioFor>
std::vector<LabeledSegment> staged_segments(const DatasetManifest& manifest, AudioFor&& audio_for, const DenoiseConfig& cfg,
                                            Stage stage) {
  std::vector<LabeledSegment> out;
  for (std::size_t f = 0; f < manifest.files.size(); ++f) {
    const auto& entry = manifest.files[f];
    const AudioClip staged = apply_stage(audio_for(f), cfg, stage);
    auto segs = manifest_segments(entry, staged);
    for (std::size_t i = 0; i < segs.size(); ++i)
      out.push_back({std::move(segs[i]), entry.segments[i].label, entry.wav, i});
  }
  return out;
}

inline std::vector<LabeledSegment> staged_segments(const Corpus& corpus, const DenoiseConfig& cfg, Stage stage) {
  return staged_segments(corpus.manifest, [&](std::size_t f) -> const AudioClip& { return corpus.files[f].audio; }, cfg, stage);
}

inline std::vector<LabeledSegment> staged_segments(const std::filesystem::path& manifest_path, const DenoiseConfig& cfg, Stage stage) {
  const auto manifest = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  return staged_segments(manifest, [&](std::size_t f) { return load_wav(dir / manifest.files[f].wav); }, cfg, stage);
}

inline MfccDataset mfcc_dataset(std::span<const LabeledSegment> segs) {
  MfccDataset d;
  for (const auto& s : segs) d.push(mfcc_segment_tensor(s.segment), s.label);
  return d;
}

inline FeatureTable feature_table(std::span<const LabeledSegment> segs) {
  FeatureTable t;
  t.feature_names = segment_feature_names();
  for (const auto& s : segs) {
    t.rows.push_back(segment_features(s.segment).values);
    t.labels.push_back(s.label);
    t.keys.push_back({s.clip_id, s.index, s.segment.start});
  }
  return t;
}

template <typename Item>
std::pair<LabeledDataset<Item>, LabeledDataset<Item>> split_dataset(const LabeledDataset<Item>& d, double test_fraction,
                                                                    std::uint64_t seed) {
  const auto s = stratified_split(d.labels, test_fraction, seed);
  return {d.subset(s.train), d.subset(s.test)};
}

}  // namespace lded
