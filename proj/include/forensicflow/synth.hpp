#pragma once

// Seeded synthetic forgery dataset.
//
// Real segments are smooth composites: a low-frequency luminance background,
// a few Gaussian blobs standing in for a face, per-frame jitter of blob
// positions and brightness, and independent sensor noise. A fake segment is a
// real composite plus exactly one artifact family:
//
//   texture    a chroma checkerboard (R += n, B -= n, sign by pixel parity,
//              random magnitude) inside a box with a hard edge; the pattern
//              is fixed across the K frames
//   frequency  a faint gray plane wave on an integer DFT bin
//   color      a global warm cast (R += delta, B -= delta)
//
// All three families leave the channel mean unchanged, so texture and color
// fakes have the same grayscale spectrum statistics as reals. The color cast
// is spatially constant and vanishes from a high-pass residual.
//
// Segment i of the whole run draws from Rng(derive_seed(seed, i)); identity j
// draws its scene from Rng(derive_seed(seed ^ kIdentityStream, j)).

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "forensicflow/dataio.hpp"

namespace ff {

struct ArtifactMix {
  double texture = 1.0 / 3.0;
  double frequency = 1.0 / 3.0;
  double color = 1.0 / 3.0;
};

struct SynthConfig {
  std::size_t n_real_train = 35, n_fake_train = 245;
  std::size_t n_real_val = 10, n_fake_val = 70;
  std::size_t side = 32;
  std::size_t k = 4;
  ArtifactMix mix;
  std::uint64_t seed = 20240601;

  double noise_sigma = 0.02;
  /// Scale of the checkerboard magnitudes inside the texture box.
  double texture_sigma = 0.08;
  std::size_t texture_min_box = 8, texture_max_box = 12;
  double wave_amplitude = 0.1;
  /// Wave frequency radius range in cycles per frame.
  double wave_min_radius = 5.0, wave_max_radius = 10.0;
  double color_min_shift = 0.08, color_max_shift = 0.14;

  /// Throws ConfigError unless the counts, mix and geometry are usable.
  void validate() const;
};

/// One generated segment before it is written.
struct SynthSegment {
  std::string id;
  std::string split;
  std::string identity;
  int label = 0;
  ArtifactInfo artifact;
  SegmentData data;
};

/// Generates every segment in manifest order (train reals, train fakes, val
/// reals, val fakes).
std::vector<SynthSegment> synth_segments(const SynthConfig& cfg);

struct SynthSummary {
  /// counts[split][kind] with kind in {none, texture, frequency, color}.
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::size_t total = 0;
  std::string text() const;
};

/// Writes <out>/segments/<id>.ffsg and <out>/manifest.jsonl. Throws IoError
/// when the directory cannot be created or written.
SynthSummary synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace ff
