#pragma once

// Segment files, manifests, preprocessing and dataset loading.
//
// SegmentFile layout (all integers and floats little-endian):
//   "FFSG" | version u32 (=1) | K u16 | C u16 | H u16 | W u16 | K*C*H*W f32
// Pixel values are stored in [0,1], before normalization.
//
// Manifest: JSON Lines, one object per segment:
//   {"path": str, "label": 0|1, "split": "train"|"val", "identity": str,
//    "artifact": {"kind": "none"|"texture"|"frequency"|"color", "bbox": [x,y,w,h] | null}}
// Paths are relative to the manifest's directory.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forensicflow/rng.hpp"
#include "forensicflow/tensor.hpp"

namespace ff {

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

/// Per-channel (x - mean) / std with the ImageNet constants. Accepts [3,H,W]
/// or [K,3,H,W].
Tensor normalize(const Tensor& frames);
Tensor denormalize(const Tensor& frames);

/// Grayscale (channel mean) -> centered |FFT| -> log(1 + ·) -> per-image
/// min-max to [0,1]. frame [3,H,W] in pixel space -> [1,H,W]. A flat
/// log-spectrum maps to all zeros.
Tensor make_freq_map(const Tensor& frame);

struct SegmentData {
  std::uint16_t k = 0, c = 0, h = 0, w = 0;
  std::vector<float> pixels;  // K*C*H*W, row-major
  Tensor as_tensor() const;   // [K,C,H,W]
};

inline constexpr std::uint32_t kSegmentVersion = 1;

std::vector<std::uint8_t> encode_segment(const SegmentData& seg);
/// Throws FormatError on bad magic, version or payload length.
SegmentData decode_segment(const std::vector<std::uint8_t>& bytes);
void write_segment(const std::filesystem::path& path, const SegmentData& seg);
SegmentData read_segment(const std::filesystem::path& path);

struct ArtifactInfo {
  std::string kind = "none";
  std::optional<std::array<int, 4>> bbox;  // x, y, w, h
};

struct ManifestEntry {
  std::string path;
  int label = 0;
  std::string split;
  std::string identity;
  ArtifactInfo artifact;
  /// Segment id: the file stem of `path`.
  std::string id() const;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::string manifest_line(const ManifestEntry& entry);
/// Throws DataError naming the first identity present in more than one split.
void check_identity_disjoint(const std::vector<ManifestEntry>& entries);

struct Sample {
  std::string id;
  int label = 0;
  ArtifactInfo artifact;
  Tensor pixels;     // [K,3,H,W] in [0,1]
  Tensor frames;     // [K,3,H,W] normalized
  Tensor freq_maps;  // [K,1,H,W]
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t count_label(int label) const;
};

/// Loads every segment of `split` in manifest order. Validates labels,
/// identity disjointness across the whole manifest and file headers.
Dataset load_dataset(const std::filesystem::path& manifest_path, const std::string& split);
Sample make_sample(std::string id, int label, ArtifactInfo artifact, const SegmentData& seg);

struct Batch {
  std::vector<std::string> ids;
  Tensor frames;  // [N,K,3,H,W]
  Tensor freq_maps;
  Tensor labels;  // [N]
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);
/// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace ff
