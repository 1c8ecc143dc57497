#include "forensicflow/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "forensicflow/error.hpp"
#include "forensicflow/ops.hpp"

namespace ff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_frames(const Tensor& frames, const char* what) {
  const bool ok = (frames.rank() == 3 && frames.dim(0) == 3) || (frames.rank() == 4 && frames.dim(1) == 3);
  if (!ok) throw ShapeError(std::string(what) + ": expected [3,H,W] or [K,3,H,W], got " + shape_str(frames.shape()));
}

Tensor affine_channels(const Tensor& frames, bool forward) {
  const std::size_t hw = frames.dim(-1) * frames.dim(-2);
  const auto in = frames.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ch = (i / hw) % 3;
    out[i] = forward ? (in[i] - kImageNetMean[ch]) / kImageNetStd[ch] : in[i] * kImageNetStd[ch] + kImageNetMean[ch];
  }
  apply_precision(out);
  return Tensor(frames.shape(), std::move(out));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Tensor normalize(const Tensor& frames) {
  check_frames(frames, "normalize");
  return affine_channels(frames, true);
}

Tensor denormalize(const Tensor& frames) {
  check_frames(frames, "denormalize");
  return affine_channels(frames, false);
}

Tensor make_freq_map(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw ShapeError("make_freq_map: expected [3,H,W], got " + shape_str(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  const auto px = frame.data();
  std::vector<double> gray(h * w);
  for (std::size_t i = 0; i < h * w; ++i) gray[i] = (px[i] + px[h * w + i] + px[2 * h * w + i]) / 3.0;
  const auto mag = rfft2_magnitude(Tensor({h, w}, std::move(gray)));
  std::vector<double> out(h * w);
  const auto mv = mag.data();
  for (std::size_t i = 0; i < h * w; ++i) out[i] = std::log1p(mv[i]);
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double min = *lo, range = *hi - *lo;
  for (auto& v : out) v = range > 0.0 ? (v - min) / range : 0.0;
  apply_precision(out);
  return Tensor({1, h, w}, std::move(out));
}

// --- segment files -----------------------------------------------------------------

Tensor SegmentData::as_tensor() const {
  std::vector<double> values(pixels.begin(), pixels.end());
  return Tensor({k, c, h, w}, std::move(values));
}

std::vector<std::uint8_t> encode_segment(const SegmentData& seg) {
  const std::size_t n = std::size_t{seg.k} * seg.c * seg.h * seg.w;
  if (seg.k == 0) throw DataError("segment must hold at least one frame");
  if (seg.pixels.size() != n) throw DataError("segment payload does not match its header");
  std::vector<std::uint8_t> bytes{'F', 'F', 'S', 'G'};
  bytes.reserve(16 + 4 * n);
  put_u32(bytes, kSegmentVersion);
  put_u16(bytes, seg.k);
  put_u16(bytes, seg.c);
  put_u16(bytes, seg.h);
  put_u16(bytes, seg.w);
  for (float f : seg.pixels) put_u32(bytes, std::bit_cast<std::uint32_t>(f));
  return bytes;
}

SegmentData decode_segment(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "FFSG", 4) != 0) throw FormatError("not a segment file (bad magic)");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kSegmentVersion) throw FormatError("unsupported segment version " + std::to_string(version));
  SegmentData seg;
  seg.k = get_u16(bytes.data() + 8);
  seg.c = get_u16(bytes.data() + 10);
  seg.h = get_u16(bytes.data() + 12);
  seg.w = get_u16(bytes.data() + 14);
  if (seg.k == 0) throw FormatError("segment header declares zero frames");
  const std::size_t n = std::size_t{seg.k} * seg.c * seg.h * seg.w;
  if (bytes.size() != 16 + 4 * n) {
    throw FormatError("segment payload holds " + std::to_string(bytes.size() - 16) + " bytes, header implies " +
                      std::to_string(4 * n));
  }
  seg.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) seg.pixels[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
  return seg;
}

void write_segment(const fs::path& path, const SegmentData& seg) {
  const auto bytes = encode_segment(seg);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

SegmentData read_segment(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open segment " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_segment(bytes);
}

// --- manifest -------------------------------------------------------------------------

std::string ManifestEntry::id() const { return fs::path(path).stem().string(); }

std::string manifest_line(const ManifestEntry& e) {
  json art = {{"kind", e.artifact.kind}, {"bbox", nullptr}};
  if (e.artifact.bbox) art["bbox"] = *e.artifact.bbox;
  json j = {{"path", e.path}, {"label", e.label}, {"split", e.split}, {"identity", e.identity}, {"artifact", art}};
  return j.dump();
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  static const std::set<std::string> kinds{"none", "texture", "frequency", "color"};
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.label = j.at("label").get<int>();
      e.split = j.at("split").get<std::string>();
      e.identity = j.at("identity").get<std::string>();
      const auto& art = j.at("artifact");
      e.artifact.kind = art.at("kind").get<std::string>();
      if (!art.at("bbox").is_null()) e.artifact.bbox = art.at("bbox").get<std::array<int, 4>>();
      if (e.label != 0 && e.label != 1) throw DataError("label must be 0 or 1");
      if (e.split != "train" && e.split != "val") throw DataError("split must be train or val");
      if (!kinds.count(e.artifact.kind)) throw DataError("unknown artifact kind '" + e.artifact.kind + "'");
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) out << manifest_line(e) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void check_identity_disjoint(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, std::string> split_of;
  for (const auto& e : entries) {
    auto [it, inserted] = split_of.emplace(e.identity, e.split);
    if (!inserted && it->second != e.split) {
      throw DataError("identity '" + e.identity + "' appears in both " + it->second + " and " + e.split + " splits");
    }
  }
}

// --- loading ----------------------------------------------------------------------------

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.label == label; }));
}

Sample make_sample(std::string id, int label, ArtifactInfo artifact, const SegmentData& seg) {
  if (seg.c != 3) throw FormatError("segment " + id + " has " + std::to_string(seg.c) + " channels, expected 3");
  Sample s;
  s.id = std::move(id);
  s.label = label;
  s.artifact = std::move(artifact);
  s.pixels = seg.as_tensor();
  s.frames = normalize(s.pixels);
  const std::size_t plane = std::size_t{seg.h} * seg.w;
  std::vector<double> maps;
  maps.reserve(seg.k * plane);
  for (std::size_t f = 0; f < seg.k; ++f) {
    std::vector<double> frame(s.pixels.data().begin() + static_cast<long>(f * 3 * plane),
                              s.pixels.data().begin() + static_cast<long>((f + 1) * 3 * plane));
    const auto m = make_freq_map(Tensor({3, seg.h, seg.w}, std::move(frame)));
    maps.insert(maps.end(), m.data().begin(), m.data().end());
  }
  s.freq_maps = Tensor({seg.k, 1, seg.h, seg.w}, std::move(maps));
  return s;
}

Dataset load_dataset(const fs::path& manifest_path, const std::string& split) {
  const auto entries = read_manifest(manifest_path);
  check_identity_disjoint(entries);
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  std::set<std::string> ids;
  Shape expected;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    if (!ids.insert(e.id()).second) throw DataError("duplicate segment id '" + e.id() + "' in manifest");
    const auto seg = read_segment(root / e.path);
    ds.samples.push_back(make_sample(e.id(), e.label, e.artifact, seg));
    const auto& shape = ds.samples.back().pixels.shape();
    if (expected.empty()) expected = shape;
    if (shape != expected) {
      throw FormatError("segment " + e.id() + " has shape " + shape_str(shape) + ", expected " + shape_str(expected));
    }
  }
  return ds;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("empty batch");
  Batch b;
  const Shape& fs = data.samples.at(indices.front()).frames.shape();
  const Shape& ms = data.samples.at(indices.front()).freq_maps.shape();
  std::vector<double> frames, maps, labels;
  frames.reserve(indices.size() * shape_numel(fs));
  maps.reserve(indices.size() * shape_numel(ms));
  for (auto i : indices) {
    const auto& s = data.samples.at(i);
    b.ids.push_back(s.id);
    frames.insert(frames.end(), s.frames.data().begin(), s.frames.data().end());
    maps.insert(maps.end(), s.freq_maps.data().begin(), s.freq_maps.data().end());
    labels.push_back(s.label);
  }
  Shape bf{indices.size()};
  bf.insert(bf.end(), fs.begin(), fs.end());
  Shape bm{indices.size()};
  bm.insert(bm.end(), ms.begin(), ms.end());
  b.frames = Tensor(std::move(bf), std::move(frames));
  b.freq_maps = Tensor(std::move(bm), std::move(maps));
  b.labels = Tensor({indices.size()}, std::move(labels));
  return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace ff
