#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "forensicflow/dataio.hpp"
#include "forensicflow/error.hpp"
#include "forensicflow/synth.hpp"
#include "support.hpp"

using namespace ff;
using support::to_vector;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.n_real_train = 2;
  cfg.n_fake_train = 14;
  cfg.n_real_val = 1;
  cfg.n_fake_val = 7;
  cfg.side = 16;
  cfg.texture_min_box = 4;
  cfg.texture_max_box = 6;
  cfg.wave_min_radius = 3.0;
  cfg.wave_max_radius = 6.0;
  return cfg;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("normalization constants") {
  PrecisionScope f64(Precision::f64);
  Tensor px({3, 1, 1}, {1.0, 0.456, 0.406});
  const auto n = normalize(px);
  CHECK(n[0] == doctest::Approx(2.2489).epsilon(1e-4));
  CHECK(n[1] == doctest::Approx(0.0).scale(1.0));
  CHECK(n[2] == doctest::Approx(0.0).scale(1.0));

  Rng rng(1);
  const auto batch = support::random_tensor(rng, {2, 3, 5, 4}, 0, 1);
  CHECK(support::max_abs_diff(to_vector(denormalize(normalize(batch))), to_vector(batch)) < 1e-12);
  CHECK_THROWS_AS(normalize(Tensor::zeros({1, 5, 5})), ShapeError);
}

TEST_CASE("frequency map of a constant frame peaks at the centre") {
  const auto m = make_freq_map(Tensor::full({3, 16, 16}, 0.7));
  REQUIRE(m.shape() == Shape{1, 16, 16});
  CHECK(m[8 * 16 + 8] == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 256; ++i)
    if (i != 8 * 16 + 8) CHECK(m[i] == 0.0);
}

TEST_CASE("frequency map of a stripe has two symmetric peaks beside DC") {
  PrecisionScope f64(Precision::f64);
  std::vector<double> px(3 * 16 * 16);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) px[(c * 16 + y) * 16 + x] = 0.5 + 0.25 * std::cos(2 * M_PI * 4 * x / 16.0);
  const auto m = to_vector(make_freq_map(Tensor({3, 16, 16}, px)));
  std::vector<std::size_t> hot;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] > 0.5) hot.push_back(i);
  CHECK(hot == std::vector<std::size_t>{8 * 16 + 4, 8 * 16 + 8, 8 * 16 + 12});
  CHECK(m[8 * 16 + 4] == doctest::Approx(m[8 * 16 + 12]));
}

TEST_CASE("frequency maps stay in the unit interval") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto m = to_vector(make_freq_map(support::random_tensor(rng, {3, 8, 8}, 0, 1)));
    CHECK(*std::min_element(m.begin(), m.end()) >= 0.0);
    CHECK(*std::max_element(m.begin(), m.end()) <= 1.0);
  }
}

TEST_CASE("segment encoding round-trips bit-for-bit") {
  SegmentData seg;
  seg.k = 2;
  seg.c = 3;
  seg.h = 3;
  seg.w = 5;
  Rng rng(3);
  for (std::size_t i = 0; i < 90; ++i) seg.pixels.push_back(static_cast<float>(rng.uniform()));
  const auto bytes = encode_segment(seg);
  CHECK(bytes.size() == 16 + 90 * 4);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "FFSG"));
  const auto back = decode_segment(bytes);
  CHECK(back.k == 2);
  CHECK(back.w == 5);
  CHECK(back.pixels == seg.pixels);
  CHECK(encode_segment(back) == bytes);

  const auto dir = fresh_dir("forensicflow_test_seg");
  write_segment(dir / "a.ffsg", seg);
  write_segment(dir / "b.ffsg", read_segment(dir / "a.ffsg"));
  std::ifstream a(dir / "a.ffsg", std::ios::binary), b(dir / "b.ffsg", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  fs::remove_all(dir);
}

TEST_CASE("damaged segment bytes are rejected") {
  SegmentData seg;
  seg.k = seg.c = seg.h = seg.w = 1;
  seg.pixels = {0.5f};
  const auto good = encode_segment(seg);

  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_segment(magic), FormatError);
  auto version = good;
  version[4] = 2;
  CHECK_THROWS_AS(decode_segment(version), FormatError);
  auto truncated = good;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_segment(truncated), FormatError);
  CHECK_THROWS_AS(decode_segment({}), FormatError);
  CHECK_THROWS_AS(read_segment("/nonexistent/seg.ffsg"), IoError);
}

TEST_CASE("manifest lines round-trip") {
  ManifestEntry e;
  e.path = "segments/val_0001.ffsg";
  e.label = 1;
  e.split = "val";
  e.identity = "id_9";
  e.artifact.kind = "texture";
  e.artifact.bbox = std::array<int, 4>{1, 2, 3, 4};
  CHECK(e.id() == "val_0001");
  const auto dir = fresh_dir("forensicflow_test_manifest");
  write_manifest(dir / "m.jsonl", {e});
  const auto back = read_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(manifest_line(back[0]) == manifest_line(e));
  fs::remove_all(dir);
}

TEST_CASE("identity shared across splits is a data error") {
  ManifestEntry a, b;
  a.path = "segments/a.ffsg";
  a.split = "train";
  a.identity = "person_3";
  b = a;
  b.path = "segments/b.ffsg";
  b.split = "val";
  CHECK_THROWS_WITH_AS(check_identity_disjoint({a, b}), doctest::Contains("person_3"), DataError);
  b.identity = "person_4";
  CHECK_NOTHROW(check_identity_disjoint({a, b}));
}

TEST_CASE("synthetic corpus layout") {
  const auto cfg = SynthConfig{};
  CHECK(cfg.n_fake_train == 7 * cfg.n_real_train);
  CHECK(cfg.n_fake_val == 7 * cfg.n_real_val);

  const auto small = tiny_synth();
  const auto a = synth_segments(small);
  const auto b = synth_segments(small);
  REQUIRE(a.size() == 24);
  std::size_t fakes = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].data.pixels == b[i].data.pixels);
    CHECK(a[i].data.k == small.k);
    fakes += static_cast<std::size_t>(a[i].label);
    CHECK((a[i].label == 0) == (a[i].artifact.kind == "none"));
    if (a[i].artifact.bbox) {
      const auto [x, y, w, h] = *a[i].artifact.bbox;
      CHECK(x >= 0);
      CHECK(y >= 0);
      CHECK(x + w <= 16);
      CHECK(y + h <= 16);
      CHECK(a[i].artifact.kind == "texture");
    }
    for (float v : a[i].data.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(fakes == 21);

  auto other = small;
  other.seed += 1;
  CHECK(synth_segments(other)[0].data.pixels != a[0].data.pixels);
}

TEST_CASE("written corpus reloads consistently") {
  const auto dir = fresh_dir("forensicflow_test_corpus");
  const auto summary = synth_generate(tiny_synth(), dir);
  CHECK(summary.total == 24);
  const auto train = load_dataset(dir / "manifest.jsonl", "train");
  const auto val = load_dataset(dir / "manifest.jsonl", "val");
  CHECK(train.size() == 16);
  CHECK(val.size() == 8);
  CHECK(train.count_label(0) == 2);
  CHECK(val.count_label(1) == 7);
  CHECK(train.samples[0].pixels.shape() == Shape{4, 3, 16, 16});
  CHECK(train.samples[0].freq_maps.shape() == Shape{4, 1, 16, 16});
  const auto again = load_dataset(dir / "manifest.jsonl", "train");
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(to_vector(again.samples[i].frames) == to_vector(train.samples[i].frames));
  }

  // A leaked identity anywhere in the manifest blocks loading either split.
  auto entries = read_manifest(dir / "manifest.jsonl");
  entries.back().identity = entries.front().identity;
  write_manifest(dir / "manifest.jsonl", entries);
  CHECK_THROWS_AS(load_dataset(dir / "manifest.jsonl", "train"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("batches stack samples in index order") {
  const auto [train, val] = support::synth_datasets(support::small_synth());
  const auto batch = make_batch(train, {2, 0});
  CHECK(batch.ids == std::vector<std::string>{train.samples[2].id, train.samples[0].id});
  CHECK(batch.frames.dim(0) == 2);
  CHECK(batch.labels[0] == train.samples[2].label);
  CHECK_THROWS_AS(make_batch(train, {}), DataError);

  Rng rng(4);
  auto perm = shuffled_indices(10, rng);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(perm[i] == i);
}

}  // TEST_SUITE
