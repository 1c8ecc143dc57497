#include "forensicflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "forensicflow/error.hpp"

namespace ff {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kIdentityStream = 0x1D3A7F5E2B9C4811ULL;
constexpr std::uint64_t kAssignStream = 0x5A55A55A0F0F0F0FULL;

struct Blob {
  double cx, cy, sigma, amp;
  std::array<double, 3> tint;
};

struct Wave {
  double fx, fy, amp, phase;
};

struct Scene {
  std::array<double, 3> base;
  std::vector<Wave> background;
  std::vector<Blob> blobs;
};

Scene make_scene(Rng& rng, std::size_t side) {
  Scene s;
  const double gray = rng.uniform(0.35, 0.6);
  for (auto& c : s.base) c = gray + 0.01 * rng.normal();
  for (int i = 0; i < 2; ++i) {
    Wave w;
    do {
      w.fx = static_cast<double>(rng.below(5)) - 2.0;
      w.fy = static_cast<double>(rng.below(3));
    } while (w.fx == 0.0 && w.fy == 0.0);
    w.amp = rng.uniform(0.03, 0.07);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.background.push_back(w);
  }
  const double n = static_cast<double>(side);
  for (int i = 0; i < 3; ++i) {
    Blob b;
    b.cx = rng.uniform(0.25 * n, 0.75 * n);
    b.cy = rng.uniform(0.25 * n, 0.75 * n);
    b.sigma = rng.uniform(n / 10.0, n / 5.0);
    b.amp = rng.uniform(-0.25, 0.25);
    for (auto& t : b.tint) t = 0.01 * rng.normal();
    s.blobs.push_back(b);
  }
  return s;
}

/// K jittered, noisy renders of `scene`, [K,3,side,side] flattened.
std::vector<double> render(const Scene& scene, std::size_t side, std::size_t k, double noise, Rng& rng) {
  const std::size_t hw = side * side;
  std::vector<double> px(k * 3 * hw);
  const double n = static_cast<double>(side);
  for (std::size_t f = 0; f < k; ++f) {
    const double brightness = rng.uniform(-0.02, 0.02);
    std::vector<std::array<double, 2>> shift(scene.blobs.size());
    for (auto& s : shift) s = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        double lum = brightness;
        for (const auto& w : scene.background) {
          lum += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / n + w.phase);
        }
        std::array<double, 3> v = scene.base;
        for (std::size_t bi = 0; bi < scene.blobs.size(); ++bi) {
          const auto& b = scene.blobs[bi];
          const double dx = x - b.cx - shift[bi][0], dy = y - b.cy - shift[bi][1];
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
          for (int c = 0; c < 3; ++c) v[c] += g * (b.amp + b.tint[c]);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          px[(f * 3 + c) * hw + y * side + x] = v[c] + lum + noise * rng.normal();
        }
      }
    }
  }
  return px;
}

void add_texture(std::vector<double>& px, const SynthConfig& cfg, Rng& rng, ArtifactInfo& info) {
  const std::size_t side = cfg.side, hw = side * side;
  const auto span = cfg.texture_max_box - cfg.texture_min_box + 1;
  const int bw = static_cast<int>(cfg.texture_min_box + rng.below(span));
  const int bh = static_cast<int>(cfg.texture_min_box + rng.below(span));
  const int bx = static_cast<int>(rng.below(side - static_cast<std::size_t>(bw) + 1));
  const int by = static_cast<int>(rng.below(side - static_cast<std::size_t>(bh) + 1));
  std::vector<double> pattern(static_cast<std::size_t>(bw * bh));
  // Checkerboard sign anchored to absolute pixel parity, like the grid left by
  // strided upsampling; the magnitude still varies per pixel.
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x)
      pattern[static_cast<std::size_t>(y * bw + x)] =
          ((bx + x + by + y) % 2 ? -1.0 : 1.0) * cfg.texture_sigma * std::abs(rng.normal());
  for (std::size_t f = 0; f < cfg.k; ++f) {
    for (int y = 0; y < bh; ++y) {
      for (int x = 0; x < bw; ++x) {
        const std::size_t at = static_cast<std::size_t>((by + y) * static_cast<int>(side) + bx + x);
        const double n = pattern[static_cast<std::size_t>(y * bw + x)];
        px[(f * 3 + 0) * hw + at] += n;
        px[(f * 3 + 2) * hw + at] -= n;
      }
    }
  }
  info.kind = "texture";
  info.bbox = std::array<int, 4>{bx, by, bw, bh};
}

void add_wave(std::vector<double>& px, const SynthConfig& cfg, Rng& rng, ArtifactInfo& info) {
  const std::size_t side = cfg.side, hw = side * side;
  const double n = static_cast<double>(side);
  // Integer bins so the energy lands in a single pair of DFT coefficients.
  double fx = 0, fy = 0, r = 0;
  do {
    const double radius = rng.uniform(cfg.wave_min_radius, cfg.wave_max_radius);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    fx = std::round(radius * std::cos(angle));
    fy = std::round(radius * std::sin(angle));
    r = std::hypot(fx, fy);
  } while (r < cfg.wave_min_radius - 0.5 || r > cfg.wave_max_radius + 0.5 || r >= n / 2.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double v = cfg.wave_amplitude * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) / n + phase);
      for (std::size_t f = 0; f < cfg.k; ++f)
        for (std::size_t c = 0; c < 3; ++c) px[(f * 3 + c) * hw + y * side + x] += v;
    }
  }
  info.kind = "frequency";
}

void add_color(std::vector<double>& px, const SynthConfig& cfg, Rng& rng, ArtifactInfo& info) {
  const std::size_t hw = cfg.side * cfg.side;
  const double delta = rng.uniform(cfg.color_min_shift, cfg.color_max_shift);
  for (std::size_t f = 0; f < cfg.k; ++f) {
    for (std::size_t i = 0; i < hw; ++i) {
      px[(f * 3 + 0) * hw + i] += delta;
      px[(f * 3 + 2) * hw + i] -= delta;
    }
  }
  info.kind = "color";
}

/// Family per fake, quotas by largest remainder, order shuffled.
std::vector<std::string> assign_families(const ArtifactMix& mix, std::size_t n, Rng& rng) {
  const std::array<std::pair<const char*, double>, 3> shares{
      {{"texture", mix.texture}, {"frequency", mix.frequency}, {"color", mix.color}}};
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = shares[i].second * static_cast<double>(n);
    quota[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(quota[i]);
    used += quota[i];
  }
  while (used < n) {
    const auto best = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++quota[best];
    rem[best] = -1.0;
    ++used;
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < 3; ++i) out.insert(out.end(), quota[i], shares[i].first);
  const auto order = shuffled_indices(out.size(), rng);
  std::vector<std::string> shuffled;
  for (auto i : order) shuffled.push_back(out[i]);
  return shuffled;
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

void SynthConfig::validate() const {
  if (side < 8 || (side & (side - 1)) != 0) throw ConfigError("synth side must be a power of two >= 8");
  if (k == 0) throw ConfigError("synth K must be at least 1");
  if (n_real_train == 0 || n_real_val == 0) throw ConfigError("each split needs at least one real segment");
  const double total = mix.texture + mix.frequency + mix.color;
  if (mix.texture < 0 || mix.frequency < 0 || mix.color < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("artifact mix proportions must be nonnegative and sum to 1");
  }
  if (texture_min_box == 0 || texture_min_box > texture_max_box || texture_max_box > side) {
    throw ConfigError("texture box size range must lie in [1, side]");
  }
  if (wave_min_radius <= 0 || wave_min_radius > wave_max_radius || wave_max_radius >= side / 2.0) {
    throw ConfigError("wave radius range must lie in (0, side/2)");
  }
  if (noise_sigma < 0 || texture_sigma < 0 || wave_amplitude < 0 || color_min_shift > color_max_shift) {
    throw ConfigError("artifact strengths must be nonnegative with min <= max");
  }
}

std::vector<SynthSegment> synth_segments(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthSegment> out;
  std::uint64_t segment_index = 0, identity_index = 0;
  const std::array<std::tuple<const char*, std::size_t, std::size_t>, 2> splits{
      {{"train", cfg.n_real_train, cfg.n_fake_train}, {"val", cfg.n_real_val, cfg.n_fake_val}}};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, n_real, n_fake] = splits[s];
    std::vector<Scene> scenes;
    std::vector<std::string> identities;
    for (std::size_t j = 0; j < n_real; ++j) {
      Rng id_rng(derive_seed(cfg.seed ^ kIdentityStream, identity_index++));
      scenes.push_back(make_scene(id_rng, cfg.side));
      identities.push_back(std::string(split) + "_p" + padded(j, 3));
    }
    Rng assign_rng(derive_seed(cfg.seed ^ kAssignStream, s));
    const auto families = assign_families(cfg.mix, n_fake, assign_rng);
    for (std::size_t i = 0; i < n_real + n_fake; ++i) {
      Rng rng(derive_seed(cfg.seed, segment_index));
      SynthSegment seg;
      seg.id = std::string(split) + "_" + padded(i, 4);
      seg.split = split;
      const bool fake = i >= n_real;
      seg.label = fake ? 1 : 0;
      const std::size_t who = fake ? (i - n_real) % n_real : i;
      seg.identity = identities[who];
      auto px = render(scenes[who], cfg.side, cfg.k, cfg.noise_sigma, rng);
      if (fake) {
        const auto& family = families[i - n_real];
        if (family == "texture") add_texture(px, cfg, rng, seg.artifact);
        else if (family == "frequency") add_wave(px, cfg, rng, seg.artifact);
        else add_color(px, cfg, rng, seg.artifact);
      }
      seg.data.k = static_cast<std::uint16_t>(cfg.k);
      seg.data.c = 3;
      seg.data.h = seg.data.w = static_cast<std::uint16_t>(cfg.side);
      seg.data.pixels.resize(px.size());
      for (std::size_t p = 0; p < px.size(); ++p) seg.data.pixels[p] = static_cast<float>(std::clamp(px[p], 0.0, 1.0));
      out.push_back(std::move(seg));
      ++segment_index;
    }
  }
  return out;
}

std::string SynthSummary::text() const {
  std::ostringstream os;
  std::size_t real = 0, fake = 0;
  for (const auto& [split, kinds] : counts) {
    os << split << ":";
    for (const auto& [kind, n] : kinds) {
      os << " " << kind << "=" << n;
      (kind == "none" ? real : fake) += n;
    }
    os << "\n";
  }
  os << "total=" << total << " real=" << real << " fake=" << fake;
  if (real > 0) {
    os.setf(std::ios::fixed);
    os.precision(2);
    os << " fake:real=" << static_cast<double>(fake) / static_cast<double>(real) << ":1";
  }
  os << "\n";
  return os.str();
}

SynthSummary synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  const auto segments = synth_segments(cfg);
  std::error_code ec;
  fs::create_directories(out_dir / "segments", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "segments").string() + ": " + ec.message());
  SynthSummary summary;
  std::vector<ManifestEntry> manifest;
  for (const auto& seg : segments) {
    const std::string rel = "segments/" + seg.id + ".ffsg";
    write_segment(out_dir / rel, seg.data);
    manifest.push_back({rel, seg.label, seg.split, seg.identity, seg.artifact});
    ++summary.counts[seg.split][seg.artifact.kind];
    ++summary.total;
  }
  check_identity_disjoint(manifest);
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return summary;
}

}  // namespace ff
