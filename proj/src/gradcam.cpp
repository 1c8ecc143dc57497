#include "forensicflow/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "forensicflow/error.hpp"

namespace ff {

std::vector<double> bilinear_upsample(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t out_h,
                                      std::size_t out_w) {
  if (src.size() != h * w || h == 0 || w == 0) throw ShapeError("bilinear_upsample: source size mismatch");
  std::vector<double> out(out_h * out_w);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bottom = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      out[y * out_w + x] = top * (1 - ty) + bottom * ty;
    }
  }
  return out;
}

Heatmap cam_from_maps(const std::vector<double>& activation, const std::vector<double>& gradient, std::size_t c,
                      std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w) {
  const std::size_t hw = h * w;
  if (activation.size() != c * hw || gradient.size() != c * hw) throw ShapeError("cam_from_maps: size mismatch");
  std::vector<double> raw(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double weight = 0.0;
    for (std::size_t i = 0; i < hw; ++i) weight += gradient[ch * hw + i];
    weight /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) raw[i] += weight * activation[ch * hw + i];
  }
  for (auto& v : raw) v = std::max(v, 0.0);
  Heatmap hm;
  hm.source_h = h;
  hm.source_w = w;
  hm.h = out_h;
  hm.w = out_w;
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= 0.0) {
    hm.degenerate = true;
    hm.values.assign(out_h * out_w, 0.0);
    return hm;
  }
  // A constant positive map normalises to all ones.
  for (auto& v : raw) v = hi > lo ? (v - lo) / (hi - lo) : 1.0;
  hm.values = bilinear_upsample(raw, h, w, out_h, out_w);
  for (auto& v : hm.values) v = std::clamp(v, 0.0, 1.0);
  return hm;
}

std::vector<Heatmap> grad_cam(ForensicFlow& model, const Tensor& frames, const Tensor& freq_maps,
                              const GradCamConfig& cfg) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("grad_cam expects frames [K,3,H,W], got " + shape_str(frames.shape()));
  }
  const std::size_t k = frames.dim(0), H = frames.dim(2), W = frames.dim(3);
  const auto target = resolve_layer_path(model.registry(), cfg.target_layer);
  ActivationCapture capture(target);
  Tensor activation;
  std::vector<double> grads;
  {
    Tape tape(Precision::f32);
    TapeScope scope(tape);
    // Tracking the input puts the whole forward on the tape even when every
    // parameter is frozen.
    Tensor input = frames.detach();
    input.set_requires_grad(true);
    const ForwardContext ctx{false, nullptr, &capture};
    const auto out = model.forward(reshape(input, {1, k, 3, H, W}),
                                   reshape(freq_maps, {1, k, 1, freq_maps.dim(2), freq_maps.dim(3)}), ctx);
    if (capture.captured().empty()) throw ConfigError("layer '" + target + "' produced no activation");
    const double sign = out.probs[0] >= 0.5 ? 1.0 : -1.0;
    tape.backward(sum(scale(out.logits, sign)));
    activation = capture.captured().front();
    if (activation.rank() != 4) throw ConfigError("layer '" + target + "' is not a 4-D activation");
    if (activation.has_grad()) {
      const auto g = activation.grad();
      grads.assign(g.begin(), g.end());
    } else {
      grads.assign(activation.numel(), 0.0);
    }
  }
  model.registry().clear_grads();
  const std::size_t c = activation.dim(1), h = activation.dim(2), w = activation.dim(3), per = c * h * w;
  const auto a = activation.data();
  std::vector<Heatmap> maps;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<double> af(a.begin() + static_cast<long>(f * per), a.begin() + static_cast<long>((f + 1) * per));
    std::vector<double> gf(grads.begin() + static_cast<long>(f * per), grads.begin() + static_cast<long>((f + 1) * per));
    maps.push_back(cam_from_maps(af, gf, c, h, w, H, W));
  }
  return maps;
}

std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [&](double centre) { return std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

Tensor overlay(const Tensor& frame, const Heatmap& heatmap, double alpha) {
  if (frame.rank() != 3 || frame.dim(0) != 3 || frame.dim(1) != heatmap.h || frame.dim(2) != heatmap.w) {
    throw ShapeError("overlay: frame " + shape_str(frame.shape()) + " does not match heatmap " +
                     std::to_string(heatmap.h) + "x" + std::to_string(heatmap.w));
  }
  const std::size_t hw = heatmap.h * heatmap.w;
  const auto px = frame.data();
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < hw; ++i) {
    const auto colour = jet(heatmap.values[i]);
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = (1.0 - alpha) * px[c * hw + i] + alpha * colour[c];
  }
  return Tensor(frame.shape(), std::move(out));
}

double mass_inside(const Heatmap& heatmap, const std::array<int, 4>& bbox) {
  double total = 0.0, inside = 0.0;
  const auto [bx, by, bw, bh] = bbox;
  for (std::size_t y = 0; y < heatmap.h; ++y) {
    for (std::size_t x = 0; x < heatmap.w; ++x) {
      const double v = heatmap.at(y, x);
      total += v;
      const int xi = static_cast<int>(x), yi = static_cast<int>(y);
      if (xi >= bx && xi < bx + bw && yi >= by && yi < by + bh) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm expects [3,H,W]");
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  const auto px = image.data();
  std::vector<char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        row[x * 3 + c] = static_cast<char>(std::lround(std::clamp(px[c * hw + y * w + x], 0.0, 1.0) * 255.0));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string cam_file_name(const std::string& segment_id, std::size_t frame) {
  return segment_id + "_f" + std::to_string(frame) + "_cam.ppm";
}

}  // namespace ff
