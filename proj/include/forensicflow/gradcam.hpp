#pragma once

// Grad-CAM over a captured convolutional activation, JET colouring and
// overlay, and a binary PPM writer.
//
// JET breakpoints, for v in [0,1]:
//   r = clamp(1.5 - |4v - 3|, 0, 1)
//   g = clamp(1.5 - |4v - 2|, 0, 1)
//   b = clamp(1.5 - |4v - 1|, 0, 1)
// so jet(0) = (0, 0, 0.5), jet(0.5) = (0.5, 1, 0.5), jet(1) = (0.5, 0, 0).

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "forensicflow/config.hpp"
#include "forensicflow/model.hpp"

namespace ff {

struct Heatmap {
  std::size_t h = 0, w = 0;
  std::vector<double> values;  // h*w in [0,1]
  std::size_t source_h = 0, source_w = 0;
  /// Set when ReLU(sum_c w_c A_c) is identically zero; values are then all 0.
  bool degenerate = false;
  double at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
};

/// Heatmap from one frame's activation A [C,h,w] and gradient G [C,h,w]:
/// w_c = mean_hw G_c, raw = ReLU(sum_c w_c A_c), min-max normalised, then
/// bilinearly upsampled to out_h x out_w.
Heatmap cam_from_maps(const std::vector<double>& activation, const std::vector<double>& gradient, std::size_t c,
                      std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w);

/// Half-pixel-centred bilinear resize with edge clamping.
std::vector<double> bilinear_upsample(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t out_h,
                                      std::size_t out_w);

/// One heatmap per frame of a segment. frames [K,3,H,W] normalised, freq_maps
/// [K,1,H,W]. The score is the logit of the predicted class (negated when the
/// prediction is "real"). Gradients left on parameters are cleared.
std::vector<Heatmap> grad_cam(ForensicFlow& model, const Tensor& frames, const Tensor& freq_maps,
                              const GradCamConfig& cfg = {});

std::array<double, 3> jet(double v);

/// (1 - alpha) * frame + alpha * jet(heatmap); frame [3,H,W] in [0,1].
Tensor overlay(const Tensor& frame, const Heatmap& heatmap, double alpha = 0.5);

/// Fraction of heatmap mass inside the box (x, y, w, h).
double mass_inside(const Heatmap& heatmap, const std::array<int, 4>& bbox);

/// Binary PPM (P6, maxval 255); values in [0,1] are rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
std::string cam_file_name(const std::string& segment_id, std::size_t frame);

}  // namespace ff
