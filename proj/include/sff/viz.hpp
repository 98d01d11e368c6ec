// Colour coding for flow, disparity and evaluation error maps.
#ifndef SFF_VIZ_HPP
#define SFF_VIZ_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/eval.hpp"

namespace sff {

namespace detail {

using Rgb = std::array<double, 3>;

/// Middlebury colour wheel: 55 hues over RY, YG, GC, CB, BM, MR segments.
inline const std::vector<Rgb>& color_wheel() {
  static const std::vector<Rgb> wheel = [] {
    std::vector<Rgb> w;
    const int segs[6] = {15, 6, 4, 11, 13, 6};
    for (int i = 0; i < segs[0]; ++i) w.push_back({255, 255.0 * i / segs[0], 0});
    for (int i = 0; i < segs[1]; ++i) w.push_back({255 - 255.0 * i / segs[1], 255, 0});
    for (int i = 0; i < segs[2]; ++i) w.push_back({0, 255, 255.0 * i / segs[2]});
    for (int i = 0; i < segs[3]; ++i) w.push_back({0, 255 - 255.0 * i / segs[3], 255});
    for (int i = 0; i < segs[4]; ++i) w.push_back({255.0 * i / segs[4], 0, 255});
    for (int i = 0; i < segs[5]; ++i) w.push_back({255, 0, 255 - 255.0 * i / segs[5]});
    return w;
  }();
  return wheel;
}

inline void put(ColorImage& img, std::size_t i, const Rgb& c) {
  for (int k = 0; k < 3; ++k) img.channels[k][i] = c[k];
}

}  // namespace detail

/// Flow as hue (direction) and saturation (magnitude / max_magnitude).
/// Non-positive max_magnitude uses the largest valid magnitude. Invalid is black.
inline ColorImage flow_to_color(const SceneFlowField& f, double max_magnitude = 0.0) {
  if (max_magnitude <= 0.0) {
    for (std::size_t i = 0; i < f.vectors.size(); ++i)
      if (f.valid[i]) max_magnitude = std::max(max_magnitude, std::hypot(f.vectors[i].u, f.vectors[i].v));
    if (max_magnitude <= 0.0) max_magnitude = 1.0;
  }
  const auto& wheel = detail::color_wheel();
  const int n = static_cast<int>(wheel.size());
  ColorImage out(f.dims(), 3);
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    if (!f.valid[i]) continue;
    const double u = f.vectors[i].u / max_magnitude, v = f.vectors[i].v / max_magnitude;
    const double rad = std::min(1.0, std::hypot(u, v));
    const double a = std::atan2(-v, -u) / std::numbers::pi;
    const double fk = (a + 1.0) / 2.0 * (n - 1);
    const int k0 = static_cast<int>(std::floor(fk)), k1 = (k0 + 1) % n;
    const double t = fk - k0;
    detail::Rgb c;
    for (int k = 0; k < 3; ++k) {
      const double col = ((1 - t) * wheel[k0][k] + t * wheel[k1][k]) / 255.0;
      c[k] = 255.0 * (1 - rad * (1 - col));
    }
    detail::put(out, i, c);
  }
  return out;
}

/// Disparity through a blue-to-red ramp; max_disparity <= 0 uses the field maximum.
inline ColorImage disparity_to_color(const Grid<double>& d, const Mask& valid, double max_disparity = 0.0) {
  if (max_disparity <= 0.0) {
    for (std::size_t i = 0; i < d.size(); ++i)
      if (valid[i]) max_disparity = std::max(max_disparity, d[i]);
    if (max_disparity <= 0.0) max_disparity = 1.0;
  }
  static constexpr std::array<detail::Rgb, 5> ramp{
      {{0, 0, 128}, {0, 128, 255}, {128, 255, 128}, {255, 128, 0}, {128, 0, 0}}};
  ColorImage out(d.dims(), 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!valid[i]) continue;
    const double s = std::clamp(d[i] / max_disparity, 0.0, 1.0) * (ramp.size() - 1);
    const std::size_t k = std::min(static_cast<std::size_t>(s), ramp.size() - 2);
    const double t = s - k;
    detail::Rgb c;
    for (int j = 0; j < 3; ++j) c[j] = (1 - t) * ramp[k][j] + t * ramp[k + 1][j];
    detail::put(out, i, c);
  }
  return out;
}

/// Error map in the KITTI devkit style: per pixel the error is normalised by
/// the outlier rule (min of err/3 and err/(5% of |gt|)), then binned on a
/// logarithmic blue (accurate) to red (outlier) scale. Pixels without ground
/// truth are black; missing estimates count with the worst colour.
inline ColorImage error_to_color(const std::vector<double>& error, const std::vector<double>& gt_magnitude,
                                 const Mask& has_gt, const Mask& has_estimate, ImageDims dims) {
  struct Bin {
    double upper;
    detail::Rgb color;
  };
  static constexpr std::array<Bin, 10> bins{{{0.0625, {49, 54, 149}},
                                             {0.125, {69, 117, 180}},
                                             {0.25, {116, 173, 209}},
                                             {0.5, {171, 217, 233}},
                                             {1.0, {224, 243, 248}},
                                             {2.0, {254, 224, 144}},
                                             {4.0, {253, 174, 97}},
                                             {8.0, {244, 109, 67}},
                                             {16.0, {215, 48, 39}},
                                             {INFINITY, {165, 0, 38}}}};
  ColorImage out(dims, 3);
  for (std::size_t i = 0; i < dims.area(); ++i) {
    if (!has_gt[i]) continue;
    double e = INFINITY;
    if (has_estimate[i]) {
      e = error[i] / kOutlierAbsolutePx;
      if (gt_magnitude[i] > 0) e = std::min(e, error[i] / (kOutlierRelative * gt_magnitude[i]));
    }
    for (const Bin& b : bins)
      if (e < b.upper || b.upper == INFINITY) {
        detail::put(out, i, b.color);
        break;
      }
  }
  return out;
}

/// Scene flow error: the worst normalised error over D1, D2 and Fl.
inline ColorImage scene_flow_error_to_color(const SceneFlowField& est, const SceneFlowField& gt) {
  require_same_dims(est.dims(), gt.dims(), "scene_flow_error_to_color");
  const std::size_t n = gt.dims().area();
  std::vector<double> err(n, 0.0), mag(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!gt.valid[i] || !est.valid[i]) continue;
    const auto& e = est.vectors[i];
    const auto& g = gt.vectors[i];
    // Pick the component with the largest error relative to its own outlier bound.
    const std::array<std::pair<double, double>, 3> parts{{{std::abs(e.d0 - g.d0), std::abs(g.d0)},
                                                          {std::abs(e.d1 - g.d1), std::abs(g.d1)},
                                                          {std::hypot(e.u - g.u, e.v - g.v), std::hypot(g.u, g.v)}}};
    double worst = -1;
    for (const auto& [er, gm] : parts) {
      const double s = std::min(er / kOutlierAbsolutePx, gm > 0 ? er / (kOutlierRelative * gm) : INFINITY);
      if (s > worst) {
        worst = s;
        err[i] = er;
        mag[i] = gm;
      }
    }
  }
  return error_to_color(err, mag, gt.valid, est.valid, gt.dims());
}

}  // namespace sff

#endif
