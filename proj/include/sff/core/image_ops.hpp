#ifndef SFF_CORE_IMAGE_OPS_HPP
#define SFF_CORE_IMAGE_OPS_HPP

#include <cmath>
#include <numbers>
#include <vector>

#include "sff/core/grid.hpp"

namespace sff {

/// Box-average downsampling by an integer factor; partial border blocks
/// average the pixels they contain.
inline GrayImage area_downsample(const GrayImage& img, int factor) {
  if (factor <= 1) return img;
  const int w = (img.width() + factor - 1) / factor;
  const int h = (img.height() + factor - 1) / factor;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int yy = y * factor; yy < std::min((y + 1) * factor, img.height()); ++yy) {
        for (int xx = x * factor; xx < std::min((x + 1) * factor, img.width()); ++xx) {
          sum += img(xx, yy);
          ++n;
        }
      }
      out(x, y) = sum / n;
    }
  }
  return out;
}

inline double lanczos3(double t) {
  t = std::abs(t);
  if (t < 1e-12) return 1.0;
  if (t >= 3.0) return 0.0;
  const double pt = std::numbers::pi * t;
  return 3.0 * std::sin(pt) * std::sin(pt / 3.0) / (pt * pt);
}

/// Separable Lanczos-3 resampling of `src` to the given dims. Pixel centers
/// are aligned (x_src = (x + 0.5) * scale - 0.5).
inline GrayImage lanczos_resize(const GrayImage& src, ImageDims dims) {
  struct Tap {
    int index;
    double weight;
  };
  auto build = [](int out_n, int in_n) {
    std::vector<std::vector<Tap>> taps(out_n);
    const double scale = static_cast<double>(in_n) / out_n;
    for (int i = 0; i < out_n; ++i) {
      const double c = (i + 0.5) * scale - 0.5;
      const int lo = static_cast<int>(std::floor(c)) - 2;
      double total = 0.0;
      for (int k = lo; k <= lo + 5; ++k) {
        const double wgt = lanczos3(c - k);
        if (wgt == 0.0) continue;
        taps[i].push_back({std::clamp(k, 0, in_n - 1), wgt});
        total += wgt;
      }
      for (auto& t : taps[i]) t.weight /= total;
    }
    return taps;
  };
  const auto tx = build(dims.width, src.width());
  const auto ty = build(dims.height, src.height());
  GrayImage tmp(dims.width, src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < dims.width; ++x) {
      double s = 0.0;
      for (const auto& t : tx[x]) s += t.weight * src(t.index, y);
      tmp(x, y) = s;
    }
  }
  GrayImage out(dims);
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      double s = 0.0;
      for (const auto& t : ty[y]) s += t.weight * tmp(x, t.index);
      out(x, y) = s;
    }
  }
  return out;
}

/// Scale-space smoothing for subsampling factor n: area downsample by n,
/// then Lanczos upsample back to full resolution.
inline GrayImage scale_smooth(const GrayImage& img, int factor) {
  if (factor <= 1) return img;
  return lanczos_resize(area_downsample(img, factor), img.dims());
}

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  GrayImage tmp(img.dims());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.clamped(x + i, y);
      tmp(x, y) = s;
    }
  }
  GrayImage out(img.dims());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.clamped(x, y + i);
      out(x, y) = s;
    }
  }
  return out;
}

/// Central differences in the interior, one-sided at the border (exact for
/// linear images).
inline void image_gradients(const GrayImage& img, GrayImage& gx, GrayImage& gy) {
  const int w = img.width();
  const int h = img.height();
  gx = GrayImage(img.dims());
  gy = GrayImage(img.dims());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (w == 1) {
        gx(x, y) = 0.0;
      } else if (x == 0) {
        gx(x, y) = img(1, y) - img(0, y);
      } else if (x == w - 1) {
        gx(x, y) = img(x, y) - img(x - 1, y);
      } else {
        gx(x, y) = 0.5 * (img(x + 1, y) - img(x - 1, y));
      }
      if (h == 1) {
        gy(x, y) = 0.0;
      } else if (y == 0) {
        gy(x, y) = img(x, 1) - img(x, 0);
      } else if (y == h - 1) {
        gy(x, y) = img(x, y) - img(x, y - 1);
      } else {
        gy(x, y) = 0.5 * (img(x, y + 1) - img(x, y - 1));
      }
    }
  }
}

}  // namespace sff

#endif  // SFF_CORE_IMAGE_OPS_HPP
