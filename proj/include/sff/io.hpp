#ifndef SFF_IO_HPP
#define SFF_IO_HPP

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sff/consistency.hpp"
#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/visibility_masks.hpp"

namespace sff {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw PNG samples, interleaved, row-major.
struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline PngData read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  PngData out;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);  // host-order (little-endian) samples
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  const int per_row = out.width * out.channels;
  for (int y = 0; y < out.height; ++y) {
    for (int i = 0; i < per_row; ++i) {
      std::uint16_t v;
      if (out.bit_depth == 16) std::memcpy(&v, rows[y] + 2 * i, 2);
      else v = rows[y][i];
      out.samples[static_cast<std::size_t>(y) * per_row + i] = v;
    }
  }
  return out;
}

inline void write_png(const std::string& path, const PngData& img) {
  if (img.channels < 1 || img.channels > 4) throw FormatError("unsupported channel count");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw FormatError("bit depth must be 8 or 16");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  const int bytes = img.bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * bytes;
  std::vector<png_byte> buffer(rowbytes * img.height);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<png_byte>(img.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<png_byte>(img.samples[i] & 0xFF);
    } else {
      buffer[i] = static_cast<png_byte>(std::min<std::uint16_t>(img.samples[i], 255));
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(path + ": PNG write failed");
  }
  static constexpr int kColor[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA,
                                   PNG_COLOR_TYPE_RGB, PNG_COLOR_TYPE_RGB_ALPHA};
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, kColor[img.channels - 1],
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Image with values in [0, 255] (16-bit files are rescaled). Alpha dropped.
inline ColorImage read_image(const std::string& path) {
  const PngData p = read_png(path);
  const int c = p.channels == 2 || p.channels == 4 ? p.channels - 1 : p.channels;
  const double scale = p.bit_depth == 16 ? 255.0 / 65535.0 : 1.0;
  ColorImage img(ImageDims{p.width, p.height}, c);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x)
      for (int k = 0; k < c; ++k) img.channels[k](x, y) = p.at(x, y, k) * scale;
  return img;
}

inline void write_gray8(const std::string& path, const GrayImage& img) {
  PngData p{img.width(), img.height(), 1, 8, std::vector<std::uint16_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i)
    p.samples[i] = static_cast<std::uint16_t>(std::clamp(std::lround(img[i]), 0L, 255L));
  write_png(path, p);
}

inline void write_rgb8(const std::string& path, const ColorImage& img) {
  if (img.channel_count() != 3) throw FormatError("write_rgb8 needs 3 channels");
  PngData p{img.dims().width, img.dims().height, 3, 8,
            std::vector<std::uint16_t>(img.dims().area() * 3)};
  for (std::size_t i = 0; i < img.dims().area(); ++i)
    for (int k = 0; k < 3; ++k)
      p.samples[3 * i + k] =
          static_cast<std::uint16_t>(std::clamp(std::lround(img.channels[k][i]), 0L, 255L));
  write_png(path, p);
}

/// Precomputed boundary map: 8-bit gray, strength = value / 255.
inline GrayImage read_edge_png(const std::string& path) {
  const PngData p = read_png(path);
  if (p.channels != 1 || p.bit_depth != 8) throw FormatError(path + ": edge map must be 8-bit gray");
  GrayImage g(ImageDims{p.width, p.height});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = p.samples[i] / 255.0;
  return g;
}

// ---------------------------------------------------------------------------
// KITTI 16-bit formats

inline constexpr double kKittiDisparityScale = 256.0;
inline constexpr double kKittiFlowScale = 64.0;
inline constexpr double kKittiFlowOffset = 32768.0;

inline void write_kitti_disparity(const std::string& path, const Grid<double>& d, const Mask& valid) {
  require_same_dims(d.dims(), valid.dims(), "write_kitti_disparity");
  PngData p{d.width(), d.height(), 1, 16, std::vector<std::uint16_t>(d.size(), 0)};
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!valid[i] || !(d[i] > 0)) continue;
    p.samples[i] = static_cast<std::uint16_t>(
        std::clamp(std::lround(d[i] * kKittiDisparityScale), 1L, 65535L));
  }
  write_png(path, p);
}

inline DisparityMap read_kitti_disparity(const std::string& path) {
  const PngData p = read_png(path);
  if (p.bit_depth != 16 || p.channels != 1)
    throw FormatError(path + ": disparity PNG must be 16-bit single channel");
  const ImageDims dims{p.width, p.height};
  DisparityMap m{Grid<double>(dims, 0.0), Mask(dims, 0)};
  for (std::size_t i = 0; i < dims.area(); ++i) {
    if (p.samples[i] == 0) continue;
    m.disparity[i] = p.samples[i] / kKittiDisparityScale;
    m.valid[i] = 1;
  }
  return m;
}

struct FlowMap {
  Grid<double> u, v;
  Mask valid;
};

inline std::uint16_t encode_flow(double f) {
  return static_cast<std::uint16_t>(
      std::clamp(std::lround(f * kKittiFlowScale + kKittiFlowOffset), 0L, 65535L));
}

inline void write_kitti_flow(const std::string& path, const FlowMap& f) {
  require_same_dims(f.u.dims(), f.v.dims(), "write_kitti_flow");
  require_same_dims(f.u.dims(), f.valid.dims(), "write_kitti_flow");
  PngData p{f.u.width(), f.u.height(), 3, 16, std::vector<std::uint16_t>(f.u.size() * 3, 0)};
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    if (!f.valid[i]) continue;
    p.samples[3 * i] = encode_flow(f.u[i]);
    p.samples[3 * i + 1] = encode_flow(f.v[i]);
    p.samples[3 * i + 2] = 1;
  }
  write_png(path, p);
}

inline FlowMap read_kitti_flow(const std::string& path) {
  const PngData p = read_png(path);
  if (p.bit_depth != 16 || p.channels != 3)
    throw FormatError(path + ": flow PNG must be 16-bit with 3 channels");
  const ImageDims dims{p.width, p.height};
  FlowMap f{Grid<double>(dims, 0.0), Grid<double>(dims, 0.0), Mask(dims, 0)};
  for (std::size_t i = 0; i < dims.area(); ++i) {
    if (p.samples[3 * i + 2] == 0) continue;
    f.u[i] = (p.samples[3 * i] - kKittiFlowOffset) / kKittiFlowScale;
    f.v[i] = (p.samples[3 * i + 1] - kKittiFlowOffset) / kKittiFlowScale;
    f.valid[i] = 1;
  }
  return f;
}

/// Writes d0, d1 and flow of a field as KITTI PNGs (disp_0, disp_1, flow).
inline void write_kitti_field(const std::string& prefix, const SceneFlowField& f) {
  Grid<double> d0(f.dims()), d1(f.dims());
  FlowMap flow{Grid<double>(f.dims()), Grid<double>(f.dims()), f.valid};
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    d0[i] = f.vectors[i].d0;
    d1[i] = f.vectors[i].d1;
    flow.u[i] = f.vectors[i].u;
    flow.v[i] = f.vectors[i].v;
  }
  write_kitti_disparity(prefix + "_disp_0.png", d0, f.valid);
  write_kitti_disparity(prefix + "_disp_1.png", d1, f.valid);
  write_kitti_flow(prefix + "_flow.png", flow);
}

inline SceneFlowField read_kitti_field(const std::string& prefix) {
  const DisparityMap d0 = read_kitti_disparity(prefix + "_disp_0.png");
  const DisparityMap d1 = read_kitti_disparity(prefix + "_disp_1.png");
  const FlowMap fl = read_kitti_flow(prefix + "_flow.png");
  require_same_dims(d0.disparity.dims(), d1.disparity.dims(), "read_kitti_field");
  require_same_dims(d0.disparity.dims(), fl.u.dims(), "read_kitti_field");
  SceneFlowField f(d0.disparity.dims());
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    if (!(d0.valid[i] && d1.valid[i] && fl.valid[i])) continue;
    f.vectors[i] = {fl.u[i], fl.v[i], d0.disparity[i], d1.disparity[i]};
    f.valid[i] = 1;
  }
  return f;
}

// ---------------------------------------------------------------------------
// PFM

/// Single-channel little-endian PFM, bottom row first.
inline void write_pfm(const std::string& path, const Grid<double>& g) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "Pf\n" << g.width() << ' ' << g.height() << "\n-1.0\n";
  for (int y = g.height() - 1; y >= 0; --y) {
    for (int x = 0; x < g.width(); ++x) {
      const float v = static_cast<float>(g(x, y));
      f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

inline Grid<double> read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  f >> magic >> w >> h >> scale;
  f.get();
  if (magic != "Pf" || w <= 0 || h <= 0) throw FormatError(path + ": not a single-channel PFM");
  if (scale > 0) throw FormatError(path + ": big-endian PFM not supported");
  Grid<double> g(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float v;
      if (!f.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(path + ": truncated");
      g(x, y) = v;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Calibration and debug output

/// Plain text: `focal cx cy baseline`.
inline CameraRig read_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  double focal, cx, cy, baseline;
  if (!(f >> focal >> cx >> cy >> baseline))
    throw FormatError(path + ": expected `focal cx cy baseline`");
  return CameraRig(focal, Vec2(cx, cy), baseline);
}

inline void write_calibration(const std::string& path, const CameraRig& rig) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  f << rig.focal_length_px << ' ' << rig.principal_point.x() << ' ' << rig.principal_point.y()
    << ' ' << rig.baseline_m << '\n';
}

/// Visibility of one view: 0 visible, 128 out of bounds, 255 occluded.
inline void write_visibility_png(const std::string& path, const VisibilityMasks& m, TargetView v) {
  GrayImage g(m.dims(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (m.occluded(v)[i]) g[i] = 255;
    else if (m.out_of_bounds(v)[i]) g[i] = 128;
  }
  write_gray8(path, g);
}

}  // namespace sff

#endif  // SFF_IO_HPP
