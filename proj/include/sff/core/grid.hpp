#ifndef SFF_CORE_GRID_HPP
#define SFF_CORE_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sff {

/// Image domain extent. The domain is {0..width-1} x {0..height-1}.
struct ImageDims {
  int width = 0;
  int height = 0;

  std::size_t area() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool operator==(const ImageDims&) const = default;
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_dims(ImageDims dims) {
  if (dims.width <= 0 || dims.height <= 0) {
    throw InputError("image dimensions must be positive, got " +
                     std::to_string(dims.width) + "x" +
                     std::to_string(dims.height));
  }
}

inline void require_same_dims(ImageDims a, ImageDims b, const char* what) {
  if (!(a == b)) {
    throw InputError(std::string(what) + ": dimension mismatch (" +
                     std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}

/// Integer pixel position.
struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

/// Dense row-major 2D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  explicit Grid(ImageDims dims, const T& init = T{})
      : dims_(dims), data_(dims.area(), init) {
    check_dims(dims);
  }
  Grid(int width, int height, const T& init = T{})
      : Grid(ImageDims{width, height}, init) {}

  ImageDims dims() const { return dims_; }
  int width() const { return dims_.width; }
  int height() const { return dims_.height; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < dims_.width && y < dims_.height;
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * dims_.width + x;
  }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Border-replicating access.
  const T& clamped(int x, int y) const {
    x = std::clamp(x, 0, dims_.width - 1);
    y = std::clamp(y, 0, dims_.height - 1);
    return data_[index(x, y)];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Grid&) const = default;

 private:
  ImageDims dims_{};
  std::vector<T> data_;
};

using GrayImage = Grid<double>;
using Mask = Grid<std::uint8_t>;

/// Multi-channel image, channels stored as separate planes.
struct ColorImage {
  std::vector<GrayImage> channels;

  ColorImage() = default;
  explicit ColorImage(GrayImage gray) { channels.push_back(std::move(gray)); }
  ColorImage(ImageDims dims, int n) : channels(n, GrayImage(dims)) {}

  ImageDims dims() const { return channels.at(0).dims(); }
  int channel_count() const { return static_cast<int>(channels.size()); }
};

inline GrayImage to_gray(const ColorImage& img) {
  if (img.channels.empty()) throw InputError("empty image");
  if (img.channels.size() == 1) return img.channels[0];
  if (img.channels.size() != 3) {
    throw InputError("expected 1 or 3 channels, got " +
                     std::to_string(img.channels.size()));
  }
  GrayImage out(img.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299 * img.channels[0][i] + 0.587 * img.channels[1][i] +
             0.114 * img.channels[2][i];
  }
  return out;
}

/// Round-to-nearest domain membership used for every in/out-of-image test.
inline bool in_domain(double x, double y, ImageDims dims) {
  const long rx = std::lround(x);
  const long ry = std::lround(y);
  return std::isfinite(x) && std::isfinite(y) && rx >= 0 && ry >= 0 &&
         rx < dims.width && ry < dims.height;
}

/// Bilinear sample with border replication.
template <typename G>
double sample_bilinear(const G& img, double x, double y) {
  const int w = img.width();
  const int h = img.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
  const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

/// Horizontal mirror: x -> width-1-x.
template <typename T>
Grid<T> flip_horizontal(const Grid<T>& g) {
  Grid<T> out(g.dims());
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) out(g.width() - 1 - x, y) = g(x, y);
  }
  return out;
}

inline ColorImage flip_horizontal(const ColorImage& img) {
  ColorImage out;
  for (const auto& c : img.channels) out.channels.push_back(flip_horizontal(c));
  return out;
}

}  // namespace sff

#endif  // SFF_CORE_GRID_HPP
