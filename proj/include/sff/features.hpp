#ifndef SFF_FEATURES_HPP
#define SFF_FEATURES_HPP

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sff/core/grid.hpp"
#include "sff/core/image_ops.hpp"
#include "sff/core/parallel.hpp"

namespace sff {

// ---------------------------------------------------------------------------
// Walsh-Hadamard features

constexpr int kWhtPatch = 8;
constexpr int kWhtDefaultLength = 16;

namespace detail {

/// 8x8 Hadamard matrix with rows in sequency order, scaled to be orthonormal.
inline const std::array<std::array<double, kWhtPatch>, kWhtPatch>& sequency_hadamard() {
  static const auto table = [] {
    std::array<std::array<double, kWhtPatch>, kWhtPatch> natural{};
    for (int i = 0; i < kWhtPatch; ++i) {
      for (int j = 0; j < kWhtPatch; ++j) {
        natural[i][j] = (std::popcount(static_cast<unsigned>(i & j)) % 2 ? -1.0 : 1.0) /
                        std::sqrt(static_cast<double>(kWhtPatch));
      }
    }
    auto sign_changes = [](const std::array<double, kWhtPatch>& row) {
      int n = 0;
      for (int j = 1; j < kWhtPatch; ++j) n += (row[j] > 0) != (row[j - 1] > 0);
      return n;
    };
    std::array<std::array<double, kWhtPatch>, kWhtPatch> ordered{};
    for (const auto& row : natural) ordered[sign_changes(row)] = row;
    return ordered;
  }();
  return table;
}

/// Coefficient (row, col) pairs in low-to-high combined sequency order.
inline const std::vector<std::pair<int, int>>& wht_coefficient_order() {
  static const auto order = [] {
    std::vector<std::pair<int, int>> o;
    for (int i = 0; i < kWhtPatch; ++i)
      for (int j = 0; j < kWhtPatch; ++j) o.emplace_back(i, j);
    std::stable_sort(o.begin(), o.end(), [](auto a, auto b) {
      if (a.first + a.second != b.first + b.second)
        return a.first + a.second < b.first + b.second;
      return a.first < b.first;
    });
    return o;
  }();
  return order;
}

}  // namespace detail

/// Sequency-ordered 2D WHT of an 8x8 patch (row-major); the first `length`
/// coefficients of the combined sequency order are written to `out`.
inline void wht_transform(const std::array<double, 64>& patch, std::span<double> out) {
  const auto& H = detail::sequency_hadamard();
  std::array<double, 64> rows{};  // patch * H^T
  for (int r = 0; r < kWhtPatch; ++r) {
    for (int j = 0; j < kWhtPatch; ++j) {
      double s = 0.0;
      for (int c = 0; c < kWhtPatch; ++c) s += patch[r * kWhtPatch + c] * H[j][c];
      rows[r * kWhtPatch + j] = s;
    }
  }
  const auto& order = detail::wht_coefficient_order();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto [i, j] = order[k];
    double s = 0.0;
    for (int r = 0; r < kWhtPatch; ++r) s += H[i][r] * rows[r * kWhtPatch + j];
    out[k] = s;
  }
}

/// WHT descriptor of the 8x8 patch at (x, y), sampled every `step` pixels at
/// offsets -3..4 with border replication.
inline void wht_descriptor(const GrayImage& img, int x, int y, int step,
                           std::span<double> out) {
  std::array<double, 64> patch{};
  for (int r = 0; r < kWhtPatch; ++r) {
    for (int c = 0; c < kWhtPatch; ++c) {
      patch[r * kWhtPatch + c] = img.clamped(x + (c - 3) * step, y + (r - 3) * step);
    }
  }
  wht_transform(patch, out);
}

/// Per-pixel WHT coefficients, `length` values per pixel.
struct WhtField {
  ImageDims dims;
  int length = kWhtDefaultLength;
  std::vector<double> coeffs;

  std::span<const double> at(int x, int y) const {
    return {coeffs.data() + (static_cast<std::size_t>(y) * dims.width + x) * length,
            static_cast<std::size_t>(length)};
  }
};

inline WhtField wht_descriptor_field(const GrayImage& img, int length = kWhtDefaultLength,
                                     int step = 1) {
  if (img.empty()) throw InputError("wht_descriptor_field: empty image");
  if (length < 1 || length > 64) throw InputError("WHT length must be in [1, 64]");
  WhtField f{img.dims(), length, std::vector<double>(img.size() * length)};
  parallel_for(0, img.height(), [&](int y) {
    for (int x = 0; x < img.width(); ++x) {
      wht_descriptor(img, x, y, step,
                     {f.coeffs.data() + img.index(x, y) * length,
                      static_cast<std::size_t>(length)});
    }
  });
  return f;
}

// ---------------------------------------------------------------------------
// Dense SIFT-like descriptors projected onto three principal components

constexpr int kSiftCells = 4;
constexpr int kSiftBins = 8;
constexpr int kSiftCellSize = 4;
constexpr int kSiftDims = kSiftCells * kSiftCells * kSiftBins;
constexpr std::array<int, kSiftCells> kSiftCellCenters = {-6, -2, 2, 6};
/// Half-width of the triangular spatial weight around a cell center.
constexpr int kSiftTap = kSiftCellSize - 1;
constexpr double kSiftClip = 0.2;
constexpr double kSiftScale = 255.0;

using Descriptor3 = std::array<double, 3>;
using DescriptorField = Grid<Descriptor3>;
using SiftVector = Eigen::Matrix<double, kSiftDims, 1>;
using PcaBasis = Eigen::Matrix<double, 3, kSiftDims>;

inline double sift_spatial_weight(int offset) {
  return std::max(0.0, 1.0 - std::abs(offset) / static_cast<double>(kSiftCellSize));
}

inline int sift_index(int cx, int cy, int bin) { return (cy * kSiftCells + cx) * kSiftBins + bin; }

/// Gradient magnitude and soft orientation-bin split at one pixel. Gradients
/// are central differences over +-step with border replication.
struct OrientedGradient {
  double magnitude = 0.0;
  int bin = 0;
  double frac = 0.0;  // share of bin + 1
};

inline OrientedGradient oriented_gradient(const GrayImage& img, int x, int y, int step) {
  const double gx = 0.5 * (img.clamped(x + step, y) - img.clamped(x - step, y));
  const double gy = 0.5 * (img.clamped(x, y + step) - img.clamped(x, y - step));
  OrientedGradient g;
  g.magnitude = std::sqrt(gx * gx + gy * gy);
  if (g.magnitude == 0.0) return g;
  double theta = std::atan2(gy, gx);
  if (theta < 0.0) theta += 2.0 * std::numbers::pi;
  double pos = theta * kSiftBins / (2.0 * std::numbers::pi);
  int b = static_cast<int>(std::floor(pos));
  g.frac = pos - b;
  g.bin = ((b % kSiftBins) + kSiftBins) % kSiftBins;
  return g;
}

/// SIFT normalization: unit length, clip, renormalize, byte scaling.
inline void normalize_sift(SiftVector& v) {
  const double n = v.norm();
  if (n <= 1e-12) {
    v.setZero();
    return;
  }
  v /= n;
  v = v.cwiseMin(kSiftClip);
  const double n2 = v.norm();
  if (n2 > 1e-12) v *= kSiftScale / n2;
}

/// Histogram machinery for one image at one sampling step. Binned gradient
/// magnitudes are filtered with the separable triangular cell weight on a
/// padded domain, so each descriptor entry is a single lookup.
class SiftExtractor {
 public:
  SiftExtractor(const GrayImage& img, int step) : dims_(img.dims()), step_(step) {
    pad_ = (kSiftCellCenters.back() + kSiftTap) * step;
    const int pw = dims_.width + 2 * pad_;
    const int ph = dims_.height + 2 * pad_;
    // Gradients on the image domain; padded cells replicate the border.
    std::vector<OrientedGradient> grads(img.size());
    for (int y = 0; y < dims_.height; ++y)
      for (int x = 0; x < dims_.width; ++x)
        grads[img.index(x, y)] = oriented_gradient(img, x, y, step);
    for (auto& m : maps_) m = GrayImage(pw, ph);
    for (int y = 0; y < ph; ++y) {
      const int sy = std::clamp(y - pad_, 0, dims_.height - 1);
      for (int x = 0; x < pw; ++x) {
        const int sx = std::clamp(x - pad_, 0, dims_.width - 1);
        const auto& g = grads[img.index(sx, sy)];
        if (g.magnitude == 0.0) continue;
        maps_[g.bin](x, y) += g.magnitude * (1.0 - g.frac);
        maps_[(g.bin + 1) % kSiftBins](x, y) += g.magnitude * g.frac;
      }
    }
    for (auto& m : maps_) m = filter(m);
  }

  SiftVector descriptor(int x, int y) const {
    SiftVector v;
    for (int cy = 0; cy < kSiftCells; ++cy) {
      const int py = y + pad_ + kSiftCellCenters[cy] * step_;
      for (int cx = 0; cx < kSiftCells; ++cx) {
        const int px = x + pad_ + kSiftCellCenters[cx] * step_;
        for (int b = 0; b < kSiftBins; ++b) v[sift_index(cx, cy, b)] = maps_[b].clamped(px, py);
      }
    }
    normalize_sift(v);
    return v;
  }

 private:
  GrayImage filter(const GrayImage& m) const {
    GrayImage tmp(m.dims());
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        double s = 0.0;
        for (int o = -kSiftTap; o <= kSiftTap; ++o)
          s += sift_spatial_weight(o) * m.clamped(x + o * step_, y);
        tmp(x, y) = s;
      }
    }
    GrayImage out(m.dims());
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        double s = 0.0;
        for (int o = -kSiftTap; o <= kSiftTap; ++o)
          s += sift_spatial_weight(o) * tmp.clamped(x, y + o * step_);
        out(x, y) = s;
      }
    }
    return out;
  }

  ImageDims dims_;
  int step_;
  int pad_;
  std::array<GrayImage, kSiftBins> maps_;
};

/// Principal components of reference descriptors sampled at every
/// `stride`-th pixel (linear index). Rows are orthonormal; each row's
/// largest-magnitude entry is positive.
inline PcaBasis compute_pca_basis(const GrayImage& img, int stride = 4) {
  SiftExtractor ex(img, 1);
  std::vector<SiftVector> samples;
  for (std::size_t i = 0; i < img.size(); i += stride) {
    samples.push_back(ex.descriptor(static_cast<int>(i % img.width()),
                                    static_cast<int>(i / img.width())));
  }
  SiftVector mean = SiftVector::Zero();
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Eigen::Matrix<double, kSiftDims, kSiftDims> cov =
      Eigen::Matrix<double, kSiftDims, kSiftDims>::Zero();
  for (const auto& s : samples) cov += (s - mean) * (s - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kSiftDims, kSiftDims>> eig(cov);
  PcaBasis basis;
  for (int k = 0; k < 3; ++k) {
    SiftVector e = eig.eigenvectors().col(kSiftDims - 1 - k);
    Eigen::Index arg = 0;
    e.cwiseAbs().maxCoeff(&arg);
    if (e[arg] < 0) e = -e;
    basis.row(k) = e.transpose();
  }
  return basis;
}

/// Basis for horizontally mirrored images: mirrored descriptors are a fixed
/// permutation of the originals (cell column and orientation reflection), so
/// permuting the basis keeps projections identical at mirrored pixels.
inline PcaBasis mirror_basis(const PcaBasis& basis) {
  PcaBasis out;
  for (int cy = 0; cy < kSiftCells; ++cy)
    for (int cx = 0; cx < kSiftCells; ++cx)
      for (int b = 0; b < kSiftBins; ++b)
        out.col(sift_index(kSiftCells - 1 - cx, cy, (kSiftBins + 4 - b) % kSiftBins)) =
            basis.col(sift_index(cx, cy, b));
  return out;
}

inline void check_basis(const PcaBasis& basis) {
  const Eigen::Matrix3d g = basis * basis.transpose();
  if ((g - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw InputError("PCA basis rows must be orthonormal");
  }
}

/// Dense descriptor field of `img` sampled every `step` pixels.
inline DescriptorField dense_descriptor_field(const GrayImage& img, const PcaBasis& basis,
                                              int step = 1) {
  check_basis(basis);
  SiftExtractor ex(img, step);
  DescriptorField out(img.dims());
  parallel_for(0, img.height(), [&](int y) {
    for (int x = 0; x < img.width(); ++x) {
      const Eigen::Vector3d p = basis * ex.descriptor(x, y);
      out(x, y) = {p[0], p[1], p[2]};
    }
  });
  return out;
}

inline DescriptorField dense_descriptor_field(const ColorImage& img, const PcaBasis& basis,
                                              int step = 1) {
  return dense_descriptor_field(to_gray(img), basis, step);
}

// ---------------------------------------------------------------------------
// Patch matching cost

constexpr int kPatchRadius = 3;  // 7x7 window

inline Descriptor3 sample_descriptor(const DescriptorField& f, double x, double y) {
  const int w = f.width();
  const int h = f.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const auto& a = f(x0, y0);
  const auto& b = f(x1, y0);
  const auto& c = f(x0, y1);
  const auto& d = f(x1, y1);
  Descriptor3 out;
  for (int k = 0; k < 3; ++k) {
    out[k] = (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k]);
  }
  return out;
}

/// Sum over the 7x7 window (samples `step` pixels apart) of the Euclidean
/// distance between A at p+o and B at q+o. A is sampled at integer pixels,
/// B bilinearly; both replicate borders.
inline double patch_cost(const DescriptorField& A, Pixel p, const DescriptorField& B,
                         double qx, double qy, int step = 1) {
  double cost = 0.0;
  for (int j = -kPatchRadius; j <= kPatchRadius; ++j) {
    for (int i = -kPatchRadius; i <= kPatchRadius; ++i) {
      const auto& a = A.clamped(p.x + i * step, p.y + j * step);
      const auto b = sample_descriptor(B, qx + i * step, qy + j * step);
      const double d0 = a[0] - b[0];
      const double d1 = a[1] - b[1];
      const double d2 = a[2] - b[2];
      cost += std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
    }
  }
  return cost;
}

/// Full-resolution sample offsets of the matching window at a given step.
inline std::vector<Pixel> patch_offsets(int step) {
  std::vector<Pixel> o;
  for (int j = -kPatchRadius; j <= kPatchRadius; ++j)
    for (int i = -kPatchRadius; i <= kPatchRadius; ++i) o.push_back({i * step, j * step});
  return o;
}

// ---------------------------------------------------------------------------
// Descriptor cache: "SFFD", int32 width, height, channels, then row-major
// little-endian float32 values.

namespace detail {
template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw InputError("descriptor cache truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}
}  // namespace detail

inline void write_descriptor_cache(const std::string& path, const DescriptorField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path);
  os.write("SFFD", 4);
  detail::write_le<std::int32_t>(os, f.width());
  detail::write_le<std::int32_t>(os, f.height());
  detail::write_le<std::int32_t>(os, 3);
  for (const auto& d : f)
    for (double v : d) detail::write_le<float>(os, static_cast<float>(v));
}

inline DescriptorField read_descriptor_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SFFD", 4) != 0) throw InputError("not a descriptor cache: " + path);
  const int w = detail::read_le<std::int32_t>(is);
  const int h = detail::read_le<std::int32_t>(is);
  const int c = detail::read_le<std::int32_t>(is);
  if (c != 3) throw InputError("descriptor cache must have 3 channels");
  DescriptorField f(w, h);
  for (auto& d : f)
    for (double& v : d) v = detail::read_le<float>(is);
  return f;
}

}  // namespace sff

#endif  // SFF_FEATURES_HPP
