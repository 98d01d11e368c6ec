#ifndef SFF_CONSISTENCY_HPP
#define SFF_CONSISTENCY_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/parallel.hpp"

namespace sff {

struct ConsistencyConfig {
  double tau_c = 1.0;
  int region_min = 100;
  double region_similarity = 0.35;

  void validate() const {
    if (!(tau_c > 0)) throw InputError("tau_c must be positive");
    if (region_min < 1) throw InputError("region_min must be >= 1");
    if (!(region_similarity >= 0)) throw InputError("region_similarity must be >= 0");
  }
};

/// dual: reverse field has reference I1r (time and view swapped).
/// multi: reverse field has reference I0r (view swap only).
enum class ConsistencyMode { dual, multi };

struct FilteredField {
  SceneFlowField field;
  Grid<double> error;  // max component disagreement; infinite where no evidence
};

/// Reverse-field pixel and the vector it should hold if both fields agree.
struct ReverseLookup {
  Vec2 position;
  SceneFlowVector expected;
};

inline ReverseLookup reverse_lookup(Pixel p, const SceneFlowVector& s, ConsistencyMode mode) {
  if (mode == ConsistencyMode::dual) {
    return {Vec2(p.x + s.u - s.d1, p.y + s.v), {-s.u + s.d1 - s.d0, -s.v, s.d1, s.d0}};
  }
  return {Vec2(p.x - s.d0, p.y), {s.u - s.d1 + s.d0, s.v, s.d0, s.d1}};
}

inline double component_error(const SceneFlowVector& a, const SceneFlowVector& b) {
  return std::max({std::abs(a.u - b.u), std::abs(a.v - b.v), std::abs(a.d0 - b.d0),
                   std::abs(a.d1 - b.d1)});
}

/// Keeps a vector iff the reverse vector at the (rounded) mapped position
/// agrees with it within tau_c in every component.
inline FilteredField consistency_filter(const SceneFlowField& forward, const SceneFlowField& reverse,
                                        ConsistencyMode mode, const ConsistencyConfig& cfg = {}) {
  cfg.validate();
  require_same_dims(forward.dims(), reverse.dims(), "consistency_filter");
  FilteredField out{SceneFlowField(forward.dims()),
                    Grid<double>(forward.dims(), std::numeric_limits<double>::infinity())};
  parallel_for(0, forward.height(), [&](int y) {
    for (int x = 0; x < forward.width(); ++x) {
      if (!forward.is_valid(x, y)) continue;
      const SceneFlowVector& s = forward.vectors(x, y);
      const ReverseLookup look = reverse_lookup({x, y}, s, mode);
      if (!in_domain(look.position.x(), look.position.y(), forward.dims())) continue;
      const int qx = static_cast<int>(std::lround(look.position.x()));
      const int qy = static_cast<int>(std::lround(look.position.y()));
      if (!reverse.is_valid(qx, qy)) continue;
      const double err = component_error(look.expected, reverse.vectors(qx, qy));
      out.error(x, y) = err;
      if (err <= cfg.tau_c) out.field.set(x, y, s);
    }
  });
  return out;
}

inline bool similar_vectors(const SceneFlowVector& a, const SceneFlowVector& b, double tol) {
  return component_error(a, b) <= tol;
}

/// Connected regions of valid pixels, linking 4-neighbours whose vectors
/// agree within `similarity` per component. Returns region ids (-1 for
/// invalid pixels) and fills `sizes`.
inline Grid<int> similarity_regions(const SceneFlowField& field, double similarity,
                                    std::vector<int>& sizes) {
  Grid<int> label(field.dims(), -1);
  sizes.clear();
  std::vector<Pixel> stack;
  constexpr std::array<Pixel, 4> nb{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  for (int y = 0; y < field.height(); ++y) {
    for (int x = 0; x < field.width(); ++x) {
      if (!field.is_valid(x, y) || label(x, y) >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      int count = 0;
      label(x, y) = id;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        ++count;
        for (const Pixel d : nb) {
          const int nx = p.x + d.x, ny = p.y + d.y;
          if (!field.valid.contains(nx, ny) || !field.is_valid(nx, ny) || label(nx, ny) >= 0)
            continue;
          if (!similar_vectors(field.vectors(p.x, p.y), field.vectors(nx, ny), similarity))
            continue;
          label(nx, ny) = id;
          stack.push_back({nx, ny});
        }
      }
      sizes.push_back(count);
    }
  }
  return label;
}

/// Removes every similarity region smaller than region_min pixels.
inline SceneFlowField region_filter(const SceneFlowField& field, const ConsistencyConfig& cfg = {}) {
  cfg.validate();
  std::vector<int> sizes;
  const Grid<int> label = similarity_regions(field, cfg.region_similarity, sizes);
  SceneFlowField out = field;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] >= 0 && sizes[label[i]] < cfg.region_min) out.valid[i] = 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semi-global matching

struct SgmConfig {
  int max_disparity = 64;
  int p1 = 7;
  int p2 = 86;
  double lr_tolerance = 1.0;
};

struct DisparityMap {
  Grid<double> disparity;
  Mask valid;
};

constexpr int kCensusRadius = 2;
constexpr int kCensusBits = (2 * kCensusRadius + 1) * (2 * kCensusRadius + 1) - 1;

/// 5x5 census signature (border replicated): bit set where the neighbour is
/// darker than the centre.
inline Grid<std::uint32_t> census_transform(const GrayImage& img) {
  Grid<std::uint32_t> out(img.dims(), 0);
  parallel_for(0, img.height(), [&](int y) {
    for (int x = 0; x < img.width(); ++x) {
      const double c = img(x, y);
      std::uint32_t bits = 0;
      for (int dy = -kCensusRadius; dy <= kCensusRadius; ++dy) {
        for (int dx = -kCensusRadius; dx <= kCensusRadius; ++dx) {
          if (dx == 0 && dy == 0) continue;
          bits = (bits << 1) | (img.clamped(x + dx, y + dy) < c ? 1u : 0u);
        }
      }
      out(x, y) = bits;
    }
  });
  return out;
}

/// One-path aggregation over a sequence of `n` pixels with `nd` disparity
/// costs each (row-major, pixel by pixel):
///   L(p,d) = C(p,d) + min(L(p-1,d), L(p-1,d+-1) + P1, min_k L(p-1,k) + P2)
///            - min_k L(p-1,k)
inline std::vector<int> sgm_aggregate_path(std::span<const std::uint8_t> costs, int nd, int p1,
                                           int p2) {
  const std::size_t n = costs.size() / nd;
  std::vector<int> L(costs.size());
  for (int d = 0; d < nd; ++d) L[d] = costs[d];
  for (std::size_t i = 1; i < n; ++i) {
    const int* prev = &L[(i - 1) * nd];
    const int prev_min = *std::min_element(prev, prev + nd);
    for (int d = 0; d < nd; ++d) {
      int best = prev[d];
      if (d > 0) best = std::min(best, prev[d - 1] + p1);
      if (d + 1 < nd) best = std::min(best, prev[d + 1] + p1);
      best = std::min(best, prev_min + p2);
      L[i * nd + d] = costs[i * nd + d] + best - prev_min;
    }
  }
  return L;
}

/// Census / 8-path SGM disparity of the left image with left-right check and
/// parabolic sub-pixel refinement.
inline DisparityMap sgm_disparity(const GrayImage& left, const GrayImage& right,
                                  const SgmConfig& cfg = {}) {
  require_same_dims(left.dims(), right.dims(), "sgm_disparity");
  const int w = left.width(), h = left.height();
  const int nd = std::clamp(cfg.max_disparity, 0, w - 1) + 1;
  const auto cl = census_transform(left);
  const auto cr = census_transform(right);
  const std::size_t vol = static_cast<std::size_t>(w) * h * nd;
  std::vector<std::uint8_t> cost(vol);
  auto at = [&](int x, int y) { return (static_cast<std::size_t>(y) * w + x) * nd; };
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      for (int d = 0; d < nd; ++d) {
        cost[at(x, y) + d] = x - d < 0 ? kCensusBits
                                       : static_cast<std::uint8_t>(
                                             std::popcount(cl(x, y) ^ cr(x - d, y)));
      }
    }
  });

  std::vector<std::uint32_t> sum(vol, 0);
  constexpr std::array<Pixel, 8> dirs{
      {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}}};
  std::vector<std::uint8_t> line;
  for (const Pixel r : dirs) {
    // Every path starts at a pixel whose predecessor lies outside the image.
    std::vector<Pixel> starts;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (!left.contains(x - r.x, y - r.y)) starts.push_back({x, y});
    for (const Pixel s : starts) {
      line.clear();
      std::vector<std::size_t> offs;
      for (int x = s.x, y = s.y; x >= 0 && y >= 0 && x < w && y < h; x += r.x, y += r.y) {
        offs.push_back(at(x, y));
        line.insert(line.end(), cost.begin() + at(x, y), cost.begin() + at(x, y) + nd);
      }
      const auto L = sgm_aggregate_path(line, nd, cfg.p1, cfg.p2);
      for (std::size_t i = 0; i < offs.size(); ++i)
        for (int d = 0; d < nd; ++d) sum[offs[i] + d] += L[i * nd + d];
    }
  }

  Grid<int> dl(left.dims(), 0), dr(left.dims(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto* s = &sum[at(x, y)];
      dl(x, y) = static_cast<int>(std::min_element(s, s + nd) - s);
      // Right-view winner: left pixel x + d at disparity d.
      std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
      int arg = 0;
      for (int d = 0; d < nd && x + d < w; ++d) {
        const std::uint32_t c = sum[at(x + d, y) + d];
        if (c < best) {
          best = c;
          arg = d;
        }
      }
      dr(x, y) = arg;
    }
  }

  DisparityMap out{Grid<double>(left.dims(), 0.0), Mask(left.dims(), 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int d = dl(x, y);
      if (x - d < 0) continue;
      if (std::abs(d - dr(x - d, y)) > cfg.lr_tolerance) continue;
      double sub = d;
      if (d > 0 && d + 1 < nd) {
        const double c0 = sum[at(x, y) + d - 1], c1 = sum[at(x, y) + d],
                     c2 = sum[at(x, y) + d + 1];
        const double denom = c0 - 2 * c1 + c2;
        if (denom > 0) sub = d + 0.5 * (c0 - c2) / denom;
      }
      out.disparity(x, y) = sub;
      out.valid(x, y) = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeds

/// Disparity-only evidence at t on the reference grid.
struct GeometryGrid {
  Grid<double> d0;
  Grid<double> error;
  Mask valid;
};

/// Union of the surviving vectors' d0 and matched d0 values confirmed by the
/// auxiliary disparity map within tau_c.
inline GeometryGrid merge_disparity(const FilteredField& filtered, const DisparityMap& aux,
                                    const SceneFlowField& matched, const ConsistencyConfig& cfg = {}) {
  cfg.validate();
  const ImageDims dims = filtered.field.dims();
  require_same_dims(dims, aux.disparity.dims(), "merge_disparity aux");
  require_same_dims(dims, matched.dims(), "merge_disparity matched");
  GeometryGrid g{Grid<double>(dims, 0.0),
                 Grid<double>(dims, std::numeric_limits<double>::infinity()), Mask(dims, 0)};
  for (std::size_t i = 0; i < dims.area(); ++i) {
    if (filtered.field.valid[i]) {
      g.d0[i] = filtered.field.vectors[i].d0;
      g.error[i] = filtered.error[i];
      g.valid[i] = 1;
    } else if (aux.valid[i] && matched.valid[i] && matched.vectors[i].d0 > 0) {
      const double diff = std::abs(matched.vectors[i].d0 - aux.disparity[i]);
      if (diff <= cfg.tau_c) {
        g.d0[i] = matched.vectors[i].d0;
        g.error[i] = diff;
        g.valid[i] = 1;
      }
    }
  }
  return g;
}

struct Seed {
  Pixel pixel;
  SceneFlowVector vector;
  double error = 0.0;
};

struct GeometrySeed {
  Pixel pixel;
  double d0 = 0.0;
  double error = 0.0;
};

struct SeedSet {
  std::vector<Seed> full;
  std::vector<GeometrySeed> geometry;
};

constexpr int kSparsifyBlock = 3;

/// Lowest-error valid pixel of every non-overlapping 3x3 block; ties go to
/// the first pixel in raster order. Blocks are visited in raster order.
template <typename ValidFn, typename ErrorFn, typename EmitFn>
void for_each_block_argmin(ImageDims dims, ValidFn valid, ErrorFn error, EmitFn emit) {
  for (int by = 0; by < dims.height; by += kSparsifyBlock) {
    for (int bx = 0; bx < dims.width; bx += kSparsifyBlock) {
      int best_x = -1, best_y = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int y = by; y < std::min(by + kSparsifyBlock, dims.height); ++y) {
        for (int x = bx; x < std::min(bx + kSparsifyBlock, dims.width); ++x) {
          if (!valid(x, y)) continue;
          const double e = error(x, y);
          if (best_x < 0 || e < best) {
            best = e;
            best_x = x;
            best_y = y;
          }
        }
      }
      if (best_x >= 0) emit(best_x, best_y);
    }
  }
}

inline std::vector<Seed> sparsify(const SceneFlowField& field, const Grid<double>& error) {
  require_same_dims(field.dims(), error.dims(), "sparsify");
  std::vector<Seed> seeds;
  for_each_block_argmin(
      field.dims(), [&](int x, int y) { return field.is_valid(x, y); },
      [&](int x, int y) { return error(x, y); },
      [&](int x, int y) { seeds.push_back({{x, y}, field.vectors(x, y), error(x, y)}); });
  return seeds;
}

inline std::vector<GeometrySeed> sparsify(const GeometryGrid& g) {
  std::vector<GeometrySeed> seeds;
  for_each_block_argmin(
      g.d0.dims(), [&](int x, int y) { return g.valid(x, y) != 0; },
      [&](int x, int y) { return g.error(x, y); },
      [&](int x, int y) { seeds.push_back({{x, y}, g.d0(x, y), g.error(x, y)}); });
  return seeds;
}

inline SeedSet make_seeds(const FilteredField& filtered, const GeometryGrid& geometry) {
  return {sparsify(filtered.field, filtered.error), sparsify(geometry)};
}

/// Text export: `x y u v d0 d1 err` per full seed, `x y d0` per geometry seed.
inline void write_seeds(const std::string& full_path, const std::string& geometry_path,
                        const SeedSet& seeds) {
  std::ofstream f(full_path);
  if (!f) throw std::runtime_error("cannot write " + full_path);
  f.precision(17);
  for (const auto& s : seeds.full) {
    f << s.pixel.x << ' ' << s.pixel.y << ' ' << s.vector.u << ' ' << s.vector.v << ' '
      << s.vector.d0 << ' ' << s.vector.d1 << ' ' << s.error << '\n';
  }
  std::ofstream g(geometry_path);
  if (!g) throw std::runtime_error("cannot write " + geometry_path);
  g.precision(17);
  for (const auto& s : seeds.geometry) g << s.pixel.x << ' ' << s.pixel.y << ' ' << s.d0 << '\n';
}

}  // namespace sff

#endif  // SFF_CONSISTENCY_HPP
