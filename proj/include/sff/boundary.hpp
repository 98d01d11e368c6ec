#ifndef SFF_BOUNDARY_HPP
#define SFF_BOUNDARY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "sff/core/grid.hpp"
#include "sff/core/image_ops.hpp"
#include "sff/core/parallel.hpp"

namespace sff {

/// Boundary strength in [0, 1] on the reference grid.
struct EdgeMap {
  GrayImage strength;
  ImageDims dims() const { return strength.dims(); }
};

enum class EdgeProvider { precomputed, gradient };

inline constexpr double kEdgeSigma = 1.0;
inline constexpr double kEdgePercentile = 0.99;

/// Loaded boundary map, clamped to [0, 1].
inline EdgeMap precomputed_edges(const GrayImage& map, ImageDims expected) {
  require_same_dims(expected, map.dims(), "edge map");
  EdgeMap e{map};
  for (double& v : e.strength) v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  return e;
}

/// Gradient magnitude of the smoothed image (summed over channels),
/// normalised by its 99th percentile.
inline EdgeMap gradient_edges(const ColorImage& img) {
  const ImageDims dims = img.dims();
  GrayImage mag(dims, 0.0);
  for (const GrayImage& c : img.channels) {
    GrayImage gx, gy;
    image_gradients(gaussian_blur(c, kEdgeSigma), gx, gy);
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] += gx[i] * gx[i] + gy[i] * gy[i];
  }
  for (double& v : mag) v = std::sqrt(v);
  std::vector<double> sorted(mag.begin(), mag.end());
  const auto k = static_cast<std::size_t>(kEdgePercentile * (sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
  const double norm = sorted[k];
  EdgeMap e{GrayImage(dims, 0.0)};
  if (norm > 0) {
    for (std::size_t i = 0; i < mag.size(); ++i) e.strength[i] = std::min(1.0, mag[i] / norm);
  }
  return e;
}

inline EdgeMap gradient_edges(const GrayImage& img) { return gradient_edges(ColorImage(img)); }

inline EdgeMap edge_map(const ColorImage& img, EdgeProvider provider,
                        const GrayImage* precomputed = nullptr) {
  if (provider == EdgeProvider::precomputed) {
    if (precomputed == nullptr) throw InputError("precomputed edge provider needs a map");
    return precomputed_edges(*precomputed, img.dims());
  }
  return gradient_edges(img);
}

// ---------------------------------------------------------------------------
// Geodesic distances

/// Added to every grid step so flat regions still have finite, ordered
/// distances.
inline constexpr double kStepEpsilon = 1e-3;

struct Neighbor {
  int seed = 0;
  double distance = 0.0;
};

/// Nearest-seed labels and per-seed neighbour lists. Each list starts with
/// the seed itself (distance 0) followed by its geodesically closest other
/// seeds in non-decreasing distance.
struct SeedNeighborhood {
  Grid<int> label;          // nearest seed per pixel, -1 if unreachable
  Grid<double> distance;    // geodesic distance to that seed
  std::vector<std::vector<Neighbor>> neighbors;
};

namespace detail {

struct HeapEntry {
  double dist;
  std::uint32_t index;
  int label;
  bool operator>(const HeapEntry& o) const {
    if (dist != o.dist) return dist > o.dist;
    if (label != o.label) return label > o.label;
    return index > o.index;
  }
};

using MinHeap = std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>>;

/// Cost of stepping into pixel i.
inline double step_cost(const EdgeMap& e, std::size_t i) { return e.strength[i] + kStepEpsilon; }

template <typename Visit>
void for_each_neighbor(ImageDims dims, std::uint32_t i, Visit visit) {
  const int x = static_cast<int>(i % dims.width);
  const int y = static_cast<int>(i / dims.width);
  if (x > 0) visit(i - 1);
  if (x + 1 < dims.width) visit(i + 1);
  if (y > 0) visit(i - dims.width);
  if (y + 1 < dims.height) visit(i + dims.width);
}

}  // namespace detail

/// Multi-source Dijkstra: nearest seed (ties to the lower seed id) and its
/// distance for every pixel.
inline void geodesic_labels(const std::vector<Pixel>& seeds, const EdgeMap& edges,
                            Grid<int>& label, Grid<double>& distance) {
  const ImageDims dims = edges.dims();
  label = Grid<int>(dims, -1);
  distance = Grid<double>(dims, std::numeric_limits<double>::infinity());
  detail::MinHeap heap;
  for (int s = 0; s < static_cast<int>(seeds.size()); ++s) {
    const auto i = static_cast<std::uint32_t>(label.index(seeds[s].x, seeds[s].y));
    if (distance[i] == 0.0 && label[i] <= s) continue;
    distance[i] = 0.0;
    label[i] = s;
    heap.push({0.0, i, s});
  }
  while (!heap.empty()) {
    const auto e = heap.top();
    heap.pop();
    if (e.dist != distance[e.index] || e.label != label[e.index]) continue;
    detail::for_each_neighbor(dims, e.index, [&](std::uint32_t j) {
      const double nd = e.dist + detail::step_cost(edges, j);
      if (nd < distance[j] || (nd == distance[j] && e.label < label[j])) {
        distance[j] = nd;
        label[j] = e.label;
        heap.push({nd, j, e.label});
      }
    });
  }
}

/// Geodesic distances from a source pixel to the closest `count` seeds
/// (the source itself first when it is a seed). Exact: every reported
/// distance is the full-grid shortest-path distance.
class SeedExpander {
 public:
  SeedExpander(const EdgeMap& edges, const Grid<int>& seed_at)
      : edges_(&edges),
        seed_at_(&seed_at),
        dist_(edges.dims().area(), std::numeric_limits<double>::infinity()) {}

  std::vector<Neighbor> expand(Pixel source, int count) {
    const ImageDims dims = edges_->dims();
    std::vector<Neighbor> out;
    const auto src = static_cast<std::uint32_t>(source.y * dims.width + source.x);
    touch(src, 0.0);
    detail::MinHeap heap;
    heap.push({0.0, src, 0});
    while (!heap.empty() && static_cast<int>(out.size()) < count) {
      const auto e = heap.top();
      heap.pop();
      if (e.dist != dist_[e.index]) continue;
      const int s = (*seed_at_)[e.index];
      if (s >= 0) out.push_back({s, e.dist});
      detail::for_each_neighbor(dims, e.index, [&](std::uint32_t j) {
        const double nd = e.dist + detail::step_cost(*edges_, j);
        if (nd < dist_[j]) {
          touch(j, nd);
          heap.push({nd, j, 0});
        }
      });
    }
    for (auto i : touched_) dist_[i] = std::numeric_limits<double>::infinity();
    touched_.clear();
    return out;
  }

 private:
  void touch(std::uint32_t i, double d) {
    if (dist_[i] == std::numeric_limits<double>::infinity()) touched_.push_back(i);
    dist_[i] = d;
  }

  const EdgeMap* edges_;
  const Grid<int>* seed_at_;
  std::vector<double> dist_;
  std::vector<std::uint32_t> touched_;
};

inline Grid<int> seed_lookup(const std::vector<Pixel>& seeds, ImageDims dims) {
  Grid<int> at(dims, -1);
  for (int s = 0; s < static_cast<int>(seeds.size()); ++s) {
    if (!at.contains(seeds[s].x, seeds[s].y)) throw InputError("seed outside the edge map");
    if (at(seeds[s].x, seeds[s].y) >= 0) throw InputError("duplicate seed pixel");
    at(seeds[s].x, seeds[s].y) = s;
  }
  return at;
}

/// Nearest-seed labels plus, per seed, the n-1 geodesically closest other
/// seeds. A pixel's neighbourhood is its nearest seed's list.
inline SeedNeighborhood label_and_neighbors(const std::vector<Pixel>& seeds, const EdgeMap& edges,
                                            int n) {
  if (seeds.empty()) throw InputError("label_and_neighbors needs at least one seed");
  if (n < 1) throw InputError("neighbourhood size must be >= 1");
  const Grid<int> at = seed_lookup(seeds, edges.dims());
  SeedNeighborhood nb;
  geodesic_labels(seeds, edges, nb.label, nb.distance);
  nb.neighbors.resize(seeds.size());
  parallel_chunks(0, static_cast<int>(seeds.size()), [&](int lo, int hi) {
    SeedExpander ex(edges, at);
    for (int s = lo; s < hi; ++s) nb.neighbors[s] = ex.expand(seeds[s], n);
  });
  return nb;
}

}  // namespace sff

#endif  // SFF_BOUNDARY_HPP
