#ifndef SFF_KNN_HPP
#define SFF_KNN_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "sff/core/grid.hpp"

namespace sff {

struct KnnResult {
  Pixel pixel;
  double distance_sq = 0.0;
};

/// Exact k-nearest-neighbour search over fixed-length feature vectors (L2).
/// Equal distances are ordered by the entry's linear pixel index.
class KdTree {
 public:
  KdTree() = default;
  KdTree(int dim, std::vector<double> points, std::vector<Pixel> pixels, int image_width)
      : dim_(dim), points_(std::move(points)), pixels_(std::move(pixels)), width_(image_width) {
    order_.resize(pixels_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!order_.empty()) root_ = build(0, static_cast<int>(order_.size()));
  }

  std::size_t size() const { return pixels_.size(); }

  std::vector<KnnResult> query(std::span<const double> q, int k) const {
    std::vector<Candidate> best;
    if (root_ >= 0 && k > 0) search(root_, q, k, best);
    std::vector<KnnResult> out;
    for (const auto& c : best) out.push_back({pixels_[c.entry], c.dist});
    return out;
  }

 private:
  static constexpr int kLeafSize = 8;

  struct Node {
    int begin = 0, end = 0;  // leaf range into order_
    int split_dim = -1;
    double split = 0.0;
    int left = -1, right = -1;
  };

  struct Candidate {
    double dist;
    std::int64_t key;  // linear pixel index
    int entry;
    bool operator<(const Candidate& o) const {
      return dist != o.dist ? dist < o.dist : key < o.key;
    }
  };

  double coord(int entry, int d) const { return points_[static_cast<std::size_t>(entry) * dim_ + d]; }
  std::int64_t key(int entry) const {
    return static_cast<std::int64_t>(pixels_[entry].y) * width_ + pixels_[entry].x;
  }

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin > kLeafSize) {
      int best_dim = 0;
      double best_spread = -1.0;
      for (int d = 0; d < dim_; ++d) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int i = begin; i < end; ++i) {
          lo = std::min(lo, coord(order_[i], d));
          hi = std::max(hi, coord(order_[i], d));
        }
        if (hi - lo > best_spread) {
          best_spread = hi - lo;
          best_dim = d;
        }
      }
      if (best_spread > 0.0) {
        const int mid = (begin + end) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) { return coord(a, best_dim) < coord(b, best_dim); });
        node.split_dim = best_dim;
        node.split = coord(order_[mid], best_dim);
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
      }
    }
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void search(int idx, std::span<const double> q, int k, std::vector<Candidate>& best) const {
    const Node& n = nodes_[idx];
    if (n.split_dim < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int e = order_[i];
        double d = 0.0;
        for (int c = 0; c < dim_; ++c) {
          const double t = q[c] - coord(e, c);
          d += t * t;
        }
        Candidate cand{d, key(e), e};
        if (static_cast<int>(best.size()) < k) {
          best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        } else if (cand < best.back()) {
          best.pop_back();
          best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        }
      }
      return;
    }
    const double diff = q[n.split_dim] - n.split;
    const int first = diff < 0.0 ? n.left : n.right;
    const int second = diff < 0.0 ? n.right : n.left;
    search(first, q, k, best);
    // Ties may hide a lower-index entry on the far side, so only prune on a
    // strictly larger bound.
    if (static_cast<int>(best.size()) < k || diff * diff <= best.back().dist) {
      search(second, q, k, best);
    }
  }

  int dim_ = 0;
  std::vector<double> points_;
  std::vector<Pixel> pixels_;
  int width_ = 0;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Descriptor index over the pixels of one image. An epipolar index keeps one
/// tree per row and answers queries only from the requested row.
class KnnIndex {
 public:
  KnnIndex() = default;

  /// entries: pixel positions; features: dim values per entry, same order.
  KnnIndex(int dim, std::span<const Pixel> pixels, std::span<const double> features,
           int image_width, bool epipolar)
      : dim_(dim), epipolar_(epipolar) {
    if (!epipolar) {
      all_ = KdTree(dim, {features.begin(), features.end()}, {pixels.begin(), pixels.end()},
                    image_width);
      return;
    }
    std::map<int, std::pair<std::vector<double>, std::vector<Pixel>>> rows;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      auto& r = rows[pixels[i].y];
      r.first.insert(r.first.end(), features.begin() + i * dim, features.begin() + (i + 1) * dim);
      r.second.push_back(pixels[i]);
    }
    for (auto& [y, r] : rows) {
      by_row_.emplace(y, KdTree(dim, std::move(r.first), std::move(r.second), image_width));
    }
  }

  bool epipolar() const { return epipolar_; }
  int dim() const { return dim_; }

  std::vector<KnnResult> query(std::span<const double> q, int k, int row = 0) const {
    if (!epipolar_) return all_.query(q, k);
    auto it = by_row_.find(row);
    if (it == by_row_.end()) return {};
    return it->second.query(q, k);
  }

 private:
  int dim_ = 0;
  bool epipolar_ = false;
  KdTree all_;
  std::map<int, KdTree> by_row_;
};

}  // namespace sff

#endif  // SFF_KNN_HPP
