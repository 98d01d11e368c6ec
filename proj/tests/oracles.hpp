// Independent reference implementations used only by the tests. They favour
// the most literal formulation over speed and share no code paths with the
// library beyond plain data types.
#ifndef SFF_TESTS_ORACLES_HPP
#define SFF_TESTS_ORACLES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "sff/sff.hpp"

namespace oracle {

using namespace sff;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Geometry

inline Vec3 backproject(double x, double y, double d, double f, double cx, double cy, double b) {
  const double z = f * b / d;
  return {(x - cx) / f * z, (y - cy) / f * z, z};
}

inline std::array<double, 3> project(const Vec3& X, double f, double cx, double cy, double b) {
  return {f * X.x() / X.z() + cx, f * X.y() / X.z() + cy, f * b / X.z()};
}

// ---------------------------------------------------------------------------
// Walsh-Hadamard: Walsh function k in sequency order is the Hadamard row at
// bit_reverse(gray(k)).

inline int bit_reverse3(int v) { return ((v & 1) << 2) | (v & 2) | ((v >> 2) & 1); }

inline double walsh(int k, int i) {
  const int h = bit_reverse3(k ^ (k >> 1));
  int parity = 0;
  for (int t = h & i; t; t >>= 1) parity ^= t & 1;
  return (parity ? -1.0 : 1.0) / std::sqrt(8.0);
}

/// First `length` coefficients of the 2D transform, diagonals of constant
/// i + j visited with increasing i.
inline std::vector<double> wht(const std::array<double, 64>& patch, int length) {
  std::vector<double> out;
  for (int s = 0; s <= 14 && static_cast<int>(out.size()) < length; ++s) {
    for (int i = 0; i <= 7 && static_cast<int>(out.size()) < length; ++i) {
      const int j = s - i;
      if (j < 0 || j > 7) continue;
      double c = 0;
      for (int r = 0; r < 8; ++r)
        for (int q = 0; q < 8; ++q) c += walsh(i, r) * walsh(j, q) * patch[r * 8 + q];
      out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense descriptor, one pixel at a time

inline double clamped(const GrayImage& img, int x, int y) {
  return img(std::clamp(x, 0, img.width() - 1), std::clamp(y, 0, img.height() - 1));
}

/// Soft-binned gradient magnitude of orientation bin `bin` at a pixel.
inline double binned_gradient(const GrayImage& img, int x, int y, int step, int bin) {
  x = std::clamp(x, 0, img.width() - 1);
  y = std::clamp(y, 0, img.height() - 1);
  const double gx = (clamped(img, x + step, y) - clamped(img, x - step, y)) / 2;
  const double gy = (clamped(img, x, y + step) - clamped(img, x, y - step)) / 2;
  const double m = std::hypot(gx, gy);
  if (m == 0) return 0;
  double a = std::atan2(gy, gx);
  if (a < 0) a += 2 * std::numbers::pi;
  const double pos = a / (2 * std::numbers::pi / 8);
  const int lo = static_cast<int>(std::floor(pos)) % 8;
  const double frac = pos - std::floor(pos);
  if (bin == lo) return m * (1 - frac);
  if (bin == (lo + 1) % 8) return m * frac;
  return 0;
}

/// 128-dimensional descriptor: 4x4 cells centred at -6, -2, 2, 6 (times
/// step), 8 bins, separable triangle weight 1 - |o|/4 over o in -3..3.
inline Eigen::VectorXd sift(const GrayImage& img, int x, int y, int step) {
  static constexpr int centres[4] = {-6, -2, 2, 6};
  Eigen::VectorXd v(128);
  for (int cy = 0; cy < 4; ++cy)
    for (int cx = 0; cx < 4; ++cx)
      for (int b = 0; b < 8; ++b) {
        double s = 0;
        for (int oy = -3; oy <= 3; ++oy)
          for (int ox = -3; ox <= 3; ++ox) {
            const double w = (1 - std::abs(ox) / 4.0) * (1 - std::abs(oy) / 4.0);
            s += w * binned_gradient(img, x + (centres[cx] + ox) * step,
                                     y + (centres[cy] + oy) * step, step, b);
          }
        v[(cy * 4 + cx) * 8 + b] = s;
      }
  const double n = v.norm();
  if (n <= 1e-12) return Eigen::VectorXd::Zero(128);
  v /= n;
  for (int i = 0; i < 128; ++i) v[i] = std::min(v[i], 0.2);
  const double n2 = v.norm();
  if (n2 > 1e-12) v *= 255.0 / n2;
  return v;
}

inline Descriptor3 descriptor(const GrayImage& img, const PcaBasis& basis, int x, int y,
                              int step) {
  const Eigen::VectorXd v = sift(img, x, y, step);
  Descriptor3 d{};
  for (int k = 0; k < 3; ++k) d[k] = basis.row(k).dot(v);
  return d;
}

/// Bilinear sample, border replicated, written out corner by corner.
inline Descriptor3 bilinear(const DescriptorField& f, double x, double y) {
  x = std::min(std::max(x, 0.0), f.width() - 1.0);
  y = std::min(std::max(y, 0.0), f.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, f.width() - 1), y1 = std::min(y0 + 1, f.height() - 1);
  const double ax = x - x0, ay = y - y0;
  Descriptor3 out{};
  for (int k = 0; k < 3; ++k) {
    out[k] = f(x0, y0)[k] * (1 - ax) * (1 - ay) + f(x1, y0)[k] * ax * (1 - ay) +
             f(x0, y1)[k] * (1 - ax) * ay + f(x1, y1)[k] * ax * ay;
  }
  return out;
}

inline double patch_cost(const DescriptorField& A, int px, int py, const DescriptorField& B,
                         double qx, double qy, int step) {
  double c = 0;
  for (int j = -3; j <= 3; ++j)
    for (int i = -3; i <= 3; ++i) {
      const int ax = std::clamp(px + i * step, 0, A.width() - 1);
      const int ay = std::clamp(py + j * step, 0, A.height() - 1);
      const Descriptor3 b = bilinear(B, qx + i * step, qy + j * step);
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (A(ax, ay)[k] - b[k]) * (A(ax, ay)[k] - b[k]);
      c += std::sqrt(s);
    }
  return c;
}

// ---------------------------------------------------------------------------
// Matching cost: five explicit terms with the visibility branches.

struct CostInputs {
  const DescriptorField* ref;
  std::array<const DescriptorField*, 5> views;  // next_left, right, next_right, prev_left, prev_right
  bool multi;
  const VisibilityMasks* masks;
  double occ = 10000, oob = 10000, penalty = 1e6;
};

inline double scene_flow_cost(const CostInputs& in, int px, int py, const SceneFlowVector& s,
                              const CameraRig& rig, int step) {
  if (!(s.d0 > 0 && s.d1 > 0)) return kInf;
  struct T {
    bool defined;
    double x, y;
  };
  std::vector<T> targets = {{true, px + s.u, py + s.v},
                            {true, px - s.d0, static_cast<double>(py)},
                            {true, px + s.u - s.d1, py + s.v}};
  if (in.multi) {
    const double f = rig.focal_length_px, b = rig.baseline_m;
    const double cx = rig.principal_point.x(), cy = rig.principal_point.y();
    const Vec3 X0 = backproject(px, py, s.d0, f, cx, cy, b);
    const Vec3 X1 = backproject(px + s.u, py + s.v, s.d1, f, cx, cy, b);
    const Vec3 Xp = 2 * X0 - X1;
    if (Xp.z() > 0) {
      const auto p = project(Xp, f, cx, cy, b);
      targets.push_back({true, p[0], p[1]});
      targets.push_back({true, p[0] - p[2], p[1]});
    } else {
      targets.push_back({false, 0, 0});
      targets.push_back({false, 0, 0});
    }
  }
  const int w = in.ref->width(), h = in.ref->height();
  double total = 0;
  for (std::size_t v = 0; v < targets.size(); ++v) {
    const T& t = targets[v];
    const bool inside = t.defined && std::lround(t.x) >= 0 && std::lround(t.x) < w &&
                        std::lround(t.y) >= 0 && std::lround(t.y) < h;
    if (in.masks) {
      if (in.masks->occ[v](px, py)) {
        total += in.occ;
        continue;
      }
      if (in.masks->oob[v](px, py)) {
        total += inside ? in.penalty : in.oob;
        continue;
      }
      if (!inside) {
        total += in.penalty;
        continue;
      }
    } else if (!t.defined) {
      return kInf;
    }
    total += patch_cost(*in.ref, px, py, *in.views[v], t.x, t.y, step);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Nearest neighbours by exhaustive scan (ties: lowest linear index).

inline std::vector<Pixel> knn_scan(const std::vector<Pixel>& pixels, const std::vector<double>& feats,
                                   int dim, const std::vector<double>& q, int k, int width) {
  std::vector<std::pair<std::pair<double, long>, Pixel>> all;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double d = 0;
    for (int c = 0; c < dim; ++c) d += (feats[i * dim + c] - q[c]) * (feats[i * dim + c] - q[c]);
    all.push_back({{d, static_cast<long>(pixels[i].y) * width + pixels[i].x}, pixels[i]});
  }
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<Pixel> out;
  for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i) out.push_back(all[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Region filter by breadth-first flood fill with 8-connectivity excluded.

inline Mask region_survivors(const SceneFlowField& f, double tol, int min_size) {
  const int w = f.width(), h = f.height();
  Grid<int> seen(f.dims(), 0);
  Mask keep(f.dims(), 0);
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (!f.valid(x0, y0) || seen(x0, y0)) continue;
      std::deque<Pixel> q{{x0, y0}};
      std::vector<Pixel> region;
      seen(x0, y0) = 1;
      while (!q.empty()) {
        const Pixel p = q.front();
        q.pop_front();
        region.push_back(p);
        const int nx[4] = {p.x - 1, p.x + 1, p.x, p.x};
        const int ny[4] = {p.y, p.y, p.y - 1, p.y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          if (!f.valid(nx[k], ny[k]) || seen(nx[k], ny[k])) continue;
          const auto& a = f.vectors(p.x, p.y);
          const auto& b = f.vectors(nx[k], ny[k]);
          if (std::abs(a.u - b.u) > tol || std::abs(a.v - b.v) > tol ||
              std::abs(a.d0 - b.d0) > tol || std::abs(a.d1 - b.d1) > tol)
            continue;
          seen(nx[k], ny[k]) = 1;
          q.push_back({nx[k], ny[k]});
        }
      }
      if (static_cast<int>(region.size()) >= min_size)
        for (const Pixel p : region) keep(p.x, p.y) = 1;
    }
  return keep;
}

// ---------------------------------------------------------------------------
// One SGM path: literal recurrence with explicit minima.

inline std::vector<std::vector<int>> sgm_path(const std::vector<std::vector<int>>& C, int p1,
                                              int p2) {
  const int n = static_cast<int>(C.size()), nd = static_cast<int>(C[0].size());
  std::vector<std::vector<int>> L(n, std::vector<int>(nd));
  L[0] = C[0];
  for (int i = 1; i < n; ++i) {
    int m = std::numeric_limits<int>::max();
    for (int k = 0; k < nd; ++k) m = std::min(m, L[i - 1][k]);
    for (int d = 0; d < nd; ++d) {
      int best = L[i - 1][d];
      if (d - 1 >= 0) best = std::min(best, L[i - 1][d - 1] + p1);
      if (d + 1 < nd) best = std::min(best, L[i - 1][d + 1] + p1);
      best = std::min(best, m + p2);
      L[i][d] = C[i][d] + best - m;
    }
  }
  return L;
}

// ---------------------------------------------------------------------------
// Block argmin, brute force.

inline std::vector<Pixel> block_argmin(const Mask& valid, const Grid<double>& err) {
  std::vector<Pixel> out;
  for (int by = 0; by < valid.height(); by += 3)
    for (int bx = 0; bx < valid.width(); bx += 3) {
      std::vector<std::pair<std::pair<double, int>, Pixel>> cands;
      for (int y = by; y < by + 3 && y < valid.height(); ++y)
        for (int x = bx; x < bx + 3 && x < valid.width(); ++x)
          if (valid(x, y)) cands.push_back({{err(x, y), y * valid.width() + x}, {x, y}});
      if (cands.empty()) continue;
      out.push_back(std::min_element(cands.begin(), cands.end(), [](auto& a, auto& b) {
                      return a.first < b.first;
                    })->second);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Geodesic distance: array-scan Dijkstra (no heap), entering pixel i costs
// strength_i + eps.

inline std::vector<double> dijkstra(const EdgeMap& e, Pixel src) {
  const int w = e.dims().width, h = e.dims().height, n = w * h;
  std::vector<double> d(n, kInf);
  std::vector<char> done(n, 0);
  d[src.y * w + src.x] = 0;
  for (int it = 0; it < n; ++it) {
    int u = -1;
    for (int i = 0; i < n; ++i)
      if (!done[i] && (u < 0 || d[i] < d[u])) u = i;
    if (u < 0 || d[u] == kInf) break;
    done[u] = 1;
    const int ux = u % w, uy = u / w;
    const int nx[4] = {ux - 1, ux + 1, ux, ux};
    const int ny[4] = {uy, uy, uy - 1, uy + 1};
    for (int k = 0; k < 4; ++k) {
      if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
      const int v = ny[k] * w + nx[k];
      const double nd = d[u] + e.strength[v] + kStepEpsilon;
      if (nd < d[v]) d[v] = nd;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Visibility by exhaustive pairwise comparison.

struct TargetOracle {
  bool defined = false;
  double x = 0, y = 0, depth = 0;
};

inline TargetOracle target(int view, int x, int y, const SceneFlowVector& s, const CameraRig& rig) {
  if (!(s.d0 > 0 && s.d1 > 0)) return {};
  const double fb = rig.focal_length_px * rig.baseline_m;
  switch (view) {
    case 0:
      return {true, x + s.u, y + s.v, fb / s.d1};
    case 1:
      return {true, x - s.d0, static_cast<double>(y), fb / s.d0};
    case 2:
      return {true, x + s.u - s.d1, y + s.v, fb / s.d1};
    default: {
      const double f = rig.focal_length_px, b = rig.baseline_m;
      const double cx = rig.principal_point.x(), cy = rig.principal_point.y();
      const Vec3 X0 = backproject(x, y, s.d0, f, cx, cy, b);
      const Vec3 X1 = backproject(x + s.u, y + s.v, s.d1, f, cx, cy, b);
      const Vec3 Xp = 2 * X0 - X1;
      if (!(Xp.z() > 0)) return {};
      const auto p = project(Xp, f, cx, cy, b);
      return {true, view == 3 ? p[0] : p[0] - p[2], p[1], Xp.z()};
    }
  }
}

inline VisibilityMasks visibility(const SceneFlowField& f, const CameraRig& rig) {
  const ImageDims dims = f.dims();
  VisibilityMasks m(dims);
  const int n = static_cast<int>(dims.area());
  for (int v = 0; v < 5; ++v) {
    std::vector<TargetOracle> t(n);
    std::vector<char> inside(n, 0);
    for (int i = 0; i < n; ++i) {
      if (!f.valid[i]) continue;
      t[i] = target(v, i % dims.width, i / dims.width, f.vectors[i], rig);
      const long rx = std::lround(t[i].x), ry = std::lround(t[i].y);
      inside[i] = t[i].defined && rx >= 0 && ry >= 0 && rx < dims.width && ry < dims.height;
      if (!inside[i]) m.oob[v][i] = 1;
    }
    for (int i = 0; i < n; ++i) {
      if (!inside[i]) continue;
      for (int j = 0; j < n; ++j) {
        if (j == i || !inside[j]) continue;
        if (std::lround(t[j].x) != std::lround(t[i].x) || std::lround(t[j].y) != std::lround(t[i].y))
          continue;
        if (t[j].depth < t[i].depth - kDepthTieTolerance) {
          m.occ[v][i] = 1;
          break;
        }
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Weighted least squares through the pseudo-inverse of the full design.

inline Eigen::VectorXd wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const std::vector<double>& w) {
  Eigen::MatrixXd A = X;
  Eigen::VectorXd b = y;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    A.row(i) *= std::sqrt(w[i]);
    b[i] *= std::sqrt(w[i]);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sinv = svd.singularValues();
  for (Eigen::Index i = 0; i < sinv.size(); ++i)
    sinv[i] = sinv[i] > 1e-12 * svd.singularValues()[0] ? 1.0 / sinv[i] : 0.0;
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose() * b;
}

// ---------------------------------------------------------------------------
// Evaluation by plain per-pixel counting.

struct Counts {
  int n = 0, est = 0, d1 = 0, d2 = 0, fl = 0, sf = 0;
  double e1 = 0, e2 = 0, efl = 0;
};

inline Counts recount(const SceneFlowField& f, const SceneFlowField& gt, const Mask* only) {
  Counts c;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (!gt.valid(x, y) || (only && !(*only)(x, y))) continue;
      ++c.n;
      if (!f.valid(x, y)) {
        ++c.d1, ++c.d2, ++c.fl, ++c.sf;
        continue;
      }
      ++c.est;
      const auto& a = f.vectors(x, y);
      const auto& g = gt.vectors(x, y);
      const double ed1 = std::abs(a.d0 - g.d0), ed2 = std::abs(a.d1 - g.d1);
      const double efl = std::sqrt((a.u - g.u) * (a.u - g.u) + (a.v - g.v) * (a.v - g.v));
      const bool b1 = ed1 >= 3 && ed1 >= 0.05 * std::abs(g.d0);
      const bool b2 = ed2 >= 3 && ed2 >= 0.05 * std::abs(g.d1);
      const bool bf = efl >= 3 && efl >= 0.05 * std::sqrt(g.u * g.u + g.v * g.v);
      c.d1 += b1, c.d2 += b2, c.fl += bf, c.sf += b1 || b2 || bf;
      c.e1 += ed1, c.e2 += ed2, c.efl += efl;
    }
  return c;
}

// ---------------------------------------------------------------------------
// Test data helpers

inline GrayImage noise_image(ImageDims dims, std::uint64_t seed, double blur = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 255);
  GrayImage g(dims);
  for (double& v : g) v = u(rng);
  return gaussian_blur(g, blur);
}

/// Shifted copy of `img`: out(x, y) = img(x - dx, y - dy), border replicated.
inline GrayImage shifted(const GrayImage& img, int dx, int dy) {
  GrayImage out(img.dims());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(x, y) = clamped(img, x - dx, y - dy);
  return out;
}

inline PcaBasis random_basis(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd M(kSiftDims, 3);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(kSiftDims, 3);
  return Q.transpose();
}

}  // namespace oracle

#endif  // SFF_TESTS_ORACLES_HPP
