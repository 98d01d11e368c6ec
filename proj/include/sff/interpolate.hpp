#ifndef SFF_INTERPOLATE_HPP
#define SFF_INTERPOLATE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sff/boundary.hpp"
#include "sff/consistency.hpp"
#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/parallel.hpp"

namespace sff {

class DegenerateFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// d0(x, y) = a1 x + a2 y + a3
struct PlaneModel {
  double a1 = 0.0, a2 = 0.0, a3 = 0.0;
  double operator()(double x, double y) const { return a1 * x + a2 * y + a3; }
};

/// x1 = A x0 + t
struct Affine3DModel {
  Mat3 A = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return A * x + t; }
};

using RigidModel = Pose;

struct PlaneSample {
  double x = 0, y = 0, d0 = 0;
};

struct PointPair {
  Vec3 x0 = Vec3::Zero();
  Vec3 x1 = Vec3::Zero();
};

/// Relative rank threshold for the weighted least-squares systems.
inline constexpr double kRankTolerance = 1e-10;

namespace detail {

inline void check_weights(std::size_t n, std::span<const double> w) {
  if (w.size() != n) throw InputError("one weight per sample expected");
  for (double v : w)
    if (!(v >= 0) || !std::isfinite(v)) throw InputError("weights must be finite and >= 0");
}

/// Weighted LS on centred design rows; returns coefficients for [centred
/// columns..., 1]. Throws on rank deficiency unless min_norm is set.
inline Eigen::MatrixXd solve_wls(Eigen::MatrixXd X, Eigen::MatrixXd Y, std::span<const double> w,
                                 bool min_norm) {
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double s = std::sqrt(w[i]);
    X.row(i) *= s;
    Y.row(i) *= s;
  }
  if (min_norm) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
    cod.setThreshold(kRankTolerance);
    return cod.solve(Y);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < X.cols()) throw DegenerateFitError("rank-deficient weighted fit");
  return qr.solve(Y);
}

inline double weight_sum(std::span<const double> w) {
  double s = 0;
  for (double v : w) s += v;
  return s;
}

}  // namespace detail

/// Weighted least-squares plane through (x, y, d0) samples.
inline PlaneModel fit_plane_wls(std::span<const PlaneSample> s, std::span<const double> w) {
  detail::check_weights(s.size(), w);
  if (s.size() < 3) throw DegenerateFitError("plane fit needs 3 samples");
  const double ws = detail::weight_sum(w);
  if (!(ws > 0)) throw DegenerateFitError("zero total weight");
  double cx = 0, cy = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cx += w[i] * s[i].x;
    cy += w[i] * s[i].y;
  }
  cx /= ws;
  cy /= ws;
  Eigen::MatrixXd X(s.size(), 3);
  Eigen::MatrixXd Y(s.size(), 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    X.row(i) << s[i].x - cx, s[i].y - cy, 1.0;
    Y(i, 0) = s[i].d0;
  }
  const Eigen::MatrixXd c = detail::solve_wls(X, Y, w, false);
  return {c(0), c(1), c(2) - c(0) * cx - c(1) * cy};
}

/// Plane fallback: weighted mean disparity.
inline PlaneModel constant_plane(std::span<const PlaneSample> s, std::span<const double> w) {
  double acc = 0, ws = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    acc += w[i] * s[i].d0;
    ws += w[i];
  }
  if (!(ws > 0)) {
    ws = static_cast<double>(s.size());
    acc = 0;
    for (const auto& p : s) acc += p.d0;
  }
  return {0, 0, s.empty() ? 0.0 : acc / ws};
}

namespace detail {

inline Affine3DModel affine_from(const Eigen::MatrixXd& c, const Vec3& centroid) {
  Affine3DModel m;
  m.A = c.topRows(3).transpose();
  m.t = c.row(3).transpose() - m.A * centroid;
  return m;
}

inline Vec3 weighted_centroid(std::span<const PointPair> p, std::span<const double> w, bool x0) {
  Vec3 c = Vec3::Zero();
  double ws = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    c += w[i] * (x0 ? p[i].x0 : p[i].x1);
    ws += w[i];
  }
  if (!(ws > 0)) throw DegenerateFitError("zero total weight");
  return c / ws;
}

inline Affine3DModel fit_affine(std::span<const PointPair> p, std::span<const double> w,
                                bool min_norm) {
  check_weights(p.size(), w);
  if (p.empty()) throw DegenerateFitError("affine fit needs samples");
  const Vec3 c = weighted_centroid(p, w, true);
  Eigen::MatrixXd X(p.size(), 4);
  Eigen::MatrixXd Y(p.size(), 3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec3 d = p[i].x0 - c;
    X.row(i) << d.x(), d.y(), d.z(), 1.0;
    Y.row(i) = p[i].x1.transpose();
  }
  return affine_from(solve_wls(X, Y, w, min_norm), c);
}

}  // namespace detail

/// Weighted least-squares affine 3D transform (three 4-unknown systems).
inline Affine3DModel fit_affine3d_wls(std::span<const PointPair> p, std::span<const double> w) {
  if (p.size() < 4) throw DegenerateFitError("affine fit needs 4 pairs");
  return detail::fit_affine(p, w, false);
}

/// Minimum-norm solution of the same system; exact on coplanar samples,
/// where the full fit is undetermined along the plane normal.
inline Affine3DModel fit_affine3d_min_norm(std::span<const PointPair> p,
                                           std::span<const double> w) {
  return detail::fit_affine(p, w, true);
}

/// Translation-only fallback: weighted mean motion.
inline Affine3DModel translation_model(std::span<const PointPair> p, std::span<const double> w) {
  Vec3 t = Vec3::Zero();
  double ws = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    t += w[i] * (p[i].x1 - p[i].x0);
    ws += w[i];
  }
  Affine3DModel m;
  if (ws > 0) m.t = t / ws;
  return m;
}

/// Weighted orthogonal Procrustes (Kabsch): rotation and translation
/// minimising sum w |R x0 + t - x1|^2.
inline RigidModel fit_rigid_procrustes(std::span<const PointPair> p, std::span<const double> w) {
  detail::check_weights(p.size(), w);
  if (p.size() < 3) throw DegenerateFitError("rigid fit needs 3 pairs");
  const Vec3 c0 = detail::weighted_centroid(p, w, true);
  const Vec3 c1 = detail::weighted_centroid(p, w, false);
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) H += w[i] * (p[i].x0 - c0) * (p[i].x1 - c1).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(1) > kRankTolerance * std::max(1.0, sv(0)))) {
    throw DegenerateFitError("collinear point pairs");
  }
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidModel m;
  m.rotation = svd.matrixV() * D * svd.matrixU().transpose();
  m.translation = c1 - m.rotation * c0;
  return m;
}

inline constexpr int kWeiszfeldIterations = 50;
inline constexpr double kWeiszfeldTolerance = 1e-9;

/// Weighted geometric median by Weiszfeld iteration from the weighted mean.
template <int N>
Eigen::Matrix<double, N, 1> geometric_median(std::span<const Eigen::Matrix<double, N, 1>> pts,
                                             std::span<const double> w) {
  using V = Eigen::Matrix<double, N, 1>;
  detail::check_weights(pts.size(), w);
  if (pts.empty()) throw InputError("geometric median of no points");
  V m = V::Zero();
  double ws = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m += w[i] * pts[i];
    ws += w[i];
  }
  if (!(ws > 0)) return pts[0];
  m /= ws;
  for (int it = 0; it < kWeiszfeldIterations; ++it) {
    V num = V::Zero();
    double den = 0;
    bool at_point = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = (pts[i] - m).norm();
      if (d < 1e-12) {
        at_point = true;
        continue;
      }
      num += (w[i] / d) * pts[i];
      den += w[i] / d;
    }
    if (!(den > 0)) break;
    const V next = num / den;
    const double step = (next - m).norm();
    m = next;
    if (step < kWeiszfeldTolerance || (at_point && step < 1e-12)) break;
  }
  return m;
}

inline double geometric_median_1d(std::span<const double> v, std::span<const double> w) {
  std::vector<Eigen::Matrix<double, 1, 1>> pts(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) pts[i](0) = v[i];
  return geometric_median<1>(std::span<const Eigen::Matrix<double, 1, 1>>(pts), w)(0);
}

/// Builds the dense field from per-pixel disparity and motion: d0 from the
/// plane, X0 backprojected, X1 from the motion model, projected back. Falls
/// back to `fallback_d0` when the plane gives no positive disparity and to
/// zero motion when the moved point leaves the front of the camera.
template <typename MotionFn>
SceneFlowVector reconstruct_vector(int x, int y, double d0, double fallback_d0,
                                   const MotionFn& motion, const CameraRig& rig) {
  if (!(d0 > 0) || !std::isfinite(d0)) d0 = fallback_d0;
  if (!(d0 > 0) || !std::isfinite(d0)) d0 = 1e-3;
  const Vec3 X0 = backproject(Vec2(x, y), d0, rig);
  const auto p = try_project(motion(X0), rig);
  if (!p || !std::isfinite(p->pixel.x()) || !std::isfinite(p->pixel.y()))
    return {0.0, 0.0, d0, d0};
  return {p->pixel.x() - x, p->pixel.y() - y, d0, p->disparity};
}

// ---------------------------------------------------------------------------
// EPIC3D

struct EpicConfig {
  int n_geo = 160;
  int n_motion = 80;
  double alpha_kernel = 2.2;

  void validate() const {
    if (n_geo < 3) throw InputError("n_geo must be >= 3");
    if (n_motion < 4) throw InputError("n_motion must be >= 4");
    if (!(alpha_kernel > 0)) throw InputError("alpha_kernel must be positive");
  }
};

inline PointPair seed_points(const Seed& s, const CameraRig& rig) {
  const auto pts = scene_flow_points(Vec2(s.pixel.x, s.pixel.y), s.vector, rig);
  if (!pts) throw InputError("motion seed without positive disparities");
  return {pts->first, pts->second};
}

inline std::vector<Pixel> seed_pixels(std::span<const Seed> seeds) {
  std::vector<Pixel> p;
  for (const auto& s : seeds) p.push_back(s.pixel);
  return p;
}

inline std::vector<Pixel> seed_pixels(std::span<const GeometrySeed> seeds) {
  std::vector<Pixel> p;
  for (const auto& s : seeds) p.push_back(s.pixel);
  return p;
}

/// Local plane with fallback to the weighted mean disparity.
struct LocalPlane {
  PlaneModel plane;
  double mean_d0 = 0;
};

inline LocalPlane local_plane(std::span<const PlaneSample> s, std::span<const double> w) {
  LocalPlane lp;
  lp.plane = constant_plane(s, w);
  lp.mean_d0 = lp.plane.a3;
  try {
    lp.plane = fit_plane_wls(s, w);
  } catch (const DegenerateFitError&) {
  }
  return lp;
}

/// Local affine motion: full fit, then minimum-norm on coplanar support,
/// then translation only.
inline Affine3DModel local_affine(std::span<const PointPair> p, std::span<const double> w) {
  try {
    return fit_affine3d_wls(p, w);
  } catch (const DegenerateFitError&) {
  }
  try {
    const Eigen::Index rank = [&] {
      Eigen::MatrixXd X(p.size(), 3);
      const Vec3 c = detail::weighted_centroid(p, w, true);
      for (std::size_t i = 0; i < p.size(); ++i)
        X.row(i) = std::sqrt(w[i]) * (p[i].x0 - c).transpose();
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
      qr.setThreshold(kRankTolerance);
      return qr.rank();
    }();
    if (rank >= 2) return fit_affine3d_min_norm(p, w);
  } catch (const DegenerateFitError&) {
  }
  return translation_model(p, w);
}

/// Per-pixel edge-aware interpolation: every pixel uses the plane and affine
/// models of its nearest geometry seed and nearest motion seed.
inline SceneFlowField epic3d(std::span<const GeometrySeed> geo, std::span<const Seed> motion,
                             const EdgeMap& edges, const CameraRig& rig,
                             const EpicConfig& cfg = {}) {
  cfg.validate();
  if (geo.empty() || motion.empty()) throw InputError("epic3d needs geometry and motion seeds");
  const ImageDims dims = edges.dims();
  const auto gnb = label_and_neighbors(seed_pixels(geo), edges, cfg.n_geo);
  const auto mnb = label_and_neighbors(seed_pixels(motion), edges, cfg.n_motion);

  std::vector<LocalPlane> planes(geo.size());
  parallel_for(0, static_cast<int>(geo.size()), [&](int s) {
    std::vector<PlaneSample> samples;
    std::vector<double> w;
    for (const auto& n : gnb.neighbors[s]) {
      const auto& g = geo[n.seed];
      samples.push_back({static_cast<double>(g.pixel.x), static_cast<double>(g.pixel.y), g.d0});
      w.push_back(std::exp(-cfg.alpha_kernel * n.distance));
    }
    planes[s] = local_plane(samples, w);
  });

  std::vector<PointPair> seed_pts(motion.size());
  for (std::size_t i = 0; i < motion.size(); ++i) seed_pts[i] = seed_points(motion[i], rig);
  std::vector<Affine3DModel> motions(motion.size());
  parallel_for(0, static_cast<int>(motion.size()), [&](int s) {
    std::vector<PointPair> pairs;
    std::vector<double> w;
    for (const auto& n : mnb.neighbors[s]) {
      pairs.push_back(seed_pts[n.seed]);
      w.push_back(std::exp(-cfg.alpha_kernel * n.distance));
    }
    motions[s] = local_affine(pairs, w);
  });

  SceneFlowField out(dims);
  parallel_for(0, dims.height, [&](int y) {
    for (int x = 0; x < dims.width; ++x) {
      const LocalPlane& lp = planes[gnb.label(x, y)];
      const Affine3DModel& m = motions[mnb.label(x, y)];
      out.set(x, y,
              reconstruct_vector(x, y, lp.plane(x, y), lp.mean_d0,
                                 [&](const Vec3& X) { return m.apply(X); }, rig));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Superpixels

struct SuperpixelSegmentation {
  Grid<int> label;
  std::vector<Vec2> centroid;
  std::vector<std::vector<int>> adjacency;
  std::vector<std::vector<Pixel>> pixels;

  int count() const { return static_cast<int>(centroid.size()); }
};

inline constexpr int kSlicIterations = 10;
inline constexpr double kSlicCompactness = 20.0;

namespace detail {

/// Splits labels into 4-connected pieces; pieces below min_size are merged
/// into an adjacent, already relabelled piece. Labels become 0..k-1.
inline Grid<int> enforce_connectivity(const Grid<int>& in, int min_size) {
  const ImageDims dims = in.dims();
  Grid<int> out(dims, -1);
  int next = 0;
  std::vector<Pixel> comp, stack;
  constexpr std::array<Pixel, 4> nb{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      if (out(x, y) >= 0) continue;
      int adjacent = -1;
      for (const Pixel d : nb) {
        if (out.contains(x + d.x, y + d.y) && out(x + d.x, y + d.y) >= 0) {
          adjacent = out(x + d.x, y + d.y);
          break;
        }
      }
      comp.clear();
      stack.push_back({x, y});
      out(x, y) = next;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        comp.push_back(p);
        for (const Pixel d : nb) {
          const int nx = p.x + d.x, ny = p.y + d.y;
          if (!in.contains(nx, ny) || out(nx, ny) >= 0 || in(nx, ny) != in(x, y)) continue;
          out(nx, ny) = next;
          stack.push_back({nx, ny});
        }
      }
      if (static_cast<int>(comp.size()) < min_size && adjacent >= 0) {
        for (const Pixel p : comp) out(p.x, p.y) = adjacent;
      } else {
        ++next;
      }
    }
  }
  return out;
}

}  // namespace detail

/// SLIC-style clustering in (x, y, intensity) seeded on a sqrt(size) grid.
inline SuperpixelSegmentation superpixels(const ColorImage& img, int size) {
  if (size < 1) throw InputError("superpixel size must be >= 1");
  const ImageDims dims = img.dims();
  const double S = std::sqrt(static_cast<double>(size));
  const int nx = std::max(1, static_cast<int>(std::lround(dims.width / S)));
  const int ny = std::max(1, static_cast<int>(std::lround(dims.height / S)));
  const int nc = img.channel_count();
  struct Center {
    double x, y;
    std::vector<double> c;
  };
  std::vector<Center> centers;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Center c{(i + 0.5) * dims.width / nx - 0.5, (j + 0.5) * dims.height / ny - 0.5, {}};
      const int px = std::clamp(static_cast<int>(std::lround(c.x)), 0, dims.width - 1);
      const int py = std::clamp(static_cast<int>(std::lround(c.y)), 0, dims.height - 1);
      for (int k = 0; k < nc; ++k) c.c.push_back(img.channels[k](px, py));
      centers.push_back(std::move(c));
    }
  }
  Grid<int> label(dims, -1);
  Grid<double> best(dims);
  const double inv_m2 = 1.0 / (kSlicCompactness * kSlicCompactness);
  const double inv_s2 = 1.0 / (S * S);
  const int win = static_cast<int>(std::ceil(S));
  for (int it = 0; it < kSlicIterations; ++it) {
    best.fill(std::numeric_limits<double>::infinity());
    for (int k = 0; k < static_cast<int>(centers.size()); ++k) {
      const Center& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x)) - win);
      const int x1 = std::min(dims.width - 1, static_cast<int>(std::ceil(c.x)) + win);
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y)) - win);
      const int y1 = std::min(dims.height - 1, static_cast<int>(std::ceil(c.y)) + win);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          double dc = 0;
          for (int ch = 0; ch < nc; ++ch) {
            const double t = img.channels[ch](x, y) - c.c[ch];
            dc += t * t;
          }
          const double ds = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
          const double D = dc * inv_m2 + ds * inv_s2;
          if (D < best(x, y)) {
            best(x, y) = D;
            label(x, y) = k;
          }
        }
      }
    }
    std::vector<Center> acc(centers.size(), Center{0, 0, std::vector<double>(nc, 0.0)});
    std::vector<int> count(centers.size(), 0);
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        int k = label(x, y);
        if (k < 0) {
          // Outside every window: nearest centre in the image plane.
          double bd = std::numeric_limits<double>::infinity();
          for (int c = 0; c < static_cast<int>(centers.size()); ++c) {
            const double d = std::hypot(x - centers[c].x, y - centers[c].y);
            if (d < bd) {
              bd = d;
              k = c;
            }
          }
          label(x, y) = k;
        }
        acc[k].x += x;
        acc[k].y += y;
        for (int ch = 0; ch < nc; ++ch) acc[k].c[ch] += img.channels[ch](x, y);
        ++count[k];
      }
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (count[k] == 0) continue;
      centers[k].x = acc[k].x / count[k];
      centers[k].y = acc[k].y / count[k];
      for (int ch = 0; ch < nc; ++ch) centers[k].c[ch] = acc[k].c[ch] / count[k];
    }
  }

  SuperpixelSegmentation seg;
  seg.label = detail::enforce_connectivity(label, std::max(1, size / 4));
  int n = 0;
  for (int v : seg.label) n = std::max(n, v + 1);
  seg.centroid.assign(n, Vec2::Zero());
  seg.pixels.assign(n, {});
  seg.adjacency.assign(n, {});
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      const int l = seg.label(x, y);
      seg.pixels[l].push_back({x, y});
      seg.centroid[l] += Vec2(x, y);
      if (x + 1 < dims.width && seg.label(x + 1, y) != l) {
        seg.adjacency[l].push_back(seg.label(x + 1, y));
        seg.adjacency[seg.label(x + 1, y)].push_back(l);
      }
      if (y + 1 < dims.height && seg.label(x, y + 1) != l) {
        seg.adjacency[l].push_back(seg.label(x, y + 1));
        seg.adjacency[seg.label(x, y + 1)].push_back(l);
      }
    }
  }
  for (int l = 0; l < n; ++l) {
    seg.centroid[l] /= static_cast<double>(seg.pixels[l].size());
    auto& a = seg.adjacency[l];
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return seg;
}

inline SuperpixelSegmentation superpixels(const GrayImage& img, int size) {
  return superpixels(ColorImage(img), size);
}

// ---------------------------------------------------------------------------
// RIC3D

struct RicConfig {
  int superpixel_size = 25;
  int neighborhood = 200;
  double tau_trunc = 4.0;
  double alpha_weight = 0.6;
  int iterations = 8;
  int proposals = 2;
  std::uint64_t seed = 7;

  void validate() const {
    if (superpixel_size < 1 || neighborhood < 1 || iterations < 0 || proposals < 0)
      throw InputError("ric3d sizes must be positive");
    if (!(tau_trunc > 0) || !(alpha_weight > 0)) throw InputError("ric3d tau/alpha must be > 0");
  }
};

/// Neighbourhood member with its precomputed data.
struct GeometryTerm {
  double x, y, d0, distance;
};

struct MotionTerm {
  Vec3 x0;
  Vec3 x1;
  Vec2 next_left;   // observed I1l target
  Vec2 next_right;  // observed I1r target
  double distance;
};

inline MotionTerm motion_term(const Seed& s, const CameraRig& rig, double distance) {
  const Correspondences c = correspondences(Vec2(s.pixel.x, s.pixel.y), s.vector);
  const PointPair pp = seed_points(s, rig);
  return {pp.x0, pp.x1, c.next_left, c.next_right, distance};
}

inline double truncated_term(double distance, double eps, const RicConfig& cfg) {
  if (!std::isfinite(eps)) return cfg.tau_trunc;
  return std::min(cfg.tau_trunc, std::exp(-distance / cfg.alpha_weight) * eps);
}

/// Plane residual: absolute disparity difference.
inline double model_error(const PlaneModel& m, const GeometryTerm& t) {
  return std::abs(m(t.x, t.y) - t.d0);
}

/// Rigid residual: mean image distance of the predicted I1l and I1r targets
/// to the observed ones.
inline double model_error(const RigidModel& m, const MotionTerm& t, const CameraRig& rig) {
  const auto p = try_project(m.apply(t.x0), rig);
  if (!p) return std::numeric_limits<double>::infinity();
  const Vec2 nl = p->pixel;
  const Vec2 nr(p->pixel.x() - p->disparity, p->pixel.y());
  return 0.5 * ((nl - t.next_left).norm() + (nr - t.next_right).norm());
}

inline double model_cost(const PlaneModel& m, std::span<const GeometryTerm> nb,
                         const RicConfig& cfg) {
  double c = 0;
  for (const auto& t : nb) c += truncated_term(t.distance, model_error(m, t), cfg);
  return c;
}

inline double model_cost(const RigidModel& m, std::span<const MotionTerm> nb, const RicConfig& cfg,
                         const CameraRig& rig) {
  double c = 0;
  for (const auto& t : nb) c += truncated_term(t.distance, model_error(m, t, rig), cfg);
  return c;
}

struct InterpolationModel {
  PlaneModel plane;
  RigidModel rigid;
};

/// Per-iteration model costs of every superpixel; entry 0 is the
/// initialisation.
struct RicTrace {
  std::vector<std::vector<double>> plane_cost;
  std::vector<std::vector<double>> rigid_cost;
};

struct RicResult {
  SceneFlowField field;
  SuperpixelSegmentation segmentation;
  std::vector<InterpolationModel> models;
};

namespace detail {

/// Seed list of the superpixel's anchor: the nearest seed of its pixel
/// closest to any seed.
inline const std::vector<Neighbor>* anchor_list(const SeedNeighborhood& nb,
                                                const std::vector<Pixel>& pixels) {
  double best = std::numeric_limits<double>::infinity();
  int seed = -1;
  for (const Pixel p : pixels) {
    if (nb.label(p.x, p.y) >= 0 && nb.distance(p.x, p.y) < best) {
      best = nb.distance(p.x, p.y);
      seed = nb.label(p.x, p.y);
    }
  }
  return seed < 0 ? nullptr : &nb.neighbors[seed];
}

inline std::array<int, 3> sample_three(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> d(0, n - 1);
  std::array<int, 3> s{};
  s[0] = d(rng);
  do s[1] = d(rng);
  while (s[1] == s[0]);
  do s[2] = d(rng);
  while (s[2] == s[0] || s[2] == s[1]);
  return s;
}

}  // namespace detail

/// Robust per-superpixel plane and rigid-motion estimation refined by model
/// propagation and random 3-sample proposals under the truncated cost.
inline RicResult ric3d(std::span<const GeometrySeed> geo, std::span<const Seed> motion,
                       const EdgeMap& edges, const ColorImage& image, const CameraRig& rig,
                       const RicConfig& cfg = {}, RicTrace* trace = nullptr) {
  cfg.validate();
  if (geo.empty() || motion.empty()) throw InputError("ric3d needs geometry and motion seeds");
  require_same_dims(edges.dims(), image.dims(), "ric3d");
  const ImageDims dims = edges.dims();
  RicResult res;
  res.segmentation = superpixels(image, cfg.superpixel_size);
  const SuperpixelSegmentation& seg = res.segmentation;
  const int n = seg.count();

  const auto gnb = label_and_neighbors(seed_pixels(geo), edges, cfg.neighborhood);
  const auto mnb = label_and_neighbors(seed_pixels(motion), edges, cfg.neighborhood);

  std::vector<std::vector<GeometryTerm>> gterms(n);
  std::vector<std::vector<MotionTerm>> mterms(n);
  parallel_for(0, n, [&](int k) {
    if (const auto* list = detail::anchor_list(gnb, seg.pixels[k])) {
      for (const auto& nbr : *list) {
        const auto& g = geo[nbr.seed];
        gterms[k].push_back({static_cast<double>(g.pixel.x), static_cast<double>(g.pixel.y), g.d0,
                             nbr.distance});
      }
    }
    if (const auto* list = detail::anchor_list(mnb, seg.pixels[k])) {
      for (const auto& nbr : *list) mterms[k].push_back(motion_term(motion[nbr.seed], rig, nbr.distance));
    }
  });

  // Superpixels without support borrow the terms of the closest supported one.
  for (int k = 0; k < n; ++k) {
    if (!gterms[k].empty() && !mterms[k].empty()) continue;
    double bd = std::numeric_limits<double>::infinity();
    int donor = -1;
    for (int j = 0; j < n; ++j) {
      if (gterms[j].empty() || mterms[j].empty()) continue;
      const double d = (seg.centroid[j] - seg.centroid[k]).norm();
      if (d < bd) {
        bd = d;
        donor = j;
      }
    }
    if (donor < 0) throw InputError("ric3d: no superpixel has seed support");
    if (gterms[k].empty()) gterms[k] = gterms[donor];
    if (mterms[k].empty()) mterms[k] = mterms[donor];
  }

  res.models.resize(n);
  std::vector<double> pcost(n), rcost(n);
  parallel_for(0, n, [&](int k) {
    std::vector<double> d0, w;
    for (const auto& t : gterms[k]) {
      d0.push_back(t.d0);
      w.push_back(std::exp(-t.distance / cfg.alpha_weight));
    }
    res.models[k].plane = {0, 0, geometric_median_1d(d0, w)};
    std::vector<Vec3> mot;
    std::vector<double> mw;
    for (const auto& t : mterms[k]) {
      mot.push_back(t.x1 - t.x0);
      mw.push_back(std::exp(-t.distance / cfg.alpha_weight));
    }
    res.models[k].rigid.translation = geometric_median<3>(std::span<const Vec3>(mot), mw);
    pcost[k] = model_cost(res.models[k].plane, gterms[k], cfg);
    rcost[k] = model_cost(res.models[k].rigid, mterms[k], cfg, rig);
  });
  if (trace) {
    trace->plane_cost = {pcost};
    trace->rigid_cost = {rcost};
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    // Propagation: sequential sweep, alternating raster direction.
    for (int kk = 0; kk < n; ++kk) {
      const int k = it % 2 == 0 ? kk : n - 1 - kk;
      for (const int j : seg.adjacency[k]) {
        const double pc = model_cost(res.models[j].plane, gterms[k], cfg);
        if (pc < pcost[k]) {
          pcost[k] = pc;
          res.models[k].plane = res.models[j].plane;
        }
        const double rc = model_cost(res.models[j].rigid, mterms[k], cfg, rig);
        if (rc < rcost[k]) {
          rcost[k] = rc;
          res.models[k].rigid = res.models[j].rigid;
        }
      }
    }
    // Random proposals from three sampled neighbourhood members.
    parallel_for(0, n, [&](int k) {
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(it),
                        static_cast<std::uint32_t>(k)};
      std::mt19937_64 rng(seq);
      const std::array<double, 3> ones{1.0, 1.0, 1.0};
      for (int p = 0; p < cfg.proposals; ++p) {
        if (gterms[k].size() >= 3) {
          const auto s = detail::sample_three(rng, static_cast<int>(gterms[k].size()));
          std::array<PlaneSample, 3> ps;
          for (int i = 0; i < 3; ++i) ps[i] = {gterms[k][s[i]].x, gterms[k][s[i]].y, gterms[k][s[i]].d0};
          try {
            const PlaneModel m = fit_plane_wls(ps, ones);
            const double c = model_cost(m, gterms[k], cfg);
            if (c < pcost[k]) {
              pcost[k] = c;
              res.models[k].plane = m;
            }
          } catch (const DegenerateFitError&) {
          }
        }
        if (mterms[k].size() >= 3) {
          const auto s = detail::sample_three(rng, static_cast<int>(mterms[k].size()));
          std::array<PointPair, 3> pp;
          for (int i = 0; i < 3; ++i) pp[i] = {mterms[k][s[i]].x0, mterms[k][s[i]].x1};
          try {
            const RigidModel m = fit_rigid_procrustes(pp, ones);
            const double c = model_cost(m, mterms[k], cfg, rig);
            if (c < rcost[k]) {
              rcost[k] = c;
              res.models[k].rigid = m;
            }
          } catch (const DegenerateFitError&) {
          }
        }
      }
    });
    if (trace) {
      trace->plane_cost.push_back(pcost);
      trace->rigid_cost.push_back(rcost);
    }
  }

  res.field = SceneFlowField(dims);
  parallel_for(0, n, [&](int k) {
    const InterpolationModel& m = res.models[k];
    double fallback = 0;
    for (const auto& t : gterms[k]) fallback += t.d0 / gterms[k].size();
    for (const Pixel p : seg.pixels[k]) {
      res.field.set(p.x, p.y,
                    reconstruct_vector(p.x, p.y, m.plane(p.x, p.y), fallback,
                                       [&](const Vec3& X) { return m.rigid.apply(X); }, rig));
    }
  });
  return res;
}

// ---------------------------------------------------------------------------
// Nadaraya-Watson label densification

struct LabelSample {
  Pixel pixel;
  double value = 0.0;
};

struct DenseLabels {
  GrayImage mean;
  Mask binary;
};

struct NadarayaWatsonConfig {
  int neighbors = 100;
  double alpha_kernel = 2.2;
  double threshold = 0.5;
};

/// Weighted mean of each pixel's geodesically nearest labels, thresholded.
inline DenseLabels nadaraya_watson_labels(std::span<const LabelSample> labels, const EdgeMap& edges,
                                          const NadarayaWatsonConfig& cfg = {}) {
  if (labels.empty()) throw InputError("nadaraya_watson_labels needs at least one label");
  const ImageDims dims = edges.dims();
  std::vector<Pixel> pix;
  for (const auto& l : labels) pix.push_back(l.pixel);
  const Grid<int> at = seed_lookup(pix, dims);
  DenseLabels out{GrayImage(dims, 0.0), Mask(dims, 0)};
  parallel_chunks(0, dims.height, [&](int lo, int hi) {
    SeedExpander ex(edges, at);
    for (int y = lo; y < hi; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        const auto nbrs = ex.expand({x, y}, cfg.neighbors);
        double num = 0, den = 0;
        for (const auto& n : nbrs) {
          const double w = std::exp(-cfg.alpha_kernel * n.distance);
          num += w * labels[n.seed].value;
          den += w;
        }
        const double m = den > 0 ? num / den : 0.0;
        out.mean(x, y) = m;
        out.binary(x, y) = m >= cfg.threshold ? 1 : 0;
      }
    }
  });
  return out;
}

}  // namespace sff

#endif  // SFF_INTERPOLATE_HPP
