#ifndef SFF_REFINE_HPP
#define SFF_REFINE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sff/boundary.hpp"
#include "sff/consistency.hpp"
#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/image_ops.hpp"
#include "sff/core/parallel.hpp"
#include "sff/interpolate.hpp"

namespace sff {

// ---------------------------------------------------------------------------
// Variational refinement

struct VariationalConfig {
  double gamma = 1.0;
  double lambda = 1.0;
  double kappa = 5.0;
  double epsilon_sq = 1e-4;
  double sor_omega = 1.9;
  int outer_iterations = 3;
  int sor_iterations = 30;
  int max_halvings = 12;

  void validate() const {
    if (!(sor_omega > 0 && sor_omega < 2)) throw InputError("sor_omega must be in (0, 2)");
    if (!(epsilon_sq > 0)) throw InputError("epsilon_sq must be positive");
    if (outer_iterations < 0 || sor_iterations < 0) throw InputError("iteration counts must be >= 0");
  }
};

/// Charbonnier penalty of a squared magnitude.
inline double charbonnier(double s2, double eps2) { return std::sqrt(s2 + eps2); }
inline double charbonnier_derivative(double s2, double eps2) {
  return 0.5 / std::sqrt(s2 + eps2);
}

/// Motion unknowns of the refinement: flow and disparity change d' = d1 - d0.
struct MotionState {
  Grid<double> u, v, dp;
};

/// Precomputed image derivatives for the energy.
struct VariationalImages {
  GrayImage gx0, gy0;                       // reference gradient
  GrayImage gx1l, gy1l, gxx1l, gxy1l, gyx1l, gyy1l;  // I1l gradient and its derivatives
  GrayImage gx1r, gy1r, gxx1r, gxy1r, gyx1r, gyy1r;  // I1r
  GrayImage phi;                            // smoothness weight exp(-kappa B)

  VariationalImages(const GrayImage& i0l, const GrayImage& i1l, const GrayImage& i1r,
                    const EdgeMap& edges, double kappa) {
    image_gradients(i0l, gx0, gy0);
    image_gradients(i1l, gx1l, gy1l);
    image_gradients(gx1l, gxx1l, gxy1l);
    image_gradients(gy1l, gyx1l, gyy1l);
    image_gradients(i1r, gx1r, gy1r);
    image_gradients(gx1r, gxx1r, gxy1r);
    image_gradients(gy1r, gyx1r, gyy1r);
    phi = GrayImage(i0l.dims());
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = std::exp(-kappa * edges.strength[i]);
  }
};

namespace detail {

/// Gradient difference and its Jacobian w.r.t. the warp at x + w.
struct WarpedTerm {
  bool active = false;
  Eigen::Vector2d r = Eigen::Vector2d::Zero();
  Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
};

inline WarpedTerm warped_term(const VariationalImages& im, bool right, int x, int y, double wx,
                              double wy) {
  WarpedTerm t;
  const double tx = x + wx, ty = y + wy;
  if (!in_domain(tx, ty, im.gx0.dims())) return t;
  t.active = true;
  const auto& gx = right ? im.gx1r : im.gx1l;
  const auto& gy = right ? im.gy1r : im.gy1l;
  t.r << sample_bilinear(gx, tx, ty) - im.gx0(x, y), sample_bilinear(gy, tx, ty) - im.gy0(x, y);
  const auto& gxx = right ? im.gxx1r : im.gxx1l;
  const auto& gxy = right ? im.gxy1r : im.gxy1l;
  const auto& gyx = right ? im.gyx1r : im.gyx1l;
  const auto& gyy = right ? im.gyy1r : im.gyy1l;
  t.H << sample_bilinear(gxx, tx, ty), sample_bilinear(gxy, tx, ty), sample_bilinear(gyx, tx, ty),
      sample_bilinear(gyy, tx, ty);
  return t;
}

inline double smooth_arg(const MotionState& s, int x, int y, double lambda) {
  const int w = s.u.width(), h = s.u.height();
  double a = 0;
  if (x + 1 < w) {
    const double du = s.u(x + 1, y) - s.u(x, y), dv = s.v(x + 1, y) - s.v(x, y),
                 dd = s.dp(x + 1, y) - s.dp(x, y);
    a += du * du + dv * dv + lambda * dd * dd;
  }
  if (y + 1 < h) {
    const double du = s.u(x, y + 1) - s.u(x, y), dv = s.v(x, y + 1) - s.v(x, y),
                 dd = s.dp(x, y + 1) - s.dp(x, y);
    a += du * du + dv * dv + lambda * dd * dd;
  }
  return a;
}

}  // namespace detail

/// Discretised energy: gradient-constancy data terms for the flow and cross
/// correspondences (dropped where the warp leaves the image), plus the
/// edge-weighted Charbonnier smoothness over forward differences.
inline double variational_energy(const MotionState& s, const GrayImage& d0,
                                 const VariationalImages& im, const VariationalConfig& cfg) {
  const ImageDims dims = d0.dims();
  std::vector<double> rows(dims.height, 0.0);
  parallel_for(0, dims.height, [&](int y) {
    double e = 0;
    for (int x = 0; x < dims.width; ++x) {
      const double u = s.u(x, y), v = s.v(x, y), d1 = d0(x, y) + s.dp(x, y);
      const auto f = detail::warped_term(im, false, x, y, u, v);
      if (f.active) e += charbonnier(cfg.gamma * f.r.squaredNorm(), cfg.epsilon_sq);
      const auto c = detail::warped_term(im, true, x, y, u - d1, v);
      if (c.active) e += charbonnier(cfg.gamma * c.r.squaredNorm(), cfg.epsilon_sq);
      e += im.phi(x, y) * charbonnier(detail::smooth_arg(s, x, y, cfg.lambda), cfg.epsilon_sq);
    }
    rows[y] = e;
  });
  return std::accumulate(rows.begin(), rows.end(), 0.0);
}

struct VariationalResult {
  SceneFlowField field;
  std::vector<double> energy;  // before the first and after every outer iteration
  Mask held_fixed;
};

/// Refines (u, v, d') of a dense field. Each outer iteration linearises the
/// warped gradients and the Charbonnier terms at the current estimate, solves
/// for the increment with red-black block SOR and applies it with step
/// halving so the discretised energy never increases. d0 is untouched and
/// pixels whose flow and cross warps both leave the image are held fixed.
inline VariationalResult variational_refine(const SceneFlowField& field, const GrayImage& i0l,
                                            const GrayImage& i1l, const GrayImage& i1r,
                                            const EdgeMap& edges, const VariationalConfig& cfg = {}) {
  cfg.validate();
  const ImageDims dims = field.dims();
  require_same_dims(dims, i0l.dims(), "variational_refine I0l");
  require_same_dims(dims, i1l.dims(), "variational_refine I1l");
  require_same_dims(dims, i1r.dims(), "variational_refine I1r");
  require_same_dims(dims, edges.dims(), "variational_refine edges");
  const VariationalImages im(i0l, i1l, i1r, edges, cfg.kappa);

  MotionState s{Grid<double>(dims), Grid<double>(dims), Grid<double>(dims)};
  GrayImage d0(dims);
  Mask fixed(dims, 0);
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      const SceneFlowVector& sv = field.vectors(x, y);
      s.u(x, y) = sv.u;
      s.v(x, y) = sv.v;
      s.dp(x, y) = sv.d1 - sv.d0;
      d0(x, y) = sv.d0;
      const bool flow_in = in_domain(x + sv.u, y + sv.v, dims);
      const bool cross_in = in_domain(x + sv.u - sv.d1, y + sv.v, dims);
      if (!field.is_valid(x, y) || (!flow_in && !cross_in)) fixed(x, y) = 1;
    }
  }

  VariationalResult res;
  res.held_fixed = fixed;
  double energy = variational_energy(s, d0, im, cfg);
  res.energy.push_back(energy);

  using Mat3d = Eigen::Matrix3d;
  using V3 = Eigen::Vector3d;
  Grid<Mat3d> A(dims);
  Grid<V3> b(dims);
  Grid<double> wsm(dims);  // smoothness weight on the forward edges of a pixel
  Grid<V3> dx(dims);
  const V3 D(1.0, 1.0, cfg.lambda);

  for (int outer = 0; outer < cfg.outer_iterations; ++outer) {
    parallel_for(0, dims.height, [&](int y) {
      for (int x = 0; x < dims.width; ++x) {
        Mat3d a = Mat3d::Zero();
        V3 rhs = V3::Zero();
        const double u = s.u(x, y), v = s.v(x, y), d1 = d0(x, y) + s.dp(x, y);
        const auto f = detail::warped_term(im, false, x, y, u, v);
        if (f.active) {
          const double psi = cfg.gamma * charbonnier_derivative(cfg.gamma * f.r.squaredNorm(),
                                                                cfg.epsilon_sq);
          Eigen::Matrix<double, 2, 3> J;
          J << f.H(0, 0), f.H(0, 1), 0.0, f.H(1, 0), f.H(1, 1), 0.0;
          a += psi * J.transpose() * J;
          rhs -= psi * J.transpose() * f.r;
        }
        const auto c = detail::warped_term(im, true, x, y, u - d1, v);
        if (c.active) {
          const double psi = cfg.gamma * charbonnier_derivative(cfg.gamma * c.r.squaredNorm(),
                                                                cfg.epsilon_sq);
          Eigen::Matrix<double, 2, 3> J;
          J << c.H(0, 0), c.H(0, 1), -c.H(0, 0), c.H(1, 0), c.H(1, 1), -c.H(1, 0);
          a += psi * J.transpose() * J;
          rhs -= psi * J.transpose() * c.r;
        }
        A(x, y) = a;
        b(x, y) = rhs;
        wsm(x, y) = im.phi(x, y) *
                    charbonnier_derivative(detail::smooth_arg(s, x, y, cfg.lambda), cfg.epsilon_sq);
        dx(x, y) = V3::Zero();
      }
    });

    auto base = [&](int x, int y) { return V3(s.u(x, y), s.v(x, y), s.dp(x, y)); };
    for (int it = 0; it < cfg.sor_iterations; ++it) {
      for (int color = 0; color < 2; ++color) {
        parallel_for(0, dims.height, [&](int y) {
          for (int x = (y + color) % 2; x < dims.width; x += 2) {
            if (fixed(x, y)) continue;
            Mat3d M = A(x, y);
            V3 r = b(x, y);
            const V3 bi = base(x, y);
            auto edge = [&](int nx, int ny, double w) {
              M.diagonal() += w * D;
              r += w * D.cwiseProduct(base(nx, ny) + dx(nx, ny) - bi);
            };
            if (x + 1 < dims.width) edge(x + 1, y, wsm(x, y));
            if (y + 1 < dims.height) edge(x, y + 1, wsm(x, y));
            if (x > 0) edge(x - 1, y, wsm(x - 1, y));
            if (y > 0) edge(x, y - 1, wsm(x, y - 1));
            const V3 gs = M.ldlt().solve(r);
            if (gs.allFinite()) dx(x, y) = (1.0 - cfg.sor_omega) * dx(x, y) + cfg.sor_omega * gs;
          }
        });
      }
    }

    // Step halving until the energy does not increase.
    bool accepted = false;
    double step = 1.0;
    for (int h = 0; h <= cfg.max_halvings && !accepted; ++h, step *= 0.5) {
      MotionState trial = s;
      for (std::size_t i = 0; i < dims.area(); ++i) {
        if (fixed[i]) continue;
        trial.u[i] += step * dx[i](0);
        trial.v[i] += step * dx[i](1);
        trial.dp[i] += step * dx[i](2);
      }
      const double e = variational_energy(trial, d0, im, cfg);
      if (e <= energy) {
        s = std::move(trial);
        energy = e;
        accepted = true;
      }
    }
    res.energy.push_back(energy);
    if (!accepted) break;
  }

  res.field = field;
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      if (fixed(x, y)) continue;
      SceneFlowVector& sv = res.field.vectors(x, y);
      sv.u = s.u(x, y);
      sv.v = s.v(x, y);
      sv.d1 = sv.d0 + s.dp(x, y);
      if (!sv.has_positive_disparity()) res.field.invalidate(x, y);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ego-motion

class EstimationUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EgoMotionConfig {
  double max_depth_m = 35.0;
  double inlier_px_strict = 1.0;
  double inlier_px_relaxed = 3.0;
  int ransac_iterations = 500;
  double segmentation_threshold = 0.5;
  int min_seeds = 6;
  int sample_size = 4;
  std::uint64_t seed = 99;

  void validate() const {
    if (!(inlier_px_strict <= inlier_px_relaxed)) throw InputError("strict threshold > relaxed");
    if (!(max_depth_m > 0)) throw InputError("max_depth_m must be positive");
    if (ransac_iterations < 1) throw InputError("ransac_iterations must be >= 1");
  }
};

/// 3D point at t and its observed pixel at t+1.
struct PnpCorrespondence {
  Vec3 point;
  Vec2 pixel;
};

inline Mat3 rotation_from_vector(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

inline double reprojection_error(const Pose& P, const PnpCorrespondence& c, const CameraRig& rig) {
  const auto p = try_project(P.apply(c.point), rig);
  if (!p) return std::numeric_limits<double>::infinity();
  return (p->pixel - c.pixel).norm();
}

/// Levenberg-Marquardt on the reprojection error (rotation-vector update).
inline Pose solve_pnp_lm(std::span<const PnpCorrespondence> cs, const CameraRig& rig,
                         Pose init = Pose::identity(), int max_iterations = 100) {
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  const double f = rig.focal_length_px;
  auto cost = [&](const Pose& P) {
    double c = 0;
    for (const auto& k : cs) {
      const Vec3 X = P.apply(k.point);
      if (!(X.z() > 0)) return std::numeric_limits<double>::infinity();
      const double e = (Vec2(f * X.x() / X.z(), f * X.y() / X.z()) + rig.principal_point - k.pixel)
                           .squaredNorm();
      c += e;
    }
    return c;
  };
  Pose P = init;
  double c = cost(P);
  double mu = 1e-3;
  for (int it = 0; it < max_iterations && std::isfinite(c); ++it) {
    Mat6 JtJ = Mat6::Zero();
    Vec6 Jtr = Vec6::Zero();
    for (const auto& k : cs) {
      const Vec3 RX = P.rotation * k.point;
      const Vec3 X = RX + P.translation;
      const double iz = 1.0 / X.z();
      Eigen::Matrix<double, 2, 3> dp;
      dp << f * iz, 0, -f * X.x() * iz * iz, 0, f * iz, -f * X.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dX;
      Mat3 skew;
      skew << 0, -RX.z(), RX.y(), RX.z(), 0, -RX.x(), -RX.y(), RX.x(), 0;
      dX.leftCols<3>() = -skew;
      dX.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> J = dp * dX;
      const Vec2 r = Vec2(f * X.x() * iz, f * X.y() * iz) + rig.principal_point - k.pixel;
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * r;
    }
    bool improved = false;
    for (int tries = 0; tries < 10 && !improved; ++tries) {
      Mat6 M = JtJ;
      M.diagonal() += mu * (JtJ.diagonal().array() + 1e-12).matrix();
      const Vec6 delta = -M.ldlt().solve(Jtr);
      if (!delta.allFinite()) {
        mu *= 10;
        continue;
      }
      Pose Q;
      Q.rotation = rotation_from_vector(delta.head<3>()) * P.rotation;
      Q.translation = P.translation + delta.tail<3>();
      const double qc = cost(Q);
      if (qc < c) {
        const double gain = c - qc;
        P = Q;
        c = qc;
        mu = std::max(mu * 0.1, 1e-12);
        improved = true;
        if (gain < 1e-18 || delta.norm() < 1e-14) return P;
      } else {
        mu *= 10;
      }
    }
    if (!improved) break;
  }
  // Re-orthonormalise against drift.
  Eigen::JacobiSVD<Mat3> svd(P.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  P.rotation = svd.matrixU() * svd.matrixV().transpose();
  return P;
}

struct EgoMotionResult {
  Pose pose;
  /// Per input seed, in input order. Seeds not used (too far, invalid) are 0.
  std::vector<std::uint8_t> used;
  std::vector<std::uint8_t> strict_inlier;  // best RANSAC hypothesis at the strict threshold
  std::vector<std::uint8_t> inlier;         // final pose at the relaxed threshold
};

/// Camera motion from seeds by RANSAC over 4-point LM PnP, then a relaxed
/// inlier set and a final LM estimate. The pose maps camera-t coordinates of
/// static points to camera-(t+1) coordinates.
inline EgoMotionResult estimate_ego_motion(std::span<const Seed> seeds, const CameraRig& rig,
                                           const EgoMotionConfig& cfg = {}) {
  cfg.validate();
  std::vector<int> usable;
  for (int i = 0; i < static_cast<int>(seeds.size()); ++i) {
    const auto& s = seeds[i];
    if (!(s.vector.d0 > 0)) continue;
    if (rig.fb() / s.vector.d0 > cfg.max_depth_m) continue;
    usable.push_back(i);
  }
  if (static_cast<int>(usable.size()) < cfg.min_seeds) {
    throw EstimationUnavailable("not enough seeds within the depth cap for ego-motion");
  }
  // Canonical order so the result does not depend on the input order.
  std::sort(usable.begin(), usable.end(), [&](int a, int b) {
    const auto& pa = seeds[a].pixel;
    const auto& pb = seeds[b].pixel;
    return pa.y != pb.y ? pa.y < pb.y : pa.x < pb.x;
  });
  std::vector<PnpCorrespondence> cs;
  for (int i : usable) {
    const auto& s = seeds[i];
    cs.push_back({backproject(Vec2(s.pixel.x, s.pixel.y), s.vector.d0, rig),
                  Vec2(s.pixel.x + s.vector.u, s.pixel.y + s.vector.v)});
  }
  const int n = static_cast<int>(cs.size());

  struct Hyp {
    int score = -1;
    Pose pose;
  };
  std::vector<Hyp> hyps(cfg.ransac_iterations);
  parallel_for(0, cfg.ransac_iterations, [&](int h) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(h)};
    std::mt19937_64 rng(seq);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const int k = std::min(cfg.sample_size, n);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> d(i, n - 1);
      std::swap(idx[i], idx[d(rng)]);
    }
    std::vector<PnpCorrespondence> sample;
    for (int i = 0; i < k; ++i) sample.push_back(cs[idx[i]]);
    const Pose P = solve_pnp_lm(sample, rig);
    int score = 0;
    for (const auto& c : cs) score += reprojection_error(P, c, rig) <= cfg.inlier_px_strict;
    hyps[h] = {score, P};
  });
  int best = 0;
  for (int h = 1; h < cfg.ransac_iterations; ++h)
    if (hyps[h].score > hyps[best].score) best = h;

  EgoMotionResult res;
  res.used.assign(seeds.size(), 0);
  res.strict_inlier.assign(seeds.size(), 0);
  res.inlier.assign(seeds.size(), 0);
  const Pose& P0 = hyps[best].pose;
  std::vector<PnpCorrespondence> relaxed;
  for (int i = 0; i < n; ++i) {
    const double e = reprojection_error(P0, cs[i], rig);
    res.used[usable[i]] = 1;
    res.strict_inlier[usable[i]] = e <= cfg.inlier_px_strict;
    if (e <= cfg.inlier_px_relaxed) relaxed.push_back(cs[i]);
  }
  res.pose = relaxed.size() >= 3 ? solve_pnp_lm(relaxed, rig, P0) : P0;
  for (int i = 0; i < n; ++i)
    res.inlier[usable[i]] = reprojection_error(res.pose, cs[i], rig) <= cfg.inlier_px_relaxed;
  return res;
}

/// Dense moving (1) / static (0) segmentation from the ego-motion outliers.
inline DenseLabels motion_segmentation(std::span<const Seed> seeds, const EgoMotionResult& ego,
                                       const EdgeMap& edges, const EgoMotionConfig& cfg = {}) {
  std::vector<LabelSample> labels;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!ego.used[i]) continue;
    labels.push_back({seeds[i].pixel, ego.inlier[i] ? 0.0 : 1.0});
  }
  NadarayaWatsonConfig nw;
  nw.threshold = cfg.segmentation_threshold;
  return nadaraya_watson_labels(labels, edges, nw);
}

/// Replaces the motion of static pixels (segmentation 0) by the one induced
/// by the camera pose; moving pixels are untouched.
inline SceneFlowField apply_ego_motion(const SceneFlowField& field, const Mask& moving,
                                       const Pose& pose, const CameraRig& rig) {
  require_same_dims(field.dims(), moving.dims(), "apply_ego_motion");
  SceneFlowField out = field;
  parallel_for(0, field.height(), [&](int y) {
    for (int x = 0; x < field.width(); ++x) {
      if (moving(x, y) || !field.is_valid(x, y)) continue;
      const SceneFlowVector& s = field.vectors(x, y);
      const auto X0 = try_backproject(Vec2(x, y), s.d0, rig);
      if (!X0) continue;
      const auto p = try_project(pose.apply(*X0), rig);
      if (!p) continue;
      out.vectors(x, y) = {p->pixel.x() - x, p->pixel.y() - y, s.d0, p->disparity};
    }
  });
  return out;
}

}  // namespace sff

#endif  // SFF_REFINE_HPP
