#ifndef SFF_CORE_GEOMETRY_HPP
#define SFF_CORE_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <stdexcept>

#include "sff/core/grid.hpp"

namespace sff {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class NonFiniteDepthError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Rectified stereo rig. The right camera sits at +baseline along x, so a
/// point in front of the cameras has disparity x_left - x_right > 0.
struct CameraRig {
  double focal_length_px = 1.0;
  Vec2 principal_point = Vec2::Zero();
  double baseline_m = 1.0;

  CameraRig() = default;
  CameraRig(double focal, Vec2 pp, double baseline)
      : focal_length_px(focal), principal_point(pp), baseline_m(baseline) {
    if (!(focal > 0.0)) throw InputError("focal length must be positive");
    if (!(baseline > 0.0)) throw InputError("baseline must be positive");
  }

  /// focal * baseline, the depth/disparity product.
  double fb() const { return focal_length_px * baseline_m; }

  /// Rig seen through horizontally mirrored images of the given width. The
  /// mirrored geometry is a valid left/right rig with the roles swapped.
  CameraRig mirrored(int width) const {
    CameraRig r = *this;
    r.principal_point.x() = (width - 1) - principal_point.x();
    return r;
  }
};

struct Projection {
  Vec2 pixel;
  double disparity;
};

inline std::optional<Vec3> try_backproject(const Vec2& p, double d,
                                           const CameraRig& rig) {
  if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
  const double z = rig.fb() / d;
  const double f = rig.focal_length_px;
  return Vec3((p.x() - rig.principal_point.x()) * z / f,
              (p.y() - rig.principal_point.y()) * z / f, z);
}

inline Vec3 backproject(const Vec2& p, double d, const CameraRig& rig) {
  auto X = try_backproject(p, d, rig);
  if (!X) throw NonFiniteDepthError("disparity must be positive");
  return *X;
}

inline std::optional<Projection> try_project(const Vec3& X,
                                             const CameraRig& rig) {
  if (!(X.z() > 0.0)) return std::nullopt;
  const double f = rig.focal_length_px;
  return Projection{Vec2(f * X.x() / X.z() + rig.principal_point.x(),
                         f * X.y() / X.z() + rig.principal_point.y()),
                    rig.fb() / X.z()};
}

inline Projection project(const Vec3& X, const CameraRig& rig) {
  auto p = try_project(X, rig);
  if (!p) throw BehindCameraError("point is not in front of the camera");
  return *p;
}

/// Rigid transform x' = R x + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  static Pose identity() { return {}; }
  bool is_valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).norm() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

/// Image-space scene flow (u, v, d0, d1).
struct SceneFlowVector {
  double u = 0.0;
  double v = 0.0;
  double d0 = 0.0;
  double d1 = 0.0;

  bool has_positive_disparity() const { return d0 > 0.0 && d1 > 0.0; }
  bool operator==(const SceneFlowVector&) const = default;
};

/// Dense scene-flow field on the reference grid plus a validity mask.
struct SceneFlowField {
  Grid<SceneFlowVector> vectors;
  Mask valid;

  SceneFlowField() = default;
  explicit SceneFlowField(ImageDims dims) : vectors(dims), valid(dims, 0) {}

  ImageDims dims() const { return vectors.dims(); }
  int width() const { return vectors.width(); }
  int height() const { return vectors.height(); }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }
  void set(int x, int y, const SceneFlowVector& s) {
    vectors(x, y) = s;
    valid(x, y) = 1;
  }
  void invalidate(int x, int y) { valid(x, y) = 0; }

  double density() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return valid.empty() ? 0.0 : static_cast<double>(n) / valid.size();
  }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
  bool operator==(const SceneFlowField&) const = default;
};

/// Target pixels of a scene-flow vector in the three non-reference views.
struct Correspondences {
  Vec2 next_left;    // I1l: p + (u, v)
  Vec2 right;        // I0r: p + (-d0, 0)
  Vec2 next_right;   // I1r: p + (u - d1, v)
};

inline Correspondences correspondences(const Vec2& p, const SceneFlowVector& s) {
  return {Vec2(p.x() + s.u, p.y() + s.v), Vec2(p.x() - s.d0, p.y()),
          Vec2(p.x() + s.u - s.d1, p.y() + s.v)};
}

/// Flow into the previous frame pair under constant 3D motion.
struct InverseMotion {
  double u = 0.0;
  double v = 0.0;
  double d = 0.0;
};

inline std::optional<InverseMotion> try_invert_motion(const Vec2& p,
                                                      const SceneFlowVector& s,
                                                      const CameraRig& rig) {
  if (s.d0 == s.d1) {
    // The motion has no depth component: the inverse is the negated 2D flow
    // with unchanged disparity.
    if (!(s.d0 > 0.0)) return std::nullopt;
    return InverseMotion{-s.u, -s.v, s.d0};
  }
  auto X0 = try_backproject(p, s.d0, rig);
  auto X1 = try_backproject(Vec2(p.x() + s.u, p.y() + s.v), s.d1, rig);
  if (!X0 || !X1) return std::nullopt;
  const Vec3 prev = *X0 - (*X1 - *X0);
  auto proj = try_project(prev, rig);
  if (!proj) return std::nullopt;
  return InverseMotion{proj->pixel.x() - p.x(), proj->pixel.y() - p.y(),
                       proj->disparity};
}

inline InverseMotion invert_motion(const Vec2& p, const SceneFlowVector& s,
                                   const CameraRig& rig) {
  if (!s.has_positive_disparity()) {
    throw NonFiniteDepthError("invert_motion requires d0 > 0 and d1 > 0");
  }
  auto r = try_invert_motion(p, s, rig);
  if (!r) throw BehindCameraError("inverted motion ends behind the camera");
  return *r;
}

/// 3D endpoints of a scene-flow vector.
inline std::optional<std::pair<Vec3, Vec3>> scene_flow_points(
    const Vec2& p, const SceneFlowVector& s, const CameraRig& rig) {
  auto X0 = try_backproject(p, s.d0, rig);
  auto X1 = try_backproject(Vec2(p.x() + s.u, p.y() + s.v), s.d1, rig);
  if (!X0 || !X1) return std::nullopt;
  return std::make_pair(*X0, *X1);
}

/// Field on horizontally mirrored images: pixels move to width-1-x and the
/// horizontal flow changes sign. Disparities are unchanged.
inline SceneFlowField mirror_field(const SceneFlowField& f) {
  SceneFlowField out(f.dims());
  const int w = f.width();
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      SceneFlowVector s = f.vectors(x, y);
      s.u = -s.u;
      out.vectors(w - 1 - x, y) = s;
      out.valid(w - 1 - x, y) = f.valid(x, y);
    }
  }
  return out;
}

}  // namespace sff

#endif  // SFF_CORE_GEOMETRY_HPP
