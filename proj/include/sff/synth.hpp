#ifndef SFF_SYNTH_HPP
#define SFF_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/parallel.hpp"

namespace sff {

/// Procedural value-noise texture in plane coordinates (meters).
struct Texture {
  std::uint64_t seed = 1;
  double cell = 0.1;      // finest lattice spacing
  int octaves = 4;
  double contrast = 200.0;
  double offset = 28.0;
  double gradient = 0.0;  // added linear ramp along the first plane axis, per meter

  static double lattice(std::int64_t i, std::int64_t j, std::uint64_t seed) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(i) * 0xC2B2AE3D27D4EB4FULL;
    h = (h ^ (h >> 31)) * 0xBF58476D1CE4E5B9ULL;
    h ^= static_cast<std::uint64_t>(j) * 0x165667B19E3779F9ULL;
    h = (h ^ (h >> 29)) * 0x94D049BB133111EBULL;
    h ^= h >> 32;
    return static_cast<double>(h & 0xFFFFFF) / static_cast<double>(0xFFFFFF);
  }

  static double smooth_noise(double a, double b, std::uint64_t seed) {
    const double fa = std::floor(a), fb = std::floor(b);
    const auto i = static_cast<std::int64_t>(fa);
    const auto j = static_cast<std::int64_t>(fb);
    double ta = a - fa, tb = b - fb;
    ta = ta * ta * (3 - 2 * ta);
    tb = tb * tb * (3 - 2 * tb);
    const double v00 = lattice(i, j, seed), v10 = lattice(i + 1, j, seed);
    const double v01 = lattice(i, j + 1, seed), v11 = lattice(i + 1, j + 1, seed);
    return (1 - tb) * ((1 - ta) * v00 + ta * v10) + tb * ((1 - ta) * v01 + ta * v11);
  }

  double operator()(double a, double b) const {
    double sum = 0.0, norm = 0.0, amp = 1.0, scale = cell * (1 << (octaves - 1));
    for (int o = 0; o < octaves; ++o) {
      sum += amp * smooth_noise(a / scale, b / scale, seed + 7919u * o);
      norm += amp;
      amp *= 0.7;
      scale *= 0.5;
    }
    return offset + contrast * sum / norm + gradient * a;
  }
};

/// Rectangular textured plane. Points are center + a*axis_a + b*axis_b with
/// |a| <= half_a, |b| <= half_b; an unbounded plane has infinite extents.
struct SynthPlane {
  Vec3 center = Vec3(0, 0, 10);
  Vec3 axis_a = Vec3::UnitX();
  Vec3 axis_b = Vec3::UnitY();
  double half_a = std::numeric_limits<double>::infinity();
  double half_b = std::numeric_limits<double>::infinity();
  Texture texture;
  /// Per-frame rigid motion: rotation about the current center, then
  /// translation of the center.
  Pose motion = Pose::identity();

  Vec3 normal() const { return axis_a.cross(axis_b).normalized(); }
};

struct SceneSpec {
  std::vector<SynthPlane> planes;
  /// Per-frame camera motion in the camera frame: a point static in the world
  /// with camera-k coordinates X has camera-(k+1) coordinates ego.apply(X).
  Pose ego = Pose::identity();
  int supersample = 2;
};

/// Ground truth for one reference frame (left view at frame k to frame k+1).
struct GroundTruth {
  SceneFlowField field;  // valid where a plane is hit
  /// Not visible (occluded or out of the image) in I0r, I1l or I1r.
  Mask occluded;
  Grid<int> plane_id;
};

struct RenderedPair {
  GrayImage left;
  GrayImage right;
};

class SceneRenderer {
 public:
  SceneRenderer(SceneSpec spec, CameraRig rig, ImageDims dims)
      : spec_(std::move(spec)), rig_(rig), dims_(dims) {
    check_dims(dims);
    for (const auto& p : spec_.planes) {
      if (std::abs(p.axis_a.dot(p.axis_b)) > 1e-9 || std::abs(p.axis_a.norm() - 1) > 1e-9 ||
          std::abs(p.axis_b.norm() - 1) > 1e-9) {
        throw InputError("plane axes must be orthonormal");
      }
    }
  }

  const CameraRig& rig() const { return rig_; }
  ImageDims dims() const { return dims_; }

  /// Plane placement at frame k in camera-k coordinates.
  struct Placement {
    Vec3 center, axis_a, axis_b;
  };

  Placement placement(int plane, int frame) const {
    const SynthPlane& p = spec_.planes[plane];
    Placement pl{p.center, p.axis_a, p.axis_b};
    for (int k = 0; k < frame; ++k) {
      // Object motion in world (= camera-0) coordinates.
      pl.axis_a = p.motion.rotation * pl.axis_a;
      pl.axis_b = p.motion.rotation * pl.axis_b;
      pl.center = pl.center + p.motion.translation;
    }
    // World to camera-k: apply the ego motion k times.
    for (int k = 0; k < frame; ++k) {
      pl.center = spec_.ego.apply(pl.center);
      pl.axis_a = spec_.ego.rotation * pl.axis_a;
      pl.axis_b = spec_.ego.rotation * pl.axis_b;
    }
    return pl;
  }

  struct Hit {
    int plane = -1;
    double t = std::numeric_limits<double>::infinity();  // depth along z
    double a = 0, b = 0;
  };

  /// Nearest plane hit along the ray from `origin` (camera-k coordinates)
  /// through direction `dir` (dir.z == 1, so t is depth difference in z).
  Hit cast(const std::vector<Placement>& pls, const Vec3& origin, const Vec3& dir) const {
    Hit best;
    for (int i = 0; i < static_cast<int>(pls.size()); ++i) {
      const Placement& pl = pls[i];
      const Vec3 n = pl.axis_a.cross(pl.axis_b);
      const double denom = n.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double t = n.dot(pl.center - origin) / denom;
      if (!(t > 1e-9) || t >= best.t) continue;
      const Vec3 X = origin + t * dir;
      const double a = (X - pl.center).dot(pl.axis_a);
      const double b = (X - pl.center).dot(pl.axis_b);
      const SynthPlane& p = spec_.planes[i];
      if (std::abs(a) > p.half_a || std::abs(b) > p.half_b) continue;
      best = {i, t, a, b};
    }
    return best;
  }

  std::vector<Placement> placements(int frame) const {
    std::vector<Placement> pls;
    for (int i = 0; i < static_cast<int>(spec_.planes.size()); ++i)
      pls.push_back(placement(i, frame));
    return pls;
  }

  Vec3 ray(double px, double py) const {
    const double f = rig_.focal_length_px;
    return Vec3((px - rig_.principal_point.x()) / f, (py - rig_.principal_point.y()) / f, 1.0);
  }

  Vec3 camera_origin(bool right) const {
    return right ? Vec3(rig_.baseline_m, 0, 0) : Vec3::Zero();
  }

  GrayImage render(int frame, bool right) const {
    const auto pls = placements(frame);
    GrayImage img(dims_);
    const int ss = std::max(1, spec_.supersample);
    const Vec3 origin = camera_origin(right);
    parallel_for(0, dims_.height, [&](int y) {
      for (int x = 0; x < dims_.width; ++x) {
        double acc = 0.0;
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double px = x + (sx + 0.5) / ss - 0.5;
            const double py = y + (sy + 0.5) / ss - 0.5;
            const Hit h = cast(pls, origin, ray(px, py));
            if (h.plane >= 0) acc += spec_.planes[h.plane].texture(h.a, h.b);
          }
        }
        img(x, y) = acc / (ss * ss);
      }
    });
    return img;
  }

  RenderedPair render_pair(int frame) const { return {render(frame, false), render(frame, true)}; }

  /// Whether camera-frame point X is the first surface hit from `origin`.
  bool visible_from(const std::vector<Placement>& pls, const Vec3& origin, const Vec3& X) const {
    const Vec3 rel = X - origin;
    if (!(rel.z() > 0)) return false;
    const Hit h = cast(pls, origin, rel / rel.z());
    return h.plane >= 0 && h.t >= rel.z() * (1 - 1e-9) - 1e-9;
  }

  GroundTruth ground_truth(int frame) const {
    const auto pls0 = placements(frame);
    const auto pls1 = placements(frame + 1);
    GroundTruth gt{SceneFlowField(dims_), Mask(dims_, 0), Grid<int>(dims_, -1)};
    parallel_for(0, dims_.height, [&](int y) {
      for (int x = 0; x < dims_.width; ++x) {
        const Hit h = cast(pls0, Vec3::Zero(), ray(x, y));
        if (h.plane < 0) continue;
        gt.plane_id(x, y) = h.plane;
        const Vec3 X0 = h.t * ray(x, y);
        const Placement& p1 = pls1[h.plane];
        const Vec3 X1 = p1.center + h.a * p1.axis_a + h.b * p1.axis_b;
        const auto proj = try_project(X1, rig_);
        if (!proj) continue;
        const double d0 = rig_.fb() / X0.z();
        gt.field.set(x, y, {proj->pixel.x() - x, proj->pixel.y() - y, d0, proj->disparity});
        const Correspondences c = correspondences(Vec2(x, y), gt.field.vectors(x, y));
        const bool vis = in_domain(c.right.x(), c.right.y(), dims_) &&
                         in_domain(c.next_left.x(), c.next_left.y(), dims_) &&
                         in_domain(c.next_right.x(), c.next_right.y(), dims_) &&
                         visible_from(pls0, camera_origin(true), X0) &&
                         visible_from(pls1, camera_origin(false), X1) &&
                         visible_from(pls1, camera_origin(true), X1);
        gt.occluded(x, y) = vis ? 0 : 1;
      }
    });
    return gt;
  }

 private:
  SceneSpec spec_;
  CameraRig rig_;
  ImageDims dims_;
};

/// Rig used by the built-in scenes: focal scaled with the image width.
inline CameraRig default_synth_rig(ImageDims dims) {
  return CameraRig(0.8 * dims.width, Vec2((dims.width - 1) / 2.0, (dims.height - 1) / 2.0), 0.5);
}

/// Pose from a rotation vector and a translation.
inline Pose make_pose(const Vec3& rotvec, const Vec3& t) {
  Pose p;
  const double angle = rotvec.norm();
  if (angle > 0) p.rotation = Eigen::AngleAxisd(angle, rotvec / angle).toRotationMatrix();
  p.translation = t;
  return p;
}

/// Static world: slanted ground-like background, a back wall and two boxes'
/// front faces; the camera moves forward.
inline SceneSpec static_scene(std::uint64_t seed = 3) {
  SceneSpec s;
  SynthPlane wall;
  wall.center = Vec3(0, 0, 18);
  wall.texture = {seed, 0.12, 5, 200, 28, 0};
  s.planes.push_back(wall);
  SynthPlane ground;
  ground.center = Vec3(0, 2.0, 10);
  ground.axis_a = Vec3::UnitX();
  ground.axis_b = Vec3(0, -0.15, 1).normalized();
  ground.half_b = 7.9 / Vec3(0, -0.15, 1).norm();
  ground.texture = {seed + 1, 0.05, 5, 200, 28, 0};
  s.planes.push_back(ground);
  SynthPlane box1;
  box1.center = Vec3(-2.2, 0.2, 9);
  box1.half_a = 1.3;
  box1.half_b = 1.2;
  box1.texture = {seed + 2, 0.05, 4, 200, 28, 0};
  s.planes.push_back(box1);
  SynthPlane box2;
  box2.center = Vec3(2.5, -0.3, 12);
  box2.axis_a = Vec3(1, 0, -0.4).normalized();
  box2.half_a = 1.5;
  box2.half_b = 1.4;
  box2.texture = {seed + 3, 0.06, 4, 200, 28, 0};
  s.planes.push_back(box2);
  s.ego = make_pose(Vec3(0, 0.004, 0), Vec3(0, 0, -0.25));
  return s;
}

/// Occlusion scene for a static camera over a back wall: a board sliding
/// sideways, and a nearer fast object leaving the image through the right
/// border, so part of it has no correspondence in the next frame.
inline SceneSpec occlusion_scene(std::uint64_t seed = 5) {
  SceneSpec s;
  SynthPlane wall;
  wall.center = Vec3(0, 0, 16);
  wall.texture = {seed, 0.1, 5, 200, 28, 0};
  s.planes.push_back(wall);
  SynthPlane board;
  board.center = Vec3(-1.2, 0.1, 7);
  board.half_a = 1.0;
  board.half_b = 1.5;
  board.texture = {seed + 2, 0.04, 4, 200, 28, 0};
  board.motion = make_pose(Vec3::Zero(), Vec3(0.25, 0, 0));
  s.planes.push_back(board);
  SynthPlane leaving;
  leaving.center = Vec3(2.27, -0.6, 6);
  leaving.half_a = 1.0;
  leaving.half_b = 6.0 / 7.0;
  leaving.texture = {seed + 4, 0.04, 4, 200, 28, 0};
  leaving.motion = make_pose(Vec3::Zero(), Vec3(0.6, 0, 0));
  s.planes.push_back(leaving);
  return s;
}

/// Two fronto-parallel planes, the near one translating in front of the far
/// one.
inline SceneSpec two_plane_scene(std::uint64_t seed = 11) {
  SceneSpec s;
  SynthPlane far_plane;
  far_plane.center = Vec3(0, 0, 12);
  far_plane.texture = {seed, 0.1, 4, 200, 28, 0};
  s.planes.push_back(far_plane);
  SynthPlane near_plane;
  near_plane.center = Vec3(0, 0, 6);
  near_plane.half_a = 1.0;
  near_plane.half_b = 0.8;
  near_plane.texture = {seed + 1, 0.05, 4, 200, 28, 0};
  near_plane.motion = make_pose(Vec3::Zero(), Vec3(0.3, 0.05, -0.2));
  s.planes.push_back(near_plane);
  return s;
}

}  // namespace sff

#endif  // SFF_SYNTH_HPP
