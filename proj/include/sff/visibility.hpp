#ifndef SFF_VISIBILITY_HPP
#define SFF_VISIBILITY_HPP

#include <cmath>
#include <limits>
#include <optional>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/visibility_masks.hpp"

namespace sff {

/// Depths closer than this are treated as the same surface.
inline constexpr double kDepthTieTolerance = 1e-6;

namespace detail {

/// Nearest-cell z-buffer splat; smaller depth wins, near-ties keep the first.
struct DepthSplat {
  Grid<double> depth;
  SceneFlowField field;

  explicit DepthSplat(ImageDims dims)
      : depth(dims, std::numeric_limits<double>::infinity()), field(dims) {}

  void splat(int x, int y, double z, const SceneFlowVector& s) {
    if (!depth.contains(x, y)) return;
    if (z < depth(x, y) - kDepthTieTolerance) {
      depth(x, y) = z;
      field.set(x, y, s);
    }
  }
};

}  // namespace detail

/// Moves every valid vector of the previous result one step further along its
/// own 3D motion. The prediction for the current frame lands at the rounded
/// position of the previous flow target; collisions keep the nearer point.
inline SceneFlowField warp_forward(const SceneFlowField& prev, const CameraRig& rig) {
  detail::DepthSplat out(prev.dims());
  for (int y = 0; y < prev.height(); ++y) {
    for (int x = 0; x < prev.width(); ++x) {
      if (!prev.is_valid(x, y)) continue;
      const SceneFlowVector& s = prev.vectors(x, y);
      const auto pts = scene_flow_points(Vec2(x, y), s, rig);
      if (!pts) continue;
      const Vec3 motion = pts->second - pts->first;
      const int tx = static_cast<int>(std::lround(x + s.u));
      const int ty = static_cast<int>(std::lround(y + s.v));
      if (!prev.valid.contains(tx, ty)) continue;
      // The point seen at the rounded target with the same disparity.
      const auto X1 = try_backproject(Vec2(tx, ty), s.d1, rig);
      if (!X1) continue;
      const auto next = try_project(*X1 + motion, rig);
      if (!next) continue;
      out.splat(tx, ty, X1->z(),
                {next->pixel.x() - tx, next->pixel.y() - ty, s.d1, next->disparity});
    }
  }
  return out.field;
}

/// Converts a left-referenced field to the right view of the same frame pair
/// (ordinary, unmirrored coordinates). Each vector is splatted to its rounded
/// stereo correspondence and keeps its 3D motion.
inline SceneFlowField to_right_reference(const SceneFlowField& left, const CameraRig& rig) {
  detail::DepthSplat out(left.dims());
  for (int y = 0; y < left.height(); ++y) {
    for (int x = 0; x < left.width(); ++x) {
      if (!left.is_valid(x, y)) continue;
      const SceneFlowVector& s = left.vectors(x, y);
      const auto pts = scene_flow_points(Vec2(x, y), s, rig);
      if (!pts) continue;
      const Vec3 motion = pts->second - pts->first;
      const int rx = static_cast<int>(std::lround(x - s.d0));
      if (!left.valid.contains(rx, y)) continue;
      // Right-camera coordinates share the intrinsics, so the same
      // backprojection applies.
      const Vec3 X0 = backproject(Vec2(rx, y), s.d0, rig);
      const auto next = try_project(X0 + motion, rig);
      if (!next) continue;
      out.splat(rx, y, X0.z(),
                {next->pixel.x() - rx, next->pixel.y() - y, s.d0, next->disparity});
    }
  }
  return out.field;
}

/// Target position and target-view depth of a reference pixel in one view.
struct ViewTarget {
  bool defined = false;
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
};

inline ViewTarget view_target(TargetView view, Pixel p, const SceneFlowVector& s,
                              const CameraRig& rig) {
  ViewTarget t;
  if (!s.has_positive_disparity()) return t;
  const double fb = rig.fb();
  switch (view) {
    case TargetView::right:
      return {true, Vec2(p.x - s.d0, p.y), fb / s.d0};
    case TargetView::next_left:
      return {true, Vec2(p.x + s.u, p.y + s.v), fb / s.d1};
    case TargetView::next_right:
      return {true, Vec2(p.x + s.u - s.d1, p.y + s.v), fb / s.d1};
    case TargetView::prev_left:
    case TargetView::prev_right: {
      const auto inv = try_invert_motion(Vec2(p.x, p.y), s, rig);
      if (!inv) return t;
      const double dx = view == TargetView::prev_right ? -inv->d : 0.0;
      return {true, Vec2(p.x + inv->u + dx, p.y + inv->v), fb / inv->d};
    }
  }
  return t;
}

/// Occlusion and out-of-bounds masks for all five target views. Targets
/// outside the image are out-of-bounds; a target whose rounded cell receives
/// a strictly nearer point (beyond the tie tolerance) is occluded. Invalid
/// prediction cells are visible and occlude nothing.
inline VisibilityMasks predict_visibility(const SceneFlowField& pred, const CameraRig& rig,
                                          ImageDims dims) {
  require_same_dims(pred.dims(), dims, "predict_visibility");
  VisibilityMasks masks(dims);
  Grid<ViewTarget> targets(dims);
  for (int vi = 0; vi < kTargetViews; ++vi) {
    const auto view = static_cast<TargetView>(vi);
    Grid<double> zbuf(dims, std::numeric_limits<double>::infinity());
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        ViewTarget t;
        if (pred.is_valid(x, y)) t = view_target(view, {x, y}, pred.vectors(x, y), rig);
        targets(x, y) = t;
        if (!pred.is_valid(x, y)) continue;
        if (!t.defined || !in_domain(t.pixel.x(), t.pixel.y(), dims)) {
          masks.oob[vi](x, y) = 1;
          continue;
        }
        double& z = zbuf(static_cast<int>(std::lround(t.pixel.x())),
                         static_cast<int>(std::lround(t.pixel.y())));
        z = std::min(z, t.depth);
      }
    }
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        const ViewTarget& t = targets(x, y);
        if (!pred.is_valid(x, y) || masks.oob[vi](x, y)) continue;
        const double nearest = zbuf(static_cast<int>(std::lround(t.pixel.x())),
                                    static_cast<int>(std::lround(t.pixel.y())));
        if (nearest < t.depth - kDepthTieTolerance) masks.occ[vi](x, y) = 1;
      }
    }
  }
  return masks;
}

/// Masks with nothing flagged, used when no previous result exists.
inline VisibilityMasks empty_visibility(ImageDims dims) { return VisibilityMasks(dims); }

}  // namespace sff

#endif  // SFF_VISIBILITY_HPP
