#ifndef SFF_CORE_VISIBILITY_MASKS_HPP
#define SFF_CORE_VISIBILITY_MASKS_HPP

#include <array>

#include "sff/core/grid.hpp"

namespace sff {

/// Non-reference views of a matching window, in cost-term order.
enum class TargetView : int { next_left = 0, right = 1, next_right = 2, prev_left = 3, prev_right = 4 };
constexpr int kTargetViews = 5;

/// Per-view occlusion and out-of-bounds flags over the reference grid. The
/// reference view itself is always visible and has no entry here.
struct VisibilityMasks {
  std::array<Mask, kTargetViews> occ;
  std::array<Mask, kTargetViews> oob;

  VisibilityMasks() = default;
  explicit VisibilityMasks(ImageDims dims) {
    for (auto& m : occ) m = Mask(dims, 0);
    for (auto& m : oob) m = Mask(dims, 0);
  }

  ImageDims dims() const { return occ[0].dims(); }
  Mask& occluded(TargetView v) { return occ[static_cast<int>(v)]; }
  const Mask& occluded(TargetView v) const { return occ[static_cast<int>(v)]; }
  Mask& out_of_bounds(TargetView v) { return oob[static_cast<int>(v)]; }
  const Mask& out_of_bounds(TargetView v) const { return oob[static_cast<int>(v)]; }

  std::size_t count_occluded(TargetView v) const {
    std::size_t n = 0;
    for (auto b : occluded(v)) n += b != 0;
    return n;
  }
  std::size_t count_out_of_bounds(TargetView v) const {
    std::size_t n = 0;
    for (auto b : out_of_bounds(v)) n += b != 0;
    return n;
  }
};

}  // namespace sff

#endif  // SFF_CORE_VISIBILITY_MASKS_HPP
