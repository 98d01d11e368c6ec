#ifndef SFF_EVAL_HPP
#define SFF_EVAL_HPP

#include <cmath>
#include <cstddef>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"

namespace sff {

/// Benchmark outlier rule: error >= 3 px and >= 5 % of the true magnitude.
inline constexpr double kOutlierAbsolutePx = 3.0;
inline constexpr double kOutlierRelative = 0.05;

inline bool is_outlier(double error, double gt_magnitude) {
  return error >= kOutlierAbsolutePx && error >= kOutlierRelative * gt_magnitude;
}

/// Metrics over one pixel subset. EPEs average over pixels with an estimate;
/// outlier rates and density are fractions of all ground-truth pixels in the
/// subset, and a missing estimate counts as an outlier.
struct EvalSplit {
  std::size_t pixels = 0;     // ground-truth-valid pixels in the subset
  std::size_t estimated = 0;  // of which the field is valid
  double epe_d1 = 0, epe_d2 = 0, epe_fl = 0;
  double outlier_d1 = 0, outlier_d2 = 0, outlier_fl = 0, outlier_sf = 0;
  double density = 0;
};

struct EvalReport {
  EvalSplit all;
  EvalSplit occluded;  // empty unless an occlusion mask was given
};

namespace detail {

struct SplitAccumulator {
  std::size_t n = 0, est = 0, o1 = 0, o2 = 0, ofl = 0, osf = 0;
  double e1 = 0, e2 = 0, efl = 0;

  void add(const SceneFlowVector* est_v, const SceneFlowVector& gt) {
    ++n;
    if (est_v == nullptr) {
      ++o1, ++o2, ++ofl, ++osf;
      return;
    }
    ++est;
    const double a = std::abs(est_v->d0 - gt.d0);
    const double b = std::abs(est_v->d1 - gt.d1);
    const double c = std::hypot(est_v->u - gt.u, est_v->v - gt.v);
    e1 += a, e2 += b, efl += c;
    const bool b1 = is_outlier(a, std::abs(gt.d0));
    const bool b2 = is_outlier(b, std::abs(gt.d1));
    const bool bf = is_outlier(c, std::hypot(gt.u, gt.v));
    o1 += b1, o2 += b2, ofl += bf, osf += (b1 || b2 || bf);
  }

  EvalSplit finish() const {
    EvalSplit s;
    s.pixels = n;
    s.estimated = est;
    if (est > 0) {
      s.epe_d1 = e1 / est;
      s.epe_d2 = e2 / est;
      s.epe_fl = efl / est;
    }
    if (n > 0) {
      const double dn = static_cast<double>(n);
      s.outlier_d1 = o1 / dn;
      s.outlier_d2 = o2 / dn;
      s.outlier_fl = ofl / dn;
      s.outlier_sf = osf / dn;
      s.density = est / dn;
    }
    return s;
  }
};

}  // namespace detail

/// Compares an estimate with ground truth. `gt.valid` marks pixels with
/// ground truth; `occluded` (optional) selects the occluded-only split.
inline EvalReport evaluate(const SceneFlowField& field, const SceneFlowField& gt,
                           const Mask* occluded = nullptr) {
  require_same_dims(field.dims(), gt.dims(), "evaluate");
  if (occluded) require_same_dims(field.dims(), occluded->dims(), "evaluate occlusion mask");
  detail::SplitAccumulator all, occ;
  for (std::size_t i = 0; i < gt.valid.size(); ++i) {
    if (!gt.valid[i]) continue;
    const SceneFlowVector* est = field.valid[i] ? &field.vectors[i] : nullptr;
    all.add(est, gt.vectors[i]);
    if (occluded && (*occluded)[i]) occ.add(est, gt.vectors[i]);
  }
  return {all.finish(), occ.finish()};
}

/// Fraction of the masked ground-truth pixels where `field` is valid.
inline double masked_density(const SceneFlowField& field, const SceneFlowField& gt,
                             const Mask& mask) {
  require_same_dims(field.dims(), mask.dims(), "masked_density");
  std::size_t n = 0, k = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i] || !gt.valid[i]) continue;
    ++n;
    k += field.valid[i] != 0;
  }
  return n == 0 ? 0.0 : static_cast<double>(k) / n;
}

}  // namespace sff

#endif  // SFF_EVAL_HPP
