#ifndef SFF_MATCHER_HPP
#define SFF_MATCHER_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/core/image_ops.hpp"
#include "sff/core/parallel.hpp"
#include "sff/core/visibility_masks.hpp"
#include "sff/features.hpp"
#include "sff/knn.hpp"

namespace sff {

inline constexpr double kInfCost = std::numeric_limits<double>::infinity();

struct VisibilityCostConfig {
  double theta_occ = 10000.0;
  double theta_oob = 10000.0;
  double theta_penalty = 1e6;

  void validate() const {
    if (!(theta_occ > 0 && theta_oob > 0 && theta_occ <= theta_penalty &&
          theta_oob <= theta_penalty)) {
      throw InputError("visibility costs need 0 < theta_occ, theta_oob <= theta_penalty");
    }
  }
};

struct MatchConfig {
  int sub_scales = 3;
  int iterations_per_scale = 6;
  int knn = 4;  // neighbours per tree query
  int wht_length = kWhtDefaultLength;
  std::uint64_t seed = 42;
  VisibilityCostConfig visibility;

  void validate() const {
    if (sub_scales < 0) throw InputError("sub_scales must be >= 0");
    if (iterations_per_scale < 1) throw InputError("iterations_per_scale must be >= 1");
    if (knn < 1) throw InputError("knn must be >= 1");
    visibility.validate();
  }
};

/// Views of one matching window. Two frame pairs are the dual setting; the
/// previous pair makes it the multi-frame setting.
struct MatchImages {
  GrayImage ref;         // I0l
  GrayImage next_left;   // I1l
  GrayImage right;       // I0r
  GrayImage next_right;  // I1r
  std::optional<GrayImage> prev_left;   // I-1l
  std::optional<GrayImage> prev_right;  // I-1r

  bool multi() const { return prev_left.has_value(); }
  ImageDims dims() const { return ref.dims(); }

  /// Order: I0l, I1l, I0r, I1r [, I-1l, I-1r].
  static MatchImages from(std::vector<GrayImage> views) {
    if (views.size() != 4 && views.size() != 6) {
      throw InputError("matching needs 4 (dual) or 6 (multi) images, got " +
                       std::to_string(views.size()));
    }
    for (const auto& v : views) require_same_dims(views[0].dims(), v.dims(), "match images");
    MatchImages m{std::move(views[0]), std::move(views[1]), std::move(views[2]),
                  std::move(views[3]), std::nullopt, std::nullopt};
    if (views.size() == 6) {
      m.prev_left = std::move(views[4]);
      m.prev_right = std::move(views[5]);
    }
    return m;
  }

  std::vector<const GrayImage*> views() const {
    std::vector<const GrayImage*> v{&ref, &next_left, &right, &next_right};
    if (multi()) {
      v.push_back(&*prev_left);
      v.push_back(&*prev_right);
    }
    return v;
  }
};

/// Descriptor fields of all views at one sampling step. Index 0 is the
/// reference; 1 + TargetView for the others.
struct ScaleDescriptors {
  int step = 1;
  std::vector<DescriptorField> fields;

  const DescriptorField& ref() const { return fields[0]; }
  const DescriptorField& view(TargetView v) const { return fields[1 + static_cast<int>(v)]; }
  bool multi() const { return fields.size() == 6; }
};

inline ScaleDescriptors build_scale_descriptors(const MatchImages& imgs, const PcaBasis& basis,
                                                int step) {
  ScaleDescriptors sd;
  sd.step = step;
  for (const GrayImage* v : imgs.views()) {
    sd.fields.push_back(dense_descriptor_field(scale_smooth(*v, step), basis, step));
  }
  return sd;
}

/// Matching cost of one scene-flow vector: three patch costs in the dual
/// setting, five in the multi-frame setting. With visibility masks each term
/// is replaced by the occlusion / out-of-bounds / penalty constants.
class SceneFlowCost {
 public:
  SceneFlowCost(const ScaleDescriptors& desc, const CameraRig& rig,
                const VisibilityMasks* masks = nullptr, VisibilityCostConfig vis = {})
      : desc_(&desc), rig_(rig), masks_(masks), vis_(vis) {}

  int step() const { return desc_->step; }
  bool multi() const { return desc_->multi(); }

  /// Individual terms in TargetView order; t-1 entries are zero in dual mode.
  std::array<double, kTargetViews> terms(Pixel p, const SceneFlowVector& s) const {
    std::array<double, kTargetViews> t{};
    if (!s.has_positive_disparity()) {
      t.fill(kInfCost);
      return t;
    }
    const double px = p.x, py = p.y;
    t[0] = term(TargetView::next_left, p, px + s.u, py + s.v, true);
    t[1] = term(TargetView::right, p, px - s.d0, py, true);
    t[2] = term(TargetView::next_right, p, px + s.u - s.d1, py + s.v, true);
    if (multi()) {
      const auto inv = try_invert_motion(Vec2(px, py), s, rig_);
      if (inv) {
        t[3] = term(TargetView::prev_left, p, px + inv->u, py + inv->v, true);
        t[4] = term(TargetView::prev_right, p, px + inv->u - inv->d, py + inv->v, true);
      } else {
        t[3] = term(TargetView::prev_left, p, 0, 0, false);
        t[4] = term(TargetView::prev_right, p, 0, 0, false);
      }
    }
    return t;
  }

  double operator()(Pixel p, const SceneFlowVector& s) const {
    const auto t = terms(p, s);
    double c = 0.0;
    for (double v : t) c += v;
    return c;
  }

 private:
  /// `defined` is false when the correspondence has no finite target.
  double term(TargetView v, Pixel p, double tx, double ty, bool defined) const {
    if (masks_ == nullptr) {
      if (!defined) return kInfCost;
      return patch_cost(desc_->ref(), p, desc_->view(v), tx, ty, desc_->step);
    }
    const int vi = static_cast<int>(v);
    if (masks_->occ[vi](p.x, p.y)) return vis_.theta_occ;
    const bool inside = defined && in_domain(tx, ty, desc_->ref().dims());
    if (masks_->oob[vi](p.x, p.y)) return inside ? vis_.theta_penalty : vis_.theta_oob;
    if (!inside) return vis_.theta_penalty;
    return patch_cost(desc_->ref(), p, desc_->view(v), tx, ty, desc_->step);
  }

  const ScaleDescriptors* desc_;
  CameraRig rig_;
  const VisibilityMasks* masks_;
  VisibilityCostConfig vis_;
};

/// Field on the sampling grid of one scale: cell (i, j) sits at full
/// resolution pixel (i * step, j * step). Vectors are in full-resolution
/// pixel units at every scale.
struct ScaleField {
  int step = 1;
  Grid<SceneFlowVector> vectors;
  Mask valid;
  Grid<double> cost;

  ScaleField() = default;
  ScaleField(ImageDims full, int s)
      : step(s),
        vectors(coarse_dims(full, s)),
        valid(coarse_dims(full, s), 0),
        cost(coarse_dims(full, s), kInfCost) {}

  static ImageDims coarse_dims(ImageDims full, int s) {
    return {(full.width + s - 1) / s, (full.height + s - 1) / s};
  }
  ImageDims dims() const { return vectors.dims(); }
  Pixel pixel(int i, int j) const { return {i * step, j * step}; }
};

struct MatchStats {
  std::size_t propagation_accepts = 0;
  std::size_t random_accepts = 0;
};

enum class MatchPass { propagation, random_search };

/// Receives the per-cell cost grid before and after every pass.
using MatchTrace = std::function<void(int scale, MatchPass, const Grid<double>& before,
                                      const Grid<double>& after)>;

inline void recompute_costs(ScaleField& f, const SceneFlowCost& cost) {
  parallel_for(0, f.dims().height, [&](int j) {
    for (int i = 0; i < f.dims().width; ++i) {
      f.cost(i, j) = f.valid(i, j) ? cost(f.pixel(i, j), f.vectors(i, j)) : kInfCost;
    }
  });
}

namespace detail {

inline bool try_accept(ScaleField& f, int i, int j, const SceneFlowVector& cand,
                       const SceneFlowCost& cost, std::size_t& counter) {
  const double c = cost(f.pixel(i, j), cand);
  if (!(c < f.cost(i, j))) return false;
  f.vectors(i, j) = cand;
  f.valid(i, j) = 1;
  f.cost(i, j) = c;
  ++counter;
  return true;
}

/// Open interval ]-1, 1[.
inline double open_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  double r;
  do r = dist(rng);
  while (r <= -1.0);
  return r;
}

}  // namespace detail

/// Sequential propagation sweep from one quadrant direction (0: from top-left,
/// 1: from bottom-right, 2: from top-right, 3: from bottom-left).
inline void propagation_sweep(ScaleField& f, int direction, const SceneFlowCost& cost,
                              MatchStats& stats) {
  const int w = f.dims().width;
  const int h = f.dims().height;
  const int dx = (direction == 0 || direction == 3) ? 1 : -1;
  const int dy = (direction == 0 || direction == 2) ? 1 : -1;
  for (int jj = 0; jj < h; ++jj) {
    const int j = dy > 0 ? jj : h - 1 - jj;
    for (int ii = 0; ii < w; ++ii) {
      const int i = dx > 0 ? ii : w - 1 - ii;
      const int pi = i - dx;
      const int pj = j - dy;
      if (pi >= 0 && pi < w && f.valid(pi, j)) {
        const auto cand = f.vectors(pi, j);
        if (!(f.valid(i, j) && cand == f.vectors(i, j)))
          detail::try_accept(f, i, j, cand, cost, stats.propagation_accepts);
      }
      if (pj >= 0 && pj < h && f.valid(i, pj)) {
        const auto cand = f.vectors(i, pj);
        if (!(f.valid(i, j) && cand == f.vectors(i, j)))
          detail::try_accept(f, i, j, cand, cost, stats.propagation_accepts);
      }
    }
  }
}

/// Random search: every component of every valid vector is perturbed by an
/// independent uniform offset in ]-1, 1[ scale steps; kept iff cheaper.
inline void random_search(ScaleField& f, const SceneFlowCost& cost, std::uint64_t seed, int scale,
                          int iteration, MatchStats& stats) {
  const double r = f.step;
  std::vector<MatchStats> row_stats(f.dims().height);
  parallel_for(0, f.dims().height, [&](int j) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(scale), static_cast<std::uint32_t>(iteration),
                      static_cast<std::uint32_t>(j)};
    std::mt19937_64 rng(seq);
    for (int i = 0; i < f.dims().width; ++i) {
      if (!f.valid(i, j)) continue;
      SceneFlowVector cand = f.vectors(i, j);
      cand.u += r * detail::open_unit(rng);
      cand.v += r * detail::open_unit(rng);
      cand.d0 += r * detail::open_unit(rng);
      cand.d1 += r * detail::open_unit(rng);
      detail::try_accept(f, i, j, cand, cost, row_stats[j].random_accepts);
    }
  });
  for (const auto& s : row_stats) stats.random_accepts += s.random_accepts;
}

/// `iterations` rounds of one directional propagation sweep (cycling the four
/// quadrant directions) followed by a random-search pass. Per-cell cost never
/// increases.
inline MatchStats propagate_and_search(ScaleField& f, const SceneFlowCost& cost, int iterations,
                                       std::uint64_t seed, int scale,
                                       const MatchTrace& trace = {}) {
  MatchStats stats;
  for (int it = 0; it < iterations; ++it) {
    Grid<double> before;
    if (trace) before = f.cost;
    propagation_sweep(f, it % 4, cost, stats);
    if (trace) {
      trace(scale, MatchPass::propagation, before, f.cost);
      before = f.cost;
    }
    random_search(f, cost, seed, scale, it, stats);
    if (trace) trace(scale, MatchPass::random_search, before, f.cost);
  }
  return stats;
}

/// Child cells copy their parent's vector (full-resolution units, no scaling).
inline ScaleField upsample_field(const ScaleField& coarse, ImageDims full) {
  ScaleField fine(full, coarse.step / 2);
  for (int j = 0; j < fine.dims().height; ++j) {
    for (int i = 0; i < fine.dims().width; ++i) {
      const int pi = std::min(i / 2, coarse.dims().width - 1);
      const int pj = std::min(j / 2, coarse.dims().height - 1);
      fine.vectors(i, j) = coarse.vectors(pi, pj);
      fine.valid(i, j) = coarse.valid(pi, pj);
    }
  }
  return fine;
}

/// WHT indices of the three target views on the coarse sampling grid.
struct InitIndices {
  KnnIndex next_left;
  KnnIndex right;       // epipolar
  KnnIndex next_right;  // epipolar
};

inline KnnIndex build_index(const GrayImage& smoothed, int step, int length, bool epipolar) {
  const ImageDims cd = ScaleField::coarse_dims(smoothed.dims(), step);
  std::vector<Pixel> pixels;
  std::vector<double> feats(cd.area() * length);
  pixels.reserve(cd.area());
  for (int j = 0; j < cd.height; ++j) {
    for (int i = 0; i < cd.width; ++i) {
      const std::size_t k = pixels.size();
      pixels.push_back({i * step, j * step});
      wht_descriptor(smoothed, i * step, j * step, step,
                     {feats.data() + k * length, static_cast<std::size_t>(length)});
    }
  }
  return KnnIndex(length, pixels, feats, smoothed.width(), epipolar);
}

/// Candidate search on the coarsest grid: every combination of returned
/// neighbours (flow from I1l, d0 from the I0r row, d1 from the I1r row at the
/// flow target) plus the prior's vector, keeping the cheapest.
inline ScaleField initialize(const MatchImages& imgs, const SceneFlowCost& cost,
                             const MatchConfig& cfg, const SceneFlowField* prior) {
  const int step = cost.step();
  const ImageDims full = imgs.dims();
  const GrayImage ref = scale_smooth(imgs.ref, step);
  InitIndices idx{build_index(scale_smooth(imgs.next_left, step), step, cfg.wht_length, false),
                  build_index(scale_smooth(imgs.right, step), step, cfg.wht_length, true),
                  build_index(scale_smooth(imgs.next_right, step), step, cfg.wht_length, true)};
  ScaleField f(full, step);
  parallel_for(0, f.dims().height, [&](int j) {
    std::vector<double> q(cfg.wht_length);
    for (int i = 0; i < f.dims().width; ++i) {
      const Pixel p = f.pixel(i, j);
      wht_descriptor(ref, p.x, p.y, step, q);
      double best = kInfCost;
      SceneFlowVector best_s;
      auto consider = [&](const SceneFlowVector& s) {
        const double c = cost(p, s);
        if (c < best) {
          best = c;
          best_s = s;
        }
      };
      const auto flows = idx.next_left.query(q, cfg.knn);
      const auto rights = idx.right.query(q, cfg.knn, p.y);
      for (const auto& fl : flows) {
        const double u = fl.pixel.x - p.x;
        const double v = fl.pixel.y - p.y;
        const auto next_rights = idx.next_right.query(q, cfg.knn, fl.pixel.y);
        for (const auto& r0 : rights) {
          const double d0 = p.x - r0.pixel.x;
          if (d0 <= 0) continue;
          for (const auto& r1 : next_rights) {
            const double d1 = fl.pixel.x - r1.pixel.x;
            if (d1 <= 0) continue;
            consider({u, v, d0, d1});
          }
        }
      }
      if (prior && prior->is_valid(p.x, p.y)) consider(prior->vectors(p.x, p.y));
      if (best < kInfCost) {
        f.vectors(i, j) = best_s;
        f.valid(i, j) = 1;
        f.cost(i, j) = best;
      }
    }
  });
  return f;
}

/// Re-offers the prior's vector at every cell after upsampling; kept only
/// where cheaper at this scale.
inline void offer_prior(ScaleField& f, const SceneFlowField& prior, const SceneFlowCost& cost) {
  parallel_for(0, f.dims().height, [&](int j) {
    std::size_t accepted = 0;
    for (int i = 0; i < f.dims().width; ++i) {
      const Pixel p = f.pixel(i, j);
      if (prior.is_valid(p.x, p.y)) detail::try_accept(f, i, j, prior.vectors(p.x, p.y), cost, accepted);
    }
  });
}

struct MatchOptions {
  const SceneFlowField* prior = nullptr;      // warped previous result
  const VisibilityMasks* masks = nullptr;     // predicted visibility
  const ScaleField* initial = nullptr;        // replaces tree initialization
  MatchTrace trace;
};

struct MatchResult {
  SceneFlowField field;
  Grid<double> cost;
  MatchStats stats;
};

/// Multi-scale matching: initialization on the coarsest grid, then
/// propagation and random search on every scale from coarse to fine. A prior
/// is also offered again on each finer scale.
inline MatchResult match(const MatchImages& imgs, const MatchConfig& cfg, const CameraRig& rig,
                         const PcaBasis& basis, const MatchOptions& opt = {}) {
  cfg.validate();
  for (const GrayImage* v : imgs.views()) require_same_dims(imgs.dims(), v->dims(), "match");
  if (opt.masks) require_same_dims(imgs.dims(), opt.masks->dims(), "visibility masks");
  if (opt.prior) require_same_dims(imgs.dims(), opt.prior->dims(), "prior");
  const ImageDims full = imgs.dims();
  const int coarsest = cfg.sub_scales;
  MatchResult result;
  ScaleField field;
  for (int scale = coarsest; scale >= 0; --scale) {
    const int step = 1 << scale;
    const ScaleDescriptors desc = build_scale_descriptors(imgs, basis, step);
    const SceneFlowCost cost(desc, rig, opt.masks, cfg.visibility);
    if (scale == coarsest) {
      if (opt.initial) {
        if (opt.initial->step != step) throw InputError("initial field has the wrong step");
        field = *opt.initial;
        recompute_costs(field, cost);
      } else {
        field = initialize(imgs, cost, cfg, opt.prior);
      }
    } else {
      field = upsample_field(field, full);
      recompute_costs(field, cost);
      if (opt.prior) offer_prior(field, *opt.prior, cost);
    }
    const auto s = propagate_and_search(field, cost, cfg.iterations_per_scale,
                                        cfg.seed, scale, opt.trace);
    result.stats.propagation_accepts += s.propagation_accepts;
    result.stats.random_accepts += s.random_accepts;
  }
  result.field = SceneFlowField(full);
  result.field.vectors = field.vectors;
  result.field.valid = field.valid;
  result.cost = field.cost;
  return result;
}

}  // namespace sff

#endif  // SFF_MATCHER_HPP
