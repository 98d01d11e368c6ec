#ifndef SFF_PIPELINE_HPP
#define SFF_PIPELINE_HPP

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "sff/boundary.hpp"
#include "sff/consistency.hpp"
#include "sff/core/geometry.hpp"
#include "sff/core/grid.hpp"
#include "sff/interpolate.hpp"
#include "sff/matcher.hpp"
#include "sff/refine.hpp"
#include "sff/visibility.hpp"

namespace sff {

enum class PipelineMode { dual, multi };
enum class Interpolator { ric3d, epic3d };

struct PipelineConfig {
  PipelineMode mode = PipelineMode::dual;
  MatchConfig match;
  ConsistencyConfig consistency;
  SgmConfig sgm;
  EdgeProvider edges = EdgeProvider::gradient;
  Interpolator interpolator = Interpolator::ric3d;
  EpicConfig epic;
  RicConfig ric;
  bool refine_variational = false;
  VariationalConfig variational;
  bool refine_ego = false;
  EgoMotionConfig ego;
  /// Overrides the per-stage seeds (matching, ric3d, RANSAC).
  std::optional<std::uint64_t> seed;
  std::string output_dir;

  void validate() const {
    match.validate();
    consistency.validate();
    epic.validate();
    ric.validate();
    variational.validate();
    ego.validate();
  }

  PipelineConfig seeded() const {
    PipelineConfig c = *this;
    if (seed) {
      c.match.seed = *seed;
      c.ric.seed = *seed + 1;
      c.ego.seed = *seed + 2;
    }
    return c;
  }
};

struct StereoPair {
  ColorImage left;
  ColorImage right;

  StereoPair() = default;
  StereoPair(ColorImage l, ColorImage r) : left(std::move(l)), right(std::move(r)) {
    require_same_dims(left.dims(), right.dims(), "stereo pair");
  }
  StereoPair(const GrayImage& l, const GrayImage& r) : StereoPair(ColorImage(l), ColorImage(r)) {}
  ImageDims dims() const { return left.dims(); }
};

/// Everything one frame step produces. `field` is dense; the others are the
/// intermediate stages kept for evaluation and debugging.
struct FrameResult {
  SceneFlowField field;
  SceneFlowField matched;   // raw forward matches
  SceneFlowField reverse;   // reverse matches on the reference grid of their own view
  FilteredField consistent; // after the consistency check
  SceneFlowField filtered;  // after the region filter
  DisparityMap aux;
  SeedSet seeds;
  std::optional<VisibilityMasks> masks;  // multi mode only
  std::vector<double> variational_energy;
  std::optional<EgoMotionResult> ego;
};

namespace detail {

struct GrayPair {
  GrayImage left, right;
};

inline GrayPair gray(const StereoPair& p) { return {to_gray(p.left), to_gray(p.right)}; }

inline SceneFlowField match_mirrored(MatchImages imgs, const MatchConfig& cfg, const CameraRig& rig,
                                     const PcaBasis& basis, const SceneFlowField* prior,
                                     const VisibilityMasks* masks) {
  const int w = imgs.dims().width;
  for (GrayImage* g : {&imgs.ref, &imgs.next_left, &imgs.right, &imgs.next_right}) {
    *g = flip_horizontal(*g);
  }
  if (imgs.prev_left) imgs.prev_left = flip_horizontal(*imgs.prev_left);
  if (imgs.prev_right) imgs.prev_right = flip_horizontal(*imgs.prev_right);
  MatchOptions opt;
  opt.prior = prior;
  opt.masks = masks;
  return mirror_field(match(imgs, cfg, rig.mirrored(w), mirror_basis(basis), opt).field);
}

inline std::vector<Seed> motion_seeds(const std::vector<Seed>& seeds) {
  std::vector<Seed> out;
  for (const auto& s : seeds)
    if (s.vector.has_positive_disparity()) out.push_back(s);
  return out;
}

inline std::vector<GeometrySeed> geometry_seeds(const std::vector<GeometrySeed>& seeds) {
  std::vector<GeometrySeed> out;
  for (const auto& s : seeds)
    if (s.d0 > 0) out.push_back(s);
  return out;
}

/// Filtering, seeding, interpolation and optional refinement shared by both
/// modes. `r.matched` and `r.reverse` must be set.
inline void finish_frame(FrameResult& r, ConsistencyMode mode, const GrayPair& g0,
                         const GrayPair& g1, const ColorImage& left_color, const CameraRig& rig,
                         const PipelineConfig& cfg, const GrayImage* precomputed_edges) {
  r.consistent = consistency_filter(r.matched, r.reverse, mode, cfg.consistency);
  r.filtered = region_filter(r.consistent.field, cfg.consistency);
  const FilteredField survivors{r.filtered, r.consistent.error};
  r.aux = sgm_disparity(g0.left, g0.right, cfg.sgm);
  const GeometryGrid geometry = merge_disparity(survivors, r.aux, r.matched, cfg.consistency);
  r.seeds = make_seeds(survivors, geometry);
  const auto motion = motion_seeds(r.seeds.full);
  const auto geo = geometry_seeds(r.seeds.geometry);
  if (motion.empty() || geo.empty()) throw EstimationUnavailable("no seeds survived filtering");
  const EdgeMap edges = edge_map(left_color, cfg.edges, precomputed_edges);
  if (cfg.interpolator == Interpolator::ric3d) {
    r.field = ric3d(geo, motion, edges, left_color, rig, cfg.ric).field;
  } else {
    r.field = epic3d(geo, motion, edges, rig, cfg.epic);
  }
  if (cfg.refine_variational) {
    auto v = variational_refine(r.field, g0.left, g1.left, g1.right, edges, cfg.variational);
    r.field = std::move(v.field);
    r.variational_energy = std::move(v.energy);
  }
  if (cfg.refine_ego) {
    try {
      r.ego = estimate_ego_motion(motion, rig, cfg.ego);
      const DenseLabels moving = motion_segmentation(motion, *r.ego, edges, cfg.ego);
      r.field = apply_ego_motion(r.field, moving.binary, r.ego->pose, rig);
    } catch (const EstimationUnavailable&) {
      r.ego.reset();  // too few usable seeds: leave the field as interpolated
    }
  }
}

}  // namespace detail

/// Two frame pairs: forward match, reverse match from I1r, consistency and
/// region filtering, SGM merge, sparsification, interpolation, optional
/// refinement.
inline FrameResult run_dual(const StereoPair& t0, const StereoPair& t1, const CameraRig& rig,
                            const PipelineConfig& config, const PcaBasis* basis = nullptr,
                            const GrayImage* precomputed_edges = nullptr) {
  const PipelineConfig cfg = config.seeded();
  cfg.validate();
  require_same_dims(t0.dims(), t1.dims(), "run_dual");
  const auto g0 = detail::gray(t0);
  const auto g1 = detail::gray(t1);
  const PcaBasis b = basis ? *basis : compute_pca_basis(g0.left);
  FrameResult r;
  r.matched = match(MatchImages{g0.left, g1.left, g0.right, g1.right, std::nullopt, std::nullopt},
                    cfg.match, rig, b)
                  .field;
  // Reverse field referenced at I1r: flow to I0r, stereo to I1l, cross to I0l.
  r.reverse = detail::match_mirrored(
      MatchImages{g1.right, g0.right, g1.left, g0.left, std::nullopt, std::nullopt}, cfg.match,
      rig, b, nullptr, nullptr);
  detail::finish_frame(r, ConsistencyMode::dual, g0, g1, t0.left, rig, cfg, precomputed_edges);
  return r;
}

/// Sliding window over a stereo stream. The first result comes from the
/// dual pipeline on pairs 0 and 1; each later step matches six images with
/// the previous result as prior and predicted visibility masks.
class MultiFrameRunner {
 public:
  MultiFrameRunner(CameraRig rig, PipelineConfig cfg) : rig_(rig), cfg_(cfg.seeded()) {
    cfg_.validate();
  }

  /// Adds a pair; returns the result for the frame that became complete.
  std::optional<FrameResult> push(StereoPair pair, const GrayImage* precomputed_edges = nullptr) {
    if (!window_.empty()) require_same_dims(window_.front().dims(), pair.dims(), "stream");
    window_.push_back(std::move(pair));
    if (window_.size() > 3) window_.pop_front();
    if (window_.size() == 2 && !previous_) {
      basis_ = compute_pca_basis(to_gray(window_[0].left));
      FrameResult r = run_dual(window_[0], window_[1], rig_, cfg_, &*basis_, precomputed_edges);
      previous_ = r.field;
      return r;
    }
    if (window_.size() < 3) return std::nullopt;
    FrameResult r = step(precomputed_edges);
    previous_ = r.field;
    return r;
  }

  std::size_t window_size() const { return window_.size(); }

 private:
  FrameResult step(const GrayImage* precomputed_edges) {
    const auto gp = detail::gray(window_[0]);
    const auto g0 = detail::gray(window_[1]);
    const auto g1 = detail::gray(window_[2]);
    const ImageDims dims = g0.left.dims();
    const CameraRig mrig = rig_.mirrored(dims.width);

    const SceneFlowField prior = warp_forward(*previous_, rig_);
    const VisibilityMasks masks = predict_visibility(prior, rig_, dims);
    FrameResult r;
    MatchOptions opt;
    opt.prior = &prior;
    opt.masks = &masks;
    r.matched = match(MatchImages{g0.left, g1.left, g0.right, g1.right, gp.left, gp.right},
                      cfg_.match, rig_, *basis_, opt)
                    .field;
    r.masks = masks;

    // Reverse field referenced at I0r, with the prior moved to that view.
    const SceneFlowField rprior = mirror_field(to_right_reference(prior, rig_));
    const VisibilityMasks rmasks = predict_visibility(rprior, mrig, dims);
    r.reverse = detail::match_mirrored(
        MatchImages{g0.right, g1.right, g0.left, g1.left, gp.right, gp.left}, cfg_.match, rig_,
        *basis_, &rprior, &rmasks);
    detail::finish_frame(r, ConsistencyMode::multi, g0, g1, window_[1].left, rig_, cfg_,
                         precomputed_edges);
    return r;
  }

  CameraRig rig_;
  PipelineConfig cfg_;
  std::deque<StereoPair> window_;
  std::optional<PcaBasis> basis_;
  std::optional<SceneFlowField> previous_;
};

/// Whole-sequence multi-frame run: one result per frame 0 .. n-2.
inline std::vector<FrameResult> run_multi(const std::vector<StereoPair>& pairs,
                                          const CameraRig& rig, const PipelineConfig& cfg,
                                          const std::vector<GrayImage>* precomputed_edges = nullptr) {
  if (pairs.size() < 3) throw InputError("multi mode needs at least 3 stereo pairs");
  if (precomputed_edges && precomputed_edges->size() + 1 < pairs.size())
    throw InputError("need one edge map per output frame");
  MultiFrameRunner runner(rig, cfg);
  std::vector<FrameResult> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    // The frame completed by pair i is frame max(0, i - 1).
    const std::size_t frame = i == 0 ? 0 : i - 1;
    const GrayImage* e = precomputed_edges ? &(*precomputed_edges)[frame] : nullptr;
    if (auto r = runner.push(pairs[i], e)) out.push_back(std::move(*r));
  }
  return out;
}

}  // namespace sff

#endif  // SFF_PIPELINE_HPP
