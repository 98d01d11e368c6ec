// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"

using namespace sff;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Criterion {
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

double rotation_angle(const Mat3& a, const Mat3& b) {
  return Eigen::AngleAxisd(a.transpose() * b).angle();
}

oracle::CostInputs cost_inputs(const ScaleDescriptors& sd, const VisibilityMasks* masks) {
  oracle::CostInputs in{&sd.ref(), {}, sd.multi(), masks};
  for (int v = 0; v < (sd.multi() ? 5 : 3); ++v) in.views[v] = &sd.fields[1 + v];
  return in;
}

MatchImages static_images(const GrayImage& left, int d, bool multi) {
  const GrayImage right = oracle::shifted(left, -d, 0);
  std::vector<GrayImage> v{left, left, right, right};
  if (multi) {
    v.push_back(left);
    v.push_back(right);
  }
  return MatchImages::from(v);
}

/// Global disparity plane under one rigid motion; seeds on a regular grid.
struct PlanarWorld {
  ImageDims dims{48, 36};
  CameraRig rig = default_synth_rig(dims);
  PlaneModel plane{0.05, 0.02, 10.0};
  Pose motion = make_pose(Vec3(0.01, -0.02, 0.005), Vec3(0.1, -0.05, -0.2));

  SceneFlowVector truth(int x, int y) const {
    const double d0 = plane(x, y);
    const auto p = project(motion.apply(backproject(Vec2(x, y), d0, rig)), rig);
    return {p.pixel.x() - x, p.pixel.y() - y, d0, p.disparity};
  }

  void seeds(int step, std::vector<GeometrySeed>& geo, std::vector<Seed>& mot) const {
    for (int y = 1; y < dims.height; y += step)
      for (int x = 1; x < dims.width; x += step) {
        const SceneFlowVector s = truth(x, y);
        geo.push_back({{x, y}, s.d0, 0.0});
        mot.push_back({{x, y}, s, 0.0});
      }
  }
};

Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Vec3(u(rng), u(rng), u(rng));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// ---------------------------------------------------------------------------

void geometry(Outcome& o) {
  const CameraRig rig(721.5, Vec2(609.6, 172.9), 0.54);
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> px(-200, 1400), py(-100, 500), pd(0.05, 300), r(-30, 30);
  double worst = 0;
  for (int i = 0; i < 100000; ++i) {
    const Vec2 p(px(rng), py(rng));
    const double d = pd(rng);
    const Projection q = project(backproject(p, d, rig), rig);
    worst = std::max({worst, std::abs(q.pixel.x() - p.x()), std::abs(q.pixel.y() - p.y()),
                      std::abs(q.disparity - d) / std::max(1.0, d)});
  }
  o.detail << "round-trip max err " << worst;
  o.require(worst <= 1e-9, "project(backproject) identity");

  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const double dd = pd(rng);
    const SceneFlowVector s{r(rng), r(rng), dd, dd};
    const InverseMotion m = invert_motion(Vec2(px(rng), py(rng)), s, rig);
    bad += m.u != -s.u || m.v != -s.v || m.d != dd;
  }
  o.detail << ", invert_motion non-negations " << bad;
  o.require(bad == 0, "invert_motion negation");
}

void cost_oracles(Outcome& o) {
  const ImageDims dims{40, 30};
  std::vector<GrayImage> views;
  for (int k = 0; k < 6; ++k) views.push_back(oracle::noise_image(dims, 1100 + k));
  const PcaBasis basis = oracle::random_basis(1110);
  const CameraRig rig = default_synth_rig(dims);
  std::mt19937_64 rng(1111);
  VisibilityMasks masks(dims);
  std::bernoulli_distribution flag(0.15);
  for (int v = 0; v < kTargetViews; ++v)
    for (std::size_t i = 0; i < dims.area(); ++i) {
      if (flag(rng)) masks.occ[v][i] = 1;
      else if (flag(rng)) masks.oob[v][i] = 1;
    }
  std::uniform_int_distribution<int> px(0, 39), py(0, 29);
  std::uniform_real_distribution<double> uv(-25, 25), d(0.5, 20);
  int samples = 0, mismatched = 0;
  double worst = 0;
  for (bool multi : {false, true})
    for (bool use_masks : {false, true}) {
      const MatchImages im =
          MatchImages::from(std::vector<GrayImage>(views.begin(), views.begin() + (multi ? 6 : 4)));
      for (int step : {1, 2, 4}) {
        const ScaleDescriptors sd = build_scale_descriptors(im, basis, step);
        const VisibilityMasks* m = use_masks ? &masks : nullptr;
        const SceneFlowCost cost(sd, rig, m);
        const auto in = cost_inputs(sd, m);
        for (int t = 0; t < 500; ++t, ++samples) {
          const int x = px(rng), y = py(rng);
          const SceneFlowVector s{uv(rng), uv(rng), d(rng), d(rng)};
          const double a = cost({x, y}, s);
          const double b = oracle::scene_flow_cost(in, x, y, s, rig, step);
          if (std::isinf(b) || std::isinf(a)) {
            mismatched += std::isinf(a) != std::isinf(b);
            continue;
          }
          const double e = std::abs(a - b) / std::max(1.0, b);
          worst = std::max(worst, e);
          mismatched += e > 1e-9;
        }
      }
    }

  // Plane and rigid model costs against a literal summation.
  const RicConfig rc;
  std::uniform_real_distribution<double> cx(0, 63), dist(0, 3), dj(5, 15), duv(-4, 4), a12(-0.1, 0.1);
  const CameraRig rig64 = default_synth_rig({64, 48});
  for (int n = 0; n < 250; ++n) {
    const PlaneModel pm{a12(rng), a12(rng), dj(rng)};
    const Pose P = make_pose(random_vec(rng, -0.03, 0.03), random_vec(rng, -0.2, 0.2));
    std::vector<GeometryTerm> g;
    std::vector<MotionTerm> mt;
    double gref = 0, mref = 0;
    for (int i = 0; i < 20; ++i, samples += 2) {
      const double x = cx(rng), y = 0.7 * cx(rng), dd = dist(rng);
      g.push_back({x, y, dj(rng), dd});
      gref += std::min(rc.tau_trunc, std::exp(-dd / rc.alpha_weight) * std::abs(pm.a1 * x + pm.a2 * y + pm.a3 - g.back().d0));
      const Seed s{{static_cast<int>(x), static_cast<int>(y)}, {duv(rng), duv(rng), dj(rng), dj(rng)}, 0};
      mt.push_back(motion_term(s, rig64, dd));
      const Vec2 p(s.pixel.x, s.pixel.y);
      const Vec3 X = oracle::backproject(p.x(), p.y(), s.vector.d0, rig64.focal_length_px,
                                         rig64.principal_point.x(), rig64.principal_point.y(), rig64.baseline_m);
      const auto q = oracle::project(P.rotation * X + P.translation, rig64.focal_length_px,
                                     rig64.principal_point.x(), rig64.principal_point.y(), rig64.baseline_m);
      const double el = std::hypot(q[0] - (p.x() + s.vector.u), q[1] - (p.y() + s.vector.v));
      const double er = std::hypot(q[0] - q[2] - (p.x() + s.vector.u - s.vector.d1), q[1] - (p.y() + s.vector.v));
      mref += std::min(rc.tau_trunc, std::exp(-dd / rc.alpha_weight) * 0.5 * (el + er));
    }
    const double ge = rel_err(model_cost(pm, g, rc), gref), me = rel_err(model_cost(P, mt, rc, rig64), mref);
    worst = std::max({worst, ge, me});
    mismatched += (ge > 1e-9) + (me > 1e-9);
  }
  o.detail << samples << " samples, max rel err " << worst << ", mismatches " << mismatched;
  o.require(samples >= 10000 && mismatched == 0, "cost vs summation oracle");

  // Constant branches.
  const GrayImage left = oracle::noise_image({64, 48}, 1120);
  const ScaleDescriptors sd = build_scale_descriptors(static_images(left, 6, true), oracle::random_basis(1121), 1);
  VisibilityMasks m(left.dims());
  m.occluded(TargetView::prev_left)(30, 20) = 1;
  m.out_of_bounds(TargetView::next_left)(31, 20) = 1;
  const SceneFlowCost cost(sd, default_synth_rig(left.dims()), &m);
  const double occ = cost.terms({30, 20}, {0, 0, 6, 6})[3];
  const double oob = cost.terms({31, 20}, {-40, 0, 6, 6})[0];
  const double pen_inside = cost.terms({31, 20}, {0, 0, 6, 6})[0];
  const double pen_outside = cost.terms({32, 20}, {-40, 0, 6, 6})[0];
  o.detail << "; theta occ/oob/penalty " << occ << "/" << oob << "/" << pen_inside << "," << pen_outside;
  o.require(occ == 10000.0 && oob == 10000.0 && pen_inside == 1e6 && pen_outside == 1e6, "theta branches");
}

void monotonicity(Outcome& o) {
  const ImageDims dims{128, 96};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const auto p0 = r.render_pair(0), p1 = r.render_pair(1);
  const MatchImages im = MatchImages::from({p0.left, p1.left, p0.right, p1.right});
  std::size_t violations = 0, passes = 0;
  MatchOptions opt;
  opt.trace = [&](int, MatchPass, const Grid<double>& before, const Grid<double>& after) {
    ++passes;
    for (std::size_t i = 0; i < before.size(); ++i) violations += after[i] > before[i];
  };
  match(im, MatchConfig{}, rig, compute_pca_basis(p0.left), opt);
  o.detail << "matching passes " << passes << ", violations " << violations;
  o.require(passes > 0 && violations == 0, "matching cost trace");

  const PlanarWorld w;
  std::vector<GeometrySeed> geo;
  std::vector<Seed> mot;
  w.seeds(3, geo, mot);
  std::mt19937_64 rng(1300);
  std::bernoulli_distribution bad(0.2);
  std::uniform_real_distribution<double> junk(-15, 15), jd(2, 30);
  for (std::size_t i = 0; i < geo.size(); ++i) {
    if (bad(rng)) geo[i].d0 = jd(rng);
    if (bad(rng)) mot[i].vector = {junk(rng), junk(rng), jd(rng), jd(rng)};
  }
  RicTrace trace;
  ric3d(geo, mot, EdgeMap{GrayImage(w.dims, 0.0)}, ColorImage(oracle::noise_image(w.dims, 1301, 2.0)), w.rig,
        RicConfig{}, &trace);
  std::size_t ric_viol = 0;
  for (std::size_t it = 1; it < trace.plane_cost.size(); ++it)
    for (std::size_t k = 0; k < trace.plane_cost[it].size(); ++k)
      ric_viol += (trace.plane_cost[it][k] > trace.plane_cost[it - 1][k]) +
                  (trace.rigid_cost[it][k] > trace.rigid_cost[it - 1][k]);
  o.detail << "; ric3d iterations " << trace.plane_cost.size() << ", violations " << ric_viol;
  o.require(trace.plane_cost.size() > 1 && ric_viol == 0, "ric3d superpixel cost");
}

void wls(Outcome& o) {
  std::mt19937_64 rng(1400);
  std::uniform_real_distribution<double> c(0, 100), n(-1, 1), wd(0.1, 3);
  std::normal_distribution<double> nd;
  double plane_err = 0, affine_err = 0, exact_err = 0, rigid_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PlaneSample> s;
    std::vector<double> w;
    Eigen::MatrixXd X(50, 3);
    Eigen::VectorXd y(50);
    for (int i = 0; i < 50; ++i) {
      const double px = c(rng), py = c(rng);
      s.push_back({px, py, 0.1 * px - 0.05 * py + 20 + n(rng)});
      w.push_back(wd(rng));
      X.row(i) << px, py, 1.0;
      y[i] = s.back().d0;
    }
    const PlaneModel m = fit_plane_wls(s, w);
    const Eigen::VectorXd ref = oracle::wls(X, y, w);
    plane_err = std::max({plane_err, rel_err(m.a1, ref[0]), rel_err(m.a2, ref[1]), rel_err(m.a3, ref[2])});

    const PlaneModel t{n(rng), n(rng), 10 * c(rng)};
    std::vector<PlaneSample> e{{1, 2, t(1, 2)}, {60, 3, t(60, 3)}, {4, 70, t(4, 70)}};
    const PlaneModel me = fit_plane_wls(e, std::vector<double>{1, 2, 3});
    exact_err = std::max({exact_err, rel_err(me.a1, t.a1), rel_err(me.a2, t.a2), rel_err(me.a3, t.a3)});

    Mat3 A;
    for (int i = 0; i < 9; ++i) A.data()[i] = nd(rng);
    const Vec3 tv = random_vec(rng, -1, 1);
    std::vector<PointPair> pe, pn;
    std::vector<double> we, wn;
    Eigen::MatrixXd AX(40, 4), AY(40, 3);
    for (int i = 0; i < 40; ++i) {
      const Vec3 x = random_vec(rng, -5, 5);
      if (i < 6) {
        pe.push_back({x, A * x + tv});
        we.push_back(wd(rng));
      }
      const Vec3 yv = A * x + tv + 0.1 * random_vec(rng, -1, 1);
      pn.push_back({x, yv});
      wn.push_back(wd(rng));
      AX.row(i) << x.transpose(), 1.0;
      AY.row(i) = yv.transpose();
    }
    const Affine3DModel ae = fit_affine3d_wls(pe, we);
    exact_err = std::max({exact_err, (ae.A - A).norm(), (ae.t - tv).norm()});
    const Affine3DModel an = fit_affine3d_wls(pn, wn);
    for (int r = 0; r < 3; ++r) {
      const Eigen::VectorXd ref3 = oracle::wls(AX, AY.col(r), wn);
      for (int k = 0; k < 3; ++k) affine_err = std::max(affine_err, rel_err(an.A(r, k), ref3[k]));
      affine_err = std::max(affine_err, rel_err(an.t[r], ref3[3]));
    }

    const Pose P = make_pose(random_vec(rng, -1, 1), random_vec(rng, -3, 3));
    std::vector<PointPair> rp;
    for (int i = 0; i < 8; ++i) {
      const Vec3 x = random_vec(rng, -5, 5);
      rp.push_back({x, P.apply(x)});
    }
    const RigidModel rm = fit_rigid_procrustes(rp, std::vector<double>(8, 1.0));
    rigid_err = std::max({rigid_err, (rm.rotation - P.rotation).norm(), (rm.translation - P.translation).norm()});
  }
  o.detail << "plane " << plane_err << ", affine " << affine_err << ", exact " << exact_err << ", rigid "
           << rigid_err;
  o.require(plane_err <= 1e-9 && affine_err <= 1e-9, "weighted fits vs pseudo-inverse");
  o.require(exact_err <= 1e-9, "exact fits");
  o.require(rigid_err <= 1e-9, "rigid fit");

  const PlanarWorld w;
  std::vector<GeometrySeed> geo;
  std::vector<Seed> mot;
  w.seeds(3, geo, mot);
  std::bernoulli_distribution bad(0.2);
  std::uniform_real_distribution<double> junk(-15, 15), jd(2, 30);
  for (std::size_t i = 0; i < geo.size(); ++i) {
    if (bad(rng)) geo[i].d0 = jd(rng);
    if (bad(rng)) mot[i].vector = {junk(rng), junk(rng), jd(rng), jd(rng)};
  }
  const RicResult r = ric3d(geo, mot, EdgeMap{GrayImage(w.dims, 0.0)},
                            ColorImage(oracle::noise_image(w.dims, 1401, 2.0)), w.rig);
  int good = 0;
  for (int y = 0; y < w.dims.height; ++y)
    for (int x = 0; x < w.dims.width; ++x) good += component_error(r.field.vectors(x, y), w.truth(x, y)) <= 1.0;
  const double frac = static_cast<double>(good) / w.dims.area();
  o.detail << ", ric3d within 1 px " << frac;
  o.require(frac >= 0.95, "ric3d with 20% outliers");
}

void geodesic(Outcome& o) {
  const ImageDims dims{32, 32};
  std::mt19937_64 rng(1500);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> c(0, 31), ns(5, 20);
  double worst = 0;
  std::size_t label_bad = 0, list_bad = 0;
  for (int inst = 0; inst < 50; ++inst) {
    EdgeMap e{GrayImage(dims, 0.0)};
    for (double& v : e.strength) v = u(rng) < 0.8 ? 0.05 * u(rng) : u(rng);
    std::vector<Pixel> seeds;
    const int count = ns(rng);
    while (static_cast<int>(seeds.size()) < count) {
      const Pixel p{c(rng), c(rng)};
      if (std::find(seeds.begin(), seeds.end(), p) == seeds.end()) seeds.push_back(p);
    }
    std::vector<std::vector<double>> ref;
    for (const Pixel s : seeds) ref.push_back(oracle::dijkstra(e, s));
    Grid<int> label;
    Grid<double> dist;
    geodesic_labels(seeds, e, label, dist);
    for (std::size_t i = 0; i < dims.area(); ++i) {
      double best = oracle::kInf;
      for (const auto& rr : ref) best = std::min(best, rr[i]);
      worst = std::max(worst, std::abs(dist[i] - best));
      label_bad += std::abs(ref[label[i]][i] - best) > 1e-9;
    }
    const int k = std::min(count, 8);
    const SeedNeighborhood nb = label_and_neighbors(seeds, e, k);
    for (int s = 0; s < count; ++s) {
      std::vector<double> all;
      for (const Pixel t : seeds) all.push_back(ref[s][t.y * 32 + t.x]);
      std::sort(all.begin(), all.end());
      const auto& list = nb.neighbors[s];
      list_bad += list.size() != static_cast<std::size_t>(k);
      for (std::size_t j = 0; j < list.size() && j < all.size(); ++j) {
        const Pixel t = seeds[list[j].seed];
        const double e1 = std::abs(list[j].distance - all[j]);
        const double e2 = std::abs(list[j].distance - ref[s][t.y * 32 + t.x]);
        worst = std::max({worst, e1, e2});
      }
    }
  }
  o.detail << "50 instances, max dist err " << worst << ", label inconsistencies " << label_bad
           << ", bad lists " << list_bad;
  o.require(worst <= 1e-9, "distances equal Dijkstra");
  o.require(label_bad == 0 && list_bad == 0, "labels minimal-distance consistent");
}

void visibility(Outcome& o) {
  const ImageDims dims{64, 48};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const GroundTruth gt = r.ground_truth(0);
  const VisibilityMasks got = predict_visibility(gt.field, rig, dims);
  const VisibilityMasks ref = oracle::visibility(gt.field, rig);
  std::size_t diff = 0, occ = 0, oob = 0;
  for (int v = 0; v < kTargetViews; ++v) {
    for (std::size_t i = 0; i < dims.area(); ++i)
      diff += ((got.occ[v][i] != 0) != (ref.occ[v][i] != 0)) + ((got.oob[v][i] != 0) != (ref.oob[v][i] != 0));
    occ += got.count_occluded(static_cast<TargetView>(v));
    oob += got.count_out_of_bounds(static_cast<TargetView>(v));
  }
  o.detail << "flags occ " << occ << " oob " << oob << ", mismatches " << diff;
  o.require(diff == 0, "masks equal pairwise oracle");
  o.require(occ > 0, "scene exercises occlusion");
}

SceneFlowField constant_field(ImageDims dims, const SceneFlowVector& s) {
  SceneFlowField f(dims);
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x) f.set(x, y, s);
  return f;
}

void consistency(Outcome& o) {
  const ImageDims dims{160, 120};
  const SceneFlowVector s{1, 0, 6, 5};
  std::mt19937_64 rng(1700);
  std::uniform_int_distribution<int> comp(0, 3);
  std::uniform_real_distribution<double> uv(-20, 20), dd(0.5, 30);
  std::bernoulli_distribution pick(0.05);
  std::size_t injected = 0, removed = 0;
  for (auto mode : {ConsistencyMode::dual, ConsistencyMode::multi}) {
    SceneFlowField fwd = constant_field(dims, s);
    const SceneFlowField rev = constant_field(dims, reverse_lookup({0, 0}, s, mode).expected);
    std::vector<std::size_t> idx;
    for (int y = 10; y < 110; ++y)
      for (int x = 30; x < 130; ++x) {
        if (!pick(rng)) continue;
        const SceneFlowVector t{uv(rng), uv(rng), dd(rng), dd(rng)};
        fwd.set(x, y, t);
        idx.push_back(fwd.valid.index(x, y));
      }
    const auto out = consistency_filter(fwd, rev, mode);
    injected += idx.size();
    for (auto i : idx) removed += !out.field.valid[i];
  }
  const double frac = static_cast<double>(removed) / injected;
  o.detail << "removed " << removed << "/" << injected << " (" << frac << ")";
  o.require(injected > 500 && frac >= 0.99, "injected outliers removed");

  // Exactly tau_c apart in one component is kept, anything beyond is removed.
  const ImageDims small{20, 10};
  bool boundary_ok = true;
  for (auto mode : {ConsistencyMode::dual, ConsistencyMode::multi})
    for (int k = 0; k < 4; ++k) {
      const SceneFlowVector f{2, 0, 4, 4};
      const SceneFlowVector r = reverse_lookup({0, 0}, f, mode).expected;
      SceneFlowVector at = r, over = r;
      (k == 0 ? at.u : k == 1 ? at.v : k == 2 ? at.d0 : at.d1) += 1.0;
      (k == 0 ? over.u : k == 1 ? over.v : k == 2 ? over.d0 : over.d1) += 1.0 + 1e-9;
      const auto a = consistency_filter(constant_field(small, f), constant_field(small, at), mode);
      const auto b = consistency_filter(constant_field(small, f), constant_field(small, over), mode);
      boundary_ok &= a.field.is_valid(10, 5) && !b.field.is_valid(10, 5);
    }
  o.detail << ", boundary " << (boundary_ok ? "ok" : "wrong");
  o.require(boundary_ok, "keep at tau_c, remove beyond");

  // Region filter on a blob field: survivors form regions of at least region_min.
  const ImageDims bd{80, 60};
  std::uniform_int_distribution<int> level(0, 2);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::bernoulli_distribution hole(0.15);
  SceneFlowField blobs(bd);
  for (int y = 0; y < bd.height; ++y)
    for (int x = 0; x < bd.width; ++x) {
      std::mt19937_64 block(static_cast<std::uint64_t>((y / 6) * 100 + x / 6 + 7));
      const double base = level(block);
      if (!hole(rng)) blobs.set(x, y, {base + jitter(rng), jitter(rng), 5 + jitter(rng), 5});
    }
  const ConsistencyConfig cc;
  const SceneFlowField kept = region_filter(blobs, cc);
  const Mask ref = oracle::region_survivors(blobs, cc.region_similarity, cc.region_min);
  const Mask regrown = oracle::region_survivors(kept, cc.region_similarity, cc.region_min);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < bd.area(); ++i)
    bad += ((kept.valid[i] != 0) != (ref[i] != 0)) + ((kept.valid[i] != 0) != (regrown[i] != 0));
  o.detail << ", region survivors " << kept.valid_count() << "/" << blobs.valid_count() << ", mismatches " << bad;
  o.require(bad == 0 && kept.valid_count() > 0 && kept.valid_count() < blobs.valid_count(),
            "region_filter survivors in regions >= region_min");
}

void variational(Outcome& o) {
  const ImageDims dims{96, 64};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const auto p0 = r.render_pair(0), p1 = r.render_pair(1);
  SceneFlowField f = r.ground_truth(0).field;
  std::mt19937_64 rng(1800);
  std::uniform_real_distribution<double> n(-0.7, 0.7);
  for (auto& v : f.vectors) {
    v.u += n(rng);
    v.v += n(rng);
    v.d1 += 0.3 * n(rng);
  }
  // A left strip whose warps leave the image.
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < 6; ++x) f.set(x, y, {-(x + 50.0), 0, 4, 4});
  const VariationalResult res = variational_refine(f, p0.left, p1.left, p1.right, gradient_edges(p0.left));
  std::size_t increases = 0;
  for (std::size_t k = 1; k < res.energy.size(); ++k) increases += res.energy[k] > res.energy[k - 1];
  std::size_t d0_changed = 0, fixed = 0, fixed_changed = 0;
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    if (f.valid[i] && res.field.vectors[i].d0 != f.vectors[i].d0) ++d0_changed;
    if (!res.held_fixed[i]) continue;
    ++fixed;
    fixed_changed += res.field.valid[i] != f.valid[i] || (f.valid[i] && !(res.field.vectors[i] == f.vectors[i]));
  }
  o.detail << "energy " << res.energy.front() << " -> " << res.energy.back() << " over " << res.energy.size() - 1
           << " iterations, increases " << increases << ", d0 changed " << d0_changed << ", held fixed " << fixed
           << " changed " << fixed_changed;
  o.require(res.energy.size() >= 2 && increases == 0, "energy non-increasing");
  o.require(d0_changed == 0, "d0 bit-unchanged");
  o.require(fixed >= static_cast<std::size_t>(6 * dims.height) && fixed_changed == 0, "out-of-image pixels bit-unchanged");
}

struct StaticWorld {
  ImageDims dims{160, 120};
  CameraRig rig = default_synth_rig(dims);
  Pose camera = make_pose(Vec3(0.01, -0.015, 0.002), Vec3(0.05, -0.02, -0.4));

  Seed seed(int x, int y, double depth) const {
    const Vec3 X0 = backproject(Vec2(x, y), rig.fb() / depth, rig);
    const auto p = project(camera.apply(X0), rig);
    return {{x, y}, {p.pixel.x() - x, p.pixel.y() - y, rig.fb() / depth, p.disparity}, 0.0};
  }
};

std::vector<Seed> world_seeds(const StaticWorld& w, std::mt19937_64& rng, int n, double zmin, double zmax) {
  std::uniform_int_distribution<int> px(5, w.dims.width - 6), py(5, w.dims.height - 6);
  std::uniform_real_distribution<double> z(zmin, zmax);
  std::vector<Seed> out;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(out.size()) < n) {
    const int x = px(rng), y = py(rng);
    if (used.insert({x, y}).second) out.push_back(w.seed(x, y, z(rng)));
  }
  return out;
}

void ego(Outcome& o) {
  const StaticWorld w;
  std::mt19937_64 rng(1900);
  auto seeds = world_seeds(w, rng, 200, 4, 30);
  // Far seeds with corrupted motion must be ignored by the depth cap.
  auto far = world_seeds(w, rng, 40, 40, 80);
  for (auto& s : far) s.vector.u += 5.0;
  const std::size_t near_count = seeds.size();
  seeds.insert(seeds.end(), far.begin(), far.end());
  const EgoMotionResult r = estimate_ego_motion(seeds, w.rig);
  const double rot = rotation_angle(r.pose.rotation, w.camera.rotation);
  const double tr = (r.pose.translation - w.camera.translation).norm();
  std::size_t far_used = 0;
  for (std::size_t i = near_count; i < seeds.size(); ++i) far_used += r.used[i];
  o.detail << "rot err " << rot << " rad, trans err " << tr << " m, far seeds used " << far_used;
  o.require(rot <= 1e-4 && tr <= 1e-4, "pose accuracy");
  o.require(far_used == 0, "depth cap");

  auto mixed = world_seeds(w, rng, 300, 4, 30);
  std::vector<char> dynamic(mixed.size(), 0);
  std::uniform_real_distribution<double> extra(4, 10);
  std::bernoulli_distribution pick(0.3), sign(0.5);
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    if (!pick(rng)) continue;
    dynamic[i] = 1;
    mixed[i].vector.u += sign(rng) ? extra(rng) : -extra(rng);
    mixed[i].vector.v += sign(rng) ? extra(rng) : -extra(rng);
  }
  const EgoMotionResult m = estimate_ego_motion(mixed, w.rig);
  int flagged = 0, correct = 0;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    if (!m.used[i] || m.strict_inlier[i]) continue;
    ++flagged;
    correct += dynamic[i];
  }
  const double precision = flagged ? static_cast<double>(correct) / flagged : 0.0;
  o.detail << "; 30% dynamic: flagged " << flagged << ", precision " << precision;
  o.require(flagged > 0 && precision >= 0.95, "outlier-flag precision at strict threshold");
}

void report(Outcome& o, const char* tag, const EvalReport& r) {
  o.detail << " " << tag << " SF " << r.all.outlier_sf << " occSF " << r.occluded.outlier_sf << ";";
}

void end_to_end(Outcome& o) {
  const ImageDims dims{256, 192};
  const CameraRig rig = default_synth_rig(dims);
  const PipelineConfig cfg;
  {
    SceneRenderer r(static_scene(), rig, dims);
    const auto p0 = r.render_pair(0), p1 = r.render_pair(1);
    const GroundTruth gt = r.ground_truth(0);
    const FrameResult res = run_dual({p0.left, p0.right}, {p1.left, p1.right}, rig, cfg);
    const EvalReport e = evaluate(res.field, gt.field, &gt.occluded);
    report(o, "(a) static dual", e);
    o.require(e.all.outlier_sf < 0.05, "(a) static SF outliers < 5%");
  }
  SceneRenderer r(occlusion_scene(), rig, dims);
  std::vector<StereoPair> pairs;
  for (int k = 0; k < 4; ++k) {
    const auto p = r.render_pair(k);
    pairs.emplace_back(p.left, p.right);
  }
  PipelineConfig mcfg = cfg;
  mcfg.mode = PipelineMode::multi;
  const auto multi = run_multi(pairs, rig, mcfg);
  // The last multi frame is the first with a full three-pair window; dual
  // runs on the same frame pair.
  const int k = static_cast<int>(multi.size()) - 1;
  const GroundTruth gt = r.ground_truth(k);
  const FrameResult dual = run_dual(pairs[k], pairs[k + 1], rig, cfg);
  const double dm = masked_density(multi[k].filtered, gt.field, gt.occluded);
  const double dd = masked_density(dual.filtered, gt.field, gt.occluded);
  const EvalReport em = evaluate(multi[k].field, gt.field, &gt.occluded);
  const EvalReport ed = evaluate(dual.field, gt.field, &gt.occluded);
  o.detail << " (b) frame " << k << " occluded px " << em.occluded.pixels << ", filtered density multi " << dm
           << " dual " << dd << ";";
  report(o, "multi", em);
  report(o, "dual", ed);
  const double reduction = ed.occluded.outlier_sf > 0 ? 1.0 - em.occluded.outlier_sf / ed.occluded.outlier_sf : 0.0;
  o.detail << " occluded SF reduction " << reduction;
  o.require(em.occluded.pixels > 0, "(b) scene has occluded pixels");
  o.require(dm > 0.05, "(b) multi occluded density > 5%");
  o.require(dd < 0.01, "(b) dual occluded density < 1%");
  o.require(reduction >= 0.30, "(b) occluded SF outliers 30% lower");
}

SceneFlowField random_field(ImageDims dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uv(-200, 200), d(1, 250);
  std::bernoulli_distribution valid(0.7);
  SceneFlowField f(dims);
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x)
      if (valid(rng)) f.set(x, y, {uv(rng), uv(rng), d(rng), d(rng)});
  return f;
}

void io(Outcome& o) {
  const auto dir = std::filesystem::temp_directory_path() / "sff_acceptance";
  std::filesystem::create_directories(dir);
  double worst_flow = 0, worst_disp = 0;
  std::size_t valid_bad = 0;
  for (int t = 0; t < 20; ++t) {
    const SceneFlowField f = random_field({60, 40}, 2000 + t);
    const std::string stem = (dir / ("rt" + std::to_string(t))).string();
    write_kitti_field(stem, f);
    const SceneFlowField g = read_kitti_field(stem);
    for (std::size_t i = 0; i < f.vectors.size(); ++i) {
      valid_bad += g.valid[i] != f.valid[i];
      if (!f.valid[i] || !g.valid[i]) continue;
      worst_flow = std::max({worst_flow, std::abs(g.vectors[i].u - f.vectors[i].u), std::abs(g.vectors[i].v - f.vectors[i].v)});
      worst_disp = std::max({worst_disp, std::abs(g.vectors[i].d0 - f.vectors[i].d0), std::abs(g.vectors[i].d1 - f.vectors[i].d1)});
    }
  }
  o.detail << "KITTI round trip max flow err " << worst_flow << ", disp err " << worst_disp << ", validity flips "
           << valid_bad;
  o.require(valid_bad == 0 && worst_flow <= 0.5 / 64 + 1e-12 && worst_disp <= 0.5 / 256 + 1e-12,
            "round trip within quantisation");

  const ImageDims dims{64, 48};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const auto p0 = r.render_pair(0), p1 = r.render_pair(1);
  PipelineConfig cfg;
  cfg.seed = 1234;
  cfg.sgm.max_disparity = 24;
  const FrameResult a = run_dual({p0.left, p0.right}, {p1.left, p1.right}, rig, cfg);
  const FrameResult b = run_dual({p0.left, p0.right}, {p1.left, p1.right}, rig, cfg);
  const bool same = a.field == b.field && a.matched == b.matched && a.filtered == b.filtered;
  o.detail << ", rerun " << (same ? "bit-identical" : "differs");
  o.require(same, "deterministic rerun");
  std::filesystem::remove_all(dir);
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"geometry round trip and motion inversion", 1, geometry},
      {"cost formulas match summation oracles", 10, cost_oracles},
      {"matching and ric3d costs never increase", 60, monotonicity},
      {"weighted least squares fits", 30, wls},
      {"geodesic distances equal Dijkstra", 30, geodesic},
      {"visibility masks equal pairwise oracle", 10, visibility},
      {"consistency and region filtering", 30, consistency},
      {"variational refinement", 30, variational},
      {"ego-motion and motion segmentation", 30, ego},
      {"end-to-end synthetic scenes", 300, end_to_end},
      {"KITTI IO and determinism", 10, io},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs <= c.budget_s, "runtime budget " + std::to_string(static_cast<int>(c.budget_s)) + " s");
    failures += !o.pass;
    std::printf("%s %2zu %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, secs, o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
