#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"

using namespace sff;

namespace {

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

std::vector<Seed> world_seeds(const StaticWorld& w, std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> px(5, w.dims.width - 6), py(5, w.dims.height - 6);
  std::uniform_real_distribution<double> z(4, 30);
  std::vector<Seed> out;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(out.size()) < n) {
    const int x = px(rng), y = py(rng);
    if (used.insert({x, y}).second) out.push_back(w.seed(x, y, z(rng)));
  }
  return out;
}

}  // namespace

TEST(Variational, EnergyNeverIncreases) {
  const ImageDims dims{64, 48};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const auto p0 = r.render_pair(0), p1 = r.render_pair(1);
  SceneFlowField f = r.ground_truth(0).field;
  std::mt19937_64 rng(90);
  std::uniform_real_distribution<double> n(-0.7, 0.7);
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    f.vectors[i].u += n(rng);
    f.vectors[i].v += n(rng);
    f.vectors[i].d1 += 0.3 * n(rng);
  }
  const EdgeMap edges = gradient_edges(p0.left);
  const VariationalResult res = variational_refine(f, p0.left, p1.left, p1.right, edges);
  ASSERT_GE(res.energy.size(), 2u);
  for (std::size_t k = 1; k < res.energy.size(); ++k) EXPECT_LE(res.energy[k], res.energy[k - 1]);
  EXPECT_LT(res.energy.back(), res.energy.front());
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    if (!res.field.valid[i]) continue;
    ASSERT_EQ(res.field.vectors[i].d0, f.vectors[i].d0);
  }
}

TEST(Variational, HeldFixedPixelsUnchanged) {
  const ImageDims dims{40, 30};
  const GrayImage a = oracle::noise_image(dims, 91, 2.0);
  const GrayImage b = oracle::shifted(a, 1, 0);
  SceneFlowField f(dims);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      if (x < 10) f.set(x, y, {-(x + 100.0), 0, 3, 3});  // both warps leave the image
      else if (x < 15) continue;                          // invalid
      else f.set(x, y, {0.5, 0, 3, 3});
    }
  const VariationalResult res = variational_refine(f, a, b, oracle::shifted(b, -3, 0), gradient_edges(a));
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 15; ++x) {
      ASSERT_TRUE(res.held_fixed(x, y));
      ASSERT_EQ(res.field.valid(x, y), f.valid(x, y));
      if (f.valid(x, y)) {
        ASSERT_EQ(res.field.vectors(x, y), f.vectors(x, y));
      }
    }
  EXPECT_FALSE(res.held_fixed(30, 15));
}

TEST(EgoMotion, RecoversPoseFromStaticSeeds) {
  const StaticWorld w;
  std::mt19937_64 rng(92);
  const auto seeds = world_seeds(w, rng, 200);
  const EgoMotionResult r = estimate_ego_motion(seeds, w.rig);
  EXPECT_LT((r.pose.rotation - w.camera.rotation).norm(), 1e-4);
  EXPECT_LT((r.pose.translation - w.camera.translation).norm(), 1e-4);
  for (auto b : r.inlier) EXPECT_TRUE(b);
}

TEST(EgoMotion, SegmentsDynamicSeeds) {
  const StaticWorld w;
  std::mt19937_64 rng(93);
  auto seeds = world_seeds(w, rng, 300);
  std::vector<char> dynamic(seeds.size(), 0);
  std::uniform_real_distribution<double> extra(4, 10);
  std::bernoulli_distribution pick(0.3), sign(0.5);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!pick(rng)) continue;
    dynamic[i] = 1;
    seeds[i].vector.u += sign(rng) ? extra(rng) : -extra(rng);
    seeds[i].vector.v += sign(rng) ? extra(rng) : -extra(rng);
  }
  const EgoMotionResult r = estimate_ego_motion(seeds, w.rig);
  EXPECT_LT((r.pose.translation - w.camera.translation).norm(), 1e-3);
  int flagged = 0, correct = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!r.used[i] || r.inlier[i]) continue;
    ++flagged;
    correct += dynamic[i];
  }
  ASSERT_GT(flagged, 0);
  EXPECT_GE(correct, 0.95 * flagged);

  const DenseLabels seg = motion_segmentation(seeds, r, EdgeMap{GrayImage(w.dims, 0.0)});
  int agree = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) agree += (seg.binary(seeds[i].pixel.x, seeds[i].pixel.y) != 0) == (dynamic[i] != 0);
  EXPECT_GT(agree, 0.6 * seeds.size());  // isolated seeds get outvoted by neighbours
}

TEST(EgoMotion, TooFewSeedsIsUnavailable) {
  const StaticWorld w;
  std::mt19937_64 rng(94);
  const auto seeds = world_seeds(w, rng, 4);
  EXPECT_THROW(estimate_ego_motion(seeds, w.rig), EstimationUnavailable);
  // Seeds beyond the depth cap do not count.
  std::vector<Seed> far;
  for (int i = 0; i < 20; ++i) far.push_back(w.seed(10 + i, 10, 80.0));
  EXPECT_THROW(estimate_ego_motion(far, w.rig), EstimationUnavailable);
}

TEST(ApplyEgoMotion, IdentityAndForwardTranslation) {
  const ImageDims dims{20, 10};
  const CameraRig rig = CameraRig(100.0, Vec2(10, 5), 0.5);  // fb = 50
  SceneFlowField f(dims);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) f.set(x, y, {3, 3, 10, 12});  // 5 m
  Mask moving(dims, 0);
  moving(0, 0) = 1;
  const SceneFlowField id = apply_ego_motion(f, moving, Pose::identity(), rig);
  EXPECT_EQ(id.vectors(0, 0), f.vectors(0, 0));
  EXPECT_NEAR(id.vectors(7, 3).u, 0.0, 1e-12);
  EXPECT_NEAR(id.vectors(7, 3).d1, 10.0, 1e-12);

  // Camera moves 1 m forward: static points come 1 m closer.
  const SceneFlowField fw = apply_ego_motion(f, moving, make_pose(Vec3::Zero(), Vec3(0, 0, -1)), rig);
  EXPECT_NEAR(fw.vectors(10, 5).u, 0.0, 1e-12);
  EXPECT_NEAR(fw.vectors(10, 5).d1, 50.0 / 4.0, 1e-12);
  EXPECT_NEAR(fw.vectors(14, 5).u, 1.0, 1e-12);  // 4 px off-centre grows by 5/4
}
