#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace sff;

namespace {

CameraRig rig100() { return CameraRig(100.0, Vec2(20.0, 15.0), 0.5); }

std::size_t mismatches(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0) != (b[i] != 0);
  return n;
}

}  // namespace

TEST(WarpForward, StaticFieldIsUnchanged) {
  const CameraRig rig = rig100();
  SceneFlowField f(ImageDims{40, 30});
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x)
      if ((x * 7 + y) % 5) f.set(x, y, {0, 0, 4.0 + 0.1 * x, 4.0 + 0.1 * x});
  const SceneFlowField w = warp_forward(f, rig);
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    ASSERT_EQ(w.valid[i], f.valid[i]);
    if (!f.valid[i]) continue;
    EXPECT_NEAR(w.vectors[i].u, 0.0, 1e-9);
    EXPECT_NEAR(w.vectors[i].v, 0.0, 1e-9);
    EXPECT_NEAR(w.vectors[i].d0, f.vectors[i].d0, 1e-9);
    EXPECT_NEAR(w.vectors[i].d1, f.vectors[i].d1, 1e-9);
  }
}

TEST(WarpForward, NearerPointWinsCollision) {
  const CameraRig rig = rig100();  // fb = 50
  SceneFlowField f(ImageDims{40, 30});
  f.set(10, 10, {5, 0, 10, 10});                  // 5 m
  f.set(12, 10, {3, 0, 50.0 / 3.0, 50.0 / 3.0});  // 3 m
  f.set(30, 20, {-5, 0, 50.0 / 3.0, 50.0 / 3.0}); // collides with the next one, 3 m first
  f.set(31, 20, {-6, 0, 10, 10});
  const SceneFlowField w = warp_forward(f, rig);
  ASSERT_TRUE(w.is_valid(15, 10));
  EXPECT_NEAR(w.vectors(15, 10).d0, 50.0 / 3.0, 1e-12);
  ASSERT_TRUE(w.is_valid(25, 20));
  EXPECT_NEAR(w.vectors(25, 20).d0, 50.0 / 3.0, 1e-12);
  EXPECT_EQ(w.valid_count(), 2u);
}

TEST(WarpForward, ConstantTranslationAdvances) {
  // A fronto-parallel point moving sideways keeps its image velocity.
  const CameraRig rig = rig100();
  SceneFlowField f(ImageDims{40, 30});
  f.set(5, 5, {2, 1, 10, 10});
  const SceneFlowField w = warp_forward(f, rig);
  ASSERT_TRUE(w.is_valid(7, 6));
  EXPECT_NEAR(w.vectors(7, 6).u, 2.0, 1e-9);
  EXPECT_NEAR(w.vectors(7, 6).v, 1.0, 1e-9);
}

TEST(Visibility, StaticSceneHasNoFlags) {
  const CameraRig rig = rig100();
  SceneFlowField f(ImageDims{30, 20});
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) f.set(x, y, {0, 0, 0.4, 0.4});
  const VisibilityMasks m = predict_visibility(f, rig, f.dims());
  for (int v = 0; v < kTargetViews; ++v) {
    EXPECT_EQ(m.count_occluded(static_cast<TargetView>(v)), 0u) << v;
    EXPECT_EQ(m.count_out_of_bounds(static_cast<TargetView>(v)), 0u) << v;
  }
}

TEST(Visibility, LeavingLeftEdgeIsOutOfBounds) {
  const CameraRig rig = rig100();
  SceneFlowField f(ImageDims{30, 20});
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) f.set(x, y, {-(x + 1.0), 0, 0.4, 0.4});
  const VisibilityMasks m = predict_visibility(f, rig, f.dims());
  EXPECT_EQ(m.count_out_of_bounds(TargetView::next_left), f.dims().area());
  EXPECT_EQ(m.count_out_of_bounds(TargetView::right), 0u);
}

TEST(Visibility, InvalidPredictionIsVisible) {
  const VisibilityMasks m = predict_visibility(SceneFlowField(ImageDims{8, 8}), rig100(), {8, 8});
  for (int v = 0; v < kTargetViews; ++v) {
    EXPECT_EQ(m.count_occluded(static_cast<TargetView>(v)), 0u);
    EXPECT_EQ(m.count_out_of_bounds(static_cast<TargetView>(v)), 0u);
  }
}

TEST(Visibility, MatchesPairwiseOracleOnTwoPlaneScene) {
  const ImageDims dims{64, 48};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(two_plane_scene(), rig, dims);
  const GroundTruth gt = r.ground_truth(0);
  const VisibilityMasks got = predict_visibility(gt.field, rig, dims);
  const VisibilityMasks ref = oracle::visibility(gt.field, rig);
  std::size_t flagged = 0;
  for (int v = 0; v < kTargetViews; ++v) {
    EXPECT_EQ(mismatches(got.occ[v], ref.occ[v]), 0u) << "occ " << v;
    EXPECT_EQ(mismatches(got.oob[v], ref.oob[v]), 0u) << "oob " << v;
    flagged += got.count_occluded(static_cast<TargetView>(v));
  }
  EXPECT_GT(flagged, 0u);  // the scene does occlude something
}

TEST(Visibility, MatchesPairwiseOracleOnRandomField) {
  const ImageDims dims{24, 18};
  const CameraRig rig = default_synth_rig(dims);
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> uv(-6, 6), d(1, 8);
  std::bernoulli_distribution valid(0.8);
  SceneFlowField f(dims);
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x)
      if (valid(rng)) f.set(x, y, {uv(rng), uv(rng), d(rng), d(rng)});
  const VisibilityMasks got = predict_visibility(f, rig, dims);
  const VisibilityMasks ref = oracle::visibility(f, rig);
  for (int v = 0; v < kTargetViews; ++v) {
    EXPECT_EQ(mismatches(got.occ[v], ref.occ[v]), 0u) << "occ " << v;
    EXPECT_EQ(mismatches(got.oob[v], ref.oob[v]), 0u) << "oob " << v;
  }
}

TEST(Visibility, RightReferenceKeepsMotion) {
  const CameraRig rig = rig100();
  SceneFlowField f(ImageDims{40, 30});
  f.set(20, 10, {0, 0, 5, 5});
  const SceneFlowField r = to_right_reference(f, rig);
  ASSERT_TRUE(r.is_valid(15, 10));
  EXPECT_NEAR(r.vectors(15, 10).u, 0.0, 1e-9);
  EXPECT_NEAR(r.vectors(15, 10).d1, 5.0, 1e-9);
}
