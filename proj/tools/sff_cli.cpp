// sff: run, evaluate, synthesise and visualise scene flow.
#include <glob.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sff/sff.hpp"

namespace fs = std::filesystem;
using namespace sff;

namespace {

std::vector<std::string> expand(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  ::globfree(&g);
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InputError("no files match " + pattern);
  return out;
}

std::string frame_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", k);
  return buf;
}

void print_split(const char* name, const EvalSplit& s) {
  std::printf("%-9s pixels %8zu  density %6.2f%%  D1 %6.2f%%  D2 %6.2f%%  Fl %6.2f%%  SF %6.2f%%  "
              "EPE D1 %.3f D2 %.3f Fl %.3f\n",
              name, s.pixels, 100 * s.density, 100 * s.outlier_d1, 100 * s.outlier_d2, 100 * s.outlier_fl,
              100 * s.outlier_sf, s.epe_d1, s.epe_d2, s.epe_fl);
}

Mask read_mask(const std::string& path) {
  const ColorImage img = read_image(path);
  const GrayImage g = to_gray(img);
  Mask m(g.dims(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) m[i] = g[i] > 127.5;
  return m;
}

Grid<double> component(const SceneFlowField& f, double SceneFlowVector::*c) {
  Grid<double> g(f.dims(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (f.valid[i]) g[i] = f.vectors[i].*c;
  return g;
}

void write_frame(const fs::path& out, int k, const FrameResult& r, bool pfm) {
  const std::string stem = (out / frame_name(k)).string();
  write_kitti_field(stem, r.field);
  if (pfm) {
    write_pfm(stem + "_u.pfm", component(r.field, &SceneFlowVector::u));
    write_pfm(stem + "_v.pfm", component(r.field, &SceneFlowVector::v));
    write_pfm(stem + "_d0.pfm", component(r.field, &SceneFlowVector::d0));
    write_pfm(stem + "_d1.pfm", component(r.field, &SceneFlowVector::d1));
  }
  std::printf("frame %d: matched %.1f%%, filtered %.1f%%, seeds %zu full / %zu geometry -> %s_*.png\n", k,
              100 * r.matched.density(), 100 * r.filtered.density(), r.seeds.full.size(), r.seeds.geometry.size(),
              stem.c_str());
}

struct RunArgs {
  std::string mode = "dual", left, right, calib, edges = "gradient", interp = "ric3d", out;
  bool variational = false, ego = false, pfm = false;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& a) {
  const auto lefts = expand(a.left), rights = expand(a.right);
  if (lefts.size() != rights.size()) throw InputError("--left and --right match different numbers of files");
  std::vector<GrayImage> edges;
  if (a.edges != "gradient")
    for (const auto& p : expand(a.edges)) edges.push_back(read_edge_png(p));

  PipelineConfig cfg;
  cfg.mode = a.mode == "multi" ? PipelineMode::multi : PipelineMode::dual;
  cfg.interpolator = a.interp == "epic3d" ? Interpolator::epic3d : Interpolator::ric3d;
  cfg.edges = edges.empty() ? EdgeProvider::gradient : EdgeProvider::precomputed;
  cfg.refine_variational = a.variational;
  cfg.refine_ego = a.ego;
  cfg.seed = a.seed;
  cfg.output_dir = a.out;
  const CameraRig rig = read_calibration(a.calib);
  fs::create_directories(a.out);

  const std::size_t n = lefts.size();
  if (n < 2) throw InputError("need at least two stereo pairs");
  if (!edges.empty() && edges.size() + 1 < n) throw InputError("--edges needs one map per reference frame");
  auto load = [&](std::size_t k) { return StereoPair(read_image(lefts[k]), read_image(rights[k])); };
  auto edge = [&](std::size_t k) { return edges.empty() ? nullptr : &edges[k]; };

  if (cfg.mode == PipelineMode::dual) {
    StereoPair prev = load(0);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      StereoPair next = load(k + 1);
      write_frame(a.out, static_cast<int>(k), run_dual(prev, next, rig, cfg, nullptr, edge(k)), a.pfm);
      prev = std::move(next);
    }
    return 0;
  }
  if (n < 3) throw InputError("multi mode needs at least three stereo pairs");
  MultiFrameRunner runner(rig, cfg);
  for (std::size_t k = 0; k < n; ++k) {
    // Results reference frame k-1 once two pairs are in.
    const std::size_t ref = k == 0 ? 0 : k - 1;
    if (auto r = runner.push(load(k), edge(ref))) write_frame(a.out, static_cast<int>(ref), *r, a.pfm);
  }
  return 0;
}

int cmd_eval(const std::string& est, const std::string& gt, const std::string& occ) {
  const SceneFlowField e = read_kitti_field(est), g = read_kitti_field(gt);
  std::optional<Mask> m;
  if (!occ.empty()) m = read_mask(occ);
  const EvalReport r = evaluate(e, g, m ? &*m : nullptr);
  print_split("all", r.all);
  if (m) print_split("occluded", r.occluded);
  return 0;
}

SceneSpec make_scene(const std::string& name, std::optional<std::uint64_t> seed) {
  if (name == "static") return seed ? static_scene(*seed) : static_scene();
  if (name == "occlusion") return seed ? occlusion_scene(*seed) : occlusion_scene();
  if (name == "two_plane") return seed ? two_plane_scene(*seed) : two_plane_scene();
  throw InputError("unknown scene " + name);
}

int cmd_synth(const std::string& scene, int frames, int width, int height, const std::string& out,
              std::optional<std::uint64_t> seed) {
  if (frames < 2) throw InputError("--frames must be at least 2");
  const ImageDims dims{width, height};
  const CameraRig rig = default_synth_rig(dims);
  SceneRenderer r(make_scene(scene, seed), rig, dims);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_calibration((dir / "calib.txt").string(), rig);
  for (int k = 0; k < frames; ++k) {
    const RenderedPair p = r.render_pair(k);
    write_gray8((dir / ("left_" + frame_name(k) + ".png")).string(), p.left);
    write_gray8((dir / ("right_" + frame_name(k) + ".png")).string(), p.right);
    if (k + 1 == frames) continue;
    const GroundTruth gt = r.ground_truth(k);
    write_kitti_field((dir / ("gt_" + frame_name(k))).string(), gt.field);
    GrayImage occ(dims, 0.0);
    for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = gt.occluded[i] ? 255.0 : 0.0;
    write_gray8((dir / ("occ_" + frame_name(k) + ".png")).string(), occ);
  }
  std::printf("wrote %d stereo pairs of %s to %s\n", frames, scene.c_str(), out.c_str());
  return 0;
}

int cmd_viz(const std::string& field, const std::string& gt, const std::string& out) {
  const SceneFlowField f = read_kitti_field(field);
  fs::create_directories(out);
  const std::string stem = (fs::path(out) / fs::path(field).filename()).string();
  std::optional<SceneFlowField> g;
  if (!gt.empty()) g = read_kitti_field(gt);
  // Shared scales keep estimate and ground truth images comparable.
  double max_flow = 0, max_disp = 0;
  for (const SceneFlowField* s : std::array<const SceneFlowField*, 2>{&f, g ? &*g : nullptr}) {
    if (!s) continue;
    for (std::size_t i = 0; i < s->vectors.size(); ++i) {
      if (!s->valid[i]) continue;
      max_flow = std::max(max_flow, std::hypot(s->vectors[i].u, s->vectors[i].v));
      max_disp = std::max({max_disp, s->vectors[i].d0, s->vectors[i].d1});
    }
  }
  write_rgb8(stem + "_flow_color.png", flow_to_color(f, max_flow));
  write_rgb8(stem + "_d0_color.png", disparity_to_color(component(f, &SceneFlowVector::d0), f.valid, max_disp));
  write_rgb8(stem + "_d1_color.png", disparity_to_color(component(f, &SceneFlowVector::d1), f.valid, max_disp));
  if (g) write_rgb8(stem + "_error.png", scene_flow_error_to_color(f, *g));
  std::printf("wrote visualisations to %s_*.png\n", stem.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene flow from stereo sequences"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "estimate scene flow for a stereo sequence");
  run->add_option("--mode", ra.mode, "dual or multi")->check(CLI::IsMember({"dual", "multi"}))->capture_default_str();
  run->add_option("--left", ra.left, "glob of left images, sorted by name")->required();
  run->add_option("--right", ra.right, "glob of right images, sorted by name")->required();
  run->add_option("--calib", ra.calib, "calibration file: focal cx cy baseline")->required()->check(CLI::ExistingFile);
  run->add_option("--edges", ra.edges, "'gradient' or a glob of 8-bit edge PNGs, one per frame")->capture_default_str();
  run->add_option("--interp", ra.interp, "ric3d or epic3d")->check(CLI::IsMember({"ric3d", "epic3d"}))->capture_default_str();
  run->add_flag("--refine-variational", ra.variational, "variational refinement of the motion");
  run->add_flag("--refine-ego", ra.ego, "ego-motion model for static pixels");
  run->add_flag("--pfm", ra.pfm, "also write u, v, d0, d1 as PFM");
  run->add_option("--seed", ra.seed, "fixed seed for all random stages");
  run->add_option("--out", ra.out, "output directory")->required();

  std::string est, gt, occ;
  auto* eval = app.add_subcommand("eval", "KITTI-style metrics of an estimate against ground truth");
  eval->add_option("--est", est, "estimate prefix (<prefix>_disp_0.png, _disp_1.png, _flow.png)")->required();
  eval->add_option("--gt", gt, "ground truth prefix")->required();
  eval->add_option("--occ", occ, "optional occlusion mask PNG for the occluded split");

  std::string scene = "static", synth_out;
  int frames = 4, width = 256, height = 192;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "render a synthetic textured-plane sequence with ground truth");
  synth->add_option("--scene", scene, "static, occlusion or two_plane")
      ->check(CLI::IsMember({"static", "occlusion", "two_plane"}))
      ->capture_default_str();
  synth->add_option("--frames", frames, "stereo pairs to render")->capture_default_str();
  synth->add_option("--width", width)->capture_default_str();
  synth->add_option("--height", height)->capture_default_str();
  synth->add_option("--seed", synth_seed, "texture seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string field, viz_gt, viz_out;
  auto* viz = app.add_subcommand("viz", "colour-coded flow, disparity and error PNGs");
  viz->add_option("--field", field, "field prefix")->required();
  viz->add_option("--gt", viz_gt, "ground truth prefix for the error map");
  viz->add_option("--out", viz_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(ra);
    if (*eval) return cmd_eval(est, gt, occ);
    if (*synth) return cmd_synth(scene, frames, width, height, synth_out, synth_seed);
    if (*viz) return cmd_viz(field, viz_gt, viz_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
