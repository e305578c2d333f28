#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "splat/ba.hpp"
#include "splat/gradients.hpp"
#include "splat/io.hpp"
#include "splat/metrics.hpp"
#include "splat/rasterizer.hpp"
#include "splat/synthetic.hpp"

namespace {

using namespace splat;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

SyntheticSceneSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    nlohmann::json j;
    in >> j;
    SyntheticSceneSpec spec;
    if (j.contains("geometry")) spec.geometry = parse_geometry(j["geometry"].get<std::string>());
    if (j.contains("texture")) spec.texture = parse_texture(j["texture"].get<std::string>());
    if (j.contains("resolution")) spec.resolution = j["resolution"].get<int>();
    if (j.contains("width")) spec.image_width = j["width"].get<int>();
    if (j.contains("height")) spec.image_height = j["height"].get<int>();
    if (j.contains("baseline")) spec.baseline = j["baseline"].get<double>();
    if (j.contains("rotation_deg")) spec.rotation_deg = j["rotation_deg"].get<double>();
    if (j.contains("depth_noise")) spec.depth_noise = j["depth_noise"].get<double>();
    if (j.contains("normal_noise")) spec.normal_noise = j["normal_noise"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    return spec;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::uint64_t seed, bool seed_set, int threads) {
    SyntheticSceneSpec spec = load_spec(spec_path);
    if (seed_set) spec.seed = seed;
    const SyntheticBundle bundle = generate_synthetic(spec, threads);

    std::filesystem::create_directories(out_dir);
    write_ply(out_dir + "/scene.ply", bundle.scene_truth);
    write_camera_json(out_dir + "/camera1.json", {bundle.intrinsics_truth, CameraPose{}});
    write_camera_json(out_dir + "/camera2.json", {bundle.intrinsics_truth, bundle.pose_view2});
    write_pfm(out_dir + "/image1.pfm", bundle.image1);
    write_pfm(out_dir + "/image2.pfm", bundle.image2);
    write_pfm(out_dir + "/depth1.pfm", bundle.depth1);
    write_pfm(out_dir + "/depth2.pfm", bundle.depth2);
    write_png(out_dir + "/image1.png", bundle.image1);
    write_png(out_dir + "/image2.png", bundle.image2);
    std::cout << "overlap_fraction " << bundle.overlap_fraction << "\n";
    return 0;
}

int cmd_render(const std::string& scene_path, const std::string& camera_path,
               const std::string& out_path, const std::string& png_path,
               const std::string& depth_path, int threads) {
    const SurfelScene scene = read_ply(scene_path);
    const CameraFile cam = read_camera_json(camera_path);
    RasterConfig cfg;
    cfg.threads = threads;
    const RenderOutput out = render(scene, cam.intrinsics, cam.pose, cfg);
    write_pfm(out_path, out.color);
    if (!png_path.empty()) write_png(png_path, out.color);
    if (!depth_path.empty()) write_pfm(depth_path, out.depth);
    return 0;
}

int cmd_calibrate(const std::string& scene_path, const std::string& image_path,
                  int iters, const std::string& out_path, double lr_decay, int threads) {
    const SurfelScene scene = read_ply(scene_path);
    const Image observed = read_pfm(image_path);

    BAConfig cfg;
    cfg.raster.threads = threads;
    cfg.schedule.lr_decay = lr_decay;
    cfg.schedule.intrinsics_end = iters;
    cfg.schedule.gaussians_end = cfg.schedule.pose_end = iters;
    cfg.schedule.total_iterations = iters;

    BAState state = make_state(scene, init_intrinsics(observed.width, observed.height),
                               CameraPose{});
    std::vector<IterationRecord> trace;
    run_stage(state, Stage::Intrinsics, iters, cfg, observed, observed, trace);
    write_camera_json(out_path, {state.intrinsics, CameraPose{}});
    std::cout << "fx " << state.intrinsics.fx << " fy " << state.intrinsics.fy << " cx "
              << state.intrinsics.cx << " cy " << state.intrinsics.cy << "\n";
    return 0;
}

int cmd_pose(const std::string& scene_path, const std::string& camera_path,
             const std::string& image_path, int iters, const std::string& out_path,
             double lr_decay, int threads) {
    const SurfelScene scene = read_ply(scene_path);
    const CameraFile cam = read_camera_json(camera_path);
    const Image observed = read_pfm(image_path);

    BAConfig cfg;
    cfg.raster.threads = threads;
    cfg.schedule.lr_decay = lr_decay;
    BAState state = make_state(scene, cam.intrinsics, cam.pose);
    std::vector<IterationRecord> trace;
    run_stage(state, Stage::Pose, iters, cfg, observed, observed, trace);
    write_camera_json(out_path, {state.intrinsics, state.pose2});
    if (state.pose_converged)
        std::cout << "early stop at iteration " << state.pose_stop_iteration << "\n";
    return 0;
}

int cmd_ba(const std::string& bundle_dir, const std::string& config_path,
           const std::string& out_dir, std::uint64_t seed, bool seed_set,
           int threads, int stride) {
    BAConfig cfg = config_path.empty() ? BAConfig{} : load_ba_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (threads >= 0) cfg.raster.threads = threads;
    cfg.output_dir = out_dir;

    const Image image1 = read_pfm(bundle_dir + "/image1.pfm");
    const Image image2 = read_pfm(bundle_dir + "/image2.pfm");
    const Image depth1 = read_pfm(bundle_dir + "/depth1.pfm");

    const CameraIntrinsics k0 = init_intrinsics(image1.width, image1.height);
    const SurfelScene scene = init_surfels_from_depth(image1, depth1, k0, stride);
    const BAResult res = run_algorithm1(scene, k0, CameraPose{}, image1, image2, cfg);

    write_ply(out_dir + "/scene.ply", res.state.scene);
    write_camera_json(out_dir + "/camera.json", {res.state.intrinsics, res.state.pose2});
    std::cout << "final total loss " << res.trace.back().total << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int scenes, int threads) {
    const GradCheckReport report =
        run_gradcheck(seed, scenes, 1e-5, 0.05, threads <= 0 ? 1 : threads);
    for (const auto& g : report.groups) {
        std::printf("%-10s max_rel %.3e mean_rel %.3e excluded %.2f%% params %d  %s\n",
                    g.group.c_str(), g.max_rel_err, g.mean_rel_err,
                    100.0 * g.excluded_fraction, g.parameters, g.passed ? "PASS" : "FAIL");
    }
    std::printf("gradcheck %s on %d scenes\n", report.passed ? "PASSED" : "FAILED",
                report.scenes);
    return report.passed ? 0 : 1;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path) {
    const Image a = read_pfm(a_path);
    const Image b = read_pfm(b_path);
    std::cout << "{\"psnr\": " << fmt(psnr(a, b)) << ", \"ssim\": " << fmt(ssim(a, b))
              << "}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable Gaussian-surfel splatting toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    int threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--threads", threads, "worker threads, 0 = auto")->capture_default_str();
    app.add_option("--seed", seed, "RNG seed")->each([&](const std::string&) { seed_set = true; });

    std::string spec_path, out_path, scene_path, camera_path, image_path;
    std::string png_path, depth_path, a_path, b_path, bundle_dir, config_path;
    int iters = 200;
    int pose_iters = 300;
    int stride = 2;
    int scenes = 20;
    double lr_decay = 0.98;

    auto* synth = app.add_subcommand("synth", "generate a synthetic two-view bundle");
    synth->add_option("--spec", spec_path, "scene spec JSON")->required();
    synth->add_option("--out", out_path, "output directory")->required();

    auto* render_cmd = app.add_subcommand("render", "render a scene");
    render_cmd->add_option("--scene", scene_path)->required();
    render_cmd->add_option("--camera", camera_path)->required();
    render_cmd->add_option("--out", out_path, "color PFM")->required();
    render_cmd->add_option("--png", png_path, "optional PNG preview");
    render_cmd->add_option("--depth", depth_path, "optional depth PFM");

    auto* calibrate = app.add_subcommand("calibrate", "recover intrinsics from one view");
    calibrate->add_option("--scene", scene_path)->required();
    calibrate->add_option("--image", image_path)->required();
    calibrate->add_option("--iters", iters)->capture_default_str();
    calibrate->add_option("--lr-decay", lr_decay)->capture_default_str();
    calibrate->add_option("--out", out_path)->required();

    auto* pose = app.add_subcommand("pose", "recover the second view's pose");
    pose->add_option("--scene", scene_path)->required();
    pose->add_option("--camera", camera_path, "intrinsics + initial pose guess")->required();
    pose->add_option("--image", image_path)->required();
    pose->add_option("--iters", pose_iters)->capture_default_str();
    pose->add_option("--lr-decay", lr_decay)->capture_default_str();
    pose->add_option("--out", out_path)->required();

    auto* ba = app.add_subcommand("ba", "full staged bundle adjustment");
    ba->add_option("--bundle", bundle_dir, "directory from synth")->required();
    ba->add_option("--config", config_path, "TOML or JSON schedule config");
    ba->add_option("--stride", stride, "surfel init pixel stride")->capture_default_str();
    ba->add_option("--out", out_path)->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite differences");
    gradcheck->add_option("--scenes", scenes)->capture_default_str();

    auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM between two PFM images");
    metrics->add_option("--a", a_path)->required();
    metrics->add_option("--b", b_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_path, seed, seed_set, threads);
        if (render_cmd->parsed())
            return cmd_render(scene_path, camera_path, out_path, png_path, depth_path, threads);
        if (calibrate->parsed())
            return cmd_calibrate(scene_path, image_path, iters, out_path, lr_decay, threads);
        if (pose->parsed())
            return cmd_pose(scene_path, camera_path, image_path, pose_iters, out_path,
                            lr_decay, threads);
        if (ba->parsed())
            return cmd_ba(bundle_dir, config_path, out_path, seed, seed_set, threads, stride);
        if (gradcheck->parsed()) return cmd_gradcheck(seed, scenes, threads);
        if (metrics->parsed()) return cmd_metrics(a_path, b_path);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
