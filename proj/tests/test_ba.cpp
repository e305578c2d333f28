#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "splat/ba.hpp"
#include "splat/rasterizer.hpp"
#include "splat/synthetic.hpp"

using namespace splat;

namespace {

namespace fs = std::filesystem;

SyntheticBundle small_bundle(std::uint64_t seed) {
    SyntheticSceneSpec spec;
    spec.geometry = GeometryPreset::TwoPlanes;
    spec.texture = TexturePattern::Checker;
    spec.resolution = 24;
    spec.image_width = 48;
    spec.image_height = 48;
    spec.seed = seed;
    return generate_synthetic(spec, 0);
}

bool scenes_identical(const SurfelScene& a, const SurfelScene& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.surfels[i].color != b.surfels[i].color) return false;
        if (a.surfels[i].center != b.surfels[i].center) return false;
        if (a.surfels[i].scale != b.surfels[i].scale) return false;
        if (a.surfels[i].normal != b.surfels[i].normal) return false;
        if (a.surfels[i].opacity != b.surfels[i].opacity) return false;
    }
    return true;
}

bool intrinsics_identical(const CameraIntrinsics& a, const CameraIntrinsics& b) {
    return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy;
}

bool poses_identical(const CameraPose& a, const CameraPose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("splat_ba_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("init_intrinsics rule") {
    const CameraIntrinsics a = init_intrinsics(224, 224);
    CHECK(a.fx == doctest::Approx(268.8).epsilon(1e-12));
    CHECK(a.fy == doctest::Approx(268.8).epsilon(1e-12));
    CHECK(a.cx == 112.0);
    CHECK(a.cy == 112.0);

    const CameraIntrinsics b = init_intrinsics(640, 480);
    CHECK(b.fx == doctest::Approx(768.0).epsilon(1e-12));
    CHECK(b.fy == doctest::Approx(576.0).epsilon(1e-12));
    CHECK(b.cx == 320.0);
    CHECK(b.cy == 240.0);
}

TEST_CASE("schedule validity") {
    OptimizationSchedule s;
    CHECK(s.valid());
    s.pose_end = 200;
    CHECK(!s.valid());
    s = OptimizationSchedule{};
    s.gaussians_end = 5;
    CHECK(!s.valid());
    s = OptimizationSchedule{};
    s.lr_pose = 0.0;
    CHECK(!s.valid());
    s = OptimizationSchedule{};
    s.lr_decay = 1.5;
    CHECK(!s.valid());
}

TEST_CASE("stage isolation keeps frozen groups bit-identical") {
    const SyntheticBundle b = small_bundle(1);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, b.intrinsics_truth, 2);
    BAConfig cfg;

    SUBCASE("intrinsics stage freezes scene and pose") {
        BAState st = make_state(scene0, init_intrinsics(48, 48), b.pose_view2);
        std::vector<IterationRecord> trace;
        run_stage(st, Stage::Intrinsics, 3, cfg, b.image1, b.image2, trace);
        CHECK(scenes_identical(st.scene, scene0));
        CHECK(poses_identical(st.pose2, b.pose_view2));
        CHECK(!intrinsics_identical(st.intrinsics, init_intrinsics(48, 48)));
    }
    SUBCASE("gaussians stage freezes camera") {
        BAState st = make_state(scene0, b.intrinsics_truth, b.pose_view2);
        std::vector<IterationRecord> trace;
        run_stage(st, Stage::Gaussians, 3, cfg, b.image1, b.image2, trace);
        CHECK(intrinsics_identical(st.intrinsics, b.intrinsics_truth));
        CHECK(poses_identical(st.pose2, b.pose_view2));
    }
    SUBCASE("pose stage freezes scene and intrinsics") {
        TangentUpdate nudge;
        nudge.xi << 0.01, -0.005, 0.008, 0.01, 0.0, -0.01;
        BAState st = make_state(scene0, b.intrinsics_truth, se3_exp(nudge).compose(b.pose_view2));
        std::vector<IterationRecord> trace;
        run_stage(st, Stage::Pose, 3, cfg, b.image1, b.image2, trace);
        CHECK(scenes_identical(st.scene, scene0));
        CHECK(intrinsics_identical(st.intrinsics, b.intrinsics_truth));
    }
}

TEST_CASE("surfel invariants survive optimization") {
    const SyntheticBundle b = small_bundle(2);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, b.intrinsics_truth, 2);
    BAConfig cfg;
    cfg.schedule.lr_gaussians = 1e-3;
    BAState st = make_state(scene0, b.intrinsics_truth, b.pose_view2);
    std::vector<IterationRecord> trace;
    run_stage(st, Stage::Gaussians, 10, cfg, b.image1, b.image2, trace);
    for (const auto& s : st.scene.surfels) {
        CHECK(std::abs(s.normal.norm() - 1.0) < 1e-9);
        CHECK(s.scale.x() > 0.0);
        CHECK(s.scale.y() > 0.0);
        CHECK(s.opacity >= 0.0);
        CHECK(s.opacity <= 1.0);
    }
    CHECK((st.pose2.rotation * st.pose2.rotation.transpose() - Mat3::Identity()).norm() <
          1e-9);
}

TEST_CASE("self-rendered observations are a fixed point") {
    const SyntheticBundle b = small_bundle(3);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, init_intrinsics(48, 48), 2);
    const RasterConfig rcfg;
    // observations rendered from the initial state itself: gradients vanish
    const Image obs1 = render(scene0, init_intrinsics(48, 48), CameraPose{}, rcfg).color;
    const Image obs2 = render(scene0, init_intrinsics(48, 48), CameraPose{}, rcfg).color;

    BAConfig cfg;
    const BAResult res =
        run_algorithm1(scene0, init_intrinsics(48, 48), CameraPose{}, obs1, obs2, cfg);

    CHECK(std::abs(res.state.intrinsics.fx / init_intrinsics(48, 48).fx - 1.0) < 1e-3);
    CHECK(std::abs(res.state.intrinsics.fy / init_intrinsics(48, 48).fy - 1.0) < 1e-3);
    CHECK((res.state.pose2.translation).norm() < 5e-3);
    double drift = 0.0;
    for (std::size_t i = 0; i < scene0.size(); ++i)
        drift = std::max(drift,
                         (res.state.scene.surfels[i].center - scene0.surfels[i].center).norm());
    CHECK(drift < 5e-3);  // < 0.5% of the ~2.5 unit scene scale
}

TEST_CASE("stage-final loss does not exceed the stage-initial loss") {
    const SyntheticBundle b = small_bundle(4);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, b.intrinsics_truth, 2);
    BAConfig cfg;
    cfg.schedule.lr_decay = 0.98;
    BAState st = make_state(scene0, init_intrinsics(48, 48), b.pose_view2);
    std::vector<IterationRecord> trace;
    run_stage(st, Stage::Intrinsics, 30, cfg, b.image1, b.image2, trace);
    REQUIRE(trace.size() == 30);
    CHECK(trace.back().total <= trace.front().total * 1.01);
    for (const auto& rec : trace) CHECK(rec.stage == Stage::Intrinsics);
}

TEST_CASE("pose early stop triggers iff the step norm falls below epsilon") {
    const SyntheticBundle b = small_bundle(5);
    BAConfig cfg;
    cfg.schedule.lr_decay = 0.9;  // aggressive decay forces tiny steps
    cfg.schedule.pose_epsilon = 1e-5;

    BAState st = make_state(b.scene_truth, b.intrinsics_truth, b.pose_view2);
    std::vector<IterationRecord> trace;
    run_stage(st, Stage::Pose, 300, cfg, b.image1, b.image2, trace);
    CHECK(st.pose_converged);
    CHECK(st.pose_stop_iteration >= 0);
    CHECK(trace.size() < 300);  // remaining iterations skipped
    CHECK(trace.back().pose_early_stop);

    // with a huge threshold the very first step stops the stage
    BAState st2 = make_state(b.scene_truth, b.intrinsics_truth, b.pose_view2);
    BAConfig cfg2;
    cfg2.schedule.pose_epsilon = 1e9;
    std::vector<IterationRecord> trace2;
    run_stage(st2, Stage::Pose, 50, cfg2, b.image1, b.image2, trace2);
    CHECK(st2.pose_converged);
    CHECK(trace2.size() == 1);

    // with an impossible threshold the stage never stops early
    TangentUpdate nudge;
    nudge.xi << 0.02, -0.01, 0.015, 0.02, -0.01, 0.02;
    BAState st3 = make_state(b.scene_truth, b.intrinsics_truth,
                             se3_exp(nudge).compose(b.pose_view2));
    BAConfig cfg3;
    cfg3.schedule.pose_epsilon = 1e-300;
    std::vector<IterationRecord> trace3;
    run_stage(st3, Stage::Pose, 20, cfg3, b.image1, b.image2, trace3);
    CHECK(!st3.pose_converged);
    CHECK(trace3.size() == 20);
}

TEST_CASE("run_algorithm1 writes trace and checkpoints") {
    TempDir dir;
    const SyntheticBundle b = small_bundle(6);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, init_intrinsics(48, 48), 2);
    BAConfig cfg;
    cfg.schedule.total_iterations = 12;
    cfg.schedule.intrinsics_end = 3;
    cfg.schedule.gaussians_end = 6;
    cfg.schedule.pose_end = 9;
    cfg.checkpoint_every = 6;
    cfg.output_dir = dir.path.string();

    const BAResult res =
        run_algorithm1(scene0, init_intrinsics(48, 48), b.pose_view2, b.image1, b.image2, cfg);
    CHECK(res.trace.size() <= 12);
    CHECK(fs::exists(dir.path / "trace.jsonl"));
    CHECK(fs::exists(dir.path / "checkpoint_0006.ply"));
    CHECK(fs::exists(dir.path / "checkpoint_0006.json"));

    std::ifstream trace_file(dir.path / "trace.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(trace_file, line)) {
        CHECK(line.find("\"iter\"") != std::string::npos);
        CHECK(line.find("\"stage\"") != std::string::npos);
        CHECK(line.find("\"total\"") != std::string::npos);
        ++lines;
    }
    CHECK(lines == static_cast<int>(res.trace.size()));
}

TEST_CASE("run_algorithm1 is deterministic across thread counts") {
    const SyntheticBundle b = small_bundle(7);
    const SurfelScene scene0 =
        init_surfels_from_depth(b.image1, b.depth1, b.intrinsics_truth, 2);
    BAConfig cfg;
    cfg.schedule.total_iterations = 10;
    cfg.schedule.intrinsics_end = 2;
    cfg.schedule.gaussians_end = 5;
    cfg.schedule.pose_end = 7;

    BAConfig cfg1 = cfg, cfg4 = cfg;
    cfg1.raster.threads = 1;
    cfg4.raster.threads = 4;
    const BAResult r1 =
        run_algorithm1(scene0, init_intrinsics(48, 48), b.pose_view2, b.image1, b.image2, cfg1);
    const BAResult r4 =
        run_algorithm1(scene0, init_intrinsics(48, 48), b.pose_view2, b.image1, b.image2, cfg4);
    CHECK(scenes_identical(r1.state.scene, r4.state.scene));
    CHECK(intrinsics_identical(r1.state.intrinsics, r4.state.intrinsics));
    CHECK(poses_identical(r1.state.pose2, r4.state.pose2));
}

TEST_CASE("record_json format") {
    IterationRecord rec;
    rec.iter = 7;
    rec.stage = Stage::Joint;
    rec.l_pho1 = 0.25;
    rec.total = 0.5;
    const std::string line = record_json(rec);
    CHECK(line.find("\"iter\": 7") != std::string::npos);
    CHECK(line.find("joint") != std::string::npos);
    CHECK(line.find("\"total\"") != std::string::npos);
}

TEST_CASE("config parsing from JSON and TOML") {
    TempDir dir;
    const std::string json_path = (dir.path / "cfg.json").string();
    {
        std::ofstream out(json_path);
        out << "{\"total_iterations\": 50, \"intrinsics_end\": 5, \"gaussians_end\": 10,\n"
               " \"pose_end\": 20, \"lr_gaussians\": 0.001, \"lambda3\": 0.02,\n"
               " \"seed\": 11, \"use_adam\": false}\n";
    }
    const BAConfig jcfg = load_ba_config(json_path);
    CHECK(jcfg.schedule.total_iterations == 50);
    CHECK(jcfg.schedule.intrinsics_end == 5);
    CHECK(jcfg.schedule.gaussians_end == 10);
    CHECK(jcfg.schedule.pose_end == 20);
    CHECK(jcfg.schedule.lr_gaussians == 0.001);
    CHECK(jcfg.weights.lambda3 == 0.02);
    CHECK(jcfg.seed == 11);
    CHECK(!jcfg.schedule.use_adam);

    const std::string toml_path = (dir.path / "cfg.toml").string();
    {
        std::ofstream out(toml_path);
        out << "# schedule\n"
               "total_iterations = 60\n"
               "pose_end = 30\n"
               "lr_pose = 0.01  # pose tangent rate\n"
               "lambda_sm = 0.5\n"
               "use_adam = true\n";
    }
    const BAConfig tcfg = load_ba_config(toml_path);
    CHECK(tcfg.schedule.total_iterations == 60);
    CHECK(tcfg.schedule.pose_end == 30);
    CHECK(tcfg.schedule.lr_pose == 0.01);
    CHECK(tcfg.weights.lambda_sm == 0.5);
    CHECK(tcfg.schedule.use_adam);

    const std::string bad_path = (dir.path / "bad.toml").string();
    {
        std::ofstream out(bad_path);
        out << "no_such_key = 1\n";
    }
    CHECK_THROWS(load_ba_config(bad_path));
}

TEST_CASE("stage names") {
    CHECK(std::string(stage_name(Stage::Intrinsics)) == "intrinsics");
    CHECK(std::string(stage_name(Stage::Gaussians)) == "gaussians");
    CHECK(std::string(stage_name(Stage::Pose)) == "pose");
    CHECK(std::string(stage_name(Stage::Joint)) == "joint");
}
