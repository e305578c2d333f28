#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/camera.hpp"
#include "splat/image.hpp"
#include "splat/losses.hpp"
#include "splat/rasterizer.hpp"
#include "splat/surfel.hpp"

namespace splat {

enum class Stage { Intrinsics, Gaussians, Pose, Joint };

const char* stage_name(Stage stage);

struct OptimizationSchedule {
    int total_iterations = 100;
    int intrinsics_end = 10;  // [0, intrinsics_end): K only
    int gaussians_end = 20;   // [intrinsics_end, gaussians_end): surfels only
    int pose_end = 40;        // [gaussians_end, pose_end): pose only, early stop
    double lr_focal = 1.0;
    double lr_principal = 0.1;
    double lr_gaussians = 2e-4;
    double lr_pose = 3e-3;
    double pose_epsilon = 1e-5;  // tangent step norm for the pose early stop
    double lr_decay = 1.0;       // per-step multiplicative decay, 1 = constant
    bool use_adam = true;        // plain gradient descent when false

    bool valid() const {
        return total_iterations > 0 && intrinsics_end >= 0 &&
               intrinsics_end <= gaussians_end && gaussians_end <= pose_end &&
               pose_end <= total_iterations && lr_focal > 0 && lr_principal > 0 &&
               lr_gaussians > 0 && lr_pose > 0 && pose_epsilon > 0 &&
               lr_decay > 0 && lr_decay <= 1.0;
    }
};

struct BAConfig {
    OptimizationSchedule schedule;
    LossWeights weights;
    RasterConfig raster;
    std::uint64_t seed = 0;
    std::string output_dir;   // empty: no checkpoints or trace files
    int checkpoint_every = 10;
};

// Reads schedule, weights, seed, and thread settings from a flat JSON object
// or a flat TOML key = value file (chosen by extension).
BAConfig load_ba_config(const std::string& path);

struct IterationRecord {
    int iter = 0;
    Stage stage = Stage::Intrinsics;
    double l_pho1 = 0.0;
    double l_pho2 = 0.0;
    double l_geo = 0.0;
    double total = 0.0;
    bool pose_early_stop = false;
};

std::string record_json(const IterationRecord& rec);

struct AdamSlot {
    double m = 0.0;
    double v = 0.0;
};

struct BAState {
    SurfelScene scene;
    CameraIntrinsics intrinsics;
    CameraPose pose2;  // view 1 stays the identity (canonical frame)

    // Optimizer moments: 4 intrinsics + 6 pose + 12 per surfel, with
    // per-group bias-correction counters.
    std::vector<AdamSlot> moments;
    long steps_intrinsics = 0;
    long steps_gaussians = 0;
    long steps_pose = 0;

    int iteration = 0;
    bool pose_converged = false;
    int pose_stop_iteration = -1;
};

CameraIntrinsics init_intrinsics(int width, int height);

BAState make_state(SurfelScene scene, const CameraIntrinsics& k, const CameraPose& pose2);

// Runs one stage for up to `iters` iterations against the two observations,
// appending one record per executed iteration. Frozen parameter groups are
// untouched; a non-finite gradient aborts with a diagnostic exception.
void run_stage(BAState& state, Stage stage, int iters, const BAConfig& cfg,
               const Image& observed1, const Image& observed2,
               std::vector<IterationRecord>& trace);

struct BAResult {
    BAState state;
    std::vector<IterationRecord> trace;
};

// Full staged schedule: intrinsics, Gaussians, pose (early stop), joint.
// Writes trace JSONL and periodic scene/camera checkpoints when
// cfg.output_dir is set; a failed checkpoint write degrades to a warning.
BAResult run_algorithm1(const SurfelScene& scene, const CameraIntrinsics& k_init,
                        const CameraPose& pose2_init, const Image& observed1,
                        const Image& observed2, const BAConfig& cfg);

}  // namespace splat
