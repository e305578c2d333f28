#pragma once

#include <functional>
#include <vector>

#include "splat/rasterizer.hpp"

namespace splat {

struct SurfelGrad {
    Vec3 color = Vec3::Zero();
    Vec3 center = Vec3::Zero();
    Vec2 scale = Vec2::Zero();
    Vec3 normal = Vec3::Zero();  // projected onto the tangent plane of n
    double opacity = 0.0;
};

struct GradientBuffers {
    std::vector<SurfelGrad> surfels;
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Vec6 pose_tangent = Vec6::Zero();  // left perturbation at the current pose

    GradientBuffers() = default;
    explicit GradientBuffers(std::size_t n) : surfels(n) {}
    void add(const GradientBuffers& o);
    bool all_finite() const;
};

// Propagates per-pixel cotangents through the compositing, projection, and
// covariance chains back to every parameter group. render_out must come from
// a matching forward call on the same scene/camera (hard error otherwise).
// dL_dcolor: W x H x 3; dL_ddepth: W x H x 1 (may be empty for zero).
GradientBuffers backward(const SurfelScene& scene, const CameraIntrinsics& k,
                         const CameraPose& pose, const RasterConfig& cfg,
                         const RenderOutput& render_out, const Image& dL_dcolor,
                         const Image& dL_ddepth);

// Central-difference estimate (f(x+h) - f(x-h)) / 2h where set_param moves
// the probed scalar and the loss is re-evaluated from scratch. Returns NaN
// when either evaluation is non-finite.
double finite_difference(const std::function<void(double)>& set_param, double base,
                         double step, const std::function<double()>& loss);

// FD along one of the six tangent basis directions via the exponential map.
double finite_difference_pose(const CameraPose& base, int axis, double step,
                              const std::function<double(const CameraPose&)>& loss);

struct GradCheckGroupReport {
    std::string group;
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    double excluded_fraction = 0.0;  // worst case over the group's parameters
    int parameters = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckGroupReport> groups;
    int scenes = 0;
    bool passed = true;
};

// Randomized analytic-vs-FD sweep over every parameter group. Pixels whose
// contributor set changes under the probe perturbation are excluded from
// both sides of the comparison.
GradCheckReport run_gradcheck(std::uint64_t seed, int num_scenes, double tolerance,
                              double max_excluded_fraction, int threads = 1);

}  // namespace splat
