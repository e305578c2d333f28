#include "splat/ba.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "splat/gradients.hpp"
#include "splat/io.hpp"

namespace splat {

namespace {

constexpr int kIntrinsicsSlots = 4;  // fx, fy, cx, cy
constexpr int kPoseSlots = 6;
constexpr int kSurfelSlots = 12;  // color 3, center 3, log-scale 2, normal 3, opacity 1

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double optimizer_step(AdamSlot& slot, double grad, double lr, long t, bool use_adam) {
    if (!use_adam) return lr * grad;
    slot.m = 0.9 * slot.m + 0.1 * grad;
    slot.v = 0.999 * slot.v + 0.001 * grad * grad;
    const double mhat = slot.m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vhat = slot.v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    return lr * mhat / (std::sqrt(vhat) + 1e-8);
}

// Composited depth divided by accumulated alpha; 0 where coverage is soft.
Image solid_depth(const RenderOutput& out) {
    Image d(out.depth.width, out.depth.height, 1);
    for (std::size_t i = 0; i < d.data.size(); ++i)
        d.data[i] = out.alpha.data[i] > 0.9 ? out.depth.data[i] / out.alpha.data[i] : 0.0;
    return d;
}

struct Eval {
    double l_pho1 = 0.0, l_pho2 = 0.0, l_geo = 0.0, total = 0.0;
    GradientBuffers grads;  // pose tangent taken from view 2 only
};

Eval evaluate(const BAState& st, Stage stage, const BAConfig& cfg, const Image& obs1,
              const Image& obs2) {
    Eval e;
    e.grads = GradientBuffers(st.scene.size());

    const CameraPose identity{};
    const bool need1 = stage != Stage::Pose;
    const bool need2 = stage != Stage::Intrinsics;
    const bool with_geo = stage == Stage::Joint && cfg.weights.lambda3 > 0.0;
    // The single-view calibration/pose objectives are plain L1; the Gaussian
    // and joint stages use the L1+SSIM mix.
    const double lambda_sm =
        (stage == Stage::Gaussians || stage == Stage::Joint) ? cfg.weights.lambda_sm : 0.0;

    RenderOutput out1, out2;
    PhotometricResult pho1, pho2;
    if (need1) {
        out1 = render(st.scene, st.intrinsics, identity, cfg.raster);
        pho1 = photometric_loss(out1.color, obs1, lambda_sm);
        e.l_pho1 = pho1.loss;
    }
    if (need2) {
        out2 = render(st.scene, st.intrinsics, st.pose2, cfg.raster);
        pho2 = photometric_loss(out2.color, obs2, lambda_sm);
        e.l_pho2 = pho2.loss;
    }

    double w1 = 0.0, w2 = 0.0;
    switch (stage) {
        case Stage::Intrinsics:
            w1 = 1.0;
            e.total = e.l_pho1;
            break;
        case Stage::Gaussians:
            w1 = w2 = 1.0;
            e.total = e.l_pho1 + e.l_pho2;
            break;
        case Stage::Pose:
            w2 = 1.0;
            e.total = e.l_pho2;
            break;
        case Stage::Joint:
            w1 = cfg.weights.lambda1;
            w2 = cfg.weights.lambda2;
            e.total = w1 * e.l_pho1 + w2 * e.l_pho2;
            break;
    }

    Image ddepth1, ddepth2;
    if (with_geo) {
        const Image d1 = solid_depth(out1);
        const Image d2 = solid_depth(out2);
        WarpResult warp = warp_depth(d2, st.intrinsics, st.pose2.inverse());
        // Warped samples landing on pixels view 1 never covered carry no
        // consistency information; drop them from the mask.
        for (std::size_t i = 0; i < warp.mask.data.size(); ++i) {
            if (warp.mask.data[i] > 0.0 && d1.data[i] <= 0.0) {
                warp.mask.data[i] = 0.0;
                warp.source[i] = -1;
            }
        }
        const GeometricResult geo = geometric_loss(d1, warp);
        e.l_geo = geo.loss;
        e.total += cfg.weights.lambda3 * e.l_geo;
        // Chain to the raw composited depths; the normalization by the
        // accumulated alpha is treated as stop-gradient.
        ddepth1 = Image(d1.width, d1.height, 1);
        ddepth2 = Image(d2.width, d2.height, 1);
        for (std::size_t i = 0; i < ddepth1.data.size(); ++i) {
            if (out1.alpha.data[i] > 0.9)
                ddepth1.data[i] =
                    cfg.weights.lambda3 * geo.grad_target_depth.data[i] / out1.alpha.data[i];
            if (out2.alpha.data[i] > 0.9)
                ddepth2.data[i] =
                    cfg.weights.lambda3 * geo.grad_source_depth.data[i] / out2.alpha.data[i];
        }
    }

    if (need1 && (w1 > 0.0 || with_geo)) {
        Image dcolor = pho1.grad;
        for (double& v : dcolor.data) v *= w1;
        GradientBuffers g1 =
            backward(st.scene, st.intrinsics, identity, cfg.raster, out1, dcolor, ddepth1);
        g1.pose_tangent.setZero();  // view 1 is the fixed canonical frame
        e.grads.add(g1);
    }
    if (need2 && (w2 > 0.0 || with_geo)) {
        Image dcolor = pho2.grad;
        for (double& v : dcolor.data) v *= w2;
        GradientBuffers g2 =
            backward(st.scene, st.intrinsics, st.pose2, cfg.raster, out2, dcolor, ddepth2);
        e.grads.add(g2);
    }
    return e;
}

void update_intrinsics(BAState& st, const GradientBuffers& g, const OptimizationSchedule& s) {
    const long t = ++st.steps_intrinsics;
    const double decay = std::pow(s.lr_decay, static_cast<double>(t - 1));
    CameraIntrinsics& k = st.intrinsics;
    k.fx -= optimizer_step(st.moments[0], g.fx, s.lr_focal * decay, t, s.use_adam);
    k.fy -= optimizer_step(st.moments[1], g.fy, s.lr_focal * decay, t, s.use_adam);
    k.cx -= optimizer_step(st.moments[2], g.cx, s.lr_principal * decay, t, s.use_adam);
    k.cy -= optimizer_step(st.moments[3], g.cy, s.lr_principal * decay, t, s.use_adam);
    k.fx = std::max(k.fx, 1.0);
    k.fy = std::max(k.fy, 1.0);
}

void update_gaussians(BAState& st, const GradientBuffers& g, const OptimizationSchedule& s) {
    const long t = ++st.steps_gaussians;
    const double lr = s.lr_gaussians * std::pow(s.lr_decay, static_cast<double>(t - 1));
    for (std::size_t i = 0; i < st.scene.size(); ++i) {
        GaussianSurfel& sf = st.scene.surfels[i];
        const SurfelGrad& sg = g.surfels[i];
        AdamSlot* slot = &st.moments[kIntrinsicsSlots + kPoseSlots + kSurfelSlots * i];
        for (int c = 0; c < 3; ++c)
            sf.color[c] -= optimizer_step(slot[c], sg.color[c], lr, t, s.use_adam);
        for (int c = 0; c < 3; ++c)
            sf.center[c] -= optimizer_step(slot[3 + c], sg.center[c], lr, t, s.use_adam);
        for (int c = 0; c < 2; ++c) {
            // Scales live in log space so positivity is structural. A zero
            // step leaves the scale bitwise untouched; the exp/log round
            // trip would otherwise perturb exact fixed points.
            const double grad_ls = sf.scale[c] * sg.scale[c];
            const double step = optimizer_step(slot[6 + c], grad_ls, lr, t, s.use_adam);
            if (step != 0.0)
                sf.scale[c] = std::clamp(std::exp(std::log(sf.scale[c]) - step), 1e-5, 10.0);
        }
        Vec3 n = sf.normal;
        bool normal_moved = false;
        for (int c = 0; c < 3; ++c) {
            const double step = optimizer_step(slot[8 + c], sg.normal[c], lr, t, s.use_adam);
            n[c] -= step;
            normal_moved |= step != 0.0;
        }
        if (normal_moved && n.norm() > 1e-9) sf.normal = n.normalized();
        sf.opacity -= optimizer_step(slot[11], sg.opacity, lr, t, s.use_adam);
        sf.opacity = std::clamp(sf.opacity, 0.005, 0.995);
    }
}

double update_pose(BAState& st, const GradientBuffers& g, const OptimizationSchedule& s) {
    const long t = ++st.steps_pose;
    const double lr = s.lr_pose * std::pow(s.lr_decay, static_cast<double>(t - 1));
    TangentUpdate step;
    for (int a = 0; a < 6; ++a)
        step.xi[a] =
            -optimizer_step(st.moments[kIntrinsicsSlots + a], g.pose_tangent[a], lr, t, s.use_adam);
    st.pose2 = se3_exp(step).compose(st.pose2);
    return step.xi.norm();
}

void apply_config_key(BAConfig& cfg, const std::string& key, const nlohmann::json& v) {
    OptimizationSchedule& s = cfg.schedule;
    if (key == "total_iterations") s.total_iterations = v.get<int>();
    else if (key == "intrinsics_end") s.intrinsics_end = v.get<int>();
    else if (key == "gaussians_end") s.gaussians_end = v.get<int>();
    else if (key == "pose_end") s.pose_end = v.get<int>();
    else if (key == "lr_focal") s.lr_focal = v.get<double>();
    else if (key == "lr_principal") s.lr_principal = v.get<double>();
    else if (key == "lr_gaussians") s.lr_gaussians = v.get<double>();
    else if (key == "lr_pose") s.lr_pose = v.get<double>();
    else if (key == "pose_epsilon") s.pose_epsilon = v.get<double>();
    else if (key == "lr_decay") s.lr_decay = v.get<double>();
    else if (key == "use_adam") s.use_adam = v.get<bool>();
    else if (key == "lambda_sm") cfg.weights.lambda_sm = v.get<double>();
    else if (key == "lambda1") cfg.weights.lambda1 = v.get<double>();
    else if (key == "lambda2") cfg.weights.lambda2 = v.get<double>();
    else if (key == "lambda3") cfg.weights.lambda3 = v.get<double>();
    else if (key == "lambda_n") cfg.weights.lambda_n = v.get<double>();
    else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
    else if (key == "threads") cfg.raster.threads = v.get<int>();
    else if (key == "checkpoint_every") cfg.checkpoint_every = v.get<int>();
    else throw std::invalid_argument("unknown config key: " + key);
}

BAConfig load_toml_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    BAConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        nlohmann::json v;
        if (value == "true") v = true;
        else if (value == "false") v = false;
        else if (!value.empty() && value.front() == '"' && value.back() == '"')
            v = value.substr(1, value.size() - 2);
        else v = nlohmann::json::parse(value);  // numbers
        apply_config_key(cfg, key, v);
    }
    return cfg;
}

}  // namespace

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Intrinsics: return "intrinsics";
        case Stage::Gaussians: return "gaussians";
        case Stage::Pose: return "pose";
        case Stage::Joint: return "joint";
    }
    return "unknown";
}

std::string record_json(const IterationRecord& rec) {
    std::ostringstream out;
    out << "{\"iter\": " << rec.iter << ", \"stage\": \"" << stage_name(rec.stage)
        << "\", \"l_pho1\": " << fmt(rec.l_pho1) << ", \"l_pho2\": " << fmt(rec.l_pho2)
        << ", \"l_geo\": " << fmt(rec.l_geo) << ", \"total\": " << fmt(rec.total);
    if (rec.pose_early_stop) out << ", \"pose_early_stop\": true";
    out << "}";
    return out.str();
}

BAConfig load_ba_config(const std::string& path) {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml")
        return load_toml_config(path);
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    nlohmann::json j;
    in >> j;
    BAConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) apply_config_key(cfg, it.key(), it.value());
    return cfg;
}

CameraIntrinsics init_intrinsics(int width, int height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("invalid image size");
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = 1.2 * width;
    k.fy = 1.2 * height;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
}

BAState make_state(SurfelScene scene, const CameraIntrinsics& k, const CameraPose& pose2) {
    BAState st;
    st.scene = std::move(scene);
    st.intrinsics = k;
    st.pose2 = pose2;
    st.moments.assign(kIntrinsicsSlots + kPoseSlots + kSurfelSlots * st.scene.size(), AdamSlot{});
    return st;
}

void run_stage(BAState& state, Stage stage, int iters, const BAConfig& cfg,
               const Image& observed1, const Image& observed2,
               std::vector<IterationRecord>& trace) {
    for (int i = 0; i < iters; ++i) {
        if (stage == Stage::Pose && state.pose_converged) break;
        const Eval e = evaluate(state, stage, cfg, observed1, observed2);
        if (!std::isfinite(e.total) || !e.grads.all_finite())
            throw std::runtime_error(std::string("non-finite gradient in stage ") +
                                     stage_name(stage) + " at iteration " +
                                     std::to_string(state.iteration));

        IterationRecord rec;
        rec.iter = state.iteration;
        rec.stage = stage;
        rec.l_pho1 = e.l_pho1;
        rec.l_pho2 = e.l_pho2;
        rec.l_geo = e.l_geo;
        rec.total = e.total;

        switch (stage) {
            case Stage::Intrinsics:
                update_intrinsics(state, e.grads, cfg.schedule);
                break;
            case Stage::Gaussians:
                update_gaussians(state, e.grads, cfg.schedule);
                break;
            case Stage::Pose: {
                const double step_norm = update_pose(state, e.grads, cfg.schedule);
                if (step_norm < cfg.schedule.pose_epsilon) {
                    state.pose_converged = true;
                    state.pose_stop_iteration = state.iteration;
                    rec.pose_early_stop = true;
                }
                break;
            }
            case Stage::Joint:
                update_gaussians(state, e.grads, cfg.schedule);
                update_intrinsics(state, e.grads, cfg.schedule);
                update_pose(state, e.grads, cfg.schedule);
                break;
        }
        trace.push_back(rec);
        ++state.iteration;
        if (stage == Stage::Pose && state.pose_converged) break;
    }
}

BAResult run_algorithm1(const SurfelScene& scene, const CameraIntrinsics& k_init,
                        const CameraPose& pose2_init, const Image& observed1,
                        const Image& observed2, const BAConfig& cfg) {
    if (!cfg.schedule.valid()) throw std::invalid_argument("invalid optimization schedule");

    BAResult res;
    res.state = make_state(scene, k_init, pose2_init);

    const bool emit = !cfg.output_dir.empty();
    std::ofstream trace_file;
    if (emit) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.output_dir, ec);
        trace_file.open(cfg.output_dir + "/trace.jsonl");
        if (!trace_file) std::cerr << "warning: cannot open trace file under "
                                   << cfg.output_dir << "\n";
    }
    std::size_t flushed = 0;
    auto flush_trace = [&]() {
        if (!trace_file) { flushed = res.trace.size(); return; }
        for (; flushed < res.trace.size(); ++flushed)
            trace_file << record_json(res.trace[flushed]) << "\n";
        trace_file.flush();
    };
    auto checkpoint = [&]() {
        if (!emit) return;
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "%04d", res.state.iteration);
        try {
            write_ply(cfg.output_dir + "/checkpoint_" + suffix + ".ply", res.state.scene);
            write_camera_json(cfg.output_dir + "/checkpoint_" + suffix + ".json",
                              {res.state.intrinsics, res.state.pose2});
        } catch (const std::exception& ex) {
            std::cerr << "warning: checkpoint write failed: " << ex.what() << "\n";
        }
        flush_trace();
    };

    const OptimizationSchedule& s = cfg.schedule;
    const int every = std::max(cfg.checkpoint_every, 1);
    struct Span {
        Stage stage;
        int end;
    };
    const Span spans[4] = {{Stage::Intrinsics, s.intrinsics_end},
                           {Stage::Gaussians, s.gaussians_end},
                           {Stage::Pose, s.pose_end},
                           {Stage::Joint, s.total_iterations}};
    for (const Span& span : spans) {
        while (res.state.iteration < span.end) {
            const int to_boundary = every - res.state.iteration % every;
            const int n = std::min(span.end - res.state.iteration, to_boundary);
            const int before = res.state.iteration;
            run_stage(res.state, span.stage, n, cfg, observed1, observed2, res.trace);
            if (res.state.iteration % every == 0 && res.state.iteration != before) checkpoint();
            if (span.stage == Stage::Pose && res.state.pose_converged) break;
        }
        // Keep the global counter aligned with the schedule when a stage
        // stopped early.
        res.state.iteration = std::max(res.state.iteration, span.end);
    }
    flush_trace();
    checkpoint();
    return res;
}

}  // namespace splat
