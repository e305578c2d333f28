#include "splat/gradients.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include <omp.h>

namespace splat {

namespace {

Vec3 frame_anchor(const Vec3& n) {
    return std::abs(n.z()) >= 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
}

// Per-surfel pixel-space cotangents accumulated over one tile.
struct PixelSpaceGrad {
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    double opacity = 0.0;
    Vec2 mu_image = Vec2::Zero();
    Mat2 cov_image = Mat2::Zero();  // symmetric

    void add(const PixelSpaceGrad& o) {
        color += o.color;
        depth += o.depth;
        opacity += o.opacity;
        mu_image += o.mu_image;
        cov_image += o.cov_image;
    }
};

// First-touch-ordered sparse accumulator; iteration order is the pixel scan
// order, which keeps the cross-tile reduction bit-stable.
struct TileAccumulator {
    std::unordered_map<int, int> slot_of;
    std::vector<int> surfel_of;
    std::vector<PixelSpaceGrad> grads;

    PixelSpaceGrad& at(int surfel) {
        auto [it, inserted] = slot_of.try_emplace(surfel, static_cast<int>(grads.size()));
        if (inserted) {
            surfel_of.push_back(surfel);
            grads.emplace_back();
        }
        return grads[it->second];
    }
};

void backward_pixel(const SurfelScene& scene, const RenderOutput& out,
                    const std::vector<Mat2>& cov_inv, int px, int py,
                    const Image& dL_dcolor, const Image& dL_ddepth,
                    TileAccumulator& acc) {
    const std::size_t pix = out.pixel_index(px, py);
    const std::uint32_t begin = out.contributor_offsets[pix];
    const std::uint32_t end = out.contributor_offsets[pix + 1];
    if (begin == end) return;

    const Vec3 g_color(dL_dcolor.at(px, py, 0), dL_dcolor.at(px, py, 1),
                       dL_dcolor.at(px, py, 2));
    const double g_depth = dL_ddepth.size() ? dL_ddepth.at(px, py) : 0.0;
    if (g_color.isZero(0.0) && g_depth == 0.0) return;

    const int n = static_cast<int>(end - begin);
    // Transmittance prefix along the stored blending order.
    std::vector<double> trans(n);
    double t = 1.0;
    for (int i = 0; i < n; ++i) {
        trans[i] = t;
        t *= 1.0 - out.contributors[begin + i].alpha;
    }

    const Vec2 pixel(px + 0.5, py + 0.5);
    Vec3 accum_color = Vec3::Zero();
    double accum_depth = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        const PixelContributor& rec = out.contributors[begin + i];
        const GaussianSurfel& s = scene.surfels[rec.surfel];
        const ProjectedGaussian& pg = out.projected[rec.surfel];
        const double weight = rec.alpha * trans[i];
        const double self_term = g_color.dot(s.color) + g_depth * pg.depth;

        PixelSpaceGrad& g = acc.at(rec.surfel);
        g.color += g_color * weight;
        g.depth += g_depth * weight;

        const double d_alpha =
            trans[i] * self_term -
            (g_color.dot(accum_color) + g_depth * accum_depth) / (1.0 - rec.alpha);

        // Saturated alpha is a clamp boundary: no gradient through it.
        if (rec.alpha < 0.99) {
            const double gauss = rec.alpha / s.opacity;
            g.opacity += gauss * d_alpha;
            const double d_quad = -0.5 * rec.alpha * d_alpha;
            const Vec2 v = cov_inv[rec.surfel] * (pixel - pg.mu_image);
            g.mu_image += -2.0 * d_quad * v;
            g.cov_image += -d_quad * v * v.transpose();
        }

        accum_color += weight * s.color;
        accum_depth += weight * pg.depth;
    }
}

}  // namespace

void GradientBuffers::add(const GradientBuffers& o) {
    for (std::size_t i = 0; i < surfels.size(); ++i) {
        surfels[i].color += o.surfels[i].color;
        surfels[i].center += o.surfels[i].center;
        surfels[i].scale += o.surfels[i].scale;
        surfels[i].normal += o.surfels[i].normal;
        surfels[i].opacity += o.surfels[i].opacity;
    }
    fx += o.fx;
    fy += o.fy;
    cx += o.cx;
    cy += o.cy;
    pose_tangent += o.pose_tangent;
}

bool GradientBuffers::all_finite() const {
    for (const auto& g : surfels) {
        if (!g.color.allFinite() || !g.center.allFinite() || !g.scale.allFinite() ||
            !g.normal.allFinite() || !std::isfinite(g.opacity)) {
            return false;
        }
    }
    return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) &&
           std::isfinite(cy) && pose_tangent.allFinite();
}

GradientBuffers backward(const SurfelScene& scene, const CameraIntrinsics& k,
                         const CameraPose& pose, const RasterConfig& cfg,
                         const RenderOutput& render_out, const Image& dL_dcolor,
                         const Image& dL_ddepth) {
    const CameraIntrinsics& rk = render_out.cam;
    if (render_out.generation == 0 ||
        render_out.projected.size() != scene.size() ||
        render_out.color.width != k.width || render_out.color.height != k.height ||
        rk.fx != k.fx || rk.fy != k.fy || rk.cx != k.cx || rk.cy != k.cy ||
        rk.width != k.width || rk.height != k.height ||
        rk.near_plane != k.near_plane || rk.far_plane != k.far_plane ||
        render_out.view.rotation != pose.rotation ||
        render_out.view.translation != pose.translation) {
        throw std::runtime_error("backward: render output does not match forward state");
    }
    if (dL_dcolor.width != k.width || dL_dcolor.height != k.height ||
        dL_dcolor.channels != 3) {
        throw std::runtime_error("backward: dL/dColor shape mismatch");
    }

    // Regularized inverse covariances, same as the forward pass.
    std::vector<Mat2> cov_inv(scene.size(), Mat2::Zero());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!render_out.projected[i].valid) continue;
        Mat2 m = render_out.projected[i].cov_image;
        m(0, 0) += cfg.cov_regularization;
        m(1, 1) += cfg.cov_regularization;
        cov_inv[i] = m.inverse();
    }

    const int tile = cfg.tile_size;
    const int tiles_x = (k.width + tile - 1) / tile;
    const int tiles_y = (k.height + tile - 1) / tile;
    const int n_tiles = tiles_x * tiles_y;
    std::vector<TileAccumulator> tile_accs(n_tiles);

    const int nthreads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
    for (int t = 0; t < n_tiles; ++t) {
        const int px0 = (t % tiles_x) * tile;
        const int py0 = (t / tiles_x) * tile;
        const int px1 = std::min(k.width, px0 + tile);
        const int py1 = std::min(k.height, py0 + tile);
        for (int py = py0; py < py1; ++py)
            for (int px = px0; px < px1; ++px)
                backward_pixel(scene, render_out, cov_inv, px, py, dL_dcolor,
                               dL_ddepth, tile_accs[t]);
    }

    // Tile-major ordered reduction into per-surfel pixel-space gradients.
    std::vector<PixelSpaceGrad> pix(scene.size());
    std::vector<char> touched(scene.size(), 0);
    for (const TileAccumulator& ta : tile_accs) {
        for (std::size_t s = 0; s < ta.surfel_of.size(); ++s) {
            pix[ta.surfel_of[s]].add(ta.grads[s]);
            touched[ta.surfel_of[s]] = 1;
        }
    }

    // Chain through projection, covariance, and rigid-motion dependencies.
    GradientBuffers out(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!touched[i]) continue;
        const GaussianSurfel& s = scene.surfels[i];
        const ProjectedGaussian& pg = render_out.projected[i];
        const PixelSpaceGrad& g = pix[i];
        SurfelGrad& sg = out.surfels[i];

        sg.color = g.color;
        sg.opacity = g.opacity;

        const double x = pg.mu_camera.x();
        const double y = pg.mu_camera.y();
        const double d = pg.depth;
        const double d2 = d * d;
        const double d3 = d2 * d;
        const Mat23 jac = affine_jacobian(pg.mu_camera, k);
        const Mat3 cam_cov =
            pose.rotation * covariance_world(s) * pose.rotation.transpose();

        // mu_I = (fx x / d + cx, fy y / d + cy)
        Vec3 d_mu_cam = jac.transpose() * g.mu_image;
        out.fx += g.mu_image.x() * x / d;
        out.cx += g.mu_image.x();
        out.fy += g.mu_image.y() * y / d;
        out.cy += g.mu_image.y();

        // Blended depth is the camera-space z of the center.
        d_mu_cam.z() += g.depth;

        // Sigma_I = J V J^T with V = R Sigma R^T
        const Mat23 d_jac = 2.0 * g.cov_image * jac * cam_cov;
        const Mat3 d_cam_cov = jac.transpose() * g.cov_image * jac;

        d_mu_cam.x() += d_jac(0, 2) * (-k.fx / d2);
        d_mu_cam.y() += d_jac(1, 2) * (-k.fy / d2);
        d_mu_cam.z() += d_jac(0, 0) * (-k.fx / d2) + d_jac(1, 1) * (-k.fy / d2) +
                        d_jac(0, 2) * (2.0 * k.fx * x / d3) +
                        d_jac(1, 2) * (2.0 * k.fy * y / d3);
        out.fx += d_jac(0, 0) / d + d_jac(0, 2) * (-x / d2);
        out.fy += d_jac(1, 1) / d + d_jac(1, 2) * (-y / d2);

        // Rotation inside V, as a left perturbation of the pose.
        const Mat3 d_sigma_world =
            pose.rotation.transpose() * d_cam_cov * pose.rotation;
        for (int a = 0; a < 3; ++a) {
            const Mat3 e = skew(Vec3::Unit(a));
            out.pose_tangent[a] +=
                (d_cam_cov.cwiseProduct(e * cam_cov - cam_cov * e)).sum();
        }

        // mu_C = R mu + t
        sg.center = pose.rotation.transpose() * d_mu_cam;
        out.pose_tangent.tail<3>() += d_mu_cam;
        out.pose_tangent.head<3>() += pg.mu_camera.cross(d_mu_cam);

        // Sigma = sx^2 n1 n1^T + sy^2 n2 n2^T
        const SurfelFrame f = build_frame(s.normal);
        const double sx = s.scale.x();
        const double sy = s.scale.y();
        sg.scale.x() = 2.0 * sx * f.n1.dot(d_sigma_world * f.n1);
        sg.scale.y() = 2.0 * sy * f.n2.dot(d_sigma_world * f.n2);

        const Vec3 d_n1 = 2.0 * sx * sx * d_sigma_world * f.n1;
        const Vec3 d_n2 = 2.0 * sy * sy * d_sigma_world * f.n2;
        Vec3 d_n = f.n1.cross(d_n2);              // n2 = n x n1, n path
        const Vec3 d_n1_total = d_n1 - f.n.cross(d_n2);  // n1 path through n2
        // n1 = normalize(a - (a.n) n)
        const Vec3 anchor = frame_anchor(s.normal);
        const Vec3 u = anchor - anchor.dot(s.normal) * s.normal;
        const Vec3 d_u = (d_n1_total - f.n1 * f.n1.dot(d_n1_total)) / u.norm();
        d_n += -(anchor * s.normal.dot(d_u) + anchor.dot(s.normal) * d_u);
        sg.normal = d_n - d_n.dot(s.normal) * s.normal;
    }
    return out;
}

double finite_difference(const std::function<void(double)>& set_param, double base,
                         double step, const std::function<double()>& loss) {
    set_param(base + step);
    const double plus = loss();
    set_param(base - step);
    const double minus = loss();
    set_param(base);
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return (plus - minus) / (2.0 * step);
}

double finite_difference_pose(const CameraPose& base, int axis, double step,
                              const std::function<double(const CameraPose&)>& loss) {
    TangentUpdate xi;
    xi.xi[axis] = step;
    const double plus = loss(se3_exp(xi).compose(base));
    xi.xi[axis] = -step;
    const double minus = loss(se3_exp(xi).compose(base));
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return (plus - minus) / (2.0 * step);
}

// ---------------------------------------------------------------------------
// Gradient-check harness

namespace {

struct CheckProblem {
    SurfelScene scene;
    CameraIntrinsics cam;
    CameraPose pose;
    RasterConfig cfg;
};

CheckProblem make_random_problem(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    CheckProblem p;
    p.cam.width = 32;
    p.cam.height = 32;
    p.cam.fx = 20.0 + 20.0 * unit(rng);
    p.cam.fy = 20.0 + 20.0 * unit(rng);
    p.cam.cx = 16.0 + 2.0 * (unit(rng) - 0.5);
    p.cam.cy = 16.0 + 2.0 * (unit(rng) - 0.5);
    p.cfg.threads = 1;

    TangentUpdate xi;
    for (int i = 0; i < 3; ++i) xi.xi[i] = 0.1 * (unit(rng) - 0.5);
    for (int i = 3; i < 6; ++i) xi.xi[i] = 0.2 * (unit(rng) - 0.5);
    p.pose = se3_exp(xi);

    const int count = 16 + static_cast<int>(unit(rng) * 32);
    p.scene.surfels.resize(count);
    for (auto& s : p.scene.surfels) {
        const double depth = 1.5 + 2.5 * unit(rng);
        const double spread = 0.7 * depth * p.cam.width / (2.0 * p.cam.fx);
        s.center = Vec3(spread * 2.0 * (unit(rng) - 0.5),
                        spread * 2.0 * (unit(rng) - 0.5), depth);
        s.color = Vec3(0.1 + 0.9 * unit(rng), 0.1 + 0.9 * unit(rng),
                       0.1 + 0.9 * unit(rng));
        s.scale = Vec2(0.08 + 0.3 * unit(rng), 0.08 + 0.3 * unit(rng));
        s.opacity = 0.2 + 0.6 * unit(rng);
        // Stay away from the anchor-switch threshold at |n_z| = 0.9.
        do {
            s.normal = Vec3(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
        } while (s.normal.norm() < 0.1 ||
                 (std::abs(s.normal.normalized().z()) > 0.85 &&
                  std::abs(s.normal.normalized().z()) < 0.95));
        s.normal.normalize();
    }
    return p;
}

std::vector<std::uint64_t> contributor_signature(const RenderOutput& out) {
    const std::size_t npix = out.contributor_offsets.size() - 1;
    std::vector<std::uint64_t> sig(npix);
    for (std::size_t p = 0; p < npix; ++p) {
        std::uint64_t h = 1469598103934665603ULL;
        for (std::uint32_t i = out.contributor_offsets[p];
             i < out.contributor_offsets[p + 1]; ++i) {
            h ^= static_cast<std::uint64_t>(out.contributors[i].surfel) + 1;
            h *= 1099511628211ULL;
        }
        sig[p] = h;
    }
    return sig;
}

// Sum of squared color and depth values over unmasked pixels.
double masked_loss(const RenderOutput& out, const std::vector<char>& mask) {
    double acc = 0.0;
    for (int y = 0; y < out.color.height; ++y) {
        for (int x = 0; x < out.color.width; ++x) {
            if (!mask[out.pixel_index(x, y)]) continue;
            for (int c = 0; c < 3; ++c) acc += out.color.at(x, y, c) * out.color.at(x, y, c);
            acc += out.depth.at(x, y) * out.depth.at(x, y);
        }
    }
    return acc;
}

struct ParamProbe {
    std::string group;
    std::function<double()> get;
    std::function<void(double)> set;  // empty for pose axes
    std::function<double(const GradientBuffers&)> analytic;
    int pose_axis = -1;
};

struct GroupStats {
    double max_rel = 0.0;
    double sum_rel = 0.0;
    int count = 0;
    double max_excluded = 0.0;
};

void check_problem(const CheckProblem& base, double tolerance,
                   std::unordered_map<std::string, GroupStats>& stats) {
    CheckProblem work = base;

    auto render_work = [&](const CameraPose& pose) {
        return render(work.scene, work.cam, pose, work.cfg);
    };

    const RenderOutput base_out = render_work(base.pose);
    const std::vector<std::uint64_t> base_sig = contributor_signature(base_out);
    const std::size_t npix = base_sig.size();

    std::vector<ParamProbe> probes;
    for (int i = 0; i < static_cast<int>(work.scene.size()); ++i) {
        GaussianSurfel& s = work.scene.surfels[i];
        for (int c = 0; c < 3; ++c) {
            probes.push_back(
                {"color", [&s, c] { return s.color[c]; },
                 [&s, c](double v) { s.color[c] = v; },
                 [i, c](const GradientBuffers& g) { return g.surfels[i].color[c]; }});
        }
        probes.push_back(
            {"opacity", [&s] { return s.opacity; },
             [&s](double v) { s.opacity = v; },
             [i](const GradientBuffers& g) { return g.surfels[i].opacity; }});
        for (int c = 0; c < 2; ++c) {
            probes.push_back(
                {"scale", [&s, c] { return s.scale[c]; },
                 [&s, c](double v) { s.scale[c] = v; },
                 [i, c](const GradientBuffers& g) { return g.surfels[i].scale[c]; }});
        }
        for (int c = 0; c < 3; ++c) {
            probes.push_back(
                {"center", [&s, c] { return s.center[c]; },
                 [&s, c](double v) { s.center[c] = v; },
                 [i, c](const GradientBuffers& g) { return g.surfels[i].center[c]; }});
        }
        // Normal probes renormalize, so FD sees the on-sphere restriction;
        // its derivative is exactly the tangent-projected gradient component.
        const Vec3 n0 = s.normal;
        for (int c = 0; c < 3; ++c) {
            probes.push_back(
                {"normal", [&s, c] { return s.normal[c]; },
                 [&s, n0, c](double v) {
                     Vec3 n = n0;
                     n[c] = v;
                     s.normal = n.normalized();
                 },
                 [i, c](const GradientBuffers& g) { return g.surfels[i].normal[c]; }});
        }
    }
    probes.push_back({"fx", [&] { return work.cam.fx; },
                      [&](double v) { work.cam.fx = v; },
                      [](const GradientBuffers& g) { return g.fx; }});
    probes.push_back({"fy", [&] { return work.cam.fy; },
                      [&](double v) { work.cam.fy = v; },
                      [](const GradientBuffers& g) { return g.fy; }});
    probes.push_back({"cx", [&] { return work.cam.cx; },
                      [&](double v) { work.cam.cx = v; },
                      [](const GradientBuffers& g) { return g.cx; }});
    probes.push_back({"cy", [&] { return work.cam.cy; },
                      [&](double v) { work.cam.cy = v; },
                      [](const GradientBuffers& g) { return g.cy; }});
    for (int a = 0; a < 6; ++a) {
        probes.push_back({"pose", nullptr, nullptr,
                          [a](const GradientBuffers& g) { return g.pose_tangent[a]; },
                          a});
    }

    for (const ParamProbe& probe : probes) {
        const bool is_pose = probe.pose_axis >= 0;
        const double base_val = is_pose ? 0.0 : probe.get();
        const double h = 1e-5 * std::max(1.0, std::abs(base_val));

        auto eval_at = [&](double offset) {
            if (is_pose) {
                TangentUpdate xi;
                xi.xi[probe.pose_axis] = offset;
                return render_work(se3_exp(xi).compose(base.pose));
            }
            probe.set(base_val + offset);
            RenderOutput out = render_work(base.pose);
            probe.set(base_val);
            return out;
        };

        const RenderOutput plus = eval_at(h);
        const RenderOutput minus = eval_at(-h);
        const auto sig_plus = contributor_signature(plus);
        const auto sig_minus = contributor_signature(minus);

        std::vector<char> mask(npix, 0);
        std::size_t included = 0;
        for (std::size_t p = 0; p < npix; ++p) {
            mask[p] = sig_plus[p] == base_sig[p] && sig_minus[p] == base_sig[p];
            included += mask[p];
        }
        const double excluded =
            1.0 - static_cast<double>(included) / static_cast<double>(npix);

        const double fd = (masked_loss(plus, mask) - masked_loss(minus, mask)) / (2.0 * h);

        // Analytic gradient of the same masked loss at the base point.
        Image d_color(base_out.color.width, base_out.color.height, 3);
        Image d_depth(base_out.color.width, base_out.color.height, 1);
        for (int y = 0; y < base_out.color.height; ++y) {
            for (int x = 0; x < base_out.color.width; ++x) {
                if (!mask[base_out.pixel_index(x, y)]) continue;
                for (int c = 0; c < 3; ++c)
                    d_color.at(x, y, c) = 2.0 * base_out.color.at(x, y, c);
                d_depth.at(x, y) = 2.0 * base_out.depth.at(x, y);
            }
        }
        const GradientBuffers grads =
            backward(base.scene, base.cam, base.pose, base.cfg, base_out, d_color, d_depth);

        const double analytic = probe.analytic(grads);

        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-4});
        const double rel = std::abs(analytic - fd) / denom;

        GroupStats& gs = stats[probe.group];
        gs.max_rel = std::max(gs.max_rel, rel);
        gs.sum_rel += rel;
        gs.count += 1;
        gs.max_excluded = std::max(gs.max_excluded, excluded);
        (void)tolerance;
    }
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, int num_scenes, double tolerance,
                              double max_excluded_fraction, int threads) {
    GradCheckReport report;
    report.scenes = num_scenes;
    std::unordered_map<std::string, GroupStats> stats;
    for (int s = 0; s < num_scenes; ++s) {
        CheckProblem p = make_random_problem(seed * 1000003ULL + s);
        p.cfg.threads = threads;
        check_problem(p, tolerance, stats);
    }
    static const char* kGroups[] = {"color", "opacity", "scale", "normal", "center",
                                    "fx", "fy", "cx", "cy", "pose"};
    for (const char* g : kGroups) {
        const GroupStats& gs = stats[g];
        GradCheckGroupReport r;
        r.group = g;
        r.parameters = gs.count;
        r.max_rel_err = gs.max_rel;
        r.mean_rel_err = gs.count ? gs.sum_rel / gs.count : 0.0;
        r.excluded_fraction = gs.max_excluded;
        r.passed = gs.max_rel < tolerance && gs.max_excluded < max_excluded_fraction;
        report.passed = report.passed && r.passed;
        report.groups.push_back(r);
    }
    return report;
}

}  // namespace splat
