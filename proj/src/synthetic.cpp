#include "splat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "splat/rasterizer.hpp"

namespace splat {

namespace {

GeometryPreset geometry_from_name(const std::string& name) {
    if (name == "plane") return GeometryPreset::Plane;
    if (name == "two-planes") return GeometryPreset::TwoPlanes;
    if (name == "sphere-patch") return GeometryPreset::SpherePatch;
    if (name == "box-corner" || name == "textured-box-corner") return GeometryPreset::BoxCorner;
    throw std::invalid_argument("unknown geometry preset: " + name);
}

double hash01(std::uint64_t seed, int x, int y) {
    std::uint64_t h = seed;
    h ^= 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(static_cast<std::uint32_t>(x));
    h ^= 0xc2b2ae3d27d4eb4fULL * static_cast<std::uint64_t>(static_cast<std::uint32_t>(y));
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const int iu = static_cast<int>(fu), iv = static_cast<int>(fv);
    const double tu = smoothstep(u - fu), tv = smoothstep(v - fv);
    const double a = hash01(seed, iu, iv), b = hash01(seed, iu + 1, iv);
    const double c = hash01(seed, iu, iv + 1), d = hash01(seed, iu + 1, iv + 1);
    const double top = a + (b - a) * tu;
    const double bot = c + (d - c) * tu;
    return top + (bot - top) * tv;
}

struct ColorPair {
    Vec3 a, b;
};

const ColorPair kPalette[4] = {
    {Vec3(0.90, 0.25, 0.20), Vec3(0.95, 0.90, 0.80)},
    {Vec3(0.15, 0.45, 0.85), Vec3(0.85, 0.85, 0.30)},
    {Vec3(0.20, 0.70, 0.35), Vec3(0.90, 0.45, 0.75)},
    {Vec3(0.55, 0.35, 0.80), Vec3(0.95, 0.65, 0.25)},
};

Vec3 texture_color(const SyntheticSceneSpec& spec, int patch, double u, double v) {
    const ColorPair& p = kPalette[patch & 3];
    if (spec.texture == TexturePattern::Checker) {
        const int cells = 8;
        const int parity = (static_cast<int>(std::floor(u * cells)) +
                            static_cast<int>(std::floor(v * cells))) & 1;
        return parity ? p.a : p.b;
    }
    const std::uint64_t s = spec.seed * 1315423911ULL + static_cast<std::uint64_t>(patch) + 1;
    const double t = 0.6 * value_noise(s, u * 4.0, v * 4.0) +
                     0.4 * value_noise(s ^ 0xabcdefULL, u * 9.0 + 17.0, v * 9.0 + 31.0);
    return p.a + (p.b - p.a) * std::clamp(t, 0.0, 1.0);
}

// One rectangular patch of surfels: p(u,v) = origin + u*du + v*dv, u,v in [0,1].
void add_patch(SurfelScene& scene, const SyntheticSceneSpec& spec, int patch,
               const Vec3& origin, const Vec3& du, const Vec3& dv, const Vec3& normal) {
    const int res = spec.resolution;
    const double step_u = du.norm() / res;
    const double step_v = dv.norm() / res;
    const double s = 0.75 * std::max(step_u, step_v);
    // In-plane jitter breaks the grid periodicity, which otherwise creates
    // aliasing minima in image-space alignment objectives.
    const std::uint64_t jseed = spec.seed * 2654435761ULL + 101 * patch;
    for (int j = 0; j < res; ++j) {
        for (int i = 0; i < res; ++i) {
            const double u = (i + 0.5 + 0.6 * (hash01(jseed, i, j) - 0.5)) / res;
            const double v = (j + 0.5 + 0.6 * (hash01(jseed ^ 0x5bd1e995ULL, i, j) - 0.5)) / res;
            GaussianSurfel g;
            g.center = origin + u * du + v * dv;
            g.normal = normal.normalized();
            g.scale = Vec2(s, s);
            g.opacity = 0.92;
            g.color = texture_color(spec, patch, u, v);
            scene.surfels.push_back(g);
        }
    }
}

// Spherical cap facing the camera, parametrized by two tilt coordinates.
void add_sphere_patch(SurfelScene& scene, const SyntheticSceneSpec& spec, int patch,
                      const Vec3& center, double radius) {
    const int res = spec.resolution;
    const double extent = 0.62;  // tangent of the max tilt toward the rim
    const double step = radius * 2.0 * extent / res;
    const double s = 0.8 * step;
    const std::uint64_t jseed = spec.seed * 2654435761ULL + 101 * patch;
    for (int j = 0; j < res; ++j) {
        for (int i = 0; i < res; ++i) {
            const double u = (i + 0.5 + 0.6 * (hash01(jseed, i, j) - 0.5)) / res;
            const double v = (j + 0.5 + 0.6 * (hash01(jseed ^ 0x5bd1e995ULL, i, j) - 0.5)) / res;
            const double a = (2.0 * u - 1.0) * extent;
            const double b = (2.0 * v - 1.0) * extent;
            const Vec3 dir = Vec3(a, b, -1.0).normalized();
            GaussianSurfel g;
            g.center = center + radius * dir;
            g.normal = dir;  // outward, toward the camera on this cap
            g.scale = Vec2(s, s);
            g.opacity = 0.92;
            g.color = texture_color(spec, patch, u, v);
            scene.surfels.push_back(g);
        }
    }
}

SurfelScene build_geometry(const SyntheticSceneSpec& spec) {
    SurfelScene scene;
    switch (spec.geometry) {
        case GeometryPreset::Plane:
            add_patch(scene, spec, 0, Vec3(-1.4, -1.4, 2.0), Vec3(2.8, 0, 0),
                      Vec3(0, 2.8, 0), Vec3(0, 0, -1));
            break;
        case GeometryPreset::TwoPlanes:
            add_patch(scene, spec, 0, Vec3(-1.9, -1.9, 2.6), Vec3(3.8, 0, 0),
                      Vec3(0, 3.8, 0), Vec3(0, 0, -1));
            add_patch(scene, spec, 1, Vec3(-0.55, -0.85, 1.7), Vec3(0.8, 0, 0),
                      Vec3(0, 1.7, 0), Vec3(0, 0, -1));
            break;
        case GeometryPreset::SpherePatch:
            add_sphere_patch(scene, spec, 0, Vec3(0, 0, 3.2), 1.4);
            break;
        case GeometryPreset::BoxCorner: {
            const Vec3 corner(0.0, 0.55, 2.6);
            const Vec3 dir_left = Vec3(-1, 0, 1).normalized() * 1.4;
            const Vec3 dir_right = Vec3(1, 0, 1).normalized() * 1.4;
            const Vec3 up = Vec3(0, -1, 0) * 1.5;
            add_patch(scene, spec, 0, corner, dir_left, up, Vec3(1, 0, -1));
            add_patch(scene, spec, 1, corner, dir_right, up, Vec3(-1, 0, -1));
            add_patch(scene, spec, 2, corner, dir_left, dir_right, Vec3(0, -1, 0));
            break;
        }
    }
    return scene;
}

void apply_noise(SurfelScene& scene, const SyntheticSceneSpec& spec) {
    if (spec.depth_noise <= 0.0 && spec.normal_noise <= 0.0) return;
    std::mt19937_64 rng(spec.seed * 6364136223846793005ULL + 1442695040888963407ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (GaussianSurfel& g : scene.surfels) {
        if (spec.depth_noise > 0.0)
            g.center += g.center.normalized() * (spec.depth_noise * gauss(rng));
        if (spec.normal_noise > 0.0) {
            const Vec3 axis = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
            const double angle = spec.normal_noise * gauss(rng);
            g.normal = (Eigen::AngleAxisd(angle, axis) * g.normal).normalized();
        }
    }
}

// Composited depth divided by accumulated alpha where coverage is solid.
Image normalized_depth(const RenderOutput& out) {
    Image d(out.depth.width, out.depth.height, 1);
    for (std::size_t i = 0; i < d.data.size(); ++i)
        d.data[i] = out.alpha.data[i] > 0.5 ? out.depth.data[i] / out.alpha.data[i] : 0.0;
    return d;
}

double measure_overlap(const Image& depth1, const CameraIntrinsics& k,
                       const CameraPose& pose2) {
    std::size_t valid = 0, hit = 0;
    for (int y = 0; y < depth1.height; ++y) {
        for (int x = 0; x < depth1.width; ++x) {
            const double d = depth1.at(x, y);
            if (d <= 0.0) continue;
            ++valid;
            const Vec3 p(d * (x + 0.5 - k.cx) / k.fx, d * (y + 0.5 - k.cy) / k.fy, d);
            const Vec3 q = pose2.apply(p);
            const auto uv = project_point(q, k);
            if (!uv) continue;
            if (uv->x() >= 0 && uv->x() < k.width && uv->y() >= 0 && uv->y() < k.height)
                ++hit;
        }
    }
    if (valid == 0) return 0.0;
    return static_cast<double>(hit) / static_cast<double>(valid);
}

}  // namespace

GeometryPreset parse_geometry(const std::string& name) { return geometry_from_name(name); }

TexturePattern parse_texture(const std::string& name) {
    if (name == "checker") return TexturePattern::Checker;
    if (name == "perlin") return TexturePattern::Perlin;
    throw std::invalid_argument("unknown texture pattern: " + name);
}

SyntheticBundle generate_synthetic(const SyntheticSceneSpec& spec, int threads) {
    if (!spec.valid()) throw std::invalid_argument("invalid synthetic scene spec");

    SyntheticBundle bundle;
    bundle.scene_truth = build_geometry(spec);
    apply_noise(bundle.scene_truth, spec);

    CameraIntrinsics& k = bundle.intrinsics_truth;
    k.width = spec.image_width;
    k.height = spec.image_height;
    k.fx = 1.0 * spec.image_width;
    k.fy = 1.0 * spec.image_height;
    k.cx = 0.5 * spec.image_width + 0.02 * spec.image_width;
    k.cy = 0.5 * spec.image_height - 0.015 * spec.image_height;

    // View 2 orbits the pivot so both cameras keep looking at the scene.
    const Vec3 pivot(0, 0, 2.2);
    const double theta = spec.rotation_deg * M_PI / 180.0;
    const Mat3 rot = Eigen::AngleAxisd(theta, Vec3::UnitY()).toRotationMatrix();
    bundle.pose_view2.rotation = rot;
    bundle.pose_view2.translation =
        pivot - rot * pivot - rot * Vec3(spec.baseline, 0, 0);

    RasterConfig cfg;
    cfg.threads = threads;
    const RenderOutput out1 = render(bundle.scene_truth, k, CameraPose{}, cfg);
    const RenderOutput out2 = render(bundle.scene_truth, k, bundle.pose_view2, cfg);
    bundle.image1 = out1.color;
    bundle.image2 = out2.color;
    bundle.depth1 = normalized_depth(out1);
    bundle.depth2 = normalized_depth(out2);

    bundle.overlap_fraction = measure_overlap(bundle.depth1, k, bundle.pose_view2);
    if (bundle.overlap_fraction <= 0.0)
        throw std::runtime_error("degenerate synthetic spec: view overlap fraction " +
                                 std::to_string(bundle.overlap_fraction));
    return bundle;
}

SurfelScene init_surfels_from_depth(const Image& image, const Image& depth,
                                    const CameraIntrinsics& k, int stride,
                                    double opacity) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (image.width != depth.width || image.height != depth.height)
        throw std::invalid_argument("image/depth shape mismatch");

    auto backproject = [&](int x, int y, double d) {
        return Vec3(d * (x + 0.5 - k.cx) / k.fx, d * (y + 0.5 - k.cy) / k.fy, d);
    };
    auto point_at = [&](int x, int y, Vec3& p) {
        if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) return false;
        const double d = depth.at(x, y);
        if (d <= 0.0) return false;
        p = backproject(x, y, d);
        return true;
    };

    SurfelScene scene;
    for (int y = 0; y < depth.height; y += stride) {
        for (int x = 0; x < depth.width; x += stride) {
            const double d = depth.at(x, y);
            if (d <= 0.0) continue;
            GaussianSurfel g;
            g.center = backproject(x, y, d);
            g.color = Vec3(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
            g.scale = Vec2(d * stride / k.fx, d * stride / k.fy);
            g.opacity = opacity;

            // Spatial derivatives of the backprojected point map, central
            // differences with one-sided fallback at invalid neighbors.
            Vec3 pl, pr, pu, pd, pc = g.center;
            Vec3 dx, dy;
            const bool has_l = point_at(x - 1, y, pl), has_r = point_at(x + 1, y, pr);
            const bool has_u = point_at(x, y - 1, pu), has_d = point_at(x, y + 1, pd);
            if (has_l && has_r) dx = 0.5 * (pr - pl);
            else if (has_r) dx = pr - pc;
            else if (has_l) dx = pc - pl;
            else dx = Vec3::Zero();
            if (has_u && has_d) dy = 0.5 * (pd - pu);
            else if (has_d) dy = pd - pc;
            else if (has_u) dy = pc - pu;
            else dy = Vec3::Zero();

            Vec3 n = dx.cross(dy);
            if (n.norm() < 1e-12) n = Vec3(0, 0, -1);
            n.normalize();
            if (n.dot(g.center) > 0.0) n = -n;  // oriented toward the camera
            g.normal = n;
            scene.surfels.push_back(g);
        }
    }
    if (scene.surfels.empty()) throw std::runtime_error("no valid depth samples");
    return scene;
}

}  // namespace splat
