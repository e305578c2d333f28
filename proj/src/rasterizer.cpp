#include "splat/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include <omp.h>

namespace splat {

namespace {

std::atomic<std::uint64_t> g_render_generation{1};

struct ProjectionResult {
    std::vector<ProjectedGaussian> projected;
    std::vector<int> order;  // valid surfels, front-to-back, ties by index
    std::uint32_t skipped_nonfinite = 0;
};

ProjectionResult project_scene(const SurfelScene& scene, const CameraIntrinsics& k,
                               const CameraPose& pose) {
    ProjectionResult res;
    res.projected.resize(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const GaussianSurfel& s = scene.surfels[i];
        ProjectedGaussian& pg = res.projected[i];
        pg.mu_camera = transform_to_camera(s.center, pose);
        pg.depth = pg.mu_camera.z();
        if (!(pg.depth > k.near_plane)) continue;
        const auto uv = project_point(pg.mu_camera, k);
        if (!uv) continue;
        pg.mu_image = *uv;
        const Mat23 jac = affine_jacobian(pg.mu_camera, k);
        pg.cov_image = project_covariance(covariance_world(s), pose, jac);
        if (!pg.cov_image.allFinite() || !pg.mu_image.allFinite()) {
            ++res.skipped_nonfinite;
            continue;
        }
        pg.valid = true;
    }
    res.order.reserve(scene.size());
    for (int i = 0; i < static_cast<int>(scene.size()); ++i) {
        if (res.projected[i].valid) res.order.push_back(i);
    }
    std::stable_sort(res.order.begin(), res.order.end(), [&](int a, int b) {
        return res.projected[a].depth < res.projected[b].depth;
    });
    return res;
}

struct SplatData {
    Mat2 cov_inv;   // (Sigma_I + delta I)^-1
    double radius;  // k * sqrt(lambda_max)
};

SplatData make_splat(const ProjectedGaussian& pg, const RasterConfig& cfg) {
    Mat2 m = pg.cov_image;
    m(0, 0) += cfg.cov_regularization;
    m(1, 1) += cfg.cov_regularization;
    SplatData sd;
    sd.cov_inv = m.inverse();
    const double half_trace = 0.5 * (m(0, 0) + m(1, 1));
    const double half_diff = 0.5 * (m(0, 0) - m(1, 1));
    const double lambda_max =
        half_trace + std::sqrt(half_diff * half_diff + m(0, 1) * m(0, 1));
    sd.radius = cfg.support_radius * std::sqrt(std::max(lambda_max, 0.0));
    return sd;
}

// Composite one pixel over an ordered candidate list. Both render paths go
// through this so the tiled output matches the reference bit for bit.
template <typename Candidates>
void composite_pixel(int px, int py, const Candidates& candidates,
                     const std::vector<ProjectedGaussian>& projected,
                     const std::vector<SplatData>& splats,
                     const SurfelScene& scene, const RasterConfig& cfg,
                     Image& color, Image& depth, Image& alpha_img,
                     std::vector<PixelContributor>& records) {
    const Vec2 pixel(px + 0.5, py + 0.5);
    const double support_sq = cfg.support_radius * cfg.support_radius;
    double transmittance = 1.0;
    double acc_c[3] = {0, 0, 0};
    double acc_d = 0.0;
    double acc_a = 0.0;
    for (const auto& cand : candidates) {
        const int idx = static_cast<int>(cand);
        const ProjectedGaussian& pg = projected[idx];
        const Vec2 delta = pixel - pg.mu_image;
        const double q = delta.dot(splats[idx].cov_inv * delta);
        if (q > support_sq) continue;
        const double alpha =
            std::clamp(scene.surfels[idx].opacity * std::exp(-0.5 * q), 0.0, 0.99);
        if (alpha < cfg.alpha_cutoff) continue;
        const Vec3& c = scene.surfels[idx].color;
        acc_c[0] += c.x() * alpha * transmittance;
        acc_c[1] += c.y() * alpha * transmittance;
        acc_c[2] += c.z() * alpha * transmittance;
        acc_d += pg.depth * alpha * transmittance;
        acc_a += alpha * transmittance;
        records.push_back({idx, alpha});
        transmittance *= 1.0 - alpha;
        if (transmittance < cfg.transmittance_floor) break;
    }
    color.at(px, py, 0) = acc_c[0];
    color.at(px, py, 1) = acc_c[1];
    color.at(px, py, 2) = acc_c[2];
    depth.at(px, py) = acc_d;
    alpha_img.at(px, py) = acc_a;
}

RenderOutput make_output(const CameraIntrinsics& k, const CameraPose& pose,
                         ProjectionResult&& proj) {
    RenderOutput out;
    out.cam = k;
    out.view = pose;
    out.color = Image(k.width, k.height, 3);
    out.depth = Image(k.width, k.height, 1);
    out.alpha = Image(k.width, k.height, 1);
    out.projected = std::move(proj.projected);
    out.skipped_nonfinite = proj.skipped_nonfinite;
    out.generation = g_render_generation.fetch_add(1);
    return out;
}

void flatten_records(const std::vector<std::vector<PixelContributor>>& per_pixel,
                     RenderOutput& out) {
    const std::size_t npix = per_pixel.size();
    out.contributor_offsets.assign(npix + 1, 0);
    for (std::size_t i = 0; i < npix; ++i) {
        out.contributor_offsets[i + 1] =
            out.contributor_offsets[i] + static_cast<std::uint32_t>(per_pixel[i].size());
    }
    out.contributors.clear();
    out.contributors.reserve(out.contributor_offsets.back());
    for (const auto& v : per_pixel) {
        out.contributors.insert(out.contributors.end(), v.begin(), v.end());
    }
    out.empty_render = out.contributors.empty();
}

}  // namespace

double splat_alpha(const Mat2& cov_image, const Vec2& mu_image, double opacity,
                   const Vec2& pixel, double regularization) {
    Mat2 m = cov_image;
    m(0, 0) += regularization;
    m(1, 1) += regularization;
    const Vec2 delta = pixel - mu_image;
    const double q = delta.dot(m.inverse() * delta);
    return std::clamp(opacity * std::exp(-0.5 * q), 0.0, 0.99);
}

RenderOutput render(const SurfelScene& scene, const CameraIntrinsics& k,
                    const CameraPose& pose, const RasterConfig& cfg) {
    ProjectionResult proj = project_scene(scene, k, pose);
    std::vector<SplatData> splats(scene.size());
    for (int idx : proj.order) splats[idx] = make_splat(proj.projected[idx], cfg);

    const int tile = cfg.tile_size;
    const int tiles_x = (k.width + tile - 1) / tile;
    const int tiles_y = (k.height + tile - 1) / tile;
    const int n_tiles = tiles_x * tiles_y;

    // Per-tile candidate lists from the conservative screen-space bounding
    // box; global depth order is preserved within each tile.
    std::vector<std::vector<int>> tile_lists(n_tiles);
    for (int idx : proj.order) {
        const ProjectedGaussian& pg = proj.projected[idx];
        const double r = splats[idx].radius;
        const int x0 = std::max(0, static_cast<int>(std::floor(pg.mu_image.x() - r)) / tile);
        const int y0 = std::max(0, static_cast<int>(std::floor(pg.mu_image.y() - r)) / tile);
        const int x1 = std::min(tiles_x - 1,
                                static_cast<int>(std::floor(pg.mu_image.x() + r)) / tile);
        const int y1 = std::min(tiles_y - 1,
                                static_cast<int>(std::floor(pg.mu_image.y() + r)) / tile);
        if (pg.mu_image.x() + r < 0 || pg.mu_image.y() + r < 0 ||
            pg.mu_image.x() - r >= k.width || pg.mu_image.y() - r >= k.height) {
            continue;
        }
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) tile_lists[ty * tiles_x + tx].push_back(idx);
    }

    RenderOutput out = make_output(k, pose, std::move(proj));
    std::vector<std::vector<PixelContributor>> per_pixel(
        static_cast<std::size_t>(k.width) * k.height);

    const int nthreads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
    for (int t = 0; t < n_tiles; ++t) {
        const int tx = t % tiles_x;
        const int ty = t / tiles_x;
        const int px0 = tx * tile, px1 = std::min(k.width, px0 + tile);
        const int py0 = ty * tile, py1 = std::min(k.height, py0 + tile);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                composite_pixel(px, py, tile_lists[t], out.projected, splats, scene,
                                cfg, out.color, out.depth, out.alpha,
                                per_pixel[out.pixel_index(px, py)]);
            }
        }
    }
    flatten_records(per_pixel, out);
    return out;
}

RenderOutput render_reference(const SurfelScene& scene, const CameraIntrinsics& k,
                              const CameraPose& pose, const RasterConfig& cfg) {
    ProjectionResult proj = project_scene(scene, k, pose);
    std::vector<SplatData> splats(scene.size());
    for (int idx : proj.order) splats[idx] = make_splat(proj.projected[idx], cfg);
    const std::vector<int> order = proj.order;

    RenderOutput out = make_output(k, pose, std::move(proj));
    std::vector<std::vector<PixelContributor>> per_pixel(
        static_cast<std::size_t>(k.width) * k.height);
    for (int py = 0; py < k.height; ++py) {
        for (int px = 0; px < k.width; ++px) {
            composite_pixel(px, py, order, out.projected, splats, scene, cfg,
                            out.color, out.depth, out.alpha,
                            per_pixel[out.pixel_index(px, py)]);
        }
    }
    flatten_records(per_pixel, out);
    return out;
}

}  // namespace splat
