#pragma once

#include <cstdint>
#include <vector>

#include "splat/camera.hpp"
#include "splat/image.hpp"
#include "splat/surfel.hpp"

namespace splat {

struct RasterConfig {
    int tile_size = 16;
    double alpha_cutoff = 1.0 / 255.0;   // contributions below this are skipped
    double transmittance_floor = 1e-4;   // pixel saturates below this
    double cov_regularization = 0.3;     // px^2, added to both diagonal entries
    double support_radius = 3.0;         // ellipse of k standard deviations
    int threads = 0;                     // 0 = library default
};

struct PixelContributor {
    std::int32_t surfel;  // index into the scene
    double alpha;
};

struct RenderOutput {
    Image color;  // W x H x 3
    Image depth;  // W x H
    Image alpha;  // W x H
    // Per-pixel contributor records in front-to-back order; pixel (x, y)
    // owns contributors[offset(x,y) .. offset(x,y)+1).
    std::vector<PixelContributor> contributors;
    std::vector<std::uint32_t> contributor_offsets;  // size W*H + 1
    // Projection cache, one entry per scene surfel.
    std::vector<ProjectedGaussian> projected;
    // Camera state of the forward call; the backward pass refuses to run
    // against anything else.
    CameraIntrinsics cam;
    CameraPose view;
    std::uint64_t generation = 0;
    std::uint32_t skipped_nonfinite = 0;
    bool empty_render = false;  // no surfel contributed anywhere

    std::size_t pixel_index(int x, int y) const {
        return static_cast<std::size_t>(y) * color.width + x;
    }
};

// Per-pixel opacity of a projected surfel; regularized covariance must be
// invertible. Clamped to [0, 0.99].
double splat_alpha(const Mat2& cov_image, const Vec2& mu_image, double opacity,
                   const Vec2& pixel, double regularization);

// Tiled, OpenMP-parallel forward splatting. Output is independent of tile
// size and thread count.
RenderOutput render(const SurfelScene& scene, const CameraIntrinsics& k,
                    const CameraPose& pose, const RasterConfig& cfg);

// Serial reference: per-pixel loop over all depth-sorted surfels, no tiling.
// Kept as the oracle for the parallel path.
RenderOutput render_reference(const SurfelScene& scene, const CameraIntrinsics& k,
                              const CameraPose& pose, const RasterConfig& cfg);

}  // namespace splat
