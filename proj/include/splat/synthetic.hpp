#pragma once

#include <cstdint>
#include <string>

#include "splat/camera.hpp"
#include "splat/image.hpp"
#include "splat/surfel.hpp"

namespace splat {

enum class GeometryPreset { Plane, TwoPlanes, SpherePatch, BoxCorner };
enum class TexturePattern { Checker, Perlin };

struct SyntheticSceneSpec {
    GeometryPreset geometry = GeometryPreset::Plane;
    TexturePattern texture = TexturePattern::Checker;
    int resolution = 32;  // surfels per side of each surface patch, >= 8
    int image_width = 64;
    int image_height = 64;
    double baseline = 0.15;      // view-2 camera offset, scene units
    double rotation_deg = 4.0;   // view-2 rotation about the vertical axis
    double depth_noise = 0.0;    // sigma of center perturbation along the view ray
    double normal_noise = 0.0;   // sigma (radians) of normal perturbation
    std::uint64_t seed = 0;

    bool valid() const { return resolution >= 8 && image_width > 0 && image_height > 0; }
};

GeometryPreset parse_geometry(const std::string& name);
TexturePattern parse_texture(const std::string& name);

struct SyntheticBundle {
    SurfelScene scene_truth;
    CameraIntrinsics intrinsics_truth;
    CameraPose pose_view2;  // view 1 is the identity (canonical frame)
    Image image1, image2;   // W x H x 3
    Image depth1, depth2;   // W x H, 0 where nothing was hit
    double overlap_fraction = 0.0;
};

// Builds the preset geometry as surfels and renders both ground-truth views
// with the core rasterizer. Deterministic per seed. Throws on invalid specs
// and when the two views do not overlap.
SyntheticBundle generate_synthetic(const SyntheticSceneSpec& spec, int threads = 0);

// Deterministic decoder stand-in: one surfel per sampled pixel, back-projected
// through K, normal from depth-map central differences oriented toward the
// camera, footprint depth*stride/f, opacity 0.9. Pixels with depth <= 0 are
// skipped; throws if no pixel has valid depth.
SurfelScene init_surfels_from_depth(const Image& image, const Image& depth,
                                    const CameraIntrinsics& k, int stride,
                                    double opacity = 0.9);

}  // namespace splat
