#pragma once

#include <string>

#include "splat/camera.hpp"
#include "splat/image.hpp"
#include "splat/surfel.hpp"

namespace splat {

// Surfel scenes as PLY: per-vertex x,y,z, nx,ny,nz, red,green,blue (8-bit),
// opacity, sx, sy (float32). Binary little-endian written; ASCII also read.
void write_ply(const std::string& path, const SurfelScene& scene);
SurfelScene read_ply(const std::string& path);

// PFM, 32-bit little-endian float, rows bottom-to-top. "PF" for 3-channel
// color, "Pf" for single-channel depth.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// 8-bit PNG preview (RGB or grayscale), values clamped to [0,1].
void write_png(const std::string& path, const Image& img);

struct CameraFile {
    CameraIntrinsics intrinsics;
    CameraPose pose;
};

// Flat JSON with 17-significant-digit floats so round-trips are bit-exact.
void write_camera_json(const std::string& path, const CameraFile& cam);
CameraFile read_camera_json(const std::string& path);

}  // namespace splat
