#pragma once

#include <vector>

#include "splat/camera.hpp"
#include "splat/image.hpp"
#include "splat/surfel.hpp"

namespace splat {

struct LossWeights {
    double lambda_sm = 0.6;   // SSIM mix inside the photometric loss
    double lambda1 = 0.05;    // photometric, view 1
    double lambda2 = 0.05;    // photometric, view 2
    double lambda3 = 0.01;    // geometric depth consistency
    double lambda_n = 0.0;    // optional normal-prior regularizer
};

struct PhotometricResult {
    double loss = 0.0;
    double l1 = 0.0;
    double ssim = 0.0;
    Image grad;  // dL/dRendered, same shape as inputs
};

// (1 - lambda_sm) * mean-L1 + lambda_sm * |1 - mean-SSIM|, with analytic
// pixel-space gradient w.r.t. the rendered image. SSIM uses an 11x11
// Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 on [0,1] range.
PhotometricResult photometric_loss(const Image& rendered, const Image& observed,
                                   double lambda_sm);

// Mean SSIM only (no gradient); shared by the metrics toolkit.
double ssim_mean(const Image& a, const Image& b);

struct WarpResult {
    Image depth;   // W x H, warped into the target view
    Image mask;    // 1 where at least one source sample landed
    // Per target pixel: winning source pixel index and d(warped)/d(source
    // depth) along the transport chain; -1 where the mask is empty.
    std::vector<int> source;
    std::vector<double> depth_jacobian;
};

// Forward-warps a source depth map into the target view (back-project,
// rigid transform, re-project) with z-buffered scatter.
WarpResult warp_depth(const Image& source_depth, const CameraIntrinsics& k,
                      const CameraPose& relative_pose);

struct GeometricResult {
    double loss = 0.0;
    bool empty_mask = false;
    Image grad_target_depth;  // dL/dD1
    Image grad_source_depth;  // dL/dD2, transported through the warp
};

// Masked mean |D_warp - D1|; the L1 subgradient at zero is 0.
GeometricResult geometric_loss(const Image& target_depth, const WarpResult& warp);

struct NormalPriorResult {
    double loss = 0.0;
    std::vector<Vec3> grad;  // tangent-projected, per surfel
};

// |n - n_prior|_1 + |1 - n . n_prior|_1, averaged over surfels with priors.
NormalPriorResult normal_prior_loss(const SurfelScene& scene);

}  // namespace splat
