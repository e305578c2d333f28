#pragma once

#include "splat/image.hpp"

namespace splat {

// PSNR against signals in [0,1]; capped at 99 dB for near-identical inputs.
double psnr(const Image& a, const Image& b);

// Mean structural similarity over all channels (11x11 Gaussian window).
double ssim(const Image& a, const Image& b);

double mean_absolute_error(const Image& a, const Image& b);

}  // namespace splat
