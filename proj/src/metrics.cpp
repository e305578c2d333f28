#include "splat/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "splat/losses.hpp"

namespace splat {

namespace {

void check_shapes(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("image shape mismatch");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    check_shapes(a, b);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    check_shapes(a, b);
    return ssim_mean(a, b);
}

double mean_absolute_error(const Image& a, const Image& b) {
    check_shapes(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

}  // namespace splat
