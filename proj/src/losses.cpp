#include "splat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace splat {

namespace {

constexpr int kWindowRadius = 5;  // 11x11
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& window_weights() {
    static const std::vector<double> w = [] {
        std::vector<double> v(2 * kWindowRadius + 1);
        for (int i = -kWindowRadius; i <= kWindowRadius; ++i) {
            v[i + kWindowRadius] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
        }
        return v;
    }();
    return w;
}

// Unnormalized symmetric separable filter with zero padding (self-adjoint).
Image filter_unnormalized(const Image& in) {
    const auto& w = window_weights();
    Image tmp(in.width, in.height, in.channels);
    Image out(in.width, in.height, in.channels);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            for (int c = 0; c < in.channels; ++c) {
                double acc = 0.0;
                for (int k = -kWindowRadius; k <= kWindowRadius; ++k) {
                    const int xx = x + k;
                    if (xx < 0 || xx >= in.width) continue;
                    acc += w[k + kWindowRadius] * in.at(xx, y, c);
                }
                tmp.at(x, y, c) = acc;
            }
        }
    }
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            for (int c = 0; c < in.channels; ++c) {
                double acc = 0.0;
                for (int k = -kWindowRadius; k <= kWindowRadius; ++k) {
                    const int yy = y + k;
                    if (yy < 0 || yy >= in.height) continue;
                    acc += w[k + kWindowRadius] * tmp.at(x, yy, c);
                }
                out.at(x, y, c) = acc;
            }
        }
    }
    return out;
}

// Per-pixel weight totals so border windows still average to 1.
const Image& weight_totals(int width, int height) {
    thread_local Image cache;
    if (cache.width != width || cache.height != height) {
        Image ones(width, height, 1, 1.0);
        cache = filter_unnormalized(ones);
    }
    return cache;
}

Image filter_normalized(const Image& in) {
    Image out = filter_unnormalized(in);
    const Image& tot = weight_totals(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < in.channels; ++c) out.at(x, y, c) /= tot.at(x, y);
    return out;
}

// Adjoint of filter_normalized: divide first, then the self-adjoint filter.
Image filter_normalized_adjoint(const Image& in) {
    const Image& tot = weight_totals(in.width, in.height);
    Image scaled = in;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < in.channels; ++c) scaled.at(x, y, c) /= tot.at(x, y);
    return filter_unnormalized(scaled);
}

Image elementwise_product(const Image& a, const Image& b) {
    Image out(a.width, a.height, a.channels);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

struct SsimMaps {
    Image value;                 // per-pixel SSIM
    Image d_t1, d_t2, d_t3;      // partials w.r.t. G(x), G(x^2), G(xy)
    Image mu_x, mu_y;
};

SsimMaps ssim_maps(const Image& x, const Image& y, bool with_grad) {
    SsimMaps m;
    m.mu_x = filter_normalized(x);
    m.mu_y = filter_normalized(y);
    const Image gxx = filter_normalized(elementwise_product(x, x));
    const Image gyy = filter_normalized(elementwise_product(y, y));
    const Image gxy = filter_normalized(elementwise_product(x, y));

    m.value = Image(x.width, x.height, x.channels);
    if (with_grad) {
        m.d_t1 = Image(x.width, x.height, x.channels);
        m.d_t2 = Image(x.width, x.height, x.channels);
        m.d_t3 = Image(x.width, x.height, x.channels);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double mx = m.mu_x.data[i];
        const double my = m.mu_y.data[i];
        const double var_x = gxx.data[i] - mx * mx;
        const double var_y = gyy.data[i] - my * my;
        const double cov = gxy.data[i] - mx * my;
        const double a1 = 2.0 * mx * my + kC1;
        const double a2 = 2.0 * cov + kC2;
        const double b1 = mx * mx + my * my + kC1;
        const double b2 = var_x + var_y + kC2;
        const double s = (a1 * a2) / (b1 * b2);
        m.value.data[i] = s;
        if (with_grad) {
            const double ds_da1 = a2 / (b1 * b2);
            const double ds_da2 = a1 / (b1 * b2);
            const double ds_db1 = -s / b1;
            const double ds_db2 = -s / b2;
            const double ds_dmux = ds_da1 * 2.0 * my + ds_db1 * 2.0 * mx;
            const double ds_dvarx = ds_db2;
            const double ds_dcov = ds_da2 * 2.0;
            m.d_t1.data[i] = ds_dmux + ds_dvarx * (-2.0 * mx) + ds_dcov * (-my);
            m.d_t2.data[i] = ds_dvarx;
            m.d_t3.data[i] = ds_dcov;
        }
    }
    return m;
}

}  // namespace

double ssim_mean(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim_mean: shape mismatch");
    const SsimMaps m = ssim_maps(a, b, false);
    double acc = 0.0;
    for (double v : m.value.data) acc += v;
    return acc / static_cast<double>(m.value.size());
}

PhotometricResult photometric_loss(const Image& rendered, const Image& observed,
                                   double lambda_sm) {
    if (!rendered.same_shape(observed)) {
        throw std::invalid_argument("photometric_loss: shape mismatch");
    }
    const double n = static_cast<double>(rendered.size());

    PhotometricResult res;
    res.grad = Image(rendered.width, rendered.height, rendered.channels);

    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double diff = rendered.data[i] - observed.data[i];
        l1 += std::abs(diff);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        res.grad.data[i] = (1.0 - lambda_sm) * sign / n;
    }
    res.l1 = l1 / n;

    if (lambda_sm > 0.0) {
        const SsimMaps m = ssim_maps(rendered, observed, true);
        double s_mean = 0.0;
        for (double v : m.value.data) s_mean += v;
        s_mean /= n;
        res.ssim = s_mean;
        const double one_minus = 1.0 - s_mean;
        const double dloss_dssim =
            one_minus > 0 ? -1.0 : (one_minus < 0 ? 1.0 : 0.0);

        const Image a1 = filter_normalized_adjoint(m.d_t1);
        const Image a2 = filter_normalized_adjoint(m.d_t2);
        const Image a3 = filter_normalized_adjoint(m.d_t3);
        const double scale = lambda_sm * dloss_dssim / n;
        for (std::size_t i = 0; i < rendered.size(); ++i) {
            const double dssim_dx =
                a1.data[i] + 2.0 * rendered.data[i] * a2.data[i] +
                observed.data[i] * a3.data[i];
            res.grad.data[i] += scale * dssim_dx;
        }
        res.loss = (1.0 - lambda_sm) * res.l1 + lambda_sm * std::abs(1.0 - s_mean);
    } else {
        res.ssim = ssim_mean(rendered, observed);
        res.loss = res.l1;
    }
    return res;
}

WarpResult warp_depth(const Image& source_depth, const CameraIntrinsics& k,
                      const CameraPose& relative_pose) {
    const int w = source_depth.width;
    const int h = source_depth.height;
    WarpResult res;
    res.depth = Image(w, h, 1);
    res.mask = Image(w, h, 1);
    res.source.assign(static_cast<std::size_t>(w) * h, -1);
    res.depth_jacobian.assign(static_cast<std::size_t>(w) * h, 0.0);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d = source_depth.at(x, y);
            if (!(d > 0.0)) continue;
            const Vec3 ray((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
            const Vec3 p_target = relative_pose.apply(d * ray);
            const auto uv = project_point(p_target, k);
            if (!uv) continue;
            const int tx = static_cast<int>(std::floor(uv->x()));
            const int ty = static_cast<int>(std::floor(uv->y()));
            if (tx < 0 || tx >= w || ty < 0 || ty >= h) continue;
            const std::size_t ti = static_cast<std::size_t>(ty) * w + tx;
            if (res.source[ti] < 0 || p_target.z() < res.depth.data[ti]) {
                res.depth.data[ti] = p_target.z();
                res.mask.data[ti] = 1.0;
                res.source[ti] = y * w + x;
                res.depth_jacobian[ti] = (relative_pose.rotation * ray).z();
            }
        }
    }
    return res;
}

GeometricResult geometric_loss(const Image& target_depth, const WarpResult& warp) {
    if (!target_depth.same_shape(warp.depth)) {
        throw std::invalid_argument("geometric_loss: shape mismatch");
    }
    GeometricResult res;
    res.grad_target_depth = Image(target_depth.width, target_depth.height, 1);
    res.grad_source_depth = Image(target_depth.width, target_depth.height, 1);

    std::size_t count = 0;
    for (std::size_t i = 0; i < target_depth.size(); ++i) {
        if (warp.mask.data[i] > 0.0) ++count;
    }
    if (count == 0) {
        res.empty_mask = true;
        return res;
    }
    const double inv_n = 1.0 / static_cast<double>(count);
    double acc = 0.0;
    for (std::size_t i = 0; i < target_depth.size(); ++i) {
        if (warp.mask.data[i] <= 0.0) continue;
        const double diff = warp.depth.data[i] - target_depth.data[i];
        acc += std::abs(diff);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        res.grad_target_depth.data[i] = -sign * inv_n;
        res.grad_source_depth.data[warp.source[i]] +=
            sign * warp.depth_jacobian[i] * inv_n;
    }
    res.loss = acc * inv_n;
    return res;
}

NormalPriorResult normal_prior_loss(const SurfelScene& scene) {
    NormalPriorResult res;
    res.grad.assign(scene.size(), Vec3::Zero());
    if (!scene.has_priors()) return res;

    const double inv_n = 1.0 / static_cast<double>(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3& n = scene.surfels[i].normal;
        const Vec3& prior = scene.prior_normals[i];
        Vec3 g = Vec3::Zero();
        double l = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double diff = n[a] - prior[a];
            l += std::abs(diff);
            g[a] += diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        }
        const double dot_term = 1.0 - n.dot(prior);
        l += std::abs(dot_term);
        g += (dot_term > 0 ? -1.0 : (dot_term < 0 ? 1.0 : 0.0)) * prior;
        res.loss += l * inv_n;
        g *= inv_n;
        res.grad[i] = g - g.dot(n) * n;
    }
    return res;
}

}  // namespace splat
