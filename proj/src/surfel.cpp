#include "splat/surfel.hpp"

#include <cmath>
#include <stdexcept>

namespace splat {

SurfelFrame build_frame(const Vec3& n) {
    if (!n.allFinite() || n.norm() < 1e-12) {
        throw std::invalid_argument("build_frame: normal must be finite and nonzero");
    }
    // Anchor axis switches away from the pole so the projection stays
    // well-conditioned; Gram-Schmidt keeps n1 = e_x when n = e_z.
    const Vec3 a = std::abs(n.z()) >= 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
    SurfelFrame f;
    f.n = n;
    f.n1 = (a - a.dot(n) * n).normalized();
    f.n2 = n.cross(f.n1);  // n2 = n x n1 gives det(R) = +1
    return f;
}

Mat3 covariance_world(const GaussianSurfel& surfel) {
    const SurfelFrame f = build_frame(surfel.normal);
    const double sx2 = surfel.scale.x() * surfel.scale.x();
    const double sy2 = surfel.scale.y() * surfel.scale.y();
    Mat3 sigma = sx2 * f.n1 * f.n1.transpose() + sy2 * f.n2 * f.n2.transpose();
    // Symmetrize against roundoff.
    return 0.5 * (sigma + sigma.transpose());
}

}  // namespace splat
