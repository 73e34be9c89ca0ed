#include <cstring>

#include "tetsculpt/pipeline.hpp"

namespace tetsculpt {

Adam::Adam(std::size_t size, const AdamConfig& config) : config_(config), m_(size, 0.0), v_(size, 0.0) {
    config.validate();
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "optimizer size mismatch");
    ++t_;
    beta1_pow_ *= config_.beta1;
    beta2_pow_ *= config_.beta2;
    const double c1 = 1.0 / (1.0 - beta1_pow_), c2 = 1.0 / (1.0 - beta2_pow_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        params[i] -= config_.lr * (m_[i] * c1) / (std::sqrt(v_[i] * c2) + config_.eps);
    }
}

Eigen::AlignedBox3d bounding_box(std::span<const Vec3> points) {
    Eigen::AlignedBox3d box;
    for (const Vec3& p : points) box.extend(p);
    return box;
}

NormalizedPoints normalize_points_uniform(std::span<const Vec3> points, const Eigen::AlignedBox3d& bbox) {
    require(!bbox.isEmpty(), "bounding box is empty");
    const Vec3 ext = bbox.max() - bbox.min();
    const double s = ext.maxCoeff();
    require(s > 0.0 && std::isfinite(s), "bounding box has zero extent");
    NormalizedPoints out;
    out.transform = {bbox.min(), s};
    out.points.reserve(points.size());
    for (const Vec3& p : points) out.points.push_back(out.transform.apply(p));
    return out;
}

PointMap per_axis_point_map(const Eigen::AlignedBox3d& bbox) {
    require(!bbox.isEmpty(), "bounding box is empty");
    const Vec3 ext = bbox.max() - bbox.min();
    require(ext.minCoeff() > 0.0, "bounding box is flat along an axis");
    return {bbox.min(), ext.cwiseInverse()};
}

std::uint64_t checksum(std::span<const double> values) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof v);
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace tetsculpt
