#include <algorithm>
#include <array>
#include <numeric>

#include "tetsculpt/sdfkit.hpp"

namespace tetsculpt {

namespace {

// Robust point-to-ellipse / ellipsoid distance, after D. Eberly, "Distance from
// a Point to an Ellipse, an Ellipsoid, or a Hyperellipsoid". Requires
// e0 >= e1 (>= e2) and non-negative query coordinates.
constexpr int kBisectIterations = 160;

double bisect_root(std::span<const double> r, std::span<const double> z, double g) {
    const std::size_t n = z.size();
    double s0 = z[n - 1] - 1.0;
    double s1 = 0.0;
    if (g >= 0.0) {
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) sq += (r[i] * z[i]) * (r[i] * z[i]);
        s1 = std::sqrt(sq) - 1.0;
    }
    double s = 0.0;
    for (int it = 0; it < kBisectIterations; ++it) {
        s = 0.5 * (s0 + s1);
        if (s == s0 || s == s1) break;
        double sum = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ratio = r[i] * z[i] / (s + r[i]);
            sum += ratio * ratio;
        }
        if (sum > 0.0)
            s0 = s;
        else if (sum < 0.0)
            s1 = s;
        else
            break;
    }
    return s;
}

double ellipse_distance(double e0, double e1, double y0, double y1) {
    if (y1 > 0.0) {
        if (y0 > 0.0) {
            const double z0 = y0 / e0, z1 = y1 / e1;
            const double g = z0 * z0 + z1 * z1 - 1.0;
            if (g == 0.0) return 0.0;
            const double r0 = (e0 / e1) * (e0 / e1);
            const std::array<double, 2> r{r0, 1.0}, z{z0, z1};
            const double sbar = bisect_root(r, z, g);
            const double x0 = r0 * y0 / (sbar + r0), x1 = y1 / (sbar + 1.0);
            return std::hypot(x0 - y0, x1 - y1);
        }
        return std::abs(y1 - e1);
    }
    const double numer0 = e0 * y0, denom0 = e0 * e0 - e1 * e1;
    if (numer0 < denom0) {
        const double xde0 = numer0 / denom0;
        const double x0 = e0 * xde0, x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0));
        return std::hypot(x0 - y0, x1);
    }
    return std::abs(y0 - e0);
}

double ellipsoid_distance(double e0, double e1, double e2, double y0, double y1, double y2) {
    if (y2 > 0.0) {
        if (y1 > 0.0) {
            if (y0 > 0.0) {
                const double z0 = y0 / e0, z1 = y1 / e1, z2 = y2 / e2;
                const double g = z0 * z0 + z1 * z1 + z2 * z2 - 1.0;
                if (g == 0.0) return 0.0;
                const double r0 = (e0 / e2) * (e0 / e2), r1 = (e1 / e2) * (e1 / e2);
                const std::array<double, 3> r{r0, r1, 1.0}, z{z0, z1, z2};
                const double sbar = bisect_root(r, z, g);
                const Vec3 x(r0 * y0 / (sbar + r0), r1 * y1 / (sbar + r1), y2 / (sbar + 1.0));
                return (x - Vec3(y0, y1, y2)).norm();
            }
            return ellipse_distance(e1, e2, y1, y2);
        }
        if (y0 > 0.0) return ellipse_distance(e0, e2, y0, y2);
        return std::abs(y2 - e2);
    }
    const double denom0 = e0 * e0 - e2 * e2, denom1 = e1 * e1 - e2 * e2;
    const double numer0 = e0 * y0, numer1 = e1 * y1;
    if (numer0 < denom0 && numer1 < denom1) {
        const double xde0 = numer0 / denom0, xde1 = numer1 / denom1;
        const double discr = 1.0 - xde0 * xde0 - xde1 * xde1;
        if (discr > 0.0) {
            const Vec3 x(e0 * xde0, e1 * xde1, e2 * std::sqrt(discr));
            return std::sqrt((x[0] - y0) * (x[0] - y0) + (x[1] - y1) * (x[1] - y1) + x[2] * x[2]);
        }
    }
    return ellipse_distance(e0, e1, y0, y1);
}

double ellipsoid_sdf(const Ellipsoid& e, const Vec3& p) {
    const Vec3 local = (p - e.center).cwiseAbs();
    std::array<int, 3> axes{0, 1, 2};
    std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) { return e.radii[a] > e.radii[b]; });
    const double d = ellipsoid_distance(e.radii[axes[0]], e.radii[axes[1]], e.radii[axes[2]], local[axes[0]],
                                        local[axes[1]], local[axes[2]]);
    const double level = (local.array() / e.radii.array()).square().sum();
    return level < 1.0 ? -d : d;
}

struct PrimitiveDistance {
    const Vec3& p;
    double operator()(const Sphere& s) const { return (p - s.center).norm() - s.radius; }
    double operator()(const Capsule& c) const {
        const Vec3 ab = c.b - c.a;
        const double len2 = ab.squaredNorm();
        const double t = len2 > 0.0 ? std::clamp((p - c.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        return (p - (c.a + t * ab)).norm() - c.radius;
    }
    double operator()(const Box& b) const {
        const Vec3 q = (p - b.center).cwiseAbs() - b.half_extent;
        return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    double operator()(const Ellipsoid& e) const { return ellipsoid_sdf(e, p); }
};

}  // namespace

double analytic_sdf(const Primitive& prim, const Vec3& p) { return std::visit(PrimitiveDistance{p}, prim); }

double analytic_sdf(const PrimitiveUnion& u, const Vec3& p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& prim : u.parts) d = std::min(d, analytic_sdf(prim, p));
    return d;
}

std::vector<double> analytic_sdf(const PrimitiveUnion& u, std::span<const Vec3> points) {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = analytic_sdf(u, points[i]);
    return out;
}

int nearest_label(const PrimitiveUnion& u, const Vec3& p) {
    require(!u.parts.empty(), "nearest_label: empty union");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < u.parts.size(); ++i) {
        const double d = analytic_sdf(u.parts[i], p);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return u.labels.empty() ? 0 : u.labels[best];
}

double SdfSource::query(const Vec3& p) const {
    if (auto* u = std::get_if<std::shared_ptr<const PrimitiveUnion>>(&impl_)) return analytic_sdf(**u, p);
    if (auto* m = std::get_if<std::shared_ptr<const MeshSdf>>(&impl_)) return (*m)->query(p);
    throw ContractError("SdfSource: empty source");
}

std::vector<double> SdfSource::query(std::span<const Vec3> points) const {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = query(points[i]);
    return out;
}

const MeshSdf* SdfSource::mesh_sdf() const {
    if (auto* m = std::get_if<std::shared_ptr<const MeshSdf>>(&impl_)) return m->get();
    return nullptr;
}

}  // namespace tetsculpt
