#include <algorithm>
#include <numbers>
#include <unordered_map>

#include "tetsculpt/sdfkit.hpp"

namespace tetsculpt {

namespace {

constexpr int kLeafSize = 4;
// Clusters farther than this multiple of their radius use the dipole term.
constexpr double kFarFieldRatio = 3.0;

enum class Feature { face, vertex0, vertex1, vertex2, edge01, edge12, edge20 };

struct TriangleHit {
    Vec3 point;
    Feature feature;
};

// Ericson, Real-Time Collision Detection, 5.1.5, tracking the Voronoi region.
TriangleHit closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return {a, Feature::vertex0};
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return {b, Feature::vertex1};
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {a + v * ab, Feature::edge01};
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return {c, Feature::vertex2};
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {a + w * ac, Feature::edge20};
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b + w * (c - b), Feature::edge12};
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {a + ab * v + ac * w, Feature::face};
}

}  // namespace

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    return closest_on_triangle(p, a, b, c).point;
}

double triangle_winding(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Van Oosterom & Strackee solid angle.
    const Vec3 x = a - p, y = b - p, z = c - p;
    const double lx = x.norm(), ly = y.norm(), lz = z.norm();
    const double num = x.dot(y.cross(z));
    const double den = lx * ly * lz + x.dot(y) * lz + x.dot(z) * ly + y.dot(z) * lx;
    return std::atan2(num, den) / (2.0 * std::numbers::pi);
}

MeshSdf::MeshSdf(TriMesh mesh) : mesh_(std::move(mesh)) {
    validate_mesh(mesh_);
    require(!mesh_.empty(), "MeshSdf: empty mesh");
    watertight_ = is_watertight(mesh_);

    const int n = static_cast<int>(mesh_.faces.size());
    order_.resize(n);
    centroids_.resize(n);
    for (int i = 0; i < n; ++i) {
        order_[i] = i;
        const auto& f = mesh_.faces[i];
        centroids_[i] = (mesh_.vertices[f[0]] + mesh_.vertices[f[1]] + mesh_.vertices[f[2]]) / 3.0;
    }
    nodes_.reserve(2 * (n / kLeafSize + 1));
    build(0, n);

    if (!watertight_) {
        // Angle-weighted vertex pseudonormals and summed edge normals.
        face_normals_.resize(n);
        vertex_pseudo_.assign(mesh_.vertices.size(), Vec3::Zero());
        edge_pseudo_.assign(n, {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
        std::unordered_map<std::uint64_t, Vec3> edge_sum;
        auto key = [](int a, int b) {
            return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint64_t>(std::max(a, b));
        };
        for (int i = 0; i < n; ++i) {
            const auto& f = mesh_.faces[i];
            const Vec3 cr = (mesh_.vertices[f[1]] - mesh_.vertices[f[0]]).cross(mesh_.vertices[f[2]] - mesh_.vertices[f[0]]);
            const double len = cr.norm();
            face_normals_[i] = len > 0.0 ? Vec3(cr / len) : Vec3::Zero();
            for (int k = 0; k < 3; ++k) {
                const Vec3 e1 = mesh_.vertices[f[(k + 1) % 3]] - mesh_.vertices[f[k]];
                const Vec3 e2 = mesh_.vertices[f[(k + 2) % 3]] - mesh_.vertices[f[k]];
                const double l1 = e1.norm(), l2 = e2.norm();
                if (l1 > 0.0 && l2 > 0.0) {
                    const double angle = std::acos(std::clamp(e1.dot(e2) / (l1 * l2), -1.0, 1.0));
                    vertex_pseudo_[f[k]] += angle * face_normals_[i];
                }
                edge_sum[key(f[k], f[(k + 1) % 3])] += face_normals_[i];
            }
        }
        for (int i = 0; i < n; ++i) {
            const auto& f = mesh_.faces[i];
            for (int k = 0; k < 3; ++k) edge_pseudo_[i][k] = edge_sum[key(f[k], f[(k + 1) % 3])];
        }
    }
}

int MeshSdf::build(int first, int count) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.box.setEmpty();
    double area_sum = 0.0;
    Vec3 weighted_center = Vec3::Zero(), mean_center = Vec3::Zero();
    for (int i = first; i < first + count; ++i) {
        const auto& f = mesh_.faces[order_[i]];
        const Vec3 cr = (mesh_.vertices[f[1]] - mesh_.vertices[f[0]]).cross(mesh_.vertices[f[2]] - mesh_.vertices[f[0]]);
        for (int idx : f) node.box.extend(mesh_.vertices[idx]);
        node.dipole_normal += 0.5 * cr;
        const double a = 0.5 * cr.norm();
        area_sum += a;
        weighted_center += a * centroids_[order_[i]];
        mean_center += centroids_[order_[i]];
    }
    node.dipole_center = area_sum > 0.0 ? Vec3(weighted_center / area_sum) : Vec3(mean_center / count);
    for (int i = first; i < first + count; ++i)
        for (int idx : mesh_.faces[order_[i]])
            node.dipole_radius = std::max(node.dipole_radius, (mesh_.vertices[idx] - node.dipole_center).norm());

    if (count <= kLeafSize) {
        node.first = first;
        node.count = count;
        nodes_[index] = node;
        return index;
    }
    Eigen::AlignedBox3d cbox;
    cbox.setEmpty();
    for (int i = first; i < first + count; ++i) cbox.extend(centroids_[order_[i]]);
    int axis = 0;
    cbox.sizes().maxCoeff(&axis);
    const int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](int a, int b) {
                         if (centroids_[a][axis] != centroids_[b][axis]) return centroids_[a][axis] < centroids_[b][axis];
                         return a < b;
                     });
    nodes_[index] = node;
    const int left = build(first, mid - first);
    const int right = build(mid, first + count - mid);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
}

ClosestHit MeshSdf::closest(const Vec3& p) const {
    ClosestHit best;
    double best_d2 = std::numeric_limits<double>::infinity();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (node.box.squaredExteriorDistance(p) >= best_d2) continue;
        if (node.left < 0) {
            for (int i = node.first; i < node.first + node.count; ++i) {
                const auto& f = mesh_.faces[order_[i]];
                const Vec3 q = closest_on_triangle(p, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]).point;
                const double d2 = (q - p).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && order_[i] < best.face)) {
                    best_d2 = d2;
                    best.face = order_[i];
                    best.point = q;
                }
            }
            continue;
        }
        const double dl = nodes_[node.left].box.squaredExteriorDistance(p);
        const double dr = nodes_[node.right].box.squaredExteriorDistance(p);
        // Push the farther child first so the nearer one is visited next.
        if (dl < dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    best.distance = std::sqrt(best_d2);
    return best;
}

double MeshSdf::winding_recursive(int index, const Vec3& p) const {
    const Node& node = nodes_[index];
    const Vec3 r = node.dipole_center - p;
    const double dist = r.norm();
    if (dist > kFarFieldRatio * node.dipole_radius && dist > 0.0)
        return r.dot(node.dipole_normal) / (4.0 * std::numbers::pi * dist * dist * dist);
    if (node.left < 0) {
        double w = 0.0;
        for (int i = node.first; i < node.first + node.count; ++i) {
            const auto& f = mesh_.faces[order_[i]];
            w += triangle_winding(p, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]);
        }
        return w;
    }
    return winding_recursive(node.left, p) + winding_recursive(node.right, p);
}

double MeshSdf::winding_number(const Vec3& p) const { return winding_recursive(0, p); }

double MeshSdf::pseudonormal_sign(const Vec3& p, const ClosestHit& hit) const {
    const auto& f = mesh_.faces[hit.face];
    const auto th = closest_on_triangle(p, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]);
    Vec3 n;
    switch (th.feature) {
        case Feature::face: n = face_normals_[hit.face]; break;
        case Feature::vertex0: n = vertex_pseudo_[f[0]]; break;
        case Feature::vertex1: n = vertex_pseudo_[f[1]]; break;
        case Feature::vertex2: n = vertex_pseudo_[f[2]]; break;
        case Feature::edge01: n = edge_pseudo_[hit.face][0]; break;
        case Feature::edge12: n = edge_pseudo_[hit.face][1]; break;
        case Feature::edge20: n = edge_pseudo_[hit.face][2]; break;
    }
    return (p - hit.point).dot(n) < 0.0 ? -1.0 : 1.0;
}

double MeshSdf::query(const Vec3& p) const {
    const ClosestHit hit = closest(p);
    if (hit.distance == 0.0) return 0.0;
    const double sign = watertight_ ? (winding_number(p) > 0.5 ? -1.0 : 1.0) : pseudonormal_sign(p, hit);
    return sign * hit.distance;
}

std::vector<double> MeshSdf::query(std::span<const Vec3> points) const {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = query(points[i]);
    return out;
}

}  // namespace tetsculpt
