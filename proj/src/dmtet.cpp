#include "tetsculpt/dmtet.hpp"

#include <algorithm>
#include <unordered_map>

namespace tetsculpt {

namespace {

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint64_t>(std::max(a, b));
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

void orient_positive(const std::vector<Vec3>& verts, std::array<int, 4>& tet) {
    if (signed_volume(verts[tet[0]], verts[tet[1]], verts[tet[2]], verts[tet[3]]) < 0.0) std::swap(tet[2], tet[3]);
}

int local_edge(int a, int b) {
    for (int e = 0; e < 6; ++e)
        if ((kTetEdges[e][0] == a && kTetEdges[e][1] == b) || (kTetEdges[e][0] == b && kTetEdges[e][1] == a)) return e;
    return -1;
}

// Builds the case table on a reference tet. Triangle orientation relative to
// the tet orientation is combinatorial, so it holds for every positively
// oriented tet.
std::array<MtCase, 16> build_case_table() {
    const std::array<Vec3, 4> ref{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    std::array<MtCase, 16> table{};
    for (int pattern = 1; pattern < 15; ++pattern) {
        std::vector<int> pos, neg;
        for (int k = 0; k < 4; ++k) ((pattern >> k) & 1 ? pos : neg).push_back(k);
        Vec3 toward_positive = Vec3::Zero();
        for (int k : pos) toward_positive += ref[k] / static_cast<double>(pos.size());
        for (int k : neg) toward_positive -= ref[k] / static_cast<double>(neg.size());

        std::vector<std::array<int, 3>> tris;
        if (pos.size() == 1 || neg.size() == 1) {
            const int lone = pos.size() == 1 ? pos[0] : neg[0];
            const auto& others = pos.size() == 1 ? neg : pos;
            tris.push_back({local_edge(lone, others[0]), local_edge(lone, others[1]), local_edge(lone, others[2])});
        } else {
            const int q0 = local_edge(neg[0], pos[0]), q1 = local_edge(neg[0], pos[1]);
            const int q2 = local_edge(neg[1], pos[1]), q3 = local_edge(neg[1], pos[0]);
            tris.push_back({q0, q1, q2});
            tris.push_back({q0, q2, q3});
        }
        MtCase& c = table[pattern];
        c.triangle_count = static_cast<int>(tris.size());
        for (std::size_t t = 0; t < tris.size(); ++t) {
            auto tri = tris[t];
            std::array<Vec3, 3> p;
            for (int k = 0; k < 3; ++k) p[k] = 0.5 * (ref[kTetEdges[tri[k]][0]] + ref[kTetEdges[tri[k]][1]]);
            if ((p[1] - p[0]).cross(p[2] - p[0]).dot(toward_positive) < 0.0) std::swap(tri[1], tri[2]);
            c.triangles[t] = tri;
        }
    }
    return table;
}

double nudged(double s) { return s == 0.0 ? kZeroNudge : s; }

}  // namespace

const std::array<MtCase, 16>& mt_case_table() {
    static const std::array<MtCase, 16> table = build_case_table();
    return table;
}

TetGrid grid_init(int resolution) {
    require(resolution >= 2, "grid_init: resolution must be >= 2");
    TetGrid grid;
    grid.resolution = resolution;
    grid.cell_size = 2.0 / (resolution - 1);
    const int n = resolution;
    grid.vertices.reserve(static_cast<std::size_t>(n) * n * n);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                grid.vertices.emplace_back(-1.0 + x * grid.cell_size, -1.0 + y * grid.cell_size, -1.0 + z * grid.cell_size);
    auto vid = [n](int x, int y, int z) { return x + n * (y + n * z); };

    // Six tets around the 0-7 diagonal, one per axis permutation.
    static constexpr std::array<std::array<int, 3>, 6> kPerms{
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    grid.tets.reserve(static_cast<std::size_t>(n - 1) * (n - 1) * (n - 1) * 6);
    for (int z = 0; z + 1 < n; ++z)
        for (int y = 0; y + 1 < n; ++y)
            for (int x = 0; x + 1 < n; ++x) {
                auto corner = [&](int bits) { return vid(x + (bits & 1), y + ((bits >> 1) & 1), z + ((bits >> 2) & 1)); };
                for (const auto& perm : kPerms) {
                    const int a = 1 << perm[0];
                    const int ab = a | (1 << perm[1]);
                    std::array<int, 4> tet{corner(0), corner(a), corner(ab), corner(7)};
                    orient_positive(grid.vertices, tet);
                    grid.tets.push_back(tet);
                }
            }
    grid.offsets.assign(grid.vertices.size(), Vec3::Zero());
    return grid;
}

double tet_signed_volume(const TetGrid& grid, const std::array<int, 4>& tet, bool deformed) {
    if (deformed)
        return signed_volume(grid.deformed(tet[0]), grid.deformed(tet[1]), grid.deformed(tet[2]), grid.deformed(tet[3]));
    return signed_volume(grid.vertices[tet[0]], grid.vertices[tet[1]], grid.vertices[tet[2]], grid.vertices[tet[3]]);
}

void evaluate_grid(TetGrid& grid, const FieldParams& field, bool use_offsets) {
    const int D = field.config.output_dim;
    std::vector<Vec3> points(grid.vertices.size());
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = grid_to_field(grid.vertices[i]);
    const auto out = field_eval(field, points);
    grid.sdf.resize(points.size());
    grid.offsets.assign(points.size(), Vec3::Zero());
    const bool deform = use_offsets && D >= 4;
    const double bound = grid.max_offset();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double* o = out.data() + i * D;
        if (!std::isfinite(o[0])) throw NumericError("evaluate_grid: non-finite SDF value");
        grid.sdf[i] = o[0];
        if (deform) {
            for (int a = 0; a < 3; ++a) {
                if (!std::isfinite(o[1 + a])) throw NumericError("evaluate_grid: non-finite offset");
                grid.offsets[i][a] = bound * std::tanh(o[1 + a]);
            }
        }
    }
}

void assign_sdf(TetGrid& grid, const std::function<double(const Vec3&)>& sdf) {
    grid.sdf.resize(grid.vertices.size());
    for (std::size_t i = 0; i < grid.vertices.size(); ++i) grid.sdf[i] = sdf(grid.vertices[i]);
    grid.offsets.assign(grid.vertices.size(), Vec3::Zero());
}

MtResult marching_tetrahedra(const TetGrid& grid) {
    if (!grid.sdf_cached()) throw ContractError("marching_tetrahedra: SDF cache not filled");
    const auto& table = mt_case_table();
    MtResult result;
    std::unordered_map<std::uint64_t, int> edge_vertex;
    for (const auto& tet : grid.tets) {
        int pattern = 0;
        for (int k = 0; k < 4; ++k)
            if (nudged(grid.sdf[tet[k]]) > 0.0) pattern |= 1 << k;
        const MtCase& c = table[pattern];
        for (int t = 0; t < c.triangle_count; ++t) {
            std::array<int, 3> face{};
            for (int k = 0; k < 3; ++k) {
                const auto& le = kTetEdges[c.triangles[t][k]];
                const int i = std::min(tet[le[0]], tet[le[1]]);
                const int j = std::max(tet[le[0]], tet[le[1]]);
                auto [it, inserted] = edge_vertex.try_emplace(edge_key(i, j), 0);
                if (inserted) {
                    const double si = nudged(grid.sdf[i]), sj = nudged(grid.sdf[j]);
                    double denom = si - sj;
                    if (std::abs(denom) < 1e-12) denom = std::copysign(1e-12, denom);
                    const double w = std::clamp(si / denom, 0.0, 1.0);
                    it->second = static_cast<int>(result.mesh.vertices.size());
                    result.mesh.vertices.push_back((1.0 - w) * grid.deformed(i) + w * grid.deformed(j));
                    result.provenance.edges.push_back({i, j});
                    result.provenance.weights.push_back(w);
                }
                face[k] = it->second;
            }
            result.mesh.faces.push_back(face);
        }
    }
    return result;
}

MtGradient mt_backward(const TetGrid& grid, const MtProvenance& provenance, std::span<const Vec3> vertex_gradients) {
    require(vertex_gradients.size() == provenance.edges.size(), "mt_backward: gradient count differs from mesh vertices");
    require(grid.sdf_cached(), "mt_backward: SDF cache not filled");
    MtGradient grad;
    grad.sdf.assign(grid.vertices.size(), 0.0);
    grad.offsets.assign(grid.vertices.size(), Vec3::Zero());
    for (std::size_t m = 0; m < provenance.edges.size(); ++m) {
        const Vec3& g = vertex_gradients[m];
        if (g.isZero(0.0)) continue;
        const auto [i, j] = provenance.edges[m];
        const double t = provenance.weights[m];
        const double si = nudged(grid.sdf[i]), sj = nudged(grid.sdf[j]);
        double denom = si - sj;
        if (std::abs(denom) < 1e-12) {
            denom = std::copysign(1e-12, denom);
            grad.status = Status::warning;
        }
        const double dL_dt = g.dot(grid.deformed(j) - grid.deformed(i));
        const double inv2 = 1.0 / (denom * denom);
        grad.sdf[i] += dL_dt * (-sj * inv2);
        grad.sdf[j] += dL_dt * (si * inv2);
        grad.offsets[i] += (1.0 - t) * g;
        grad.offsets[j] += t * g;
    }
    return grad;
}

void evaluate_grid_backward(const TetGrid& grid, const FieldParams& field, const MtGradient& grad,
                            std::vector<double>& param_grad, bool use_offsets) {
    require(grad.sdf.size() == grid.vertices.size(), "evaluate_grid_backward: gradient size mismatch");
    const int D = field.config.output_dim;
    const bool deform = use_offsets && D >= 4 && !grad.offsets.empty();
    const double bound = grid.max_offset();
    std::vector<Vec3> points;
    std::vector<double> out_grad;
    for (std::size_t i = 0; i < grid.vertices.size(); ++i) {
        const bool has_offset_grad = deform && !grad.offsets[i].isZero(0.0);
        if (grad.sdf[i] == 0.0 && !has_offset_grad) continue;
        points.push_back(grid_to_field(grid.vertices[i]));
        const std::size_t base = out_grad.size();
        out_grad.resize(base + D, 0.0);
        out_grad[base] = grad.sdf[i];
        if (has_offset_grad) {
            for (int a = 0; a < 3; ++a) {
                const double th = grid.offsets[i][a] / bound;
                out_grad[base + 1 + a] = grad.offsets[i][a] * bound * (1.0 - th * th);
            }
        }
    }
    field_backward_accumulate(field, points, out_grad, param_grad);
}

SubdivisionResult subdivide_near_surface(const TetGrid& grid, double threshold, SelectionMode mode) {
    if (!grid.sdf_cached()) throw ContractError("subdivide_near_surface: SDF cache not filled");
    SubdivisionResult result;
    TetGrid& out = result.grid;
    out.resolution = grid.resolution;
    out.vertices = grid.vertices;
    out.sdf = grid.sdf;

    std::vector<char> selected(grid.tets.size(), 0);
    for (std::size_t t = 0; t < grid.tets.size(); ++t) {
        double mean = 0.0;
        for (int v : grid.tets[t]) mean += (mode == SelectionMode::absolute_mean ? std::abs(grid.sdf[v]) : grid.sdf[v]);
        mean /= 4.0;
        if (mean < threshold) {
            selected[t] = 1;
            ++result.selected;
        }
    }
    if (result.selected == 0) return {grid, 0};

    out.cell_size = 0.5 * grid.cell_size;
    std::unordered_map<std::uint64_t, int> midpoint;
    auto mid = [&](int a, int b) {
        auto [it, inserted] = midpoint.try_emplace(edge_key(a, b), 0);
        if (inserted) {
            it->second = static_cast<int>(out.vertices.size());
            out.vertices.push_back(0.5 * (grid.vertices[a] + grid.vertices[b]));
            // Provisional value; callers re-evaluate the field on the new grid.
            out.sdf.push_back(0.5 * (grid.sdf[a] + grid.sdf[b]));
        }
        return it->second;
    };

    out.tets.reserve(grid.tets.size() + 7 * result.selected);
    for (std::size_t t = 0; t < grid.tets.size(); ++t) {
        const auto& v = grid.tets[t];
        if (!selected[t]) {
            out.tets.push_back(v);
            continue;
        }
        const int m01 = mid(v[0], v[1]), m02 = mid(v[0], v[2]), m03 = mid(v[0], v[3]);
        const int m12 = mid(v[1], v[2]), m13 = mid(v[1], v[3]), m23 = mid(v[2], v[3]);
        const std::array<std::array<int, 4>, 8> children{{
            {v[0], m01, m02, m03},
            {m01, v[1], m12, m13},
            {m02, m12, v[2], m23},
            {m03, m13, m23, v[3]},
            // Inner octahedron split around the m02-m13 diagonal.
            {m02, m13, m01, m12},
            {m02, m13, m12, m23},
            {m02, m13, m23, m03},
            {m02, m13, m03, m01},
        }};
        for (auto child : children) {
            orient_positive(out.vertices, child);
            out.tets.push_back(child);
        }
    }
    for (std::size_t t = 0; t < grid.tets.size(); ++t) {
        if (selected[t]) continue;
        for (const auto& e : kTetEdges) {
            auto it = midpoint.find(edge_key(grid.tets[t][e[0]], grid.tets[t][e[1]]));
            if (it != midpoint.end()) out.hanging_vertices.push_back(it->second);
        }
    }
    std::sort(out.hanging_vertices.begin(), out.hanging_vertices.end());
    out.hanging_vertices.erase(std::unique(out.hanging_vertices.begin(), out.hanging_vertices.end()),
                               out.hanging_vertices.end());
    out.offsets.assign(out.vertices.size(), Vec3::Zero());
    return result;
}

}  // namespace tetsculpt
