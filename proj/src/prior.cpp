#include <numeric>

#include "tetsculpt/pipeline.hpp"

namespace tetsculpt {

namespace {

int find_root(std::vector<int>& parent, int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
}

// Area-weighted centroid of each vertex-connected component.
std::vector<Vec3> component_centroids(const TriMesh& mesh) {
    std::vector<int> parent(mesh.vertices.size());
    std::iota(parent.begin(), parent.end(), 0);
    for (const auto& f : mesh.faces)
        for (int k = 1; k < 3; ++k) parent[find_root(parent, f[k])] = find_root(parent, f[0]);
    std::map<int, std::pair<Vec3, double>> acc;
    for (const auto& f : mesh.faces) {
        const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
        const double area = 0.5 * (b - a).cross(c - a).norm();
        auto& [sum, w] = acc[find_root(parent, f[0])];
        if (w == 0.0) sum = Vec3::Zero();
        sum += area * (a + b + c) / 3.0;
        w += area;
    }
    std::vector<Vec3> out;
    for (const auto& [root, sw] : acc)
        if (sw.second > 0.0) out.push_back(sw.first / sw.second);
    return out;
}

void finish_prior(HumanPrior& prior) {
    prior.body_center = mesh_centroid(prior.mesh);
    for (int label : distinct_labels(prior.mesh)) {
        if (label == kPartBody) continue;
        TriMesh part = extract_part(prior.mesh, label).mesh;
        if (part.faces.empty()) continue;
        for (const Vec3& c : component_centroids(part)) prior.anchors.emplace_back(label, c);
        prior.parts.emplace(label, std::move(part));
    }
}

}  // namespace

PrimitiveUnion procedural_figure() {
    PrimitiveUnion u;
    u.add(Sphere{Vec3(0.0, 0.66, 0.0), 0.15}, kPartFace);
    u.add(Capsule{Vec3(0.0, 0.44, 0.0), Vec3(0.0, 0.54, 0.0), 0.07}, kPartBody);
    u.add(Ellipsoid{Vec3(0.0, 0.17, 0.0), Vec3(0.22, 0.3, 0.14)}, kPartBody);
    for (double side : {-1.0, 1.0}) {
        u.add(Capsule{Vec3(side * 0.2, 0.36, 0.0), Vec3(side * 0.5, 0.0, 0.0), 0.065}, kPartBody);
        u.add(Sphere{Vec3(side * 0.55, -0.07, 0.0), 0.075}, kPartHands);
        u.add(Capsule{Vec3(side * 0.1, -0.05, 0.0), Vec3(side * 0.11, -0.7, 0.0), 0.085}, kPartBody);
        u.add(Box{Vec3(side * 0.11, -0.8, 0.05), Vec3(0.065, 0.05, 0.12)}, kPartFeet);
    }
    return u;
}

HumanPrior make_prior(const PrimitiveUnion& figure, int resolution) {
    HumanPrior prior;
    prior.sdf = SdfSource(figure);
    TetGrid grid = grid_init(resolution);
    assign_sdf(grid, [&](const Vec3& p) { return analytic_sdf(figure, p); });
    prior.mesh = marching_tetrahedra(grid).mesh;
    require(!prior.mesh.faces.empty(), "prior figure does not cross the grid");
    prior.mesh.part_labels.resize(prior.mesh.vertices.size());
    for (std::size_t i = 0; i < prior.mesh.vertices.size(); ++i)
        prior.mesh.part_labels[i] = nearest_label(figure, prior.mesh.vertices[i]);
    finish_prior(prior);
    return prior;
}

HumanPrior load_prior(const std::filesystem::path& path) {
    HumanPrior prior;
    prior.mesh = read_obj(path);
    if (prior.mesh.faces.empty()) throw IoError(path.string() + ": prior mesh has no faces");
    if (!prior.mesh.has_labels()) prior.mesh.part_labels.assign(prior.mesh.vertices.size(), kPartBody);
    prior.sdf = SdfSource(std::make_shared<const MeshSdf>(prior.mesh));
    finish_prior(prior);
    return prior;
}

HumanPrior make_prior(const RunConfig& config) {
    if (!config.prior.mesh.empty()) return load_prior(config.prior.mesh);
    return make_prior(procedural_figure(), config.prior.resolution);
}

}  // namespace tetsculpt
