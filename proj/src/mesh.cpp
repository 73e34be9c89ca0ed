#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "tetsculpt/sdfkit.hpp"

namespace tetsculpt {

namespace {

std::uint64_t edge_key(int a, int b) {
    const auto lo = static_cast<std::uint64_t>(std::min(a, b));
    const auto hi = static_cast<std::uint64_t>(std::max(a, b));
    return (lo << 32) | hi;
}

std::vector<std::uint64_t> sorted_edge_keys(const TriMesh& mesh) {
    std::vector<std::uint64_t> keys;
    keys.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces)
        for (int k = 0; k < 3; ++k) keys.push_back(edge_key(f[k], f[(k + 1) % 3]));
    std::sort(keys.begin(), keys.end());
    return keys;
}

Vec3 face_cross(const TriMesh& mesh, const std::array<int, 3>& f) {
    return (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
}

}  // namespace

std::size_t validate_mesh(const TriMesh& mesh) {
    const int n = static_cast<int>(mesh.vertices.size());
    std::size_t degenerate = 0;
    for (const auto& f : mesh.faces) {
        for (int idx : f)
            if (idx < 0 || idx >= n) throw ContractError("mesh: face index out of range");
        if (0.5 * face_cross(mesh, f).norm() < 1e-12) ++degenerate;
    }
    if (!mesh.part_labels.empty() && mesh.part_labels.size() != mesh.vertices.size())
        throw ContractError("mesh: part label count differs from vertex count");
    if (!mesh.vertex_normals.empty() && mesh.vertex_normals.size() != mesh.vertices.size())
        throw ContractError("mesh: normal count differs from vertex count");
    for (const auto& v : mesh.vertices)
        if (!v.allFinite()) throw ContractError("mesh: non-finite vertex");
    return degenerate;
}

bool is_watertight(const TriMesh& mesh) {
    if (mesh.faces.empty()) return false;
    const auto keys = sorted_edge_keys(mesh);
    for (std::size_t i = 0; i < keys.size();) {
        std::size_t j = i;
        while (j < keys.size() && keys[j] == keys[i]) ++j;
        if (j - i != 2) return false;
        i = j;
    }
    return true;
}

std::vector<Vec3> area_weighted_normals(const TriMesh& mesh) {
    std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
    for (const auto& f : mesh.faces) {
        const Vec3 c = face_cross(mesh, f);
        for (int idx : f) normals[idx] += c;
    }
    for (auto& n : normals) {
        const double len = n.norm();
        n = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
    }
    return normals;
}

double surface_area(const TriMesh& mesh) {
    double a = 0.0;
    for (const auto& f : mesh.faces) a += 0.5 * face_cross(mesh, f).norm();
    return a;
}

Vec3 mesh_centroid(const TriMesh& mesh) {
    require(!mesh.empty(), "mesh_centroid: empty mesh");
    Vec3 sum = Vec3::Zero();
    double total = 0.0;
    for (const auto& f : mesh.faces) {
        const double a = 0.5 * face_cross(mesh, f).norm();
        sum += a * (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
        total += a;
    }
    return total > 0.0 ? Vec3(sum / total) : Vec3::Zero();
}

long euler_characteristic(const TriMesh& mesh) {
    auto keys = sorted_edge_keys(mesh);
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return static_cast<long>(mesh.vertices.size()) - static_cast<long>(keys.size()) +
           static_cast<long>(mesh.faces.size());
}

PartExtraction extract_part(const TriMesh& mesh, int label) {
    require(mesh.has_labels(), "extract_part: mesh has no part labels");
    PartExtraction out;
    std::vector<char> used(mesh.vertices.size(), 0);
    std::vector<std::array<int, 3>> kept;
    for (const auto& f : mesh.faces) {
        if (mesh.part_labels[f[0]] == label && mesh.part_labels[f[1]] == label && mesh.part_labels[f[2]] == label) {
            kept.push_back(f);
            for (int idx : f) used[idx] = 1;
        }
    }
    std::vector<int> remap(mesh.vertices.size(), -1);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (!used[i]) continue;
        remap[i] = static_cast<int>(out.mesh.vertices.size());
        out.mesh.vertices.push_back(mesh.vertices[i]);
        out.mesh.part_labels.push_back(label);
        if (!mesh.vertex_normals.empty()) out.mesh.vertex_normals.push_back(mesh.vertex_normals[i]);
    }
    for (const auto& f : kept) out.mesh.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
    if (out.mesh.faces.empty()) out.status = Status::warning;
    return out;
}

std::vector<int> distinct_labels(const TriMesh& mesh) {
    std::vector<int> labels = mesh.part_labels;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
}

TriMesh make_icosphere(int levels, double radius, const Vec3& center) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : m.vertices) v.normalize();
    m.faces = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
               {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
    for (int l = 0; l < levels; ++l) {
        std::map<std::uint64_t, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = edge_key(a, b);
            if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
            m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
            const int idx = static_cast<int>(m.vertices.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.faces.size() * 4);
        for (const auto& f : m.faces) {
            const int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        m.faces = std::move(next);
    }
    for (auto& v : m.vertices) v = center + radius * v;
    return m;
}

TriMesh make_box_mesh(const Vec3& lo, const Vec3& hi) {
    TriMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
    m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
               {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed, std::vector<int>* faces) {
    require(!mesh.empty(), "sample_surface: empty mesh");
    std::vector<double> prefix(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        total += 0.5 * face_cross(mesh, mesh.faces[i]).norm();
        prefix[i] = total;
    }
    require(total > 0.0, "sample_surface: mesh has zero area");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec3> out;
    out.reserve(n);
    if (faces) faces->clear();
    for (std::size_t s = 0; s < n; ++s) {
        const double r = unit(rng) * total;
        auto it = std::upper_bound(prefix.begin(), prefix.end(), r);
        const std::size_t fi = std::min<std::size_t>(static_cast<std::size_t>(it - prefix.begin()), prefix.size() - 1);
        const auto& f = mesh.faces[fi];
        const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
        out.push_back((1.0 - r1) * mesh.vertices[f[0]] + r1 * (1.0 - r2) * mesh.vertices[f[1]] +
                      r1 * r2 * mesh.vertices[f[2]]);
        if (faces) faces->push_back(static_cast<int>(fi));
    }
    return out;
}

PointSampleSet sample_constraint_points(const TriMesh& source, std::size_t n_surface, std::size_t n_random,
                                        double jitter_sigma, std::uint64_t seed) {
    require(!source.empty(), "sample_constraint_points: empty mesh");
    require(n_surface + n_random >= 1, "sample_constraint_points: need at least one point");
    require(jitter_sigma >= 0.0, "sample_constraint_points: negative jitter");
    PointSampleSet set;
    if (n_surface > 0) {
        set.points = sample_surface(source, n_surface, seed);
        std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
        std::normal_distribution<double> gauss(0.0, 1.0);
        if (jitter_sigma > 0.0)
            for (auto& p : set.points) p += jitter_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
        set.provenance.assign(n_surface, SampleOrigin::surface_jittered);
    }
    std::mt19937_64 rng(seed + 0x51ED27ull);
    std::uniform_real_distribution<double> box(-1.0, 1.0);
    for (std::size_t i = 0; i < n_random; ++i) {
        const double x = box(rng), y = box(rng), z = box(rng);
        set.points.emplace_back(x, y, z);
        set.provenance.push_back(SampleOrigin::uniform_random);
    }
    return set;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.precision(17);
    for (const auto& v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (std::size_t i = 0; i < mesh.part_labels.size(); ++i) os << "#part " << i + 1 << ' ' << mesh.part_labels[i] << '\n';
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

TriMesh read_obj(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    TriMesh mesh;
    std::vector<std::pair<int, int>> labels;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad vertex");
            mesh.vertices.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ls >> tok) {
                int idx = std::stoi(tok.substr(0, tok.find('/')));
                if (idx < 0) idx = static_cast<int>(mesh.vertices.size()) + idx + 1;
                poly.push_back(idx - 1);
            }
            if (poly.size() < 3) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad face");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
        } else if (tag == "#part") {
            int v, label;
            if (!(ls >> v >> label)) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad #part");
            labels.emplace_back(v - 1, label);
        }
    }
    if (!labels.empty()) {
        mesh.part_labels.assign(mesh.vertices.size(), 0);
        for (auto [v, label] : labels) {
            if (v < 0 || v >= static_cast<int>(mesh.vertices.size())) throw IoError("#part index out of range");
            mesh.part_labels[v] = label;
        }
    }
    try {
        validate_mesh(mesh);
    } catch (const ContractError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return mesh;
}

}  // namespace tetsculpt
