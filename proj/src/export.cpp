#include "tetsculpt/export.hpp"

#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace tetsculpt {

namespace {

// Texel-space position (x right, y down) of an OBJ uv.
Vec2 to_texel(const UvAtlas& atlas, const Vec2& uv) {
    return {uv.x() * atlas.texture_size, (1.0 - uv.y()) * atlas.texture_size};
}

Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b, double& t) {
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return a + t * ab;
}

// Barycentrics of the point of triangle (a,b,c) closest to p.
Vec3 closest_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c, double& dist) {
    const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(area) > 1e-12) {
        const double l1 = ((p - a).x() * (c - a).y() - (p - a).y() * (c - a).x()) / area;
        const double l2 = ((b - a).x() * (p - a).y() - (b - a).y() * (p - a).x()) / area;
        if (l1 >= 0.0 && l2 >= 0.0 && l1 + l2 <= 1.0) {
            dist = 0.0;
            return {1.0 - l1 - l2, l1, l2};
        }
    }
    const std::array<std::pair<int, int>, 3> edges{{{0, 1}, {1, 2}, {2, 0}}};
    const std::array<const Vec2*, 3> v{&a, &b, &c};
    dist = std::numeric_limits<double>::infinity();
    Vec3 best(1.0, 0.0, 0.0);
    for (const auto& [i, j] : edges) {
        double t = 0.0;
        const double d = (closest_on_segment(p, *v[i], *v[j], t) - p).norm();
        if (d < dist) {
            dist = d;
            best = Vec3::Zero();
            best[i] = 1.0 - t;
            best[j] = t;
        }
    }
    return best;
}

using Tri2 = std::array<Vec2, 3>;

// True when the interiors of two projected triangles overlap; shared edges
// and vertices do not count.
bool interiors_overlap(const Tri2& a, const Tri2& b, double tol) {
    for (const Tri2* t : {&a, &b}) {
        for (int e = 0; e < 3; ++e) {
            const Vec2 d = (*t)[(e + 1) % 3] - (*t)[e];
            const double len = d.norm();
            if (len <= tol) continue;
            const Vec2 n(-d.y() / len, d.x() / len);
            double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
            for (int k = 0; k < 3; ++k) {
                amin = std::min(amin, n.dot(a[k]));
                amax = std::max(amax, n.dot(a[k]));
                bmin = std::min(bmin, n.dot(b[k]));
                bmax = std::max(bmax, n.dot(b[k]));
            }
            if (amax <= bmin + tol || bmax <= amin + tol) return false;
        }
    }
    return true;
}

int face_direction(const TriMesh& mesh, std::size_t f) {
    const auto& t = mesh.faces[f];
    const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    Eigen::Index axis = 0;
    n.cwiseAbs().maxCoeff(&axis);
    return 2 * static_cast<int>(axis) + (n[axis] < 0.0 ? 1 : 0);
}

Tri2 project(const TriMesh& mesh, std::size_t f, int direction) {
    const int axis = direction / 2;
    const int u = axis == 0 ? 1 : 0, v = axis == 2 ? 1 : 2;
    const double flip = direction % 2 ? -1.0 : 1.0;  // keeps charts unmirrored
    Tri2 out;
    for (int k = 0; k < 3; ++k) {
        const Vec3& p = mesh.vertices[mesh.faces[f][k]];
        out[k] = Vec2(flip * p[u], p[v]);
    }
    return out;
}

struct Chart {
    int direction = 0;
    std::vector<std::size_t> faces;
    Vec2 lo = Vec2::Constant(1e300), hi = Vec2::Constant(-1e300);
};

std::vector<Chart> grow_charts(const TriMesh& mesh, std::vector<int>& face_chart) {
    const std::size_t F = mesh.faces.size();
    std::map<std::pair<int, int>, std::vector<std::size_t>> edge_faces;
    for (std::size_t f = 0; f < F; ++f)
        for (int k = 0; k < 3; ++k) {
            int a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
            edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
        }
    std::vector<int> dir(F);
    std::vector<Tri2> proj(F);
    double edge_sum = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
        dir[f] = face_direction(mesh, f);
        proj[f] = project(mesh, f, dir[f]);
        edge_sum += (proj[f][1] - proj[f][0]).norm();
    }
    const double cell = std::max(edge_sum / static_cast<double>(F), 1e-9);
    const double tol = 1e-9 * cell;

    face_chart.assign(F, -1);
    std::vector<Chart> charts;
    for (std::size_t seed = 0; seed < F; ++seed) {
        if (face_chart[seed] >= 0) continue;
        Chart chart;
        chart.direction = dir[seed];
        const int id = static_cast<int>(charts.size());
        std::map<std::pair<long, long>, std::vector<std::size_t>> buckets;
        auto cells_of = [&](const Tri2& t, auto&& fn) {
            const Vec2 lo = t[0].cwiseMin(t[1]).cwiseMin(t[2]), hi = t[0].cwiseMax(t[1]).cwiseMax(t[2]);
            for (long x = static_cast<long>(std::floor(lo.x() / cell)); x <= static_cast<long>(std::floor(hi.x() / cell)); ++x)
                for (long y = static_cast<long>(std::floor(lo.y() / cell));
                     y <= static_cast<long>(std::floor(hi.y() / cell)); ++y)
                    fn(std::pair<long, long>(x, y));
        };
        auto fits = [&](std::size_t f) {
            bool ok = true;
            cells_of(proj[f], [&](const std::pair<long, long>& key) {
                if (!ok) return;
                auto it = buckets.find(key);
                if (it == buckets.end()) return;
                for (std::size_t g : it->second)
                    if (interiors_overlap(proj[f], proj[g], tol)) {
                        ok = false;
                        return;
                    }
            });
            return ok;
        };
        auto add = [&](std::size_t f) {
            face_chart[f] = id;
            chart.faces.push_back(f);
            cells_of(proj[f], [&](const std::pair<long, long>& key) { buckets[key].push_back(f); });
            for (const Vec2& p : proj[f]) {
                chart.lo = chart.lo.cwiseMin(p);
                chart.hi = chart.hi.cwiseMax(p);
            }
        };
        add(seed);
        for (std::size_t head = 0; head < chart.faces.size(); ++head) {
            const std::size_t f = chart.faces[head];
            for (int k = 0; k < 3; ++k) {
                int a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
                for (std::size_t g : edge_faces[{std::min(a, b), std::max(a, b)}])
                    if (face_chart[g] < 0 && dir[g] == chart.direction && fits(g)) add(g);
            }
        }
        charts.push_back(std::move(chart));
    }
    return charts;
}

struct Placement {
    std::vector<Vec2> origin;  // texel position of each chart's lo corner
    bool fits = false;
};

// Shelf packing, tallest charts first.
Placement pack(const std::vector<Chart>& charts, const std::vector<std::size_t>& order, double density, int size,
               int padding) {
    Placement out;
    out.origin.resize(charts.size());
    double x = 0.0, y = 0.0, row = 0.0;
    for (std::size_t i : order) {
        const Vec2 ext = (charts[i].hi - charts[i].lo) * density;
        const double w = std::ceil(ext.x()) + 1.0 + 2.0 * padding, h = std::ceil(ext.y()) + 1.0 + 2.0 * padding;
        if (w > size) return out;
        if (x + w > size) {
            y += row;
            x = 0.0;
            row = 0.0;
        }
        if (y + h > size) return out;
        out.origin[i] = Vec2(x + padding + 0.5, y + padding + 0.5);
        x += w;
        row = std::max(row, h);
    }
    out.fits = true;
    return out;
}

}  // namespace

UvAtlas build_box_atlas(const TriMesh& mesh, int texture_size, int padding) {
    require(!mesh.faces.empty(), "atlas needs a non-empty mesh");
    require(texture_size > 0 && padding >= 0, "bad atlas size");
    UvAtlas atlas;
    atlas.texture_size = texture_size;
    atlas.padding = padding;
    const std::vector<Chart> charts = grow_charts(mesh, atlas.face_chart);
    atlas.charts = static_cast<int>(charts.size());

    std::vector<std::size_t> order(charts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return charts[a].hi.y() - charts[a].lo.y() > charts[b].hi.y() - charts[b].lo.y();
    });
    double largest = 0.0;
    for (const Chart& c : charts) largest = std::max(largest, (c.hi - c.lo).maxCoeff());
    double lo = 0.0, hi = largest > 0.0 ? texture_size / largest : 1.0;
    Placement best = pack(charts, order, lo, texture_size, padding);
    if (!best.fits)
        throw ContractError("texture of " + std::to_string(texture_size) + " texels cannot hold " +
                            std::to_string(charts.size()) + " charts");
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        Placement p = pack(charts, order, mid, texture_size, padding);
        if (p.fits) {
            lo = mid;
            best = std::move(p);
        } else {
            hi = mid;
        }
    }
    atlas.texels_per_unit = lo;

    atlas.uv.resize(3 * mesh.faces.size());
    for (std::size_t c = 0; c < charts.size(); ++c)
        for (std::size_t f : charts[c].faces) {
            const Tri2 t = project(mesh, f, charts[c].direction);
            for (int k = 0; k < 3; ++k) {
                const Vec2 px = best.origin[c] + lo * (t[k] - charts[c].lo);
                atlas.uv[3 * f + k] = Vec2(px.x() / texture_size, 1.0 - px.y() / texture_size);
            }
        }
    return atlas;
}

TextureSet bake_textures(const TriMesh& mesh, const UvAtlas& atlas, const FieldParams& field, const PointMap& map) {
    require(atlas.uv.size() == 3 * mesh.faces.size(), "atlas does not match the mesh");
    require(field.config.output_dim >= 5, "appearance field needs at least 5 outputs");
    const int S = atlas.texture_size;
    TextureSet tex{Image(S, S, 3), Image(S, S, 3), Image(S, S, 3), Image(S, S, 1)};

    // Each texel takes the closest face within the padding distance.
    const std::size_t N = static_cast<std::size_t>(S) * S;
    std::vector<double> best(N, std::numeric_limits<double>::infinity());
    std::vector<Vec3> point(N);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        const Vec2 a = to_texel(atlas, atlas.uv[3 * f]), b = to_texel(atlas, atlas.uv[3 * f + 1]),
                   c = to_texel(atlas, atlas.uv[3 * f + 2]);
        const Vec2 lo = a.cwiseMin(b).cwiseMin(c).array() - atlas.padding, hi = a.cwiseMax(b).cwiseMax(c).array() + atlas.padding;
        const int x0 = std::max(0, static_cast<int>(std::floor(lo.x()))), y0 = std::max(0, static_cast<int>(std::floor(lo.y())));
        const int x1 = std::min(S - 1, static_cast<int>(std::ceil(hi.x()))), y1 = std::min(S - 1, static_cast<int>(std::ceil(hi.y())));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dist = 0.0;
                const Vec3 w = closest_barycentric(Vec2(x + 0.5, y + 0.5), a, b, c, dist);
                const std::size_t i = static_cast<std::size_t>(y) * S + x;
                if (dist > atlas.padding || dist >= best[i]) continue;
                best[i] = dist;
                point[i] = w[0] * mesh.vertices[t[0]] + w[1] * mesh.vertices[t[1]] + w[2] * mesh.vertices[t[2]];
            }
    }
    std::vector<std::size_t> texels;
    std::vector<Vec3> queries;
    for (std::size_t i = 0; i < N; ++i)
        if (std::isfinite(best[i])) {
            texels.push_back(i);
            queries.push_back(map(point[i]));
        }
    const auto raw = field_eval(field, queries);
    const std::size_t D = field.config.output_dim;
    for (std::size_t i = 0; i < texels.size(); ++i) {
        const Material m = decode_material(std::span<const double>(raw.data() + i * D, D));
        const std::size_t p = texels[i];
        for (int c = 0; c < 3; ++c) {
            tex.albedo.pixels[3 * p + c] = m.albedo[c];
            tex.normal.pixels[3 * p + c] = m.normal_ts[c] * 0.5 + 0.5;
        }
        tex.rm.pixels[3 * p] = m.roughness;
        tex.rm.pixels[3 * p + 1] = m.metalness;
        tex.coverage.pixels[p] = 1.0;
    }
    return tex;
}

std::vector<double> sample_bilinear(const Image& img, const Vec2& uv) {
    const double x = uv.x() * img.width - 0.5, y = (1.0 - uv.y()) * img.height - 0.5;
    const int xi = static_cast<int>(std::floor(x)), yi = static_cast<int>(std::floor(y));
    const double fx = x - xi, fy = y - yi;
    auto px = [&](int xx, int yy, int c) {
        return img.at(std::clamp(xx, 0, img.width - 1), std::clamp(yy, 0, img.height - 1), c);
    };
    std::vector<double> out(img.channels);
    for (int c = 0; c < img.channels; ++c)
        out[c] = (1 - fx) * (1 - fy) * px(xi, yi, c) + fx * (1 - fy) * px(xi + 1, yi, c) +
                 (1 - fx) * fy * px(xi, yi + 1, c) + fx * fy * px(xi + 1, yi + 1, c);
    return out;
}

void write_textured_obj(const std::filesystem::path& path, const TriMesh& mesh, const UvAtlas& atlas,
                        const std::string& mtl_file, const std::string& material) {
    require(atlas.uv.size() == 3 * mesh.faces.size(), "atlas does not match the mesh");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.precision(17);
    os << "mtllib " << mtl_file << '\n';
    for (const auto& v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : atlas.uv) os << "vt " << t.x() << ' ' << t.y() << '\n';
    os << "usemtl " << material << '\n';
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        os << 'f';
        for (int k = 0; k < 3; ++k) os << ' ' << mesh.faces[f][k] + 1 << '/' << 3 * f + k + 1;
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<Vec2> read_obj_corner_uvs(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    std::vector<Vec2> table, corners;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "vt") {
            double u = 0.0, v = 0.0;
            if (!(ls >> u >> v)) throw IoError(path.string() + ": bad vt line");
            table.emplace_back(u, v);
        } else if (tag == "f") {
            std::string tok;
            while (ls >> tok) {
                const auto slash = tok.find('/');
                if (slash == std::string::npos) throw IoError(path.string() + ": face without texture index");
                const long idx = std::stol(tok.substr(slash + 1));
                if (idx < 1 || static_cast<std::size_t>(idx) > table.size())
                    throw IoError(path.string() + ": texture index out of range");
                corners.push_back(table[static_cast<std::size_t>(idx - 1)]);
            }
        }
    }
    return corners;
}

void export_assets(const std::filesystem::path& dir, const TriMesh& mesh, const FieldParams& field,
                   const PointMap& map, int texture_size) {
    std::filesystem::create_directories(dir);
    const UvAtlas atlas = build_box_atlas(mesh, texture_size);
    const TextureSet tex = bake_textures(mesh, atlas, field, map);
    write_textured_obj(dir / "mesh.obj", mesh, atlas, "material.mtl", "avatar");
    {
        std::ofstream os(dir / "material.mtl");
        if (!os) throw IoError("cannot open for writing: " + (dir / "material.mtl").string());
        os << "newmtl avatar\n"
              "Kd 1 1 1\n"
              "map_Kd albedo.png\n"
              "map_Pr rm.png\n"
              "map_Pm rm.png\n"
              "norm normal.png\n";
        if (!os) throw IoError("write failed: " + (dir / "material.mtl").string());
    }
    write_png(dir / "albedo.png", tex.albedo, false);
    write_png(dir / "rm.png", tex.rm, false);
    write_png(dir / "normal.png", tex.normal, false);
    write_timg(dir / "albedo.timg", tex.albedo);
    write_timg(dir / "rm.timg", tex.rm);
    write_timg(dir / "normal.timg", tex.normal);
}

// ---------------------------------------------------------------------------
// Run directories

void write_config_lock(const std::filesystem::path& dir, const RunConfig& config) {
    const auto path = dir / "config.lock";
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << serialize_config(config);
    if (!os) throw IoError("write failed: " + path.string());
}

GeometryRun run_geometry(const RunConfig& config, const std::filesystem::path& dir) {
    const HumanPrior prior = make_prior(config);
    const GuidanceBackend backend = make_backend(config);
    RunConfig resolved = config;
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        resolved.output_dir = dir.string();
        write_config_lock(dir, resolved);
    }
    GeometryRun run{make_geometry_state(resolved, prior), {}, {}, {}};
    run.init = stage_init(resolved, prior, run.state);
    stage_coarse(resolved, prior, run.state, backend);
    run.refine = stage_refine(resolved, prior, run.state, backend);
    run.mesh = extract_mesh(run.state);
    if (!dir.empty()) {
        write_obj(dir / "geometry.obj", run.mesh);
        save_field(dir / "geometry.tfld", run.state.field);
        run.state.log.write_csv(dir / "losses.csv");
    }
    return run;
}

AppearanceState run_appearance(const RunConfig& config, const TriMesh& mesh, const std::filesystem::path& dir) {
    const GuidanceBackend backend = make_backend(config);
    RunConfig resolved = config;
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        resolved.output_dir = dir.string();
        write_config_lock(dir, resolved);
    }
    AppearanceState state = make_appearance_state(resolved, mesh);
    stage_appearance(resolved, mesh, state, backend);
    if (!dir.empty()) {
        write_obj(dir / "appearance_mesh.obj", mesh);
        save_field(dir / "appearance.tfld", state.field);
        state.log.write_csv(dir / "appearance_losses.csv");
    }
    return state;
}

void export_run(const std::filesystem::path& dir) {
    const RunConfig config = load_config(dir / "config.lock");
    const TriMesh mesh = read_obj(dir / "appearance_mesh.obj");
    const FieldParams field = load_field(dir / "appearance.tfld");
    const PointMap map = normalize_points_uniform({}, bounding_box(mesh.vertices)).transform.point_map();
    export_assets(dir, mesh, field, map, config.render.texture_size);
}

}  // namespace tetsculpt
