#include <filesystem>
#include <fstream>
#include <set>

#include "support.hpp"
#include "tetsculpt/sdfkit.hpp"

using namespace tetsculpt;

namespace {

// Closest point on a triangle by projecting onto the plane and, if outside,
// taking the best of the three edge segments.
Vec3 naive_closest(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 n = (b - a).cross(c - a);
    const Vec3 q = p - n * (p - a).dot(n) / n.squaredNorm();
    const bool inside = (b - a).cross(q - a).dot(n) >= 0 && (c - b).cross(q - b).dot(n) >= 0 &&
                        (a - c).cross(q - c).dot(n) >= 0;
    if (inside) return q;
    auto seg = [&](const Vec3& u, const Vec3& v) {
        const double t = std::clamp((p - u).dot(v - u) / (v - u).squaredNorm(), 0.0, 1.0);
        return Vec3(u + t * (v - u));
    };
    Vec3 best = seg(a, b);
    for (const Vec3& cand : {seg(b, c), seg(c, a)})
        if ((cand - p).squaredNorm() < (best - p).squaredNorm()) best = cand;
    return best;
}

// Parity of crossings along a fixed skewed ray.
bool ray_parity_inside(const TriMesh& m, const Vec3& p) {
    const Vec3 d = Vec3(0.5377, 0.3919, 0.7466).normalized();
    int hits = 0;
    for (const auto& f : m.faces) {
        const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &c = m.vertices[f[2]];
        const Vec3 e1 = b - a, e2 = c - a, pv = d.cross(e2);
        const double det = e1.dot(pv);
        if (std::abs(det) < 1e-14) continue;
        const Vec3 tv = p - a;
        const double u = tv.dot(pv) / det;
        if (u < 0 || u > 1) continue;
        const Vec3 qv = tv.cross(e1);
        const double v = d.dot(qv) / det;
        if (v < 0 || u + v > 1) continue;
        if (e2.dot(qv) / det > 0) ++hits;
    }
    return hits % 2 == 1;
}

double brute_force_sdf(const TriMesh& m, const Vec3& p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : m.faces)
        best = std::min(best, (naive_closest(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]) - p).norm());
    return ray_parity_inside(m, p) ? -best : best;
}

TriMesh two_spheres() {
    TriMesh a = make_icosphere(1, 0.3, Vec3(-0.5, 0, 0));
    TriMesh b = make_icosphere(2, 0.3, Vec3(0.5, 0, 0));
    a.part_labels.assign(a.vertices.size(), 0);
    const int offset = static_cast<int>(a.vertices.size());
    for (const auto& v : b.vertices) {
        a.vertices.push_back(v);
        a.part_labels.push_back(1);
    }
    for (auto f : b.faces) a.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
    return a;
}

}  // namespace

TEST_CASE("icosphere and box meshes are closed and outward") {
    const TriMesh s = make_icosphere(2);
    CHECK(s.faces.size() == 320);
    CHECK(is_watertight(s));
    CHECK(euler_characteristic(s) == 2);
    const TriMesh b = make_box_mesh(Vec3(-1, -1, -1), Vec3(1, 1, 1));
    CHECK(is_watertight(b));
    CHECK(euler_characteristic(b) == 2);
    for (const TriMesh* m : {&s, &b}) {
        for (const auto& f : m->faces) {
            const Vec3 c = (m->vertices[f[0]] + m->vertices[f[1]] + m->vertices[f[2]]) / 3.0;
            const Vec3 n = (m->vertices[f[1]] - m->vertices[f[0]]).cross(m->vertices[f[2]] - m->vertices[f[0]]);
            CHECK(n.dot(c) > 0.0);
        }
    }
    CHECK(surface_area(b) == doctest::Approx(24.0));
}

TEST_CASE("mesh validation rejects bad indices") {
    TriMesh m = make_icosphere(0);
    m.faces[0][1] = 1000;
    CHECK_THROWS_AS(validate_mesh(m), ContractError);
    TriMesh d = make_icosphere(0);
    d.faces.push_back({0, 0, 1});
    CHECK(validate_mesh(d) == 1);
}

TEST_CASE("cube distance along an axis") {
    const MeshSdf sdf(make_box_mesh(Vec3(-1, -1, -1), Vec3(1, 1, 1)));
    CHECK(sdf.query(Vec3(2, 0, 0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sdf.query(Vec3(0, 0, 0)) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(sdf.query(Vec3(0.5, 0.2, -0.1)) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(sdf.status() == Status::ok);
}

TEST_CASE("points on vertices have zero distance") {
    const TriMesh s = make_icosphere(2, 0.7);
    const MeshSdf sdf(s);
    for (std::size_t i = 0; i < s.vertices.size(); i += 7) CHECK(std::abs(sdf.query(s.vertices[i])) < 1e-9);
}

TEST_CASE("mesh SDF matches the brute-force oracle") {
    const TriMesh s = make_icosphere(2, 0.8, Vec3(0.05, -0.1, 0.02));
    const MeshSdf sdf(s);
    std::mt19937_64 rng(42);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p = testing_support::random_in_box(rng, -1.2, 1.2);
        worst = std::max(worst, std::abs(sdf.query(p) - brute_force_sdf(s, p)));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("winding-number sign agrees with ray parity on a nonconvex mesh") {
    // Two overlapping-free boxes joined into one non-convex solid by an L shape.
    TriMesh l = make_box_mesh(Vec3(-0.8, -0.8, -0.3), Vec3(0.0, 0.8, 0.3));
    const TriMesh arm = make_box_mesh(Vec3(0.2, -0.8, -0.3), Vec3(0.8, -0.2, 0.3));
    const int off = static_cast<int>(l.vertices.size());
    for (const auto& v : arm.vertices) l.vertices.push_back(v);
    for (auto f : arm.faces) l.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
    const MeshSdf sdf(l);
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; ++i) {
        const Vec3 p = testing_support::random_in_box(rng, -1.0, 1.0);
        CHECK((sdf.query(p) < 0.0) == ray_parity_inside(l, p));
    }
}

TEST_CASE("open meshes warn and fall back to pseudonormals") {
    TriMesh open = make_box_mesh(Vec3(-1, -1, -1), Vec3(1, 1, 1));
    open.faces.erase(open.faces.begin(), open.faces.begin() + 2);  // drop the z = -1 side
    const MeshSdf sdf(open);
    CHECK(sdf.status() == Status::warning);
    CHECK(sdf.query(Vec3(0, 0, 2)) == doctest::Approx(1.0));
    CHECK(sdf.query(Vec3(0, 0, 0.5)) == doctest::Approx(-0.5));
    CHECK(sdf.query(Vec3(1.5, 1.5, 0)) > 0.0);
}

TEST_CASE("analytic primitives") {
    CHECK(analytic_sdf(Sphere{Vec3::Zero(), 0.5}, Vec3(1, 0, 0)) == doctest::Approx(0.5));
    CHECK(analytic_sdf(Capsule{Vec3(0, -0.5, 0), Vec3(0, 0.5, 0), 0.2}, Vec3(0, 0, 0)) == doctest::Approx(-0.2));
    CHECK(analytic_sdf(Box{Vec3::Zero(), Vec3(1, 2, 3)}, Vec3(2, 0, 0)) == doctest::Approx(1.0));
    CHECK(analytic_sdf(Box{Vec3::Zero(), Vec3(1, 1, 1)}, Vec3(2, 2, 1)) == doctest::Approx(std::sqrt(2.0)));

    PrimitiveUnion u;
    u.add(Sphere{Vec3(0.3, 0, 0), 0.4}, 1);
    u.add(Box{Vec3(-0.4, 0.1, 0), Vec3(0.2, 0.3, 0.25)}, 2);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const Vec3 p = testing_support::random_in_box(rng, -1, 1);
        const double a = analytic_sdf(u.parts[0], p), b = analytic_sdf(u.parts[1], p);
        CHECK(analytic_sdf(u, p) == std::min(a, b));
        CHECK(nearest_label(u, p) == (a <= b ? 1 : 2));
    }
}

TEST_CASE("ellipsoid distance matches dense surface sampling") {
    const Ellipsoid e{Vec3(0.1, -0.2, 0.05), Vec3(0.6, 0.3, 0.45)};
    // Dense parametric samples of the surface.
    std::vector<Vec3> surf;
    const int n = 400;
    for (int i = 0; i <= n; ++i) {
        const double th = M_PI * i / n;
        for (int j = 0; j < 2 * n; ++j) {
            const double ph = M_PI * j / n;
            surf.emplace_back(e.center + Vec3(e.radii.x() * std::sin(th) * std::cos(ph),
                                              e.radii.y() * std::sin(th) * std::sin(ph), e.radii.z() * std::cos(th)));
        }
    }
    std::mt19937_64 rng(3);
    for (int k = 0; k < 30; ++k) {
        const Vec3 p = testing_support::random_in_box(rng, -1, 1);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : surf) best = std::min(best, (s - p).norm());
        const double d = analytic_sdf(e, p);
        const bool inside = ((p - e.center).array() / e.radii.array()).square().sum() < 1.0;
        CHECK((d < 0.0) == inside);
        CHECK(std::abs(std::abs(d) - best) < 5e-3);
        CHECK(std::abs(d) <= best + 1e-9);
    }
    // Degenerate to a sphere.
    const Ellipsoid round{Vec3::Zero(), Vec3(0.5, 0.5, 0.5)};
    CHECK(analytic_sdf(round, Vec3(0.3, 0.4, 0.6)) == doctest::Approx(std::sqrt(0.61) - 0.5));
}

TEST_CASE("sdf source dispatch") {
    PrimitiveUnion u;
    u.add(Sphere{Vec3::Zero(), 0.5});
    const SdfSource a(u);
    CHECK(a.valid());
    CHECK(a.query(Vec3(1, 0, 0)) == doctest::Approx(0.5));
    const SdfSource b(std::make_shared<const MeshSdf>(make_box_mesh(Vec3(-1, -1, -1), Vec3(1, 1, 1))));
    CHECK(b.mesh_sdf() != nullptr);
    CHECK(b.query(Vec3(2, 0, 0)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(SdfSource().query(Vec3::Zero()), ContractError);
}

TEST_CASE("uniform random constraint points stay in the box") {
    const auto set = sample_constraint_points(make_icosphere(1), 0, 100, 0.02, 3);
    CHECK(set.size() == 100);
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(set.points[i].cwiseAbs().maxCoeff() <= 1.0);
        CHECK(set.provenance[i] == SampleOrigin::uniform_random);
    }
}

TEST_CASE("unjittered surface samples lie on the sphere") {
    const TriMesh s = make_icosphere(3);
    // Largest deviation of a flat triangle from the unit sphere.
    double sag = 0.0;
    for (const auto& f : s.faces) {
        const Vec3 c = (s.vertices[f[0]] + s.vertices[f[1]] + s.vertices[f[2]]) / 3.0;
        sag = std::max(sag, 1.0 - c.norm());
    }
    const auto set = sample_constraint_points(s, 1000, 0, 0.0, 9);
    for (const auto& p : set.points) {
        CHECK(p.norm() <= 1.0 + 1e-12);
        CHECK(p.norm() >= 1.0 - sag - 1e-12);
    }
}

TEST_CASE("jitter has the requested spread") {
    const auto set = sample_constraint_points(make_icosphere(4), 10000, 0, 0.05, 11);
    double sum = 0.0, sum2 = 0.0;
    for (const auto& p : set.points) {
        const double r = p.norm() - 1.0;
        sum += r;
        sum2 += r * r;
    }
    const double n = static_cast<double>(set.size());
    const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    CHECK(std::abs(sd - 0.05) < 0.2 * 0.05);
}

TEST_CASE("sampling is deterministic and rejects empty meshes") {
    const TriMesh s = make_icosphere(1);
    const auto a = sample_constraint_points(s, 50, 50, 0.02, 4);
    const auto b = sample_constraint_points(s, 50, 50, 0.02, 4);
    CHECK(a.points == b.points);
    CHECK_THROWS_AS(sample_constraint_points(TriMesh{}, 10, 0, 0.02, 1), ContractError);
}

TEST_CASE("part extraction") {
    TriMesh s = make_icosphere(1);
    s.part_labels.assign(s.vertices.size(), 0);
    const auto all = extract_part(s, 0);
    CHECK(all.status == Status::ok);
    CHECK(all.mesh.faces == s.faces);

    const TriMesh two = two_spheres();
    const auto second = extract_part(two, 1);
    CHECK(second.mesh.faces.size() == 320);
    CHECK(is_watertight(second.mesh));

    const auto missing = extract_part(two, 9);
    CHECK(missing.status == Status::warning);
    CHECK(missing.mesh.empty());
}

TEST_CASE("part extraction partitions a labelled mesh") {
    TriMesh s = make_icosphere(3);
    s.part_labels.resize(s.vertices.size());
    for (std::size_t i = 0; i < s.vertices.size(); ++i) s.part_labels[i] = s.vertices[i].y() > 0.3 ? 1 : 0;
    std::size_t total = 0, mixed = 0;
    for (const auto& f : s.faces)
        if (s.part_labels[f[0]] != s.part_labels[f[1]] || s.part_labels[f[1]] != s.part_labels[f[2]]) ++mixed;
    for (int label : distinct_labels(s)) total += extract_part(s, label).mesh.faces.size();
    CHECK(total + mixed == s.faces.size());
}

TEST_CASE("OBJ round trip keeps labels") {
    const TriMesh m = two_spheres();
    const auto path = std::filesystem::temp_directory_path() / "tetsculpt_roundtrip.obj";
    write_obj(path, m);
    const TriMesh r = read_obj(path);
    CHECK(r.faces == m.faces);
    CHECK(r.part_labels == m.part_labels);
    REQUIRE(r.vertices.size() == m.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(r.vertices[i] == m.vertices[i]);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_obj(path), IoError);
}
