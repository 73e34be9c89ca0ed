#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <variant>

#include <Eigen/Geometry>

#include "tetsculpt/common.hpp"

namespace tetsculpt {

// ---------------------------------------------------------------------------
// Triangle meshes

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;  // counter-clockwise seen from outside
    std::vector<int> part_labels;           // empty, or one per vertex
    std::vector<Vec3> vertex_normals;       // empty, or one per vertex

    bool empty() const { return faces.empty(); }
    bool has_labels() const { return !part_labels.empty(); }
};

/// Checks index ranges and attribute lengths; throws ContractError. Returns the
/// number of faces whose area is below 1e-12.
std::size_t validate_mesh(const TriMesh& mesh);

/// Every undirected edge is shared by exactly two faces.
bool is_watertight(const TriMesh& mesh);

/// Area-weighted average of incident face normals, normalised.
std::vector<Vec3> area_weighted_normals(const TriMesh& mesh);

double surface_area(const TriMesh& mesh);
Vec3 mesh_centroid(const TriMesh& mesh);  // area-weighted surface centroid

/// V - E + F.
long euler_characteristic(const TriMesh& mesh);

/// Sub-mesh of the faces whose three vertices all carry `label`. Vertices are
/// reindexed in ascending original order. Status::warning when nothing matches.
struct PartExtraction {
    TriMesh mesh;
    Status status = Status::ok;
};
PartExtraction extract_part(const TriMesh& mesh, int label);

std::vector<int> distinct_labels(const TriMesh& mesh);

// Unit icosphere subdivided `levels` times (20 * 4^levels faces).
TriMesh make_icosphere(int levels, double radius = 1.0, const Vec3& center = Vec3::Zero());
TriMesh make_box_mesh(const Vec3& lo, const Vec3& hi);

// ---------------------------------------------------------------------------
// Closest-point / signed distance against a mesh

struct ClosestHit {
    double distance = 0.0;
    int face = -1;
    Vec3 point = Vec3::Zero();
};

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed solid angle of triangle (a, b, c) seen from p, divided by 4*pi.
double triangle_winding(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Mesh-backed SDF: exact nearest-triangle distance through an AABB hierarchy
/// (median split, leaf size 4); sign from the generalised winding number with
/// a far-field dipole approximation for distant clusters. Meshes that are not
/// watertight fall back to angle-weighted pseudonormals and report
/// Status::warning.
class MeshSdf {
public:
    explicit MeshSdf(TriMesh mesh);

    double query(const Vec3& p) const;
    std::vector<double> query(std::span<const Vec3> points) const;
    ClosestHit closest(const Vec3& p) const;
    double unsigned_distance(const Vec3& p) const { return closest(p).distance; }
    double winding_number(const Vec3& p) const;

    const TriMesh& mesh() const { return mesh_; }
    Status status() const { return watertight_ ? Status::ok : Status::warning; }
    bool watertight() const { return watertight_; }

private:
    struct Node {
        Eigen::AlignedBox3d box;
        int left = -1, right = -1;  // children; -1 for leaves
        int first = 0, count = 0;   // leaf triangle range into order_
        Vec3 dipole_center = Vec3::Zero();
        Vec3 dipole_normal = Vec3::Zero();  // sum of area-weighted normals
        double dipole_radius = 0.0;
    };

    int build(int first, int count);
    double winding_recursive(int node, const Vec3& p) const;
    double pseudonormal_sign(const Vec3& p, const ClosestHit& hit) const;

    TriMesh mesh_;
    std::vector<Node> nodes_;
    std::vector<int> order_;
    std::vector<Vec3> centroids_;
    bool watertight_ = false;
    // Pseudonormal data, only filled for non-watertight meshes.
    std::vector<Vec3> face_normals_;
    std::vector<Vec3> vertex_pseudo_;
    std::vector<std::array<Vec3, 3>> edge_pseudo_;
};

// ---------------------------------------------------------------------------
// Analytic primitives

struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};
struct Capsule {
    Vec3 a = Vec3::Zero(), b = Vec3::Zero();
    double radius = 1.0;
};
struct Box {
    Vec3 center = Vec3::Zero();
    Vec3 half_extent = Vec3::Ones();
};
struct Ellipsoid {
    Vec3 center = Vec3::Zero();
    Vec3 radii = Vec3::Ones();
};
using Primitive = std::variant<Sphere, Capsule, Box, Ellipsoid>;

/// Union of primitives (minimum of the member distances). Each member carries
/// an integer part label.
struct PrimitiveUnion {
    std::vector<Primitive> parts;
    std::vector<int> labels;

    void add(Primitive p, int label = 0) {
        parts.push_back(std::move(p));
        labels.push_back(label);
    }
};

double analytic_sdf(const Primitive& prim, const Vec3& p);
double analytic_sdf(const PrimitiveUnion& u, const Vec3& p);
std::vector<double> analytic_sdf(const PrimitiveUnion& u, std::span<const Vec3> points);
/// Label of the member with the smallest distance at p.
int nearest_label(const PrimitiveUnion& u, const Vec3& p);

// ---------------------------------------------------------------------------
// Queryable distance source (analytic or mesh-backed).

class SdfSource {
public:
    SdfSource() = default;
    explicit SdfSource(PrimitiveUnion u) : impl_(std::make_shared<const PrimitiveUnion>(std::move(u))) {}
    explicit SdfSource(std::shared_ptr<const MeshSdf> mesh) : impl_(std::move(mesh)) {}

    double query(const Vec3& p) const;
    std::vector<double> query(std::span<const Vec3> points) const;
    bool valid() const { return !std::holds_alternative<std::monostate>(impl_); }
    const MeshSdf* mesh_sdf() const;

private:
    std::variant<std::monostate, std::shared_ptr<const PrimitiveUnion>, std::shared_ptr<const MeshSdf>> impl_;
};

// ---------------------------------------------------------------------------
// Constraint point sets

enum class SampleOrigin : std::uint8_t { surface_jittered, uniform_random };

struct PointSampleSet {
    std::vector<Vec3> points;
    std::vector<SampleOrigin> provenance;
    std::optional<int> part_id;

    std::size_t size() const { return points.size(); }
};

inline constexpr double kDefaultJitterSigma = 0.02;

/// n_surface area-weighted surface samples with isotropic Gaussian jitter, then
/// n_random uniform samples in [-1,1]^3. Deterministic per seed.
PointSampleSet sample_constraint_points(const TriMesh& source, std::size_t n_surface, std::size_t n_random,
                                        double jitter_sigma, std::uint64_t seed);

/// Area-weighted surface samples without jitter; also returns the face index.
std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed,
                                 std::vector<int>* faces = nullptr);

// ---------------------------------------------------------------------------
// Wavefront OBJ. Part labels use "#part <vertex_index> <label>" with 1-based
// vertex indices, like face indices.

void write_obj(const std::filesystem::path& path, const TriMesh& mesh);
TriMesh read_obj(const std::filesystem::path& path);

}  // namespace tetsculpt
