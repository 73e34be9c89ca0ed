#pragma once

// Deformable tetrahedral grid with differentiable marching tetrahedra.
//
// Grid vertices live in [-1,1]^3; the field is queried at (x + 1) / 2.
// Field output 0 is the SDF; outputs 1..3, when present, are squashed into a
// per-axis deformation offset of at most kOffsetBound * cell_size.

#include <functional>

#include "tetsculpt/fieldgrid.hpp"
#include "tetsculpt/sdfkit.hpp"

namespace tetsculpt {

inline constexpr double kOffsetBound = 0.45;
inline constexpr double kZeroNudge = 1e-10;
inline constexpr double kSubdivisionThreshold = 0.2;

struct TetGrid {
    int resolution = 0;        // vertices per axis of the initial lattice
    double cell_size = 0.0;    // edge length of the finest cells; bounds the offsets
    std::vector<Vec3> vertices;  // undeformed positions
    std::vector<std::array<int, 4>> tets;
    std::vector<double> sdf;     // cached per-vertex SDF (empty until evaluated)
    std::vector<Vec3> offsets;   // per-vertex deformation
    std::vector<int> hanging_vertices;  // midpoints lying on edges of unsplit tets

    bool sdf_cached() const { return sdf.size() == vertices.size() && !vertices.empty(); }
    Vec3 deformed(int i) const { return offsets.empty() ? vertices[i] : Vec3(vertices[i] + offsets[i]); }
    double max_offset() const { return kOffsetBound * cell_size; }
};

/// Regular lattice of `resolution` vertices per axis over [-1,1]^3, each cube
/// split into 6 tetrahedra around its main diagonal.
TetGrid grid_init(int resolution);

double tet_signed_volume(const TetGrid& grid, const std::array<int, 4>& tet, bool deformed = false);

inline Vec3 grid_to_field(const Vec3& x) { return 0.5 * (x + Vec3::Ones()); }

/// Fills sdf (and offsets, when the field has >= 4 outputs and use_offsets is
/// set) from the field. Throws NumericError on non-finite outputs.
void evaluate_grid(TetGrid& grid, const FieldParams& field, bool use_offsets = true);

/// Fills sdf from an arbitrary distance function; offsets are zeroed.
void assign_sdf(TetGrid& grid, const std::function<double(const Vec3&)>& sdf);

// Marching tetrahedra

struct MtProvenance {
    std::vector<std::array<int, 2>> edges;  // grid vertex pair per mesh vertex
    std::vector<double> weights;            // t = s_i / (s_i - s_j)
};

struct MtResult {
    TriMesh mesh;
    MtProvenance provenance;
};

/// Triangle list for one sign pattern. Bit k of `pattern` is set when tet
/// vertex k is positive. Triangles are given as local edge indices into
/// kTetEdges, oriented so normals point toward the positive side for a
/// positively oriented tet.
struct MtCase {
    int triangle_count = 0;
    std::array<std::array<int, 3>, 2> triangles{};
};
inline constexpr std::array<std::array<int, 2>, 6> kTetEdges{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
const std::array<MtCase, 16>& mt_case_table();

MtResult marching_tetrahedra(const TetGrid& grid);

struct MtGradient {
    std::vector<double> sdf;     // per grid vertex
    std::vector<Vec3> offsets;   // per grid vertex
    Status status = Status::ok;  // warning if a denominator had to be clamped
};

/// Chain rule through v = (1 - t) p_i + t p_j, t = s_i / (s_i - s_j).
MtGradient mt_backward(const TetGrid& grid, const MtProvenance& provenance, std::span<const Vec3> vertex_gradients);

/// Pushes an MtGradient through evaluate_grid into field parameter gradients.
void evaluate_grid_backward(const TetGrid& grid, const FieldParams& field, const MtGradient& grad,
                            std::vector<double>& param_grad, bool use_offsets = true);

// Subdivision

enum class SelectionMode { absolute_mean, signed_mean };

struct SubdivisionResult {
    TetGrid grid;
    std::size_t selected = 0;  // parent tets that were split 1:8
};

/// Splits every tet whose mean vertex SDF (absolute by default) is below
/// `threshold` into 8 children through shared edge midpoints. Retained
/// vertices keep their cached SDF; midpoints get the provisional mean of their
/// edge endpoints until the grid is re-evaluated from the field.
SubdivisionResult subdivide_near_surface(const TetGrid& grid, double threshold = kSubdivisionThreshold,
                                         SelectionMode mode = SelectionMode::absolute_mean);

}  // namespace tetsculpt
