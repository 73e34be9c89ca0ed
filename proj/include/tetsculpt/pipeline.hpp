#pragma once

// Stage orchestration: prior construction, geometry stages (init, coarse,
// refine), the appearance stage, optimisation and geometry metrics.

#include <functional>
#include <map>

#include "tetsculpt/config.hpp"

namespace tetsculpt {

// ---------------------------------------------------------------------------
// Optimiser

class Adam {
public:
    Adam() = default;
    Adam(std::size_t size, const AdamConfig& config);

    void step(std::vector<double>& params, const std::vector<double>& grad);
    long steps() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<double> m_, v_;
    long t_ = 0;
    double beta1_pow_ = 1.0, beta2_pow_ = 1.0;
};

// ---------------------------------------------------------------------------
// Point normalisation into the field domain

struct ScalingTransform {
    Vec3 p_min = Vec3::Zero();
    double s = 1.0;  // largest bbox extent

    Vec3 apply(const Vec3& p) const { return (p - p_min) / s; }
    Vec3 invert(const Vec3& q) const { return p_min + s * q; }
    PointMap point_map() const { return {p_min, Vec3::Constant(1.0 / s)}; }
};

struct NormalizedPoints {
    std::vector<Vec3> points;
    ScalingTransform transform;
};

/// p' = (p - p_min) / s with s the largest extent of the box.
NormalizedPoints normalize_points_uniform(std::span<const Vec3> points, const Eigen::AlignedBox3d& bbox);
/// Per-axis variant: each axis of the box maps to [0,1] on its own.
PointMap per_axis_point_map(const Eigen::AlignedBox3d& bbox);
Eigen::AlignedBox3d bounding_box(std::span<const Vec3> points);

// ---------------------------------------------------------------------------
// Labeled human prior

struct HumanPrior {
    SdfSource sdf;                  // f_0
    TriMesh mesh;                   // labeled surface
    std::map<int, TriMesh> parts;   // one mesh per non-body label
    std::vector<std::pair<int, Vec3>> anchors;  // centroid of each connected part piece
    Vec3 body_center = Vec3::Zero();
};

/// Capsule figure standing along +y in [-1,1]^3: head (kPartFace), hands
/// (kPartHands), feet (kPartFeet), everything else kPartBody.
PrimitiveUnion procedural_figure();
HumanPrior make_prior(const PrimitiveUnion& figure, int resolution);
/// Labeled OBJ prior ("#part" lines); the SDF comes from the mesh.
HumanPrior load_prior(const std::filesystem::path& path);
HumanPrior make_prior(const RunConfig& config);

// ---------------------------------------------------------------------------
// Guidance backends

struct GuidanceBackend {
    GuidanceBackendKind kind = GuidanceBackendKind::none;
    GuidanceConfig config;
    /// Reference with the same shape as `input` for a geometry render.
    std::function<Image(const Camera&, const Image& input)> geometry_reference;
    /// Reference color image for an appearance render.
    std::function<Image(const AppearanceView&)> color_reference;
    /// Fixed cameras; when non-empty they replace sampled cameras.
    std::vector<Camera> cameras;
};

/// Reference renders of a target mesh; color references shade the target
/// material returned by `material` at each visible surface point.
GuidanceBackend mesh_reference_backend(const TriMesh& target, const GuidanceConfig& config,
                                       std::function<Material(const Vec3&)> material = {});
GuidanceBackend reference_set_backend(std::vector<ReferenceView> views, const GuidanceConfig& config);
GuidanceBackend mock_backend(const GuidanceConfig& config);
GuidanceBackend make_backend(const RunConfig& config);

/// Shades the view's visible points with materials from `material` under the
/// view's lights.
Image shade_reference(const AppearanceView& view, const std::function<Material(const Vec3&)>& material);

// ---------------------------------------------------------------------------
// Geometry stages

struct GeometryState {
    FieldParams field;
    TetGrid grid;
    TemplateState templ;
    Adam optimizer;
    long step = 0;      // geometry steps taken after initialisation
    long log_step = 0;  // row counter shared by all geometry stages
    LossLog log{{"sdf_init", "sds", "sdf_global", "sdf_local", "normal_global", "normal_local"}};
    int empty_mesh_warnings = 0;
};

struct InitReport {
    double held_out_error = 0.0;  // mean |f_cur - f_0| on held-out surface samples
    double final_loss = 0.0;
};

struct RefineReport {
    std::size_t tets_before = 0;
    std::size_t tets_after = 0;
    std::size_t selected = 0;
};

/// Fresh state: initialised field, grid and a template equal to the prior.
GeometryState make_geometry_state(const RunConfig& config, const HumanPrior& prior);

/// Fits the field to the prior SDF.
InitReport stage_init(const RunConfig& config, const HumanPrior& prior, GeometryState& state);
/// Coarse stage: downscaled normal+mask guidance with SDF constraints.
void stage_coarse(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                  const GuidanceBackend& backend);
/// Refine stage: one subdivision at the start, then full-resolution normal
/// guidance with SDF and normal constraints.
RefineReport stage_refine(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                          const GuidanceBackend& backend);
/// One geometry step; exposed for fine-grained drivers and tests.
/// `progress` is the fraction of the stage already done (t_max annealing).
void geometry_step(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                   const GuidanceBackend& backend, GuidanceStage stage, double progress = 0.0);

/// Current MT surface of the state's field.
TriMesh extract_mesh(GeometryState& state);

/// Camera for a step: fixed backend cameras cycle, otherwise an orbit sample
/// around the body or (with the configured probability) a labeled part.
Camera step_camera(const RunConfig& config, const HumanPrior& prior, const GuidanceBackend& backend, long step,
                   int size, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Appearance stage

struct AppearanceState {
    FieldParams field;
    TemplateState templ;  // only the appearance members are used
    Adam optimizer;
    PointMap map;
    long step = 0;
    LossLog log{{"sds", "lightness"}};
};

AppearanceState make_appearance_state(const RunConfig& config, const TriMesh& mesh);
void appearance_step(const RunConfig& config, const TriMesh& mesh, AppearanceState& state,
                     const GuidanceBackend& backend, double progress = 0.0);
void stage_appearance(const RunConfig& config, const TriMesh& mesh, AppearanceState& state,
                      const GuidanceBackend& backend);

// ---------------------------------------------------------------------------
// Metrics

struct MeshDistance {
    double chamfer = 0.0;    // mean of the bidirectional nearest-surface distances
    double hausdorff = 0.0;  // max of them
};

MeshDistance mesh_distance(const TriMesh& a, const TriMesh& b, std::size_t samples = 10000, std::uint64_t seed = 0);
/// Mean angle in radians between the normals of faces sharing an edge.
double mean_dihedral_roughness(const TriMesh& mesh);

/// FNV-1a over the raw bytes of the values.
std::uint64_t checksum(std::span<const double> values);
/// Mixes a seed with a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace tetsculpt
