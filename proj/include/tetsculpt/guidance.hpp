#pragma once

// Image-space guidance signals and the backward chains that carry them to
// field parameters.
//
// A guidance backend maps a rendered input image to a per-pixel gradient of
// the same shape. Two backends are provided: a reference image (gradient of
// a squared distance) and a mock score built from a blur denoiser with
// injected Gaussian noise.

#include <filesystem>

#include "tetsculpt/dmtet.hpp"
#include "tetsculpt/render.hpp"

namespace tetsculpt {

enum class GuidanceStage { coarse_normal, refine_normal, color };
enum class Weighting { constant, one_minus_t_squared };

struct GuidanceConfig {
    GuidanceStage stage = GuidanceStage::refine_normal;
    double t_min = 0.02;
    double t_max = 0.98;
    Weighting weighting = Weighting::constant;
    double strength = 1.0;
    bool anneal_t_max = false;  // linear decay of t_max towards anneal_t_max_end
    double anneal_t_max_end = 0.5;
    double blur_radius = 1.0;   // mock denoiser Gaussian sigma in pixels

    void validate() const;  // throws ConfigError
    double weight(double t) const;
    /// Effective upper bound at a stage progress fraction in [0,1].
    double t_max_at(double progress) const;
    double sample_t(std::uint64_t seed, double progress = 0.0) const;
};

struct GuidanceSignal {
    Image grad;               // same shape as the guidance input
    double diagnostic = 0.0;  // scalar loss estimate
    double t = 0.0;
    std::uint64_t token = 0;  // token of the input image
};

/// Concatenates a normal image and a mask into 4 channels and box-downscales
/// to (target_w, target_h).
Image prep_coarse_input(const Image& normal, const Image& mask, int target_w, int target_h);
/// Returns (normal gradient, mask gradient) at the source resolution.
std::pair<Image, Image> prep_coarse_input_backward(const Image& grad, int src_w, int src_h, int normal_channels = 3);

GuidanceSignal reference_guidance(const Image& input, const Image& reference, const GuidanceConfig& config,
                                  std::uint64_t seed, double progress = 0.0);

/// Separable Gaussian blur with clamp-to-edge borders; sigma 0 is the identity.
Image gaussian_blur(const Image& img, double sigma);

/// signal = w(t) * strength * ((z - blur(z)) - sigma * eps), z = x + sigma * eps,
/// sigma = t, eps ~ N(0,1) per channel value. Deterministic per seed.
GuidanceSignal mock_sds_guidance(const Image& input, const GuidanceConfig& config, std::uint64_t seed,
                                 double progress = 0.0);

// ---------------------------------------------------------------------------
// Render entries. A view keeps what its backward pass needs; the referenced
// grid, field and extraction must outlive it.

struct GeometryView {
    const TetGrid* grid = nullptr;
    const FieldParams* field = nullptr;
    const MtResult* mt = nullptr;
    bool use_offsets = true;
    NormalMaskRender render;
};

GeometryView render_geometry_view(const TetGrid& grid, const FieldParams& field, const MtResult& mt,
                                  const Camera& camera, bool use_offsets = true);

/// Chains image gradients through the normal/mask render, MT and the field.
void geometry_view_backward(const GeometryView& view, const Image* normal_grad, const Image* mask_grad,
                            std::vector<double>& param_grad);

/// Affine map from mesh space into the field domain: (p - origin) * scale,
/// per component. The default is the grid mapping [-1,1]^3 -> [0,1]^3.
struct PointMap {
    Vec3 origin{-1.0, -1.0, -1.0};
    Vec3 scale{0.5, 0.5, 0.5};

    Vec3 operator()(const Vec3& p) const { return (p - origin).cwiseProduct(scale); }
};

struct AppearanceView {
    const FieldParams* field = nullptr;
    PointMap map;
    LightRig lights;
    FrameBuffer frame;                // albedo, specular and shading_normal filled
    std::vector<std::size_t> pixels;  // covered pixel indices
    std::vector<Vec3> queries;        // field-space query point per covered pixel
    std::vector<double> raw;          // field outputs per covered pixel
    Image color;                      // shaded linear RGB
};

/// Renders the mesh, queries the appearance field at the visible surface
/// points and shades the result. The field needs at least 5 outputs.
AppearanceView render_appearance_view(const TriMesh& mesh, const FieldParams& field, const Camera& camera,
                                      const LightRig& lights, const PointMap& map = {});

/// Albedo of another field (e.g. a frozen template) on the same visible points.
Image render_albedo(const AppearanceView& view, const FieldParams& field);

void appearance_view_backward(const AppearanceView& view, const Image* color_grad, const Image* albedo_grad,
                              std::vector<double>& param_grad);

/// Pushes a signal into the field parameter gradient. In the coarse stage the
/// signal is 4-channel at the downscaled size and goes through
/// prep_coarse_input_backward first. The signal must come from this view's
/// render (matching token), otherwise ContractError.
void apply_guidance(const GuidanceSignal& signal, const GeometryView& view, GuidanceStage stage,
                    std::vector<double>& param_grad);
void apply_guidance(const GuidanceSignal& signal, const AppearanceView& view, std::vector<double>& param_grad);

/// The input image a stage hands to the guidance backend.
Image geometry_guidance_input(const GeometryView& view, GuidanceStage stage, int coarse_w, int coarse_h);

// ---------------------------------------------------------------------------
// Reference image sets: <name>.timg paired with <name>.cam, where the camera
// file lists fov, position, target, up, width and height, one per line.

struct ReferenceView {
    std::string name;
    Camera camera;
    Image image;
};

void write_camera(const std::filesystem::path& path, const Camera& camera);
Camera read_camera(const std::filesystem::path& path);
void save_reference_view(const std::filesystem::path& dir, const ReferenceView& view);
/// Views sorted by name. Throws IoError on unreadable or unpaired files.
std::vector<ReferenceView> load_reference_set(const std::filesystem::path& dir);

}  // namespace tetsculpt
