#pragma once

// Software rasterizer: z-buffered hard rasterization with perspective-correct
// barycentrics, normal/mask renders with a soft silhouette band, and a
// directional-light PBR shader. Backward passes return gradients with respect
// to per-vertex attributes and, for normal/mask renders, vertex positions.

#include <map>

#include "tetsculpt/fieldgrid.hpp"
#include "tetsculpt/image.hpp"
#include "tetsculpt/sdfkit.hpp"

namespace tetsculpt {

struct Camera {
    double fov_deg = 40.0;  // vertical field of view
    Vec3 position{0.0, 0.0, 3.0};
    Vec3 target = Vec3::Zero();
    Vec3 up{0.0, 1.0, 0.0};
    int width = 256;
    int height = 256;

    struct Basis {
        Vec3 right, up, forward;
    };

    void validate() const;  // throws ContractError
    Basis basis() const;
    double focal_px() const;

    /// Continuous pixel coordinates (pixel (i, j) spans [i, i+1) x [j, j+1))
    /// and view depth along the forward axis.
    Vec3 project(const Vec3& p) const;
    /// d(pixel x, pixel y) / d p.
    Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p) const;
    /// Unit world-space direction of the primary ray through pixel coordinate (px, py).
    Vec3 ray_direction(double px, double py) const;
};

inline constexpr double kNearPlane = 1e-3;
inline constexpr double kSilhouetteBand = 1.5;        // pixels
inline constexpr double kSilhouetteSteepness = 2.0;   // per pixel

struct FrameBuffer {
    int width = 0;
    int height = 0;
    Camera camera;
    std::vector<int> face_id;  // -1 for background
    std::vector<Vec3> bary;    // perspective-correct barycentrics
    std::vector<double> depth;
    Image attributes;          // interpolated per-vertex attributes
    // Named channels; filled by the passes that produce them.
    Image normal;          // 3, world space, unit where covered, 0 on background
    Image mask;            // 1, soft coverage in [0,1]
    Image position;        // 3, world-space surface point
    Image albedo;          // 3, k_d
    Image specular;        // 2, roughness and metalness
    Image shading_normal;  // 3, tangent-space k_n
    std::uint64_t token = 0;

    bool covered(std::size_t pixel) const { return face_id[pixel] >= 0; }
    std::size_t covered_count() const;
};

/// Rasterizes `mesh`, interpolating `attributes` (vertex count x channels,
/// vertex-major). An empty mesh yields an all-background buffer.
FrameBuffer rasterize(const TriMesh& mesh, const Camera& camera, std::span<const double> attributes = {},
                      int channels = 0);

/// Per-vertex attribute gradient (vertex count x channels) of
/// sum(grad . frame.attributes). Barycentrics are held fixed.
std::vector<double> rasterize_backward(const FrameBuffer& frame, const TriMesh& mesh, const Image& grad);

struct SilhouetteSample {
    std::size_t pixel;
    int v0, v1;        // mesh edge
    double param;      // closest point along the projected edge, in [0,1]
    double signed_distance;  // pixels, positive outside the hard coverage
};

struct NormalMaskRender {
    FrameBuffer frame;  // normal and mask channels filled
    std::vector<Vec3> vertex_normals;
    std::vector<Vec3> vertex_normal_sums;  // unnormalised area-weighted sums
    std::vector<SilhouetteSample> band;
};

/// Normal image from renormalised interpolated vertex normals (recomputed from
/// the current positions) and a mask blending hard coverage with a logistic
/// band of kSilhouetteBand pixels around silhouette edges.
NormalMaskRender render_normal_mask(const TriMesh& mesh, const Camera& camera);

/// Gradient with respect to vertex positions, flowing through the vertex
/// normals and the silhouette band only. Either upstream image may be null.
std::vector<Vec3> render_normal_mask_backward(const NormalMaskRender& render, const TriMesh& mesh,
                                              const Image* normal_grad, const Image* mask_grad);

// Shading

struct DirectionalLight {
    Vec3 direction;  // unit vector from the surface toward the light
    Vec3 radiance;
};

struct LightRig {
    std::vector<DirectionalLight> lights;
    Vec3 ambient = Vec3::Zero();

    void validate() const;
    /// Fixed four-light rig with a weak ambient term.
    static LightRig studio();
};

struct ShadeComponents {
    Vec3 diffuse = Vec3::Zero();
    Vec3 specular = Vec3::Zero();
    Vec3 ambient = Vec3::Zero();
    Vec3 total() const { return (diffuse + specular + ambient).cwiseMax(0.0); }
};

/// Perturbs the geometric normal by a tangent-space normal using a branchless
/// orthonormal frame built from the geometric normal.
Vec3 perturb_normal(const Vec3& geometric, const Vec3& tangent_space);

/// Lambert diffuse (1 - metalness) k_d / pi, GGX specular (alpha = roughness^2,
/// Smith-Schlick G, Schlick F with F0 = mix(0.04, k_d, metalness)) and
/// ambient * k_d. `to_eye` points from the surface to the camera.
ShadeComponents shade_point(const Vec3& geometric_normal, const Vec3& to_eye, const Material& material,
                            const LightRig& lights);

/// Shades every covered pixel from the frame's normal, position, albedo,
/// specular and shading_normal channels. Background is 0.
Image shade_pbr(const FrameBuffer& frame, const LightRig& lights);

struct ShadeGradient {
    Image albedo;
    Image specular;
    Image shading_normal;
};
ShadeGradient shade_pbr_backward(const FrameBuffer& frame, const LightRig& lights, const Image& color_grad);

// Cameras

enum class ViewMode { full_body, part };

struct CameraRig {
    Vec3 body_center = Vec3::Zero();
    std::map<int, Vec3> part_anchors;
    double full_body_distance = 3.2;
    double part_distance = 1.3;
    double fov_deg = 40.0;
    double elevation_min_deg = -15.0;
    double elevation_max_deg = 30.0;
    int width = 256;
    int height = 256;
};

struct CameraSample {
    Camera camera;
    double azimuth_deg;
    double elevation_deg;
};

/// Azimuth uniform in [0, 360), elevation uniform in [min, max], looking at
/// the body centre or the part anchor. Deterministic per seed.
CameraSample sample_camera(const CameraRig& rig, ViewMode mode, int part_id, std::uint64_t seed);
/// Camera on the same orbit as sample_camera at explicit angles.
Camera orbit_camera(const CameraRig& rig, ViewMode mode, int part_id, double azimuth_deg, double elevation_deg);

std::uint64_t next_frame_token();

}  // namespace tetsculpt
