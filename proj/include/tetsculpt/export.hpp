#pragma once

// Asset export: box-projection UV atlas, texture baking from the appearance
// field, textured OBJ with its material file, and run-directory helpers.

#include "tetsculpt/pipeline.hpp"

namespace tetsculpt {

using Vec2 = Eigen::Vector2d;

/// Box-projection atlas. Faces are grouped into charts of edge-connected
/// faces sharing a dominant normal axis and sign; a face that would overlap
/// its chart in projection starts a new chart. Charts keep a common texel
/// density and are shelf-packed with `padding` free texels around each.
struct UvAtlas {
    std::vector<Vec2> uv;        // three per face, OBJ convention (v grows upwards)
    std::vector<int> face_chart;
    int charts = 0;
    int texture_size = 0;
    int padding = 0;
    double texels_per_unit = 0.0;
};

UvAtlas build_box_atlas(const TriMesh& mesh, int texture_size, int padding = 2);

struct TextureSet {
    Image albedo;  // 3 channels, linear
    Image rm;      // 3 channels: roughness, metalness, 0
    Image normal;  // 3 channels, tangent-space k_n * 0.5 + 0.5
    Image coverage;  // 1 channel, 1 where a texel was baked
};

/// Evaluates the appearance field at the surface point behind every texel
/// inside a chart or its padding gutter (gutter texels take the closest
/// point of their face).
TextureSet bake_textures(const TriMesh& mesh, const UvAtlas& atlas, const FieldParams& field, const PointMap& map);

/// Bilinear lookup at an OBJ-convention uv, clamped to the image.
std::vector<double> sample_bilinear(const Image& img, const Vec2& uv);

/// Writes mesh.obj (with vt), material.mtl, albedo.png, rm.png, normal.png
/// and float dumps albedo.timg, rm.timg, normal.timg into `dir`.
void export_assets(const std::filesystem::path& dir, const TriMesh& mesh, const FieldParams& field,
                   const PointMap& map, int texture_size);

void write_textured_obj(const std::filesystem::path& path, const TriMesh& mesh, const UvAtlas& atlas,
                        const std::string& mtl_file, const std::string& material);
/// Reads the vt table and per-corner vt indices of a textured OBJ.
std::vector<Vec2> read_obj_corner_uvs(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run directories

struct GeometryRun {
    GeometryState state;
    TriMesh mesh;
    InitReport init;
    RefineReport refine;
};

/// Init, coarse and refine stages. With a non-empty `dir`, writes
/// geometry.obj, geometry.tfld, losses.csv and config.lock there.
GeometryRun run_geometry(const RunConfig& config, const std::filesystem::path& dir);

/// Appearance stage on a frozen mesh. With a non-empty `dir`, writes
/// appearance_mesh.obj, appearance.tfld, appearance_losses.csv and config.lock.
AppearanceState run_appearance(const RunConfig& config, const TriMesh& mesh, const std::filesystem::path& dir);

/// Reads appearance_mesh.obj, appearance.tfld and config.lock from a run
/// directory and exports the textured assets next to them.
void export_run(const std::filesystem::path& dir);

void write_config_lock(const std::filesystem::path& dir, const RunConfig& config);

}  // namespace tetsculpt
