#pragma once

// Multi-resolution grid-encoded field with an MLP head.
//
// Each level holds `table_size` feature vectors of width `features_per_level`.
// A level whose dense vertex lattice fits in the table is indexed densely;
// finer levels use the XOR-of-primes spatial hash. Per-level features are
// trilinearly interpolated, concatenated, and fed to an MLP with leaky-ReLU
// hidden layers and an identity output layer.
//
// Parameter layout: [level 0 table | level 1 table | ... | layer 0 W, b | layer 1 W, b | ...]
// with row-major W of shape (out, in).

#include <filesystem>
#include <span>

#include "tetsculpt/common.hpp"

namespace tetsculpt {

struct FieldConfig {
    int levels = 8;
    int base_resolution = 4;  // cells per axis at level 0
    double growth_factor = 1.5;
    int features_per_level = 2;
    std::uint32_t table_size = 1u << 14;
    std::vector<int> mlp_hidden{32, 32};
    int output_dim = 1;

    void validate() const;  // throws ConfigError
    int level_resolution(int level) const;
    bool level_is_dense(int level) const;
    int encoding_dim() const { return levels * features_per_level; }
    std::size_t grid_param_count() const;
    std::size_t mlp_param_count() const;
    std::size_t param_count() const { return grid_param_count() + mlp_param_count(); }

    bool operator==(const FieldConfig&) const = default;
};

struct FieldParams {
    FieldConfig config;
    std::vector<double> values;
};

FieldParams field_init(const FieldConfig& config, std::uint64_t seed);

/// Evaluates the field at points in [0,1]^3 (clamped). Returns
/// points.size() * output_dim values, point-major.
std::vector<double> field_eval(const FieldParams& params, std::span<const Vec3> points);

struct FieldGradient {
    std::vector<double> params;
    std::vector<Vec3> points;
};

/// Reverse-mode gradient of sum(output_gradient . field_eval(params, points)).
FieldGradient field_backward(const FieldParams& params, std::span<const Vec3> points,
                             std::span<const double> output_gradient);

/// Accumulating variant used inside the optimisation loop. `param_grad` must
/// already have params.values.size() entries; `point_grad` may be null.
void field_backward_accumulate(const FieldParams& params, std::span<const Vec3> points,
                               std::span<const double> output_gradient, std::vector<double>& param_grad,
                               std::vector<Vec3>* point_grad = nullptr);

// The "TFLD" checkpoint. Parameters are stored as 32-bit floats.
void save_field(const std::filesystem::path& path, const FieldParams& params);
FieldParams load_field(const std::filesystem::path& path);

/// Spatial hash of an integer lattice coordinate into [0, table_size).
std::uint32_t hash_corner(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size);

// Appearance head: raw MLP outputs -> PBR material.
// dims 0..2 albedo and 3..4 roughness/metalness go through a logistic;
// dims 5..7, when present, are a tangent-space offset from +z normalised
// to a unit shading normal.
struct Material {
    Vec3 albedo{0.5, 0.5, 0.5};
    double roughness = 0.5;
    double metalness = 0.0;
    Vec3 normal_ts{0.0, 0.0, 1.0};
};

inline constexpr int kMaterialDims = 8;

Material decode_material(std::span<const double> raw);
/// Gradient of the decoded material with respect to the raw outputs. Writes
/// raw.size() entries into raw_grad.
void decode_material_backward(std::span<const double> raw, const Material& grad, std::span<double> raw_grad);

}  // namespace tetsculpt
