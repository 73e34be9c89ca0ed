#pragma once

// Run configuration and its key=value file format.
//
// One setting per line, `section.key = value`, '#' starts a comment. Keys
// mirror the RunConfig members (see docs/config_keys.md). Unknown keys and
// malformed values raise ConfigError.

#include <filesystem>
#include <limits>

#include "tetsculpt/constraints.hpp"
#include "tetsculpt/guidance.hpp"

namespace tetsculpt {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-15;

    void validate() const;  // throws ConfigError
};

struct StepCounts {
    long init = 500;
    long coarse = 1500;
    long refine = 1000;
    long appearance = 800;
};

struct GridSettings {
    int resolution = 64;
    double subdivision_threshold = kSubdivisionThreshold;
};

struct RenderSettings {
    int size = 256;             // geometry renders
    int coarse_size = 64;       // downscaled coarse guidance input
    int appearance_size = 256;
    int texture_size = 1024;
};

struct CameraSettings {
    double full_body_distance = 3.2;
    double part_distance = 1.3;
    double fov_deg = 40.0;
    double elevation_min_deg = -15.0;
    double elevation_max_deg = 30.0;
    double part_probability = 0.25;
};

struct SamplingSettings {
    std::size_t surface = 8192;
    std::size_t random = 2048;
    std::size_t part = 400;      // per labeled part
    std::size_t held_out = 2000;
    double jitter = kDefaultJitterSigma;
};

struct PriorSettings {
    std::string mesh;     // labeled OBJ; empty selects the procedural figure
    int resolution = 64;  // lattice used to mesh the procedural figure
};

enum class GuidanceBackendKind { none, reference, mock };

struct GuidanceSettings {
    GuidanceBackendKind backend = GuidanceBackendKind::none;
    std::string target_mesh;    // reference renders come from this mesh
    std::string reference_dir;  // or from a fixed set of views
    Vec3 target_albedo{0.6, 0.45, 0.35};
    GuidanceConfig config;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    StepCounts steps;
    GridSettings grid;
    RenderSettings render;
    CameraSettings camera;
    FieldConfig geometry_field = default_geometry_field();
    FieldConfig appearance_field = default_appearance_field();
    LossWeights weights;
    TemplateSchedule schedule;
    AdamConfig geometry_optimizer{1e-3};
    AdamConfig appearance_optimizer{1e-2};
    SamplingSettings sampling;
    NormalMasking normal_masking = NormalMasking::covered_union;
    PriorSettings prior;
    GuidanceSettings guidance;

    static FieldConfig default_geometry_field();
    static FieldConfig default_appearance_field();

    void validate() const;  // throws ConfigError
};

/// Applies `key = value` lines on top of `base`.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Every key with its resolved value, sorted by key.
std::string serialize_config(const RunConfig& config);
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// A template interval of 0 in the file means "never update".
inline constexpr long kNeverUpdate = std::numeric_limits<long>::max();

}  // namespace tetsculpt
