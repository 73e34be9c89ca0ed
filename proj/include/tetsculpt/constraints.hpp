#pragma once

// Constraint losses between the current avatar, the evolving template and the
// static prior, plus the template bookkeeping.
//
// All losses are means over their samples or pixels; pass Reduction::sum to
// get the plain sum instead. Sample points are in grid space [-1,1]^3 and the
// field is queried at grid_to_field(p), output 0.

#include <filesystem>
#include <map>
#include <optional>

#include "tetsculpt/dmtet.hpp"
#include "tetsculpt/image.hpp"

namespace tetsculpt {

// Part ids used by the labeled prior.
inline constexpr int kPartBody = 0;
inline constexpr int kPartFace = 1;
inline constexpr int kPartHands = 2;
inline constexpr int kPartFeet = 3;

struct LossWeights {
    double lambda_sds = 1.0;
    double alpha_global = 10.0;
    double alpha_local = 100.0;
    double beta_global = 1.0;
    double beta_local = 10.0;
    std::map<int, double> part_weights{{kPartFace, 1.0}, {kPartHands, 1.0}, {kPartFeet, 0.5}};
    std::map<int, double> part_normal_weights{{kPartFace, 1.0}};
    double gamma_lightness = 10.0;

    void validate() const;  // throws ConfigError
};

enum class Reduction { mean, sum };

struct FieldLoss {
    double value = 0.0;
    std::vector<double> param_grad;
};

struct ImageLoss {
    double value = 0.0;
    Image grad;
};

FieldLoss loss_sdf_init(const FieldParams& field, const SdfSource& prior, const PointSampleSet& samples,
                        Reduction reduction = Reduction::mean);
FieldLoss loss_sdf_global(const FieldParams& field, const SdfSource& tmpl, const PointSampleSet& samples,
                          Reduction reduction = Reduction::mean);
/// Weighted sum over parts; every sample set needs a part_id with a weight.
FieldLoss loss_sdf_local(const FieldParams& field, const SdfSource& prior, std::span<const PointSampleSet> parts,
                         const std::map<int, double>& weights, Reduction reduction = Reduction::mean);

enum class NormalMasking { covered_union, full_image };

/// Mean over pixels where either image has a nonzero normal (or over all
/// pixels) of the squared per-pixel difference.
ImageLoss loss_normal_global(const Image& n_cur, const Image& n_tmp,
                             NormalMasking masking = NormalMasking::covered_union);

struct PartNormalRender {
    int part_id = 0;
    Image normal;  // render of the prior part alone; nonzero where covered
};

/// Sum over parts of k_i times the mean squared difference over the pixels
/// the part render covers.
ImageLoss loss_normal_local(const Image& n_cur, std::span<const PartNormalRender> parts,
                            const std::map<int, double>& weights);

struct GeometryLossTerms {
    double sds = 0.0;
    double sdf_global = 0.0;
    double sdf_local = 0.0;
    double normal_global = 0.0;
    double normal_local = 0.0;
};

double total_geometry_loss(const GeometryLossTerms& terms, const LossWeights& weights);

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double scale);
void add_scaled(Image& dst, const Image& src, double scale);

Image luma(const Image& rgb);
Image luma_backward(const Image& grad);

/// Side length used for the lightness comparison: 1/8 of the render side.
int lightness_target_side(int side);

ImageLoss loss_lightness(const Image& kd_cur, const Image& kd_tmp, int target_w, int target_h);
ImageLoss loss_lightness(const Image& kd_cur, const Image& kd_tmp);

// Template state

struct TemplateSchedule {
    long geometry_interval = 5000;
    long appearance_interval = 200;
    long appearance_init_step = 400;

    void validate() const;  // throws ConfigError
};

struct TemplateState {
    long step = 0;
    TemplateSchedule schedule;
    TriMesh geometry_mesh;   // mesh the geometry template was built from
    SdfSource geometry;      // f_tmp
    TriMesh prior_mesh;      // labeled static prior
    SdfSource prior;         // f_0
    std::optional<FieldParams> appearance;  // absent before the first appearance update
    int geometry_updates = 0;
    int appearance_updates = 0;
};

/// Initial state: the geometry template is the prior itself.
TemplateState template_init(const SdfSource& prior, const TriMesh& prior_mesh, const TemplateSchedule& schedule);

bool geometry_update_due(const TemplateState& state);
bool appearance_update_due(const TemplateState& state);

struct TemplateUpdate {
    TemplateState state;
    Status status = Status::ok;
};

/// Extracts the MT surface of a grid with cached SDF values and makes its
/// distance field the new geometry template. An empty surface keeps the old
/// template and reports a warning.
TemplateUpdate template_update_geometry(const TemplateState& state, const TetGrid& grid);

TemplateState template_update_appearance(const TemplateState& state, const FieldParams& current);

// Loss curves

class LossLog {
public:
    explicit LossLog(std::vector<std::string> components);

    void record(long step, std::span<const double> values, double total);
    void write_csv(const std::filesystem::path& path) const;

    const std::vector<std::string>& components() const { return components_; }
    std::size_t rows() const { return steps_.size(); }
    double total(std::size_t row) const { return totals_[row]; }
    double value(std::size_t row, std::size_t component) const { return values_[row * components_.size() + component]; }

private:
    std::vector<std::string> components_;
    std::vector<long> steps_;
    std::vector<double> values_;
    std::vector<double> totals_;
};

}  // namespace tetsculpt
