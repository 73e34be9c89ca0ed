#include "tetsculpt/constraints.hpp"

#include <fstream>
#include <iomanip>

namespace tetsculpt {

namespace {

bool nonneg_finite(double x) { return std::isfinite(x) && x >= 0.0; }

bool pixel_covered(const Image& img, std::size_t p) {
    for (int c = 0; c < img.channels; ++c)
        if (img.pixels[p * img.channels + c] != 0.0) return true;
    return false;
}

// Mean (or sum) of (f(p) - target(p))^2 over the samples, scaled by `scale`,
// with the parameter gradient accumulated into `grad`.
double sdf_match(const FieldParams& field, const SdfSource& target, const PointSampleSet& samples,
                 Reduction reduction, double scale, std::vector<double>& grad) {
    require(!samples.points.empty(), "sdf loss needs samples");
    require(target.valid(), "sdf loss needs a target source");
    const std::size_t n = samples.size();
    const int dim = field.config.output_dim;

    std::vector<Vec3> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = grid_to_field(samples.points[i]);
    const std::vector<double> out = field_eval(field, q);
    const std::vector<double> ref = target.query(std::span<const Vec3>(samples.points));

    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
    double value = 0.0;
    std::vector<double> og(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = out[i * dim] - ref[i];
        value += d * d;
        og[i * dim] = 2.0 * d * norm * scale;
    }
    if (scale != 0.0) field_backward_accumulate(field, q, og, grad);
    return value * norm;
}

}  // namespace

void LossWeights::validate() const {
    for (double w : {lambda_sds, alpha_global, alpha_local, beta_global, beta_local, gamma_lightness})
        if (!nonneg_finite(w)) throw ConfigError("loss weights must be finite and nonnegative");
    for (const auto* m : {&part_weights, &part_normal_weights})
        for (const auto& [id, w] : *m)
            if (!nonneg_finite(w)) throw ConfigError("part weight for " + std::to_string(id) + " is invalid");
}

FieldLoss loss_sdf_init(const FieldParams& field, const SdfSource& prior, const PointSampleSet& samples,
                        Reduction reduction) {
    FieldLoss loss;
    loss.param_grad.assign(field.values.size(), 0.0);
    loss.value = sdf_match(field, prior, samples, reduction, 1.0, loss.param_grad);
    return loss;
}

FieldLoss loss_sdf_global(const FieldParams& field, const SdfSource& tmpl, const PointSampleSet& samples,
                          Reduction reduction) {
    return loss_sdf_init(field, tmpl, samples, reduction);
}

FieldLoss loss_sdf_local(const FieldParams& field, const SdfSource& prior, std::span<const PointSampleSet> parts,
                         const std::map<int, double>& weights, Reduction reduction) {
    FieldLoss loss;
    loss.param_grad.assign(field.values.size(), 0.0);
    for (const PointSampleSet& part : parts) {
        require(part.part_id.has_value(), "local sdf samples need a part id");
        auto it = weights.find(*part.part_id);
        require(it != weights.end(), "no weight for part");
        if (part.points.empty()) continue;
        loss.value += it->second * sdf_match(field, prior, part, reduction, it->second, loss.param_grad);
    }
    return loss;
}

ImageLoss loss_normal_global(const Image& n_cur, const Image& n_tmp, NormalMasking masking) {
    require(n_cur.same_shape(n_tmp), "normal images differ in shape");
    ImageLoss loss;
    loss.grad = Image(n_cur.width, n_cur.height, n_cur.channels);
    const std::size_t np = n_cur.pixel_count();
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < np; ++p)
        if (masking == NormalMasking::full_image || pixel_covered(n_cur, p) || pixel_covered(n_tmp, p))
            active.push_back(p);
    if (active.empty()) return loss;
    const double inv = 1.0 / static_cast<double>(active.size());
    for (std::size_t p : active)
        for (int c = 0; c < n_cur.channels; ++c) {
            const std::size_t k = p * n_cur.channels + c;
            const double d = n_cur.pixels[k] - n_tmp.pixels[k];
            loss.value += d * d * inv;
            loss.grad.pixels[k] = 2.0 * d * inv;
        }
    return loss;
}

ImageLoss loss_normal_local(const Image& n_cur, std::span<const PartNormalRender> parts,
                            const std::map<int, double>& weights) {
    ImageLoss loss;
    loss.grad = Image(n_cur.width, n_cur.height, n_cur.channels);
    for (const PartNormalRender& part : parts) {
        require(n_cur.same_shape(part.normal), "normal images differ in shape");
        auto it = weights.find(part.part_id);
        require(it != weights.end(), "no normal weight for part");
        const double k = it->second;
        std::vector<std::size_t> mask;
        for (std::size_t p = 0; p < n_cur.pixel_count(); ++p)
            if (pixel_covered(part.normal, p)) mask.push_back(p);
        if (mask.empty() || k == 0.0) continue;
        const double inv = 1.0 / static_cast<double>(mask.size());
        for (std::size_t p : mask)
            for (int c = 0; c < n_cur.channels; ++c) {
                const std::size_t i = p * n_cur.channels + c;
                const double d = n_cur.pixels[i] - part.normal.pixels[i];
                loss.value += k * d * d * inv;
                loss.grad.pixels[i] += 2.0 * k * d * inv;
            }
    }
    return loss;
}

double total_geometry_loss(const GeometryLossTerms& t, const LossWeights& w) {
    return w.lambda_sds * t.sds + w.alpha_global * t.sdf_global + w.alpha_local * t.sdf_local +
           w.beta_global * t.normal_global + w.beta_local * t.normal_local;
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double scale) {
    require(dst.size() == src.size(), "gradient sizes differ");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void add_scaled(Image& dst, const Image& src, double scale) {
    require(dst.same_shape(src), "gradient images differ in shape");
    for (std::size_t i = 0; i < dst.pixels.size(); ++i) dst.pixels[i] += scale * src.pixels[i];
}

Image luma(const Image& rgb) {
    require(rgb.channels == 3, "luma needs an RGB image");
    Image y(rgb.width, rgb.height, 1);
    for (std::size_t p = 0; p < rgb.pixel_count(); ++p)
        y.pixels[p] = (rgb.pixels[3 * p] + rgb.pixels[3 * p + 1] + rgb.pixels[3 * p + 2]) / 3.0;
    return y;
}

Image luma_backward(const Image& grad) {
    require(grad.channels == 1, "luma gradient must be single-channel");
    Image g(grad.width, grad.height, 3);
    for (std::size_t p = 0; p < grad.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) g.pixels[3 * p + c] = grad.pixels[p] / 3.0;
    return g;
}

int lightness_target_side(int side) { return std::max(1, side / 8); }

ImageLoss loss_lightness(const Image& kd_cur, const Image& kd_tmp, int target_w, int target_h) {
    require(kd_cur.same_shape(kd_tmp), "albedo images differ in shape");
    const Image a = downscale(luma(kd_cur), target_w, target_h);
    const Image b = downscale(luma(kd_tmp), target_w, target_h);
    const double inv = 1.0 / static_cast<double>(a.pixel_count());
    ImageLoss loss;
    Image g(a.width, a.height, 1);
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        const double d = a.pixels[p] - b.pixels[p];
        loss.value += d * d * inv;
        g.pixels[p] = 2.0 * d * inv;
    }
    loss.grad = luma_backward(downscale_backward(g, kd_cur.width, kd_cur.height));
    return loss;
}

ImageLoss loss_lightness(const Image& kd_cur, const Image& kd_tmp) {
    return loss_lightness(kd_cur, kd_tmp, lightness_target_side(kd_cur.width), lightness_target_side(kd_cur.height));
}

void TemplateSchedule::validate() const {
    if (geometry_interval < 1 || appearance_interval < 1) throw ConfigError("template intervals must be >= 1");
    if (appearance_init_step < 0) throw ConfigError("appearance init step must be >= 0");
}

TemplateState template_init(const SdfSource& prior, const TriMesh& prior_mesh, const TemplateSchedule& schedule) {
    schedule.validate();
    require(prior.valid(), "template needs a prior source");
    TemplateState s;
    s.schedule = schedule;
    s.prior = prior;
    s.prior_mesh = prior_mesh;
    s.geometry = prior;
    s.geometry_mesh = prior_mesh;
    return s;
}

bool geometry_update_due(const TemplateState& s) {
    return s.step > 0 && s.step % s.schedule.geometry_interval == 0;
}

bool appearance_update_due(const TemplateState& s) {
    const long t0 = s.schedule.appearance_init_step;
    return s.step >= t0 && (s.step - t0) % s.schedule.appearance_interval == 0;
}

TemplateUpdate template_update_geometry(const TemplateState& state, const TetGrid& grid) {
    require(state.step % state.schedule.geometry_interval == 0, "geometry template update off schedule");
    require(grid.sdf_cached(), "grid has no cached sdf");
    TemplateUpdate up{state, Status::ok};
    MtResult mt = marching_tetrahedra(grid);
    if (mt.mesh.faces.empty()) {
        up.status = Status::warning;
        return up;
    }
    auto sdf = std::make_shared<const MeshSdf>(mt.mesh);
    up.state.geometry_mesh = std::move(mt.mesh);
    up.state.geometry = SdfSource(std::move(sdf));
    ++up.state.geometry_updates;
    return up;
}

TemplateState template_update_appearance(const TemplateState& state, const FieldParams& current) {
    require(appearance_update_due(state), "appearance template update off schedule");
    TemplateState s = state;
    s.appearance = current;
    ++s.appearance_updates;
    return s;
}

LossLog::LossLog(std::vector<std::string> components) : components_(std::move(components)) {}

void LossLog::record(long step, std::span<const double> values, double total) {
    require(values.size() == components_.size(), "loss row width mismatch");
    steps_.push_back(step);
    values_.insert(values_.end(), values.begin(), values.end());
    totals_.push_back(total);
}

void LossLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step";
    for (const auto& c : components_) out << ',' << c;
    out << ",total\n" << std::setprecision(10);
    for (std::size_t r = 0; r < steps_.size(); ++r) {
        out << steps_[r];
        for (std::size_t c = 0; c < components_.size(); ++c) out << ',' << value(r, c);
        out << ',' << totals_[r] << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace tetsculpt
