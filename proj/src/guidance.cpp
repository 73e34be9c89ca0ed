#include "tetsculpt/guidance.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace tetsculpt {

void GuidanceConfig::validate() const {
    if (!(t_min >= 0.0 && t_min < t_max && t_max <= 1.0)) throw ConfigError("guidance needs 0 <= t_min < t_max <= 1");
    if (!(std::isfinite(strength) && strength >= 0.0)) throw ConfigError("guidance strength must be >= 0");
    if (anneal_t_max && !(anneal_t_max_end > t_min && anneal_t_max_end <= t_max))
        throw ConfigError("annealed t_max must stay within (t_min, t_max]");
    if (!(std::isfinite(blur_radius) && blur_radius >= 0.0)) throw ConfigError("blur radius must be >= 0");
}

double GuidanceConfig::weight(double t) const {
    return weighting == Weighting::constant ? 1.0 : (1.0 - t) * (1.0 - t);
}

double GuidanceConfig::t_max_at(double progress) const {
    if (!anneal_t_max) return t_max;
    const double p = std::clamp(progress, 0.0, 1.0);
    return t_max + (anneal_t_max_end - t_max) * p;
}

double GuidanceConfig::sample_t(std::uint64_t seed, double progress) const {
    std::mt19937_64 rng(seed);
    return std::uniform_real_distribution<double>(t_min, t_max_at(progress))(rng);
}

Image prep_coarse_input(const Image& normal, const Image& mask, int target_w, int target_h) {
    require(normal.width == mask.width && normal.height == mask.height, "normal and mask differ in size");
    require(mask.channels == 1, "mask must be single-channel");
    Image out = downscale(concat_channels(normal, mask), target_w, target_h);
    out.token = normal.token;
    return out;
}

std::pair<Image, Image> prep_coarse_input_backward(const Image& grad, int src_w, int src_h, int normal_channels) {
    require(grad.channels == normal_channels + 1, "coarse gradient has the wrong channel count");
    return split_channels(downscale_backward(grad, src_w, src_h), normal_channels);
}

GuidanceSignal reference_guidance(const Image& input, const Image& reference, const GuidanceConfig& config,
                                  std::uint64_t seed, double progress) {
    require(input.same_shape(reference), "guidance input and reference differ in shape");
    GuidanceSignal s;
    s.t = config.sample_t(seed, progress);
    s.token = input.token;
    s.grad = Image(input.width, input.height, input.channels);
    const double k = config.strength * config.weight(s.t);
    for (std::size_t i = 0; i < input.pixels.size(); ++i) {
        const double d = input.pixels[i] - reference.pixels[i];
        s.diagnostic += 0.5 * d * d;
        s.grad.pixels[i] = k * d;
    }
    return s;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;

    const int w = img.width, h = img.height, ch = img.channels;
    Image tmp(w, h, ch), out(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(std::clamp(x + i, 0, w - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(x, std::clamp(y + i, 0, h - 1), c);
                out.at(x, y, c) = acc;
            }
    out.token = img.token;
    return out;
}

GuidanceSignal mock_sds_guidance(const Image& input, const GuidanceConfig& config, std::uint64_t seed,
                                 double progress) {
    GuidanceSignal s;
    s.t = config.sample_t(seed, progress);
    s.token = input.token;
    const double sigma = s.t;

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(input.pixels.size());
    Image z = input;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        eps[i] = normal(rng);
        z.pixels[i] += sigma * eps[i];
    }
    const Image denoised = gaussian_blur(z, config.blur_radius);
    s.grad = Image(input.width, input.height, input.channels);
    const double k = config.strength * config.weight(s.t);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double v = (z.pixels[i] - denoised.pixels[i]) - sigma * eps[i];
        s.grad.pixels[i] = k * v;
        s.diagnostic += 0.5 * v * v;
    }
    return s;
}

GeometryView render_geometry_view(const TetGrid& grid, const FieldParams& field, const MtResult& mt,
                                  const Camera& camera, bool use_offsets) {
    GeometryView v;
    v.grid = &grid;
    v.field = &field;
    v.mt = &mt;
    v.use_offsets = use_offsets;
    v.render = render_normal_mask(mt.mesh, camera);
    return v;
}

void geometry_view_backward(const GeometryView& view, const Image* normal_grad, const Image* mask_grad,
                            std::vector<double>& param_grad) {
    require(view.grid && view.field && view.mt, "geometry view is not bound");
    if (view.mt->mesh.faces.empty()) return;
    const std::vector<Vec3> vg = render_normal_mask_backward(view.render, view.mt->mesh, normal_grad, mask_grad);
    const MtGradient g = mt_backward(*view.grid, view.mt->provenance, vg);
    evaluate_grid_backward(*view.grid, *view.field, g, param_grad, view.use_offsets);
}

AppearanceView render_appearance_view(const TriMesh& mesh, const FieldParams& field, const Camera& camera,
                                      const LightRig& lights, const PointMap& map) {
    require(field.config.output_dim >= 5, "appearance field needs at least 5 outputs");
    AppearanceView v;
    v.field = &field;
    v.map = map;
    v.lights = lights;
    v.frame = render_normal_mask(mesh, camera).frame;
    FrameBuffer& fb = v.frame;
    const int w = fb.width, h = fb.height;
    fb.albedo = Image(w, h, 3);
    fb.specular = Image(w, h, 2);
    fb.shading_normal = Image(w, h, 3);
    const std::size_t np = static_cast<std::size_t>(w) * h;
    for (std::size_t p = 0; p < np; ++p)
        if (fb.covered(p)) {
            v.pixels.push_back(p);
            v.queries.push_back(
                map(Vec3(fb.position.pixels[3 * p], fb.position.pixels[3 * p + 1], fb.position.pixels[3 * p + 2])));
        }
    const int dim = field.config.output_dim;
    v.raw = field_eval(field, v.queries);
    for (std::size_t i = 0; i < v.pixels.size(); ++i) {
        const std::size_t p = v.pixels[i];
        const Material m = decode_material(std::span<const double>(v.raw.data() + i * dim, dim));
        for (int c = 0; c < 3; ++c) {
            fb.albedo.pixels[3 * p + c] = m.albedo[c];
            fb.shading_normal.pixels[3 * p + c] = m.normal_ts[c];
        }
        fb.specular.pixels[2 * p] = m.roughness;
        fb.specular.pixels[2 * p + 1] = m.metalness;
    }
    fb.albedo.token = fb.specular.token = fb.shading_normal.token = fb.token;
    v.color = shade_pbr(fb, lights);
    return v;
}

Image render_albedo(const AppearanceView& view, const FieldParams& field) {
    require(field.config.output_dim >= 5, "albedo field needs at least 5 outputs");
    Image out(view.frame.width, view.frame.height, 3);
    out.token = view.frame.token;
    if (view.pixels.empty()) return out;
    const int dim = field.config.output_dim;
    const std::vector<double> raw = field_eval(field, view.queries);
    for (std::size_t i = 0; i < view.pixels.size(); ++i) {
        const Material m = decode_material(std::span<const double>(raw.data() + i * dim, dim));
        for (int c = 0; c < 3; ++c) out.pixels[3 * view.pixels[i] + c] = m.albedo[c];
    }
    return out;
}

void appearance_view_backward(const AppearanceView& view, const Image* color_grad, const Image* albedo_grad,
                              std::vector<double>& param_grad) {
    require(view.field != nullptr, "appearance view is not bound");
    if (view.pixels.empty()) return;
    const int w = view.frame.width, h = view.frame.height;
    ShadeGradient sg;
    if (color_grad) {
        require(color_grad->width == w && color_grad->height == h && color_grad->channels == 3,
                "color gradient has the wrong shape");
        sg = shade_pbr_backward(view.frame, view.lights, *color_grad);
    } else {
        sg.albedo = Image(w, h, 3);
        sg.specular = Image(w, h, 2);
        sg.shading_normal = Image(w, h, 3);
    }
    if (albedo_grad) {
        require(albedo_grad->width == w && albedo_grad->height == h && albedo_grad->channels == 3,
                "albedo gradient has the wrong shape");
        for (std::size_t i = 0; i < sg.albedo.pixels.size(); ++i) sg.albedo.pixels[i] += albedo_grad->pixels[i];
    }

    const int dim = view.field->config.output_dim;
    std::vector<double> out_grad(view.raw.size(), 0.0);
    for (std::size_t i = 0; i < view.pixels.size(); ++i) {
        const std::size_t p = view.pixels[i];
        Material g;
        g.albedo = Vec3(sg.albedo.pixels[3 * p], sg.albedo.pixels[3 * p + 1], sg.albedo.pixels[3 * p + 2]);
        g.roughness = sg.specular.pixels[2 * p];
        g.metalness = sg.specular.pixels[2 * p + 1];
        g.normal_ts = Vec3(sg.shading_normal.pixels[3 * p], sg.shading_normal.pixels[3 * p + 1],
                           sg.shading_normal.pixels[3 * p + 2]);
        decode_material_backward(std::span<const double>(view.raw.data() + i * dim, dim), g,
                                 std::span<double>(out_grad.data() + i * dim, dim));
    }
    field_backward_accumulate(*view.field, view.queries, out_grad, param_grad);
}

Image geometry_guidance_input(const GeometryView& view, GuidanceStage stage, int coarse_w, int coarse_h) {
    const FrameBuffer& fb = view.render.frame;
    if (stage == GuidanceStage::coarse_normal) return prep_coarse_input(fb.normal, fb.mask, coarse_w, coarse_h);
    require(stage == GuidanceStage::refine_normal, "color stage needs an appearance view");
    return fb.normal;
}

void apply_guidance(const GuidanceSignal& signal, const GeometryView& view, GuidanceStage stage,
                    std::vector<double>& param_grad) {
    const FrameBuffer& fb = view.render.frame;
    require(signal.token == fb.token, "guidance signal does not belong to this render");
    if (stage == GuidanceStage::coarse_normal) {
        require(signal.grad.channels == 4, "coarse guidance must be 4-channel");
        auto [ng, mg] = prep_coarse_input_backward(signal.grad, fb.width, fb.height);
        geometry_view_backward(view, &ng, &mg, param_grad);
    } else {
        require(stage == GuidanceStage::refine_normal, "color stage needs an appearance view");
        require(signal.grad.same_shape(fb.normal), "guidance signal does not match the normal render");
        geometry_view_backward(view, &signal.grad, nullptr, param_grad);
    }
}

void apply_guidance(const GuidanceSignal& signal, const AppearanceView& view, std::vector<double>& param_grad) {
    require(signal.token == view.color.token, "guidance signal does not belong to this render");
    require(signal.grad.same_shape(view.color), "guidance signal does not match the color render");
    appearance_view_backward(view, &signal.grad, nullptr, param_grad);
}

void write_camera(const std::filesystem::path& path, const Camera& c) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << c.fov_deg << '\n'
        << c.position.x() << ' ' << c.position.y() << ' ' << c.position.z() << '\n'
        << c.target.x() << ' ' << c.target.y() << ' ' << c.target.z() << '\n'
        << c.up.x() << ' ' << c.up.y() << ' ' << c.up.z() << '\n'
        << c.width << '\n'
        << c.height << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

Camera read_camera(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    }
    if (lines.size() != 6) throw IoError(path.string() + ": expected 6 camera lines");
    auto parse = [&](std::size_t i, int count) {
        std::istringstream ss(lines[i]);
        std::vector<double> v(count);
        for (double& x : v)
            if (!(ss >> x)) throw IoError(path.string() + ": bad camera line " + std::to_string(i + 1));
        std::string extra;
        if (ss >> extra) throw IoError(path.string() + ": trailing data on line " + std::to_string(i + 1));
        return v;
    };
    Camera c;
    c.fov_deg = parse(0, 1)[0];
    auto p = parse(1, 3), t = parse(2, 3), u = parse(3, 3);
    c.position = Vec3(p[0], p[1], p[2]);
    c.target = Vec3(t[0], t[1], t[2]);
    c.up = Vec3(u[0], u[1], u[2]);
    const double w = parse(4, 1)[0], h = parse(5, 1)[0];
    if (w != std::floor(w) || h != std::floor(h)) throw IoError(path.string() + ": image size must be integral");
    c.width = static_cast<int>(w);
    c.height = static_cast<int>(h);
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return c;
}

void save_reference_view(const std::filesystem::path& dir, const ReferenceView& view) {
    std::filesystem::create_directories(dir);
    write_timg(dir / (view.name + ".timg"), view.image);
    write_camera(dir / (view.name + ".cam"), view.camera);
}

std::vector<ReferenceView> load_reference_set(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("no reference directory " + dir.string());
    std::vector<ReferenceView> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".timg") continue;
        ReferenceView v;
        v.name = entry.path().stem().string();
        const auto cam = entry.path().parent_path() / (v.name + ".cam");
        if (!std::filesystem::exists(cam)) throw IoError("reference " + v.name + " has no camera file");
        v.camera = read_camera(cam);
        v.image = read_timg(entry.path());
        if (v.image.width != v.camera.width || v.image.height != v.camera.height)
            throw IoError("reference " + v.name + " does not match its camera size");
        out.push_back(std::move(v));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return out;
}

}  // namespace tetsculpt
