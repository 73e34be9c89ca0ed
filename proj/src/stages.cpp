#include <iostream>
#include <random>

#include "tetsculpt/pipeline.hpp"

namespace tetsculpt {

namespace {

enum : std::uint64_t {
    kStreamGeometryInit = 1,
    kStreamAppearanceInit = 2,
    kStreamInitSamples = 10,
    kStreamHeldOut = 11,
    kStreamCamera = 20,
    kStreamGuidance = 21,
    kStreamConstraint = 22,
    kStreamAppearanceCamera = 30,
    kStreamAppearanceGuidance = 31,
};

[[noreturn]] void diverged(const RunConfig& config, const FieldParams& field, const std::string& what) {
    std::string where;
    try {
        std::filesystem::create_directories(config.output_dir);
        const auto path = std::filesystem::path(config.output_dir) / "divergence.tfld";
        save_field(path, field);
        where = " (parameters dumped to " + path.string() + ")";
    } catch (const std::exception&) {
    }
    throw NumericError(what + where);
}

void check_finite(const RunConfig& config, const FieldParams& field, double loss, const std::vector<double>& grad,
                  const char* stage) {
    if (!std::isfinite(loss)) diverged(config, field, std::string(stage) + ": loss is not finite");
    if (!all_finite(grad)) diverged(config, field, std::string(stage) + ": gradient is not finite");
}

Camera orbit_sample(const RunConfig& config, const Vec3& center, std::span<const std::pair<int, Vec3>> anchors,
                    const GuidanceBackend& backend, long step, int size, std::uint64_t stream) {
    if (!backend.cameras.empty()) return backend.cameras[static_cast<std::size_t>(step) % backend.cameras.size()];
    const std::uint64_t seed = mix_seed(mix_seed(config.seed, stream), static_cast<std::uint64_t>(step));
    CameraRig rig;
    rig.body_center = center;
    rig.full_body_distance = config.camera.full_body_distance;
    rig.part_distance = config.camera.part_distance;
    rig.fov_deg = config.camera.fov_deg;
    rig.elevation_min_deg = config.camera.elevation_min_deg;
    rig.elevation_max_deg = config.camera.elevation_max_deg;
    rig.width = rig.height = size;
    std::mt19937_64 rng(seed);
    ViewMode mode = ViewMode::full_body;
    if (!anchors.empty() && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.camera.part_probability) {
        const auto pick = std::uniform_int_distribution<std::size_t>(0, anchors.size() - 1)(rng);
        rig.part_anchors[anchors[pick].first] = anchors[pick].second;
        mode = ViewMode::part;
        return sample_camera(rig, mode, anchors[pick].first, rng()).camera;
    }
    return sample_camera(rig, mode, 0, rng()).camera;
}

GuidanceSignal guidance_signal(const GuidanceBackend& backend, const Image& input, const Image* reference,
                               std::uint64_t seed, double progress) {
    if (backend.kind == GuidanceBackendKind::mock) return mock_sds_guidance(input, backend.config, seed, progress);
    require(reference != nullptr, "reference guidance without a reference image");
    return reference_guidance(input, *reference, backend.config, seed, progress);
}

Image view_reference(const std::vector<ReferenceView>& views, const Camera& cam, const Image& like) {
    for (const auto& v : views) {
        const Camera& c = v.camera;
        if (c.position == cam.position && c.target == cam.target && c.up == cam.up && c.fov_deg == cam.fov_deg &&
            c.width == cam.width && c.height == cam.height) {
            if (v.image.same_shape(like)) return v.image;
            require(v.image.channels == like.channels, "reference view has the wrong channel count");
            return downscale(v.image, like.width, like.height);
        }
    }
    throw ContractError("no reference view for this camera");
}

}  // namespace

Camera step_camera(const RunConfig& config, const HumanPrior& prior, const GuidanceBackend& backend, long step,
                   int size, std::uint64_t salt) {
    return orbit_sample(config, prior.body_center, prior.anchors, backend, step, size, kStreamCamera + 100 * salt);
}

// ---------------------------------------------------------------------------
// Backends

Image shade_reference(const AppearanceView& view, const std::function<Material(const Vec3&)>& material) {
    FrameBuffer fb = view.frame;
    for (std::size_t p : view.pixels) {
        const Vec3 pos(fb.position.pixels[3 * p], fb.position.pixels[3 * p + 1], fb.position.pixels[3 * p + 2]);
        const Material m = material(pos);
        for (int c = 0; c < 3; ++c) {
            fb.albedo.pixels[3 * p + c] = m.albedo[c];
            fb.shading_normal.pixels[3 * p + c] = m.normal_ts[c];
        }
        fb.specular.pixels[2 * p] = m.roughness;
        fb.specular.pixels[2 * p + 1] = m.metalness;
    }
    return shade_pbr(fb, view.lights);
}

GuidanceBackend mesh_reference_backend(const TriMesh& target, const GuidanceConfig& config,
                                       std::function<Material(const Vec3&)> material) {
    GuidanceBackend b;
    b.kind = GuidanceBackendKind::reference;
    b.config = config;
    auto mesh = std::make_shared<const TriMesh>(target);
    b.geometry_reference = [mesh](const Camera& cam, const Image& input) {
        const NormalMaskRender r = render_normal_mask(*mesh, cam);
        if (input.channels == 4) return prep_coarse_input(r.frame.normal, r.frame.mask, input.width, input.height);
        require(input.same_shape(r.frame.normal), "guidance input does not match the camera");
        return r.frame.normal;
    };
    if (!material) material = [](const Vec3&) { return Material{}; };
    b.color_reference = [material](const AppearanceView& view) { return shade_reference(view, material); };
    return b;
}

GuidanceBackend reference_set_backend(std::vector<ReferenceView> views, const GuidanceConfig& config) {
    require(!views.empty(), "reference set is empty");
    GuidanceBackend b;
    b.kind = GuidanceBackendKind::reference;
    b.config = config;
    for (const auto& v : views) b.cameras.push_back(v.camera);
    auto shared = std::make_shared<const std::vector<ReferenceView>>(std::move(views));
    b.geometry_reference = [shared](const Camera& cam, const Image& input) { return view_reference(*shared, cam, input); };
    b.color_reference = [shared](const AppearanceView& view) {
        return view_reference(*shared, view.frame.camera, view.color);
    };
    return b;
}

GuidanceBackend mock_backend(const GuidanceConfig& config) {
    GuidanceBackend b;
    b.kind = GuidanceBackendKind::mock;
    b.config = config;
    return b;
}

GuidanceBackend make_backend(const RunConfig& config) {
    const GuidanceSettings& g = config.guidance;
    switch (g.backend) {
        case GuidanceBackendKind::none: {
            GuidanceBackend b;
            b.config = g.config;
            return b;
        }
        case GuidanceBackendKind::mock:
            return mock_backend(g.config);
        case GuidanceBackendKind::reference:
            break;
    }
    if (!g.target_mesh.empty()) {
        Material m;
        m.albedo = g.target_albedo;
        return mesh_reference_backend(read_obj(g.target_mesh), g.config, [m](const Vec3&) { return m; });
    }
    return reference_set_backend(load_reference_set(g.reference_dir), g.config);
}

// ---------------------------------------------------------------------------
// Geometry

GeometryState make_geometry_state(const RunConfig& config, const HumanPrior& prior) {
    config.validate();
    GeometryState s;
    s.field = field_init(config.geometry_field, mix_seed(config.seed, kStreamGeometryInit));
    s.grid = grid_init(config.grid.resolution);
    s.templ = template_init(prior.sdf, prior.mesh, config.schedule);
    s.optimizer = Adam(s.field.values.size(), config.geometry_optimizer);
    return s;
}

InitReport stage_init(const RunConfig& config, const HumanPrior& prior, GeometryState& state) {
    InitReport report;
    Adam adam(state.field.values.size(), config.geometry_optimizer);
    for (long i = 0; i < config.steps.init; ++i) {
        const PointSampleSet samples =
            sample_constraint_points(prior.mesh, config.sampling.surface, config.sampling.random, config.sampling.jitter,
                                     mix_seed(mix_seed(config.seed, kStreamInitSamples), i));
        FieldLoss l = loss_sdf_init(state.field, prior.sdf, samples);
        check_finite(config, state.field, l.value, l.param_grad, "init");
        adam.step(state.field.values, l.param_grad);
        const std::vector<double> row{l.value, 0.0, 0.0, 0.0, 0.0, 0.0};
        state.log.record(state.log_step++, row, l.value);
        report.final_loss = l.value;
    }

    const std::vector<Vec3> held = sample_surface(prior.mesh, std::max<std::size_t>(config.sampling.held_out, 1),
                                                  mix_seed(config.seed, kStreamHeldOut));
    std::vector<Vec3> q(held.size());
    for (std::size_t i = 0; i < held.size(); ++i) q[i] = grid_to_field(held[i]);
    const std::vector<double> f = field_eval(state.field, q);
    const std::vector<double> f0 = prior.sdf.query(std::span<const Vec3>(held));
    const int dim = state.field.config.output_dim;
    for (std::size_t i = 0; i < held.size(); ++i) report.held_out_error += std::abs(f[i * dim] - f0[i]);
    report.held_out_error /= static_cast<double>(held.size());
    evaluate_grid(state.grid, state.field);
    return report;
}

void geometry_step(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                   const GuidanceBackend& backend, GuidanceStage stage, double progress) {
    require(stage != GuidanceStage::color, "geometry step needs a geometry stage");
    const LossWeights& w = config.weights;
    const std::uint64_t step_seed = mix_seed(config.seed, static_cast<std::uint64_t>(state.step));

    evaluate_grid(state.grid, state.field);
    state.templ.step = state.step;
    if (geometry_update_due(state.templ)) {
        TemplateUpdate up = template_update_geometry(state.templ, state.grid);
        if (up.status == Status::warning) ++state.empty_mesh_warnings;
        state.templ = std::move(up.state);
    }
    const MtResult mt = marching_tetrahedra(state.grid);

    std::vector<double> grad(state.field.values.size(), 0.0);
    GeometryLossTerms terms;
    const int size = config.render.size;

    if (!mt.mesh.faces.empty()) {
        const Camera cam = step_camera(config, prior, backend, state.step, size, 0);
        const GeometryView view = render_geometry_view(state.grid, state.field, mt, cam);
        const Image& n_cur = view.render.frame.normal;
        Image normal_grad(n_cur.width, n_cur.height, 3);
        bool have_normal_grad = false;

        if (backend.kind != GuidanceBackendKind::none) {
            const Image input = geometry_guidance_input(view, stage, config.render.coarse_size, config.render.coarse_size);
            Image reference;
            if (backend.kind == GuidanceBackendKind::reference) reference = backend.geometry_reference(cam, input);
            GuidanceSignal signal =
                guidance_signal(backend, input, &reference, mix_seed(step_seed, kStreamGuidance), progress);
            terms.sds = signal.diagnostic;
            for (double& g : signal.grad.pixels) g *= w.lambda_sds;
            if (stage == GuidanceStage::coarse_normal) {
                apply_guidance(signal, view, stage, grad);
            } else {
                add_scaled(normal_grad, signal.grad, 1.0);
                have_normal_grad = true;
            }
        }

        if (stage == GuidanceStage::refine_normal && (w.beta_global > 0.0 || w.beta_local > 0.0)) {
            if (w.beta_global > 0.0) {
                const Image n_tmp = render_normal_mask(state.templ.geometry_mesh, cam).frame.normal;
                const ImageLoss glb = loss_normal_global(n_cur, n_tmp, config.normal_masking);
                terms.normal_global = glb.value;
                add_scaled(normal_grad, glb.grad, w.beta_global);
            }
            if (w.beta_local > 0.0) {
                std::vector<PartNormalRender> parts;
                for (const auto& [id, k] : w.part_normal_weights) {
                    auto it = prior.parts.find(id);
                    if (k > 0.0 && it != prior.parts.end())
                        parts.push_back({id, render_normal_mask(it->second, cam).frame.normal});
                }
                const ImageLoss loc = loss_normal_local(n_cur, parts, w.part_normal_weights);
                terms.normal_local = loc.value;
                add_scaled(normal_grad, loc.grad, w.beta_local);
            }
            have_normal_grad = true;
        }
        if (have_normal_grad) geometry_view_backward(view, &normal_grad, nullptr, grad);
    } else {
        ++state.empty_mesh_warnings;
    }

    const std::uint64_t cseed = mix_seed(step_seed, kStreamConstraint);
    if (w.alpha_global > 0.0) {
        const PointSampleSet samples = sample_constraint_points(
            state.templ.geometry_mesh, config.sampling.surface, config.sampling.random, config.sampling.jitter, cseed);
        const FieldLoss l = loss_sdf_global(state.field, state.templ.geometry, samples);
        terms.sdf_global = l.value;
        add_scaled(grad, l.param_grad, w.alpha_global);
    }
    if (w.alpha_local > 0.0 && config.sampling.part > 0) {
        std::vector<PointSampleSet> parts;
        std::map<int, double> used;
        for (const auto& [id, wi] : w.part_weights) {
            auto it = prior.parts.find(id);
            if (wi <= 0.0 || it == prior.parts.end()) continue;
            PointSampleSet s = sample_constraint_points(it->second, config.sampling.part, 0, config.sampling.jitter,
                                                        mix_seed(cseed, static_cast<std::uint64_t>(id)));
            s.part_id = id;
            parts.push_back(std::move(s));
            used[id] = wi;
        }
        if (!parts.empty()) {
            const FieldLoss l = loss_sdf_local(state.field, prior.sdf, parts, used);
            terms.sdf_local = l.value;
            add_scaled(grad, l.param_grad, w.alpha_local);
        }
    }

    const double total = total_geometry_loss(terms, w);
    check_finite(config, state.field, total, grad, "geometry");
    state.optimizer.step(state.field.values, grad);
    const std::vector<double> row{0.0, terms.sds, terms.sdf_global, terms.sdf_local, terms.normal_global,
                                  terms.normal_local};
    state.log.record(state.log_step++, row, total);
    ++state.step;
}

void stage_coarse(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                  const GuidanceBackend& backend) {
    const long n = config.steps.coarse;
    for (long i = 0; i < n; ++i)
        geometry_step(config, prior, state, backend, GuidanceStage::coarse_normal, static_cast<double>(i) / n);
    evaluate_grid(state.grid, state.field);
}

RefineReport stage_refine(const RunConfig& config, const HumanPrior& prior, GeometryState& state,
                          const GuidanceBackend& backend) {
    evaluate_grid(state.grid, state.field);
    RefineReport report;
    report.tets_before = state.grid.tets.size();
    SubdivisionResult sub = subdivide_near_surface(state.grid, config.grid.subdivision_threshold);
    report.selected = sub.selected;
    state.grid = std::move(sub.grid);
    report.tets_after = state.grid.tets.size();
    evaluate_grid(state.grid, state.field);

    const long n = config.steps.refine;
    for (long i = 0; i < n; ++i)
        geometry_step(config, prior, state, backend, GuidanceStage::refine_normal, static_cast<double>(i) / n);
    evaluate_grid(state.grid, state.field);
    return report;
}

TriMesh extract_mesh(GeometryState& state) {
    evaluate_grid(state.grid, state.field);
    return marching_tetrahedra(state.grid).mesh;
}

// ---------------------------------------------------------------------------
// Appearance

AppearanceState make_appearance_state(const RunConfig& config, const TriMesh& mesh) {
    config.validate();
    require(!mesh.faces.empty(), "appearance stage needs a mesh");
    AppearanceState s;
    s.field = field_init(config.appearance_field, mix_seed(config.seed, kStreamAppearanceInit));
    s.templ.schedule = config.schedule;
    s.optimizer = Adam(s.field.values.size(), config.appearance_optimizer);
    s.map = normalize_points_uniform({}, bounding_box(mesh.vertices)).transform.point_map();
    return s;
}

void appearance_step(const RunConfig& config, const TriMesh& mesh, AppearanceState& state,
                     const GuidanceBackend& backend, double progress) {
    const LossWeights& w = config.weights;
    state.templ.step = state.step;
    if (appearance_update_due(state.templ)) state.templ = template_update_appearance(state.templ, state.field);

    const Eigen::AlignedBox3d box = bounding_box(mesh.vertices);
    const Camera cam = orbit_sample(config, box.center(), {}, backend, state.step, config.render.appearance_size,
                                    kStreamAppearanceCamera);
    const AppearanceView view = render_appearance_view(mesh, state.field, cam, LightRig::studio(), state.map);
    std::vector<double> grad(state.field.values.size(), 0.0);
    double sds = 0.0, lightness = 0.0;

    if (backend.kind != GuidanceBackendKind::none) {
        Image reference;
        if (backend.kind == GuidanceBackendKind::reference) reference = backend.color_reference(view);
        GuidanceSignal signal =
            guidance_signal(backend, view.color, &reference,
                            mix_seed(mix_seed(config.seed, kStreamAppearanceGuidance), state.step), progress);
        sds = signal.diagnostic;
        for (double& g : signal.grad.pixels) g *= w.lambda_sds;
        apply_guidance(signal, view, grad);
    }
    if (state.templ.appearance && w.gamma_lightness > 0.0) {
        const Image kd_tmp = render_albedo(view, *state.templ.appearance);
        ImageLoss l = loss_lightness(view.frame.albedo, kd_tmp);
        lightness = l.value;
        for (double& g : l.grad.pixels) g *= w.gamma_lightness;
        appearance_view_backward(view, nullptr, &l.grad, grad);
    }

    const double total = w.lambda_sds * sds + w.gamma_lightness * lightness;
    check_finite(config, state.field, total, grad, "appearance");
    state.optimizer.step(state.field.values, grad);
    const std::vector<double> row{sds, lightness};
    state.log.record(state.step, row, total);
    ++state.step;
}

void stage_appearance(const RunConfig& config, const TriMesh& mesh, AppearanceState& state,
                      const GuidanceBackend& backend) {
    const long n = config.steps.appearance;
    for (long i = 0; i < n; ++i) appearance_step(config, mesh, state, backend, static_cast<double>(i) / n);
}

// ---------------------------------------------------------------------------
// Metrics

MeshDistance mesh_distance(const TriMesh& a, const TriMesh& b, std::size_t samples, std::uint64_t seed) {
    require(!a.faces.empty() && !b.faces.empty(), "mesh_distance needs non-empty meshes");
    require(samples > 0, "mesh_distance needs samples");
    const MeshSdf sa(a), sb(b);
    MeshDistance d;
    double sum = 0.0;
    for (const Vec3& p : sample_surface(a, samples, mix_seed(seed, 1))) {
        const double u = sb.unsigned_distance(p);
        sum += u;
        d.hausdorff = std::max(d.hausdorff, u);
    }
    for (const Vec3& p : sample_surface(b, samples, mix_seed(seed, 2))) {
        const double u = sa.unsigned_distance(p);
        sum += u;
        d.hausdorff = std::max(d.hausdorff, u);
    }
    d.chamfer = sum / (2.0 * static_cast<double>(samples));
    return d;
}

double mean_dihedral_roughness(const TriMesh& mesh) {
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (int k = 0; k < 3; ++k) {
            int a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_faces[{a, b}].push_back(static_cast<int>(f));
        }
    auto normal = [&](int f) {
        const auto& t = mesh.faces[f];
        const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        const double len = n.norm();
        return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
    };
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [edge, faces] : edge_faces) {
        if (faces.size() != 2) continue;
        sum += std::acos(std::clamp(normal(faces[0]).dot(normal(faces[1])), -1.0, 1.0));
        ++count;
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace tetsculpt
