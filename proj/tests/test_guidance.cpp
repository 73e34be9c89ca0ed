#include <algorithm>
#include <fstream>
#include <numeric>

#include "support.hpp"
#include "tetsculpt/constraints.hpp"
#include "tetsculpt/guidance.hpp"

using namespace tetsculpt;
using testing_support::rel_err;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, c);
    for (double& v : img.pixels) v = u(rng);
    return img;
}

double dot(const Image& a, const Image& b) {
    return std::inner_product(a.pixels.begin(), a.pixels.end(), b.pixels.begin(), 0.0);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Field fitted to a sphere SDF with a few hundred Adam steps.
FieldParams sphere_field(double radius, int outputs = 1) {
    FieldConfig c;
    c.levels = 4;
    c.base_resolution = 4;
    c.table_size = 1u << 12;
    c.mlp_hidden = {16};
    c.output_dim = outputs;
    FieldParams f = field_init(c, 5);
    PrimitiveUnion u;
    u.add(Sphere{Vec3::Zero(), radius});
    const SdfSource src(u);
    const PointSampleSet s = sample_constraint_points(make_icosphere(3, radius), 1500, 500, 0.05, 9);
    std::vector<double> m(f.values.size(), 0.0), v(f.values.size(), 0.0);
    for (int step = 1; step <= 300; ++step) {
        const FieldLoss l = loss_sdf_init(f, src, s);
        for (std::size_t i = 0; i < f.values.size(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * l.param_grad[i];
            v[i] = 0.99 * v[i] + 0.01 * l.param_grad[i] * l.param_grad[i];
            const double mh = m[i] / (1.0 - std::pow(0.9, step)), vh = v[i] / (1.0 - std::pow(0.99, step));
            f.values[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-15);
        }
    }
    return f;
}

Camera small_camera(const Vec3& pos, int size = 48) {
    Camera c;
    c.position = pos;
    c.width = c.height = size;
    return c;
}

struct GeometryFixture {
    FieldParams field = sphere_field(0.5);
    TetGrid grid = grid_init(17);
    MtResult mt;

    GeometryFixture() {
        evaluate_grid(grid, field);
        mt = marching_tetrahedra(grid);
    }
};

GeometryFixture& geometry_fixture() {
    static GeometryFixture fx;
    return fx;
}

}  // namespace

TEST_CASE("guidance config") {
    GuidanceConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.weight(0.3) == 1.0);
    c.weighting = Weighting::one_minus_t_squared;
    CHECK(c.weight(0.25) == doctest::Approx(0.5625));
    c.t_min = 0.5;
    c.t_max = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = GuidanceConfig{};
    c.strength = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = GuidanceConfig{};
    CHECK(c.t_max_at(1.0) == c.t_max);
    c.anneal_t_max = true;
    CHECK(c.t_max_at(0.0) == doctest::Approx(0.98));
    CHECK(c.t_max_at(1.0) == doctest::Approx(0.5));
    CHECK(c.t_max_at(0.5) == doctest::Approx(0.74));
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const double t = c.sample_t(seed, 1.0);
        CHECK(t >= c.t_min);
        CHECK(t <= 0.5);
    }
}

TEST_CASE("coarse input preparation") {
    SUBCASE("constant input") {
        const Image out = prep_coarse_input(Image(16, 16, 3, 0.25), Image(16, 16, 1, 0.75), 4, 4);
        CHECK(out.channels == 4);
        for (std::size_t p = 0; p < out.pixel_count(); ++p) {
            for (int c = 0; c < 3; ++c) CHECK(out.pixels[4 * p + c] == doctest::Approx(0.25));
            CHECK(out.pixels[4 * p + 3] == doctest::Approx(0.75));
        }
    }
    SUBCASE("identity scale is concatenation") {
        const Image n = random_image(10, 6, 3, 1), a = random_image(10, 6, 1, 2);
        const Image out = prep_coarse_input(n, a, 10, 6);
        for (std::size_t p = 0; p < n.pixel_count(); ++p) {
            for (int c = 0; c < 3; ++c) CHECK(out.pixels[4 * p + c] == doctest::Approx(n.pixels[3 * p + c]).epsilon(1e-14));
            CHECK(out.pixels[4 * p + 3] == doctest::Approx(a.pixels[p]).epsilon(1e-14));
        }
    }
    SUBCASE("matches channel-wise downscaling") {
        const Image n = random_image(24, 18, 3, 3), a = random_image(24, 18, 1, 4);
        const Image out = prep_coarse_input(n, a, 7, 5);
        for (int c = 0; c < 4; ++c) {
            Image plane(24, 18, 1);
            for (std::size_t p = 0; p < plane.pixel_count(); ++p)
                plane.pixels[p] = c < 3 ? n.pixels[3 * p + c] : a.pixels[p];
            const Image d = downscale(plane, 7, 5);
            for (std::size_t p = 0; p < d.pixel_count(); ++p) CHECK(std::abs(out.pixels[4 * p + c] - d.pixels[p]) < 1e-14);
        }
    }
    SUBCASE("backward is the adjoint") {
        const Image n = random_image(20, 20, 3, 5), a = random_image(20, 20, 1, 6);
        const Image g = random_image(6, 6, 4, 7);
        const auto [gn, ga] = prep_coarse_input_backward(g, 20, 20);
        CHECK(rel_err(dot(prep_coarse_input(n, a, 6, 6), g), dot(n, gn) + dot(a, ga)) < 1e-12);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(prep_coarse_input(Image(8, 8, 3), Image(8, 7, 1), 4, 4), ContractError);
    }
}

TEST_CASE("reference guidance") {
    const Image ref = random_image(16, 16, 3, 11);
    GuidanceConfig cfg;

    SUBCASE("input equal to the reference") {
        const GuidanceSignal s = reference_guidance(ref, ref, cfg, 1);
        CHECK(s.diagnostic == 0.0);
        CHECK(std::all_of(s.grad.pixels.begin(), s.grad.pixels.end(), [](double g) { return g == 0.0; }));
    }
    SUBCASE("strength scales the gradient") {
        cfg.strength = 2.0;
        const Image x = random_image(16, 16, 3, 12);
        const GuidanceSignal s = reference_guidance(x, ref, cfg, 1);
        for (std::size_t i = 0; i < x.pixels.size(); ++i) CHECK(s.grad.pixels[i] == 2.0 * (x.pixels[i] - ref.pixels[i]));
    }
    SUBCASE("gradient of the diagnostic") {
        Image x = random_image(16, 16, 3, 13);
        const GuidanceSignal s = reference_guidance(x, ref, cfg, 1);
        for (std::size_t i : {0u, 77u, 400u, 767u}) {
            const double x0 = x.pixels[i];
            const double fd = testing_support::central_diff(
                [&](double v) {
                    x.pixels[i] = v;
                    return reference_guidance(x, ref, cfg, 1).diagnostic;
                },
                x0, 1e-4);
            x.pixels[i] = x0;
            CHECK(rel_err(s.grad.pixels[i], fd) < 1e-3);
        }
    }
    SUBCASE("descent converges to the reference") {
        Image x(16, 16, 3);
        int steps = 0;
        double err = 1.0;
        while (steps < 500 && err > 1e-4) {
            const GuidanceSignal s = reference_guidance(x, ref, cfg, steps);
            for (std::size_t i = 0; i < x.pixels.size(); ++i) x.pixels[i] -= 0.1 * s.grad.pixels[i];
            ++steps;
            err = 0.0;
            for (std::size_t i = 0; i < x.pixels.size(); ++i) err = std::max(err, std::abs(x.pixels[i] - ref.pixels[i]));
        }
        CHECK(err <= 1e-4);
        CHECK(steps <= 500);
    }
    SUBCASE("shape mismatch") { CHECK_THROWS_AS(reference_guidance(ref, Image(16, 16, 1), cfg, 1), ContractError); }
}

TEST_CASE("gaussian blur") {
    const Image img = random_image(9, 7, 2, 3);
    CHECK(gaussian_blur(img, 0.0).pixels == img.pixels);
    const Image flat = gaussian_blur(Image(9, 7, 2, 0.4), 1.5);
    for (double v : flat.pixels) CHECK(v == doctest::Approx(0.4).epsilon(1e-14));
    // Mass is preserved away from the borders.
    Image impulse(21, 21, 1);
    impulse.at(10, 10) = 1.0;
    const Image b = gaussian_blur(impulse, 1.0);
    CHECK(std::accumulate(b.pixels.begin(), b.pixels.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b.at(10, 10) > b.at(11, 10));
    CHECK(b.at(11, 10) == doctest::Approx(b.at(10, 11)).epsilon(1e-14));
}

TEST_CASE("mock score guidance") {
    GuidanceConfig cfg;

    SUBCASE("degenerate denoiser gives no signal") {
        cfg.t_min = 0.0;
        cfg.t_max = 1e-14;
        cfg.blur_radius = 0.0;
        const GuidanceSignal s = mock_sds_guidance(random_image(8, 8, 3, 1), cfg, 4);
        for (double g : s.grad.pixels) CHECK(std::abs(g) < 1e-13);
    }
    SUBCASE("constant input has no drift") {
        cfg.t_min = 0.0;
        cfg.t_max = 1e-14;
        const GuidanceSignal s = mock_sds_guidance(Image(8, 8, 3, 0.3), cfg, 4);
        for (double g : s.grad.pixels) CHECK(std::abs(g) < 1e-13);
    }
    SUBCASE("reproducible per seed") {
        const Image x = random_image(12, 12, 3, 2);
        const GuidanceSignal a = mock_sds_guidance(x, cfg, 77), b = mock_sds_guidance(x, cfg, 77);
        CHECK(a.grad.pixels == b.grad.pixels);
        CHECK(a.t == b.t);
        CHECK(mock_sds_guidance(x, cfg, 78).grad.pixels != a.grad.pixels);
    }
    SUBCASE("noise term is zero-mean over seeds") {
        const Image x(6, 6, 1, 0.5);
        const int n = 10000;
        std::vector<double> sum(x.pixels.size(), 0.0), sq(x.pixels.size(), 0.0);
        for (int seed = 0; seed < n; ++seed) {
            const GuidanceSignal s = mock_sds_guidance(x, cfg, static_cast<std::uint64_t>(seed));
            for (std::size_t i = 0; i < sum.size(); ++i) {
                sum[i] += s.grad.pixels[i];
                sq[i] += s.grad.pixels[i] * s.grad.pixels[i];
            }
        }
        for (std::size_t i = 0; i < sum.size(); ++i) {
            const double mean = sum[i] / n;
            const double sd = std::sqrt(sq[i] / n - mean * mean);
            CHECK(sd > 0.0);
            CHECK(std::abs(mean) <= 3.0 * sd / 100.0);
        }
    }
    SUBCASE("drift smooths a non-constant input") {
        cfg.t_min = 0.0;
        cfg.t_max = 1e-14;
        Image x(11, 11, 1);
        x.at(5, 5) = 1.0;
        const GuidanceSignal s = mock_sds_guidance(x, cfg, 1);
        CHECK(s.grad.at(5, 5) > 0.0);  // descending lowers the spike
        CHECK(s.grad.at(4, 5) < 0.0);
    }
}

TEST_CASE("zero signal gives zero parameter gradients") {
    auto& fx = geometry_fixture();
    REQUIRE_FALSE(fx.mt.mesh.faces.empty());
    const GeometryView view = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(0, 0, 2.5)));
    GuidanceSignal s;
    s.grad = Image(48, 48, 3);
    s.token = view.render.frame.token;
    std::vector<double> g(fx.field.values.size(), 0.0);
    apply_guidance(s, view, GuidanceStage::refine_normal, g);
    CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("stale signals are rejected") {
    auto& fx = geometry_fixture();
    const GeometryView a = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(0, 0, 2.5)));
    const GeometryView b = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(0, 0, 2.5)));
    GuidanceSignal s = reference_guidance(a.render.frame.normal, b.render.frame.normal, GuidanceConfig{}, 1);
    std::vector<double> g(fx.field.values.size(), 0.0);
    CHECK_NOTHROW(apply_guidance(s, a, GuidanceStage::refine_normal, g));
    CHECK_THROWS_AS(apply_guidance(s, b, GuidanceStage::refine_normal, g), ContractError);
    CHECK_THROWS_AS(apply_guidance(s, a, GuidanceStage::coarse_normal, g), ContractError);
}

TEST_CASE("guidance chain equals the composed backward passes") {
    auto& fx = geometry_fixture();
    const GeometryView view = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(0.4, 0.3, 2.4)));
    const Image input = geometry_guidance_input(view, GuidanceStage::coarse_normal, 12, 12);
    CHECK(input.channels == 4);
    CHECK(input.token == view.render.frame.token);
    const GuidanceSignal s = reference_guidance(input, random_image(12, 12, 4, 3, 0.0, 1.0), GuidanceConfig{}, 2);

    std::vector<double> chained(fx.field.values.size(), 0.0);
    apply_guidance(s, view, GuidanceStage::coarse_normal, chained);

    const auto [gn, ga] = prep_coarse_input_backward(s.grad, 48, 48);
    const std::vector<Vec3> vg = render_normal_mask_backward(view.render, fx.mt.mesh, &gn, &ga);
    const MtGradient mg = mt_backward(fx.grid, fx.mt.provenance, vg);
    std::vector<double> manual(fx.field.values.size(), 0.0);
    evaluate_grid_backward(fx.grid, fx.field, mg, manual);

    CHECK(dot(manual, manual) > 0.0);
    for (std::size_t i = 0; i < manual.size(); ++i) CHECK(chained[i] == manual[i]);
}

TEST_CASE("guidance is additive across cameras") {
    auto& fx = geometry_fixture();
    const GeometryView a = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(0, 0, 2.5)));
    const GeometryView b = render_geometry_view(fx.grid, fx.field, fx.mt, small_camera(Vec3(2.5, 0, 0)));
    const Image ref(48, 48, 3);
    const GuidanceSignal sa = reference_guidance(a.render.frame.normal, ref, GuidanceConfig{}, 1);
    const GuidanceSignal sb = reference_guidance(b.render.frame.normal, ref, GuidanceConfig{}, 2);
    std::vector<double> ga(fx.field.values.size(), 0.0), gb = ga, both = ga;
    apply_guidance(sa, a, GuidanceStage::refine_normal, ga);
    apply_guidance(sb, b, GuidanceStage::refine_normal, gb);
    apply_guidance(sa, a, GuidanceStage::refine_normal, both);
    apply_guidance(sb, b, GuidanceStage::refine_normal, both);
    for (std::size_t i = 0; i < both.size(); ++i) CHECK(std::abs(both[i] - (ga[i] + gb[i])) < 1e-12);
}

TEST_CASE("a descent step toward a shifted sphere lowers the diagnostic") {
    FieldParams field = sphere_field(0.5);
    TetGrid grid = grid_init(17);
    const Camera cam = small_camera(Vec3(0, 0, 2.5), 64);
    const TriMesh shifted = make_icosphere(4, 0.5, Vec3(0.12, 0.0, 0.0));
    const Image ref = render_normal_mask(shifted, cam).frame.normal;

    auto diagnostic = [&](const FieldParams& f, std::vector<double>* grad) {
        TetGrid g = grid;
        evaluate_grid(g, f);
        const MtResult mt = marching_tetrahedra(g);
        const GeometryView view = render_geometry_view(g, f, mt, cam);
        const GuidanceSignal s = reference_guidance(view.render.frame.normal, ref, GuidanceConfig{}, 3);
        if (grad) apply_guidance(s, view, GuidanceStage::refine_normal, *grad);
        return s.diagnostic;
    };

    std::vector<double> grad(field.values.size(), 0.0);
    const double d0 = diagnostic(field, &grad);
    const double gnorm = std::sqrt(dot(grad, grad));
    REQUIRE(gnorm > 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) field.values[i] -= 2e-3 * grad[i] / gnorm;
    const double d1 = diagnostic(field, nullptr);
    CHECK(d1 < d0);
}

TEST_CASE("appearance chain matches central differences") {
    auto& fx = geometry_fixture();
    FieldConfig c;
    c.levels = 3;
    c.base_resolution = 3;
    c.table_size = 1u << 10;
    c.mlp_hidden = {8};
    c.output_dim = kMaterialDims;
    FieldParams app = field_init(c, 21);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& v : app.values) v += 0.3 * u(rng);

    const Camera cam = small_camera(Vec3(0.5, 0.8, 2.3), 32);
    const LightRig rig = LightRig::studio();
    const Image w_color = random_image(32, 32, 3, 5);
    const Image w_albedo = random_image(32, 32, 3, 6);

    const AppearanceView view = render_appearance_view(fx.mt.mesh, app, cam, rig);
    REQUIRE(view.pixels.size() > 100);
    const Image albedo = render_albedo(view, app);
    CHECK(albedo.pixels == view.frame.albedo.pixels);

    auto objective = [&](const FieldParams& f) {
        const AppearanceView v = render_appearance_view(fx.mt.mesh, f, cam, rig);
        return dot(v.color, w_color) + dot(v.frame.albedo, w_albedo);
    };
    std::vector<double> grad(app.values.size(), 0.0);
    appearance_view_backward(view, &w_color, &w_albedo, grad);

    std::vector<std::size_t> idx(grad.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + 15, idx.end(),
                      [&](auto a, auto b) { return std::abs(grad[a]) > std::abs(grad[b]); });
    idx.resize(15);
    for (std::size_t i : idx) {
        FieldParams p = app;
        const double x0 = p.values[i];
        const double fd = testing_support::central_diff(
            [&](double x) {
                p.values[i] = x;
                return objective(p);
            },
            x0, 1e-5);
        CHECK(rel_err(grad[i], fd) < 1e-3);
    }

    GuidanceSignal s = reference_guidance(view.color, Image(32, 32, 3), GuidanceConfig{}, 1);
    std::vector<double> via_apply(app.values.size(), 0.0), direct(app.values.size(), 0.0);
    apply_guidance(s, view, via_apply);
    appearance_view_backward(view, &s.grad, nullptr, direct);
    CHECK(via_apply == direct);
    s.token += 1;
    CHECK_THROWS_AS(apply_guidance(s, view, via_apply), ContractError);
}

TEST_CASE("reference sets") {
    const auto dir = std::filesystem::temp_directory_path() / "tetsculpt_refs";
    std::filesystem::remove_all(dir);
    ReferenceView a{"front", small_camera(Vec3(0, 0.2, 3.0), 16), random_image(16, 16, 3, 1)};
    a.camera.fov_deg = 35.0;
    ReferenceView b{"back", small_camera(Vec3(0, 0.2, -3.0), 16), random_image(16, 16, 4, 2)};
    save_reference_view(dir, a);
    save_reference_view(dir, b);

    const auto views = load_reference_set(dir);
    REQUIRE(views.size() == 2);
    CHECK(views[0].name == "back");
    CHECK(views[1].camera.fov_deg == 35.0);
    CHECK(views[1].camera.position == a.camera.position);
    CHECK(views[1].camera.width == 16);
    for (std::size_t i = 0; i < a.image.pixels.size(); ++i)
        CHECK(views[1].image.pixels[i] == doctest::Approx(a.image.pixels[i]).epsilon(1e-6));

    std::filesystem::remove(dir / "back.cam");
    CHECK_THROWS_AS(load_reference_set(dir), IoError);
    std::ofstream(dir / "back.cam") << "40\n0 0 3\n0 0 0\n";
    CHECK_THROWS_AS(load_reference_set(dir), IoError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_reference_set(dir), IoError);
}
