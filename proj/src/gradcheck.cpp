#include "tetsculpt/gradcheck.hpp"

#include <functional>
#include <random>

#include "tetsculpt/constraints.hpp"
#include "tetsculpt/guidance.hpp"

namespace tetsculpt {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Image random_image(int w, int h, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Image img(w, h, c);
    for (double& v : img.pixels) v = uniform(rng, lo, hi);
    return img;
}

double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += a.pixels[i] * b.pixels[i];
    return s;
}

// Accumulates analytic and finite-difference entries for one seed.
struct Comparison {
    std::vector<double> analytic, numeric;

    void add(double a, double fd) {
        analytic.push_back(a);
        numeric.push_back(fd);
    }
    double rel_error() const {
        double diff = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            ref += numeric[i] * numeric[i];
        }
        if (ref == 0.0) return diff == 0.0 ? 0.0 : 1.0;
        return std::sqrt(diff / ref);
    }
};

double central(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------

Comparison check_field(Rng& rng) {
    FieldConfig cfg;
    cfg.levels = 4;
    cfg.base_resolution = 2;
    cfg.table_size = 1u << 6;
    cfg.mlp_hidden = {8, 8};
    cfg.output_dim = 3;
    FieldParams field = field_init(cfg, rng());
    for (double& v : field.values) v = uniform(rng, -0.5, 0.5);
    std::vector<Vec3> points(4);
    for (Vec3& p : points) p = Vec3(uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98));
    std::vector<double> up(points.size() * 3);
    for (double& v : up) v = uniform(rng, -1.0, 1.0);
    const FieldGradient g = field_backward(field, points, up);

    auto objective = [&](const FieldParams& f) {
        const auto out = field_eval(f, points);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
        return s;
    };
    Comparison cmp;
    std::vector<std::size_t> probes;
    for (std::size_t i = 0; i < field.values.size(); ++i)
        if (g.params[i] != 0.0 || i >= cfg.grid_param_count()) probes.push_back(i);
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(std::min<std::size_t>(probes.size(), 40));
    for (std::size_t i : probes) {
        auto f = [&](double v) {
            FieldParams q = field;
            q.values[i] = v;
            return objective(q);
        };
        cmp.add(g.params[i], central(f, field.values[i], 1e-6));
    }
    for (std::size_t p = 0; p < points.size(); ++p)
        for (int a = 0; a < 3; ++a) {
            auto f = [&](double v) {
                const FieldParams& q = field;
                std::vector<Vec3> moved = points;
                moved[p][a] = v;
                const auto out = field_eval(q, moved);
                double s = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
                return s;
            };
            cmp.add(g.points[p][a], central(f, points[p][a], 1e-7));
        }
    return cmp;
}

Comparison check_mt(Rng& rng) {
    TetGrid grid = grid_init(3);
    bool mixed = false;
    grid.sdf.resize(grid.vertices.size());
    while (!mixed) {
        for (double& s : grid.sdf) {
            s = uniform(rng, 0.05, 1.0);
            if (uniform(rng, 0.0, 1.0) < 0.5) s = -s;
        }
        mixed = *std::min_element(grid.sdf.begin(), grid.sdf.end()) < 0.0 &&
                *std::max_element(grid.sdf.begin(), grid.sdf.end()) > 0.0;
    }
    for (Vec3& o : grid.offsets) o = grid.max_offset() * Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const MtResult r = marching_tetrahedra(grid);
    std::vector<Vec3> up(r.mesh.vertices.size());
    for (Vec3& v : up) v = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const MtGradient g = mt_backward(grid, r.provenance, up);

    // The perturbations never flip a sign, so re-extraction keeps the vertex order.
    auto objective = [&](const TetGrid& gr) {
        const MtResult m = marching_tetrahedra(gr);
        require(m.mesh.vertices.size() == up.size(), "extraction changed under perturbation");
        double s = 0.0;
        for (std::size_t i = 0; i < up.size(); ++i) s += up[i].dot(m.mesh.vertices[i]);
        return s;
    };
    Comparison cmp;
    for (std::size_t i = 0; i < grid.vertices.size(); ++i) {
        auto fs = [&](double v) {
            TetGrid q = grid;
            q.sdf[i] = v;
            return objective(q);
        };
        cmp.add(g.sdf[i], central(fs, grid.sdf[i], 1e-6));
        for (int a = 0; a < 3; ++a) {
            auto fo = [&](double v) {
                TetGrid q = grid;
                q.offsets[i][a] = v;
                return objective(q);
            };
            cmp.add(g.offsets[i][a], central(fo, grid.offsets[i][a], 1e-6));
        }
    }
    return cmp;
}

Comparison check_render(Rng& rng) {
    TriMesh mesh = make_icosphere(2, 0.7);
    for (Vec3& v : mesh.vertices) v *= 1.0 + uniform(rng, -0.05, 0.05);
    CameraRig rig;
    rig.width = rig.height = 48;
    rig.full_body_distance = 2.6;
    const Camera cam = sample_camera(rig, ViewMode::full_body, 0, rng()).camera;
    const NormalMaskRender r0 = render_normal_mask(mesh, cam);
    const Image up_n = random_image(48, 48, 3, rng);
    const Image up_m = random_image(48, 48, 1, rng);

    std::vector<int> probes;
    {
        std::vector<int> facing, rim;
        const Vec3 dir = (cam.position - cam.target).normalized();
        for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
            const double c = mesh.vertices[v].normalized().dot(dir);
            if (c > 0.5) facing.push_back(static_cast<int>(v));
        }
        for (const auto& b : r0.band) rim.push_back(b.v0);
        std::shuffle(facing.begin(), facing.end(), rng);
        std::shuffle(rim.begin(), rim.end(), rng);
        for (std::size_t i = 0; i < std::min<std::size_t>(3, facing.size()); ++i) probes.push_back(facing[i]);
        for (std::size_t i = 0; i < std::min<std::size_t>(3, rim.size()); ++i) probes.push_back(rim[i]);
    }

    auto band_edges = [](const NormalMaskRender& r) {
        std::vector<std::pair<int, int>> e(r.frame.face_id.size(), {-1, -1});
        for (const auto& b : r.band) e[b.pixel] = {b.v0, b.v1};
        return e;
    };
    const auto e0 = band_edges(r0);
    const double h = 1e-6;
    Comparison cmp;
    for (int v : probes) {
        // Compare only over pixels whose discrete state is unchanged by all perturbations.
        std::vector<char> stable(r0.frame.face_id.size(), 1);
        std::array<std::array<NormalMaskRender, 2>, 3> moved;
        for (int a = 0; a < 3; ++a)
            for (int s = 0; s < 2; ++s) {
                TriMesh m = mesh;
                m.vertices[v][a] += s ? h : -h;
                moved[a][s] = render_normal_mask(m, cam);
                const auto e1 = band_edges(moved[a][s]);
                for (std::size_t p = 0; p < stable.size(); ++p)
                    stable[p] = stable[p] && moved[a][s].frame.face_id[p] == r0.frame.face_id[p] && e1[p] == e0[p];
            }
        Image gn = up_n, gm = up_m;
        for (std::size_t p = 0; p < stable.size(); ++p)
            if (!stable[p]) {
                for (int c = 0; c < 3; ++c) gn.pixels[3 * p + c] = 0.0;
                gm.pixels[p] = 0.0;
            }
        const auto g = render_normal_mask_backward(r0, mesh, &gn, &gm);
        for (int a = 0; a < 3; ++a) {
            const double plus = dot(moved[a][1].frame.normal, gn) + dot(moved[a][1].frame.mask, gm);
            const double minus = dot(moved[a][0].frame.normal, gn) + dot(moved[a][0].frame.mask, gm);
            cmp.add(g[v][a], (plus - minus) / (2.0 * h));
        }
    }
    return cmp;
}

Comparison check_shading(Rng& rng) {
    const TriMesh mesh = make_icosphere(2, 0.7);
    Camera cam;
    cam.width = cam.height = 24;
    cam.position = 3.0 * Vec3(uniform(rng, -1, 1), uniform(rng, -0.3, 0.6), uniform(rng, 0.5, 1)).normalized();
    FrameBuffer fb = render_normal_mask(mesh, cam).frame;
    fb.albedo = random_image(24, 24, 3, rng, 0.05, 0.95);
    fb.specular = random_image(24, 24, 2, rng, 0.2, 0.9);
    fb.shading_normal = Image(24, 24, 3);
    for (std::size_t p = 0; p < fb.face_id.size(); ++p) {
        const Vec3 n = Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), 1.0).normalized();
        for (int c = 0; c < 3; ++c) fb.shading_normal.pixels[3 * p + c] = n[c];
    }
    const LightRig lights = LightRig::studio();
    const Image up = random_image(24, 24, 3, rng);
    const ShadeGradient g = shade_pbr_backward(fb, lights, up);

    std::vector<std::size_t> covered;
    for (std::size_t p = 0; p < fb.face_id.size(); ++p)
        if (fb.covered(p)) covered.push_back(p);
    std::shuffle(covered.begin(), covered.end(), rng);
    covered.resize(std::min<std::size_t>(covered.size(), 6));
    Comparison cmp;
    auto probe = [&](Image FrameBuffer::*channel, const Image& grad, std::size_t index) {
        auto f = [&](double v) {
            FrameBuffer q = fb;
            (q.*channel).pixels[index] = v;
            return dot(shade_pbr(q, lights), up);
        };
        cmp.add(grad.pixels[index], central(f, (fb.*channel).pixels[index], 1e-6));
    };
    for (std::size_t p : covered) {
        for (int c = 0; c < 3; ++c) probe(&FrameBuffer::albedo, g.albedo, 3 * p + c);
        for (int c = 0; c < 2; ++c) probe(&FrameBuffer::specular, g.specular, 2 * p + c);
        for (int c = 0; c < 3; ++c) probe(&FrameBuffer::shading_normal, g.shading_normal, 3 * p + c);
    }
    return cmp;
}

Comparison check_lightness(Rng& rng) {
    const int side = 16 + static_cast<int>(rng() % 24);
    const Image cur = random_image(side, side, 3, rng, 0.0, 1.0);
    const Image tmp = random_image(side, side, 3, rng, 0.0, 1.0);
    const ImageLoss l = loss_lightness(cur, tmp);
    Comparison cmp;
    for (int k = 0; k < 30; ++k) {
        const std::size_t i = rng() % cur.pixels.size();
        auto f = [&](double v) {
            Image q = cur;
            q.pixels[i] = v;
            return loss_lightness(q, tmp).value;
        };
        cmp.add(l.grad.pixels[i], central(f, cur.pixels[i], 1e-6));
    }
    return cmp;
}

Comparison check_guidance(Rng& rng) {
    GuidanceConfig cfg;
    cfg.strength = uniform(rng, 0.1, 2.0);
    cfg.weighting = rng() % 2 ? Weighting::constant : Weighting::one_minus_t_squared;
    const Image input = random_image(12, 12, 4, rng);
    const Image ref = random_image(12, 12, 4, rng);
    const std::uint64_t seed = rng();
    const double progress = uniform(rng, 0.0, 1.0);
    const GuidanceSignal s = reference_guidance(input, ref, cfg, seed, progress);
    // The signal is the gradient of k * diagnostic with k fixed by the sampled t.
    const double k = cfg.strength * cfg.weight(s.t);
    Comparison cmp;
    for (int n = 0; n < 30; ++n) {
        const std::size_t i = rng() % input.pixels.size();
        auto f = [&](double v) {
            Image q = input;
            q.pixels[i] = v;
            return k * reference_guidance(q, ref, cfg, seed, progress).diagnostic;
        };
        cmp.add(s.grad.pixels[i], central(f, input.pixels[i], 1e-6));
    }
    return cmp;
}

using Checker = Comparison (*)(Rng&);

Checker checker_for(const std::string& module) {
    if (module == "field") return check_field;
    if (module == "mt") return check_mt;
    if (module == "render") return check_render;
    if (module == "shading") return check_shading;
    if (module == "lightness") return check_lightness;
    if (module == "guidance") return check_guidance;
    throw ContractError("unknown gradcheck module: " + module);
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
    static const std::vector<std::string> names{"field", "mt", "render", "shading", "lightness", "guidance"};
    return names;
}

GradcheckResult gradcheck(const std::string& module, int seeds, double tolerance) {
    require(seeds >= 1, "gradcheck needs at least one seed");
    const Checker check = checker_for(module);
    GradcheckResult result{module, seeds, 0, 0.0, tolerance, false};
    for (int s = 0; s < seeds; ++s) {
        Rng rng(0x5eed0000u + static_cast<std::uint64_t>(s));
        const Comparison cmp = check(rng);
        result.probes += static_cast<int>(cmp.analytic.size());
        result.max_rel_error = std::max(result.max_rel_error, cmp.rel_error());
    }
    result.passed = result.max_rel_error < tolerance;
    return result;
}

}  // namespace tetsculpt
