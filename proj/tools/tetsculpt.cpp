#include <iostream>

#include "CLI11.hpp"
#include "tetsculpt/export.hpp"
#include "tetsculpt/gradcheck.hpp"

using namespace tetsculpt;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumericError = 3, kIoError = 4 };

RunConfig configure(const std::string& path, const std::vector<std::string>& overrides, const std::string& out) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!out.empty()) cfg.output_dir = out;
    cfg.validate();
    return cfg;
}

int fit_geometry(const RunConfig& cfg) {
    const GeometryRun run = run_geometry(cfg, cfg.output_dir);
    std::cout << "init held-out error " << run.init.held_out_error << '\n'
              << "subdivision selected " << run.refine.selected << " tets, " << run.refine.tets_before << " -> "
              << run.refine.tets_after << '\n'
              << "mesh " << run.mesh.vertices.size() << " vertices, " << run.mesh.faces.size() << " faces\n";
    if (run.state.empty_mesh_warnings > 0)
        std::cerr << "warning: " << run.state.empty_mesh_warnings << " steps had an empty mesh\n";
    std::cout << "wrote " << cfg.output_dir << '\n';
    return kOk;
}

int fit_appearance(const RunConfig& cfg, const std::string& mesh_path) {
    const TriMesh mesh = read_obj(mesh_path);
    const AppearanceState state = run_appearance(cfg, mesh, cfg.output_dir);
    std::cout << "appearance steps " << state.step << ", template updates " << state.templ.appearance_updates << '\n'
              << "wrote " << cfg.output_dir << '\n';
    return kOk;
}

int metrics(const std::string& a, const std::string& b, std::size_t samples, std::uint64_t seed) {
    const TriMesh ma = read_obj(a), mb = read_obj(b);
    const MeshDistance d = mesh_distance(ma, mb, samples, seed);
    std::cout.precision(10);
    std::cout << "chamfer " << d.chamfer << '\n'
              << "hausdorff " << d.hausdorff << '\n'
              << "roughness_a " << mean_dihedral_roughness(ma) << '\n'
              << "roughness_b " << mean_dihedral_roughness(mb) << '\n';
    return kOk;
}

int run_gradcheck(const std::string& module, int seeds, double tolerance) {
    std::vector<std::string> modules;
    if (module == "all")
        modules = gradcheck_modules();
    else
        modules.push_back(module);
    bool ok = true;
    for (const std::string& m : modules) {
        const GradcheckResult r = gradcheck(m, seeds, tolerance);
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.module << " seeds=" << r.seeds << " probes=" << r.probes
                  << " max_rel_error=" << r.max_rel_error << " tolerance=" << r.tolerance << '\n';
        ok = ok && r.passed;
    }
    return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained avatar geometry and appearance fitting"};
    app.require_subcommand(1);

    std::string config_path, out, mesh_path, run_dir, mesh_a, mesh_b, module = "all";
    std::vector<std::string> overrides;
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    int seeds = 20;
    double tolerance = 1e-5;

    auto* geo = app.add_subcommand("fit-geometry", "Run the init, coarse and refine stages");
    geo->add_option("--config", config_path, "Config file")->required();
    geo->add_option("--out", out, "Run directory (overrides run.output_dir)");
    geo->add_option("--set", overrides, "key=value override, repeatable");

    auto* app_cmd = app.add_subcommand("fit-appearance", "Run the appearance stage on a frozen mesh");
    app_cmd->add_option("--config", config_path, "Config file")->required();
    app_cmd->add_option("--mesh", mesh_path, "OBJ mesh")->required();
    app_cmd->add_option("--out", out, "Run directory (overrides run.output_dir)");
    app_cmd->add_option("--set", overrides, "key=value override, repeatable");

    auto* exp = app.add_subcommand("export", "Bake textures and write the textured mesh of a run");
    exp->add_option("--run", run_dir, "Run directory")->required();

    auto* met = app.add_subcommand("metrics", "Chamfer and Hausdorff distance between two meshes");
    met->add_option("--a", mesh_a, "First OBJ")->required();
    met->add_option("--b", mesh_b, "Second OBJ")->required();
    met->add_option("--samples", samples, "Surface samples per mesh");
    met->add_option("--seed", seed, "Sampling seed");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of the backward passes");
    grad->add_option("--module", module, "Module name or 'all'");
    grad->add_option("--seeds", seeds, "Random instances per module");
    grad->add_option("--tolerance", tolerance, "Relative error bound");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*geo) return fit_geometry(configure(config_path, overrides, out));
        if (*app_cmd) return fit_appearance(configure(config_path, overrides, out), mesh_path);
        if (*exp) {
            export_run(run_dir);
            std::cout << "exported " << run_dir << '\n';
            return kOk;
        }
        if (*met) return metrics(mesh_a, mesh_b, samples, seed);
        if (*grad) return run_gradcheck(module, seeds, tolerance);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumericError;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
