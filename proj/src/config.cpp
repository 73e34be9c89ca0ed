#include "tetsculpt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tetsculpt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
    Int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_double(key, item));
    }
    return out;
}

struct Binding {
    std::function<void(const std::string&, const std::string&)> set;
    std::function<std::string()> get;
};

using Bindings = std::map<std::string, Binding>;

void bind_double(Bindings& b, const std::string& key, double& ref) {
    b[key] = {[&ref](const std::string& k, const std::string& v) { ref = to_double(k, v); },
              [&ref] { return fmt(ref); }};
}

template <class Int>
void bind_int(Bindings& b, const std::string& key, Int& ref) {
    b[key] = {[&ref](const std::string& k, const std::string& v) { ref = to_int<Int>(k, v); },
              [&ref] { return std::to_string(ref); }};
}

void bind_string(Bindings& b, const std::string& key, std::string& ref) {
    b[key] = {[&ref](const std::string&, const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

void bind_bool(Bindings& b, const std::string& key, bool& ref) {
    b[key] = {[&ref](const std::string& k, const std::string& v) { ref = to_bool(k, v); },
              [&ref] { return std::string(ref ? "true" : "false"); }};
}

void bind_vec3(Bindings& b, const std::string& key, Vec3& ref) {
    b[key] = {[&ref](const std::string& k, const std::string& v) {
                  const auto l = to_list(k, v);
                  if (l.size() != 3) throw ConfigError(k + ": expected three comma-separated numbers");
                  ref = Vec3(l[0], l[1], l[2]);
              },
              [&ref] { return fmt(ref.x()) + "," + fmt(ref.y()) + "," + fmt(ref.z()); }};
}

template <class E>
void bind_enum(Bindings& b, const std::string& key, E& ref, std::vector<std::pair<std::string, E>> names) {
    b[key] = {[&ref, names](const std::string& k, const std::string& v) {
                  for (const auto& [n, e] : names)
                      if (n == v) {
                          ref = e;
                          return;
                      }
                  throw ConfigError(k + ": unknown value '" + v + "'");
              },
              [&ref, names] {
                  for (const auto& [n, e] : names)
                      if (e == ref) return n;
                  return std::string("?");
              }};
}

// 0 in the file means the template never updates.
void bind_interval(Bindings& b, const std::string& key, long& ref) {
    b[key] = {[&ref](const std::string& k, const std::string& v) {
                  const long n = to_int<long>(k, v);
                  ref = n == 0 ? kNeverUpdate : n;
              },
              [&ref] { return std::to_string(ref == kNeverUpdate ? 0 : ref); }};
}

void bind_field(Bindings& b, const std::string& p, FieldConfig& f) {
    bind_int(b, p + ".levels", f.levels);
    bind_int(b, p + ".base_resolution", f.base_resolution);
    bind_double(b, p + ".growth_factor", f.growth_factor);
    bind_int(b, p + ".features_per_level", f.features_per_level);
    bind_int(b, p + ".table_size", f.table_size);
    bind_int(b, p + ".output_dim", f.output_dim);
    b[p + ".mlp_hidden"] = {[&f](const std::string& k, const std::string& v) {
                                f.mlp_hidden.clear();
                                for (double x : to_list(k, v)) {
                                    if (x != std::floor(x) || x < 1) throw ConfigError(k + ": widths must be positive integers");
                                    f.mlp_hidden.push_back(static_cast<int>(x));
                                }
                            },
                            [&f] {
                                std::string s;
                                for (std::size_t i = 0; i < f.mlp_hidden.size(); ++i)
                                    s += (i ? "," : "") + std::to_string(f.mlp_hidden[i]);
                                return s;
                            }};
}

void bind_adam(Bindings& b, const std::string& p, AdamConfig& a) {
    bind_double(b, p + ".lr", a.lr);
    bind_double(b, p + ".beta1", a.beta1);
    bind_double(b, p + ".beta2", a.beta2);
    bind_double(b, p + ".eps", a.eps);
}

void bind_part_weight(Bindings& b, const std::string& key, std::map<int, double>& m, int id) {
    b[key] = {[&m, id](const std::string& k, const std::string& v) { m[id] = to_double(k, v); },
              [&m, id] {
                  auto it = m.find(id);
                  return fmt(it == m.end() ? 0.0 : it->second);
              }};
}

Bindings make_bindings(RunConfig& c) {
    Bindings b;
    bind_int(b, "run.seed", c.seed);
    bind_string(b, "run.output_dir", c.output_dir);

    bind_int(b, "steps.init", c.steps.init);
    bind_int(b, "steps.coarse", c.steps.coarse);
    bind_int(b, "steps.refine", c.steps.refine);
    bind_int(b, "steps.appearance", c.steps.appearance);

    bind_int(b, "grid.resolution", c.grid.resolution);
    bind_double(b, "grid.subdivision_threshold", c.grid.subdivision_threshold);

    bind_int(b, "render.size", c.render.size);
    bind_int(b, "render.coarse_size", c.render.coarse_size);
    bind_int(b, "render.appearance_size", c.render.appearance_size);
    bind_int(b, "render.texture_size", c.render.texture_size);

    bind_double(b, "camera.full_body_distance", c.camera.full_body_distance);
    bind_double(b, "camera.part_distance", c.camera.part_distance);
    bind_double(b, "camera.fov_deg", c.camera.fov_deg);
    bind_double(b, "camera.elevation_min_deg", c.camera.elevation_min_deg);
    bind_double(b, "camera.elevation_max_deg", c.camera.elevation_max_deg);
    bind_double(b, "camera.part_probability", c.camera.part_probability);

    bind_field(b, "geometry_field", c.geometry_field);
    bind_field(b, "appearance_field", c.appearance_field);

    bind_double(b, "weights.lambda_sds", c.weights.lambda_sds);
    bind_double(b, "weights.alpha_global", c.weights.alpha_global);
    bind_double(b, "weights.alpha_local", c.weights.alpha_local);
    bind_double(b, "weights.beta_global", c.weights.beta_global);
    bind_double(b, "weights.beta_local", c.weights.beta_local);
    bind_double(b, "weights.gamma_lightness", c.weights.gamma_lightness);
    bind_part_weight(b, "weights.part_face", c.weights.part_weights, kPartFace);
    bind_part_weight(b, "weights.part_hands", c.weights.part_weights, kPartHands);
    bind_part_weight(b, "weights.part_feet", c.weights.part_weights, kPartFeet);
    bind_part_weight(b, "weights.normal_face", c.weights.part_normal_weights, kPartFace);
    bind_part_weight(b, "weights.normal_hands", c.weights.part_normal_weights, kPartHands);
    bind_part_weight(b, "weights.normal_feet", c.weights.part_normal_weights, kPartFeet);

    bind_interval(b, "template.geometry_interval", c.schedule.geometry_interval);
    bind_interval(b, "template.appearance_interval", c.schedule.appearance_interval);
    bind_int(b, "template.appearance_init_step", c.schedule.appearance_init_step);

    bind_adam(b, "optimizer.geometry", c.geometry_optimizer);
    bind_adam(b, "optimizer.appearance", c.appearance_optimizer);

    bind_int(b, "sampling.surface", c.sampling.surface);
    bind_int(b, "sampling.random", c.sampling.random);
    bind_int(b, "sampling.part", c.sampling.part);
    bind_int(b, "sampling.held_out", c.sampling.held_out);
    bind_double(b, "sampling.jitter", c.sampling.jitter);

    bind_enum(b, "losses.normal_masking", c.normal_masking,
              {{"covered_union", NormalMasking::covered_union}, {"full_image", NormalMasking::full_image}});

    bind_string(b, "prior.mesh", c.prior.mesh);
    bind_int(b, "prior.resolution", c.prior.resolution);

    bind_enum(b, "guidance.backend", c.guidance.backend,
              {{"none", GuidanceBackendKind::none},
               {"reference", GuidanceBackendKind::reference},
               {"mock", GuidanceBackendKind::mock}});
    bind_string(b, "guidance.target_mesh", c.guidance.target_mesh);
    bind_string(b, "guidance.reference_dir", c.guidance.reference_dir);
    bind_vec3(b, "guidance.target_albedo", c.guidance.target_albedo);
    GuidanceConfig& g = c.guidance.config;
    bind_double(b, "guidance.t_min", g.t_min);
    bind_double(b, "guidance.t_max", g.t_max);
    bind_enum(b, "guidance.weighting", g.weighting,
              {{"constant", Weighting::constant}, {"one_minus_t_squared", Weighting::one_minus_t_squared}});
    bind_double(b, "guidance.strength", g.strength);
    bind_bool(b, "guidance.anneal_t_max", g.anneal_t_max);
    bind_double(b, "guidance.anneal_t_max_end", g.anneal_t_max_end);
    bind_double(b, "guidance.blur_radius", g.blur_radius);
    return b;
}

}  // namespace

void AdamConfig::validate() const {
    if (!(std::isfinite(lr) && lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("moment decays must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer epsilon must be > 0");
}

FieldConfig RunConfig::default_geometry_field() {
    FieldConfig f;
    f.output_dim = 4;
    return f;
}

FieldConfig RunConfig::default_appearance_field() {
    FieldConfig f;
    f.output_dim = kMaterialDims;
    return f;
}

void RunConfig::validate() const {
    for (long s : {steps.init, steps.coarse, steps.refine, steps.appearance})
        if (s < 0) throw ConfigError("step counts must be >= 0");
    if (grid.resolution < 2) throw ConfigError("grid.resolution must be >= 2");
    if (!(grid.subdivision_threshold > 0.0)) throw ConfigError("grid.subdivision_threshold must be > 0");
    if (render.size < 8 || render.appearance_size < 8) throw ConfigError("render sizes must be >= 8");
    if (render.coarse_size < 1 || render.coarse_size > render.size)
        throw ConfigError("render.coarse_size must be in [1, render.size]");
    if (render.texture_size < 16) throw ConfigError("render.texture_size must be >= 16");
    if (!(camera.part_probability >= 0.0 && camera.part_probability <= 1.0))
        throw ConfigError("camera.part_probability must be in [0,1]");
    if (!(camera.fov_deg > 0.0 && camera.fov_deg < 180.0)) throw ConfigError("camera.fov_deg must be in (0,180)");
    if (camera.elevation_min_deg > camera.elevation_max_deg) throw ConfigError("camera elevation range is empty");
    if (!(camera.full_body_distance > 0.0 && camera.part_distance > 0.0)) throw ConfigError("camera distances must be > 0");
    geometry_field.validate();
    appearance_field.validate();
    if (appearance_field.output_dim < 5) throw ConfigError("appearance_field.output_dim must be >= 5");
    weights.validate();
    schedule.validate();
    geometry_optimizer.validate();
    appearance_optimizer.validate();
    if (sampling.surface + sampling.random == 0) throw ConfigError("sampling needs at least one point");
    if (!(sampling.jitter >= 0.0)) throw ConfigError("sampling.jitter must be >= 0");
    if (prior.resolution < 8) throw ConfigError("prior.resolution must be >= 8");
    guidance.config.validate();
    if (guidance.backend == GuidanceBackendKind::reference && guidance.target_mesh.empty() &&
        guidance.reference_dir.empty())
        throw ConfigError("reference guidance needs guidance.target_mesh or guidance.reference_dir");
    for (int c = 0; c < 3; ++c)
        if (!(guidance.target_albedo[c] >= 0.0 && guidance.target_albedo[c] <= 1.0))
            throw ConfigError("guidance.target_albedo must be in [0,1]");
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    Bindings b = make_bindings(config);
    auto it = b.find(key);
    if (it == b.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(key, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    Bindings b = make_bindings(base);
    std::istringstream in(text);
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = b.find(key);
        if (it == b.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->second.set(key, value);
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string serialize_config(const RunConfig& config) {
    RunConfig copy = config;
    const Bindings b = make_bindings(copy);
    std::string out;
    for (const auto& [key, binding] : b) out += key + " = " + binding.get() + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    RunConfig c;
    std::vector<std::string> keys;
    for (const auto& [key, binding] : make_bindings(c)) keys.push_back(key);
    return keys;
}

}  // namespace tetsculpt
