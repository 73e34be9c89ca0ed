#include "tetsculpt/fieldgrid.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>

#include "binary_io.hpp"

namespace tetsculpt {

namespace {

constexpr double kLeakySlope = 0.01;
constexpr std::uint32_t kCheckpointVersion = 1;

struct LevelSample {
    std::array<std::size_t, 8> offset;  // into params.values, feature 0 of the corner
    std::array<double, 8> weight;
    std::array<Vec3, 8> dweight;        // d weight / d (cell-local coordinate)
    double resolution;
};

// Scratch buffers for one point; sized once per call.
struct Workspace {
    std::vector<LevelSample> levels;
    std::vector<int> level_res;
    std::vector<char> level_dense;
    std::vector<std::vector<double>> act;  // act[0] = encoding, act[k] = post-activation of layer k
    std::vector<std::vector<double>> pre;  // pre-activation of layer k (k >= 1)
    std::vector<double> grad_a, grad_b;
    std::array<bool, 3> clamped{};

    explicit Workspace(const FieldConfig& cfg) : levels(cfg.levels) {
        for (int l = 0; l < cfg.levels; ++l) {
            level_res.push_back(cfg.level_resolution(l));
            level_dense.push_back(cfg.level_is_dense(l));
        }
        std::vector<int> widths{cfg.encoding_dim()};
        widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
        widths.push_back(cfg.output_dim);
        act.resize(widths.size());
        pre.resize(widths.size());
        std::size_t widest = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            act[k].resize(widths[k]);
            pre[k].resize(widths[k]);
            widest = std::max<std::size_t>(widest, widths[k]);
        }
        grad_a.resize(widest);
        grad_b.resize(widest);
    }
};

std::vector<int> layer_widths(const FieldConfig& cfg) {
    std::vector<int> widths{cfg.encoding_dim()};
    widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
    widths.push_back(cfg.output_dim);
    return widths;
}

void check_finite(const FieldParams& params) {
    for (double v : params.values)
        if (!std::isfinite(v)) throw NumericError("field parameters contain non-finite values");
}

void encode(const FieldParams& params, const Vec3& point, Workspace& ws) {
    const FieldConfig& cfg = params.config;
    const int F = cfg.features_per_level;
    Vec3 u;
    for (int a = 0; a < 3; ++a) {
        ws.clamped[a] = !(point[a] >= 0.0 && point[a] <= 1.0);
        u[a] = std::clamp(point[a], 0.0, 1.0);
    }
    for (int l = 0; l < cfg.levels; ++l) {
        LevelSample& ls = ws.levels[l];
        const int res = ws.level_res[l];
        ls.resolution = res;
        std::array<std::int64_t, 3> cell{};
        Vec3 frac;
        for (int a = 0; a < 3; ++a) {
            const double x = u[a] * res;
            cell[a] = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(x)), res - 1);
            frac[a] = x - static_cast<double>(cell[a]);
        }
        const bool dense = ws.level_dense[l];
        const std::size_t level_base = static_cast<std::size_t>(l) * cfg.table_size * F;
        const std::int64_t side = res + 1;
        for (int c = 0; c < 8; ++c) {
            const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
            const std::int64_t x = cell[0] + bx, y = cell[1] + by, z = cell[2] + bz;
            const std::uint32_t slot =
                dense ? static_cast<std::uint32_t>(x + side * (y + side * z)) : hash_corner(x, y, z, cfg.table_size);
            ls.offset[c] = level_base + static_cast<std::size_t>(slot) * F;
            const double wx = bx ? frac[0] : 1.0 - frac[0];
            const double wy = by ? frac[1] : 1.0 - frac[1];
            const double wz = bz ? frac[2] : 1.0 - frac[2];
            ls.weight[c] = wx * wy * wz;
            ls.dweight[c] = Vec3((bx ? 1.0 : -1.0) * wy * wz, (by ? 1.0 : -1.0) * wx * wz, (bz ? 1.0 : -1.0) * wx * wy);
        }
        for (int f = 0; f < F; ++f) {
            double v = 0.0;
            for (int c = 0; c < 8; ++c) v += ls.weight[c] * params.values[ls.offset[c] + f];
            ws.act[0][static_cast<std::size_t>(l) * F + f] = v;
        }
    }
}

void mlp_forward(const FieldParams& params, Workspace& ws) {
    const FieldConfig& cfg = params.config;
    const double* w = params.values.data() + cfg.grid_param_count();
    const std::size_t layers = ws.act.size() - 1;
    for (std::size_t k = 1; k <= layers; ++k) {
        const auto& in = ws.act[k - 1];
        auto& z = ws.pre[k];
        auto& a = ws.act[k];
        const std::size_t n_in = in.size(), n_out = z.size();
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const Eigen::Map<const RowMajor> W(w, static_cast<Eigen::Index>(n_out), static_cast<Eigen::Index>(n_in));
        const Eigen::Map<const Eigen::VectorXd> b(w + n_in * n_out, static_cast<Eigen::Index>(n_out));
        const Eigen::Map<const Eigen::VectorXd> x(in.data(), static_cast<Eigen::Index>(n_in));
        Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(n_out)).noalias() = W * x + b;
        for (std::size_t o = 0; o < n_out; ++o) a[o] = (k == layers || z[o] > 0.0) ? z[o] : kLeakySlope * z[o];
        w += n_in * n_out + n_out;
    }
}

// Back-propagates `out_grad` through the MLP and encoding of the point last
// passed to encode/mlp_forward.
void point_backward(const FieldParams& params, Workspace& ws, const double* out_grad, double* param_grad,
                    Vec3* point_grad) {
    const FieldConfig& cfg = params.config;
    const std::size_t layers = ws.act.size() - 1;

    // Locate each layer's weight block.
    std::vector<std::size_t> layer_offset(layers + 1);
    std::size_t off = cfg.grid_param_count();
    for (std::size_t k = 1; k <= layers; ++k) {
        layer_offset[k] = off;
        off += ws.act[k - 1].size() * ws.act[k].size() + ws.act[k].size();
    }

    double* dz = ws.grad_a.data();
    double* da = ws.grad_b.data();
    for (std::size_t o = 0; o < ws.act[layers].size(); ++o) dz[o] = out_grad[o];
    for (std::size_t k = layers; k >= 1; --k) {
        const auto& in = ws.act[k - 1];
        const std::size_t n_in = in.size(), n_out = ws.act[k].size();
        const double* W = params.values.data() + layer_offset[k];
        double* dW = param_grad + layer_offset[k];
        double* db = dW + n_in * n_out;
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const auto ni = static_cast<Eigen::Index>(n_in), no = static_cast<Eigen::Index>(n_out);
        const Eigen::Map<const Eigen::VectorXd> g(dz, no), x(in.data(), ni);
        Eigen::Map<RowMajor>(dW, no, ni).noalias() += g * x.transpose();
        Eigen::Map<Eigen::VectorXd>(db, no) += g;
        Eigen::Map<Eigen::VectorXd>(da, ni).noalias() = Eigen::Map<const RowMajor>(W, no, ni).transpose() * g;
        if (k > 1) {
            const auto& z = ws.pre[k - 1];
            for (std::size_t i = 0; i < n_in; ++i) da[i] *= (z[i] > 0.0 ? 1.0 : kLeakySlope);
        }
        std::swap(dz, da);
    }
    // dz now holds d/d encoding.
    const int F = cfg.features_per_level;
    Vec3 dp = Vec3::Zero();
    for (int l = 0; l < cfg.levels; ++l) {
        const LevelSample& ls = ws.levels[l];
        for (int c = 0; c < 8; ++c) {
            double corner_dot = 0.0;
            for (int f = 0; f < F; ++f) {
                const double g = dz[static_cast<std::size_t>(l) * F + f];
                param_grad[ls.offset[c] + f] += ls.weight[c] * g;
                corner_dot += g * params.values[ls.offset[c] + f];
            }
            dp += corner_dot * ls.resolution * ls.dweight[c];
        }
    }
    if (point_grad) {
        for (int a = 0; a < 3; ++a)
            if (ws.clamped[a]) dp[a] = 0.0;
        *point_grad += dp;
    }
}

}  // namespace

void FieldConfig::validate() const {
    if (levels < 1) throw ConfigError("field: levels must be >= 1");
    if (base_resolution < 1) throw ConfigError("field: base_resolution must be >= 1");
    if (!(growth_factor > 1.0) || !std::isfinite(growth_factor)) throw ConfigError("field: growth_factor must be > 1");
    if (features_per_level < 1) throw ConfigError("field: features_per_level must be >= 1");
    if (table_size == 0 || (table_size & (table_size - 1)) != 0)
        throw ConfigError("field: table_size must be a power of two");
    if (output_dim < 1) throw ConfigError("field: output_dim must be >= 1");
    for (int h : mlp_hidden)
        if (h < 1) throw ConfigError("field: hidden widths must be >= 1");
}

int FieldConfig::level_resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth_factor, level)));
}

bool FieldConfig::level_is_dense(int level) const {
    const double side = level_resolution(level) + 1.0;
    return side * side * side <= static_cast<double>(table_size);
}

std::size_t FieldConfig::grid_param_count() const {
    return static_cast<std::size_t>(levels) * table_size * features_per_level;
}

std::size_t FieldConfig::mlp_param_count() const {
    const auto widths = layer_widths(*this);
    std::size_t n = 0;
    for (std::size_t k = 1; k < widths.size(); ++k)
        n += static_cast<std::size_t>(widths[k - 1]) * widths[k] + widths[k];
    return n;
}

std::uint32_t hash_corner(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size) {
    const std::uint32_t h = static_cast<std::uint32_t>(x) * 1u ^ static_cast<std::uint32_t>(y) * 2654435761u ^
                            static_cast<std::uint32_t>(z) * 805459861u;
    return h & (table_size - 1u);
}

FieldParams field_init(const FieldConfig& config, std::uint64_t seed) {
    config.validate();
    FieldParams params{config, std::vector<double>(config.param_count())};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> grid_dist(-1e-4, 1e-4);
    const std::size_t n_grid = config.grid_param_count();
    for (std::size_t i = 0; i < n_grid; ++i) params.values[i] = grid_dist(rng);

    const auto widths = layer_widths(config);
    std::size_t off = n_grid;
    for (std::size_t k = 1; k < widths.size(); ++k) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[k - 1]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        const std::size_t n = static_cast<std::size_t>(widths[k - 1]) * widths[k] + widths[k];
        for (std::size_t i = 0; i < n; ++i) params.values[off + i] = dist(rng);
        off += n;
    }
    return params;
}

std::vector<double> field_eval(const FieldParams& params, std::span<const Vec3> points) {
    require(params.values.size() == params.config.param_count(), "field_eval: parameter count mismatch");
    check_finite(params);
    const int D = params.config.output_dim;
    std::vector<double> out(points.size() * D);
    Workspace ws(params.config);
    for (std::size_t p = 0; p < points.size(); ++p) {
        encode(params, points[p], ws);
        mlp_forward(params, ws);
        std::copy(ws.act.back().begin(), ws.act.back().end(), out.begin() + static_cast<std::ptrdiff_t>(p * D));
    }
    return out;
}

void field_backward_accumulate(const FieldParams& params, std::span<const Vec3> points,
                               std::span<const double> output_gradient, std::vector<double>& param_grad,
                               std::vector<Vec3>* point_grad) {
    const std::size_t D = params.config.output_dim;
    if (output_gradient.size() != points.size() * D)
        throw ContractError("field_backward: output gradient shape does not match points x output_dim");
    if (param_grad.size() != params.values.size())
        throw ContractError("field_backward: parameter gradient buffer has wrong size");
    if (point_grad && point_grad->size() != points.size())
        throw ContractError("field_backward: point gradient buffer has wrong size");
    Workspace ws(params.config);
    for (std::size_t p = 0; p < points.size(); ++p) {
        const double* g = output_gradient.data() + p * D;
        if (std::all_of(g, g + D, [](double v) { return v == 0.0; })) continue;
        encode(params, points[p], ws);
        mlp_forward(params, ws);
        point_backward(params, ws, g, param_grad.data(), point_grad ? &(*point_grad)[p] : nullptr);
    }
}

FieldGradient field_backward(const FieldParams& params, std::span<const Vec3> points,
                             std::span<const double> output_gradient) {
    FieldGradient grad{std::vector<double>(params.values.size(), 0.0),
                       std::vector<Vec3>(points.size(), Vec3::Zero())};
    field_backward_accumulate(params, points, output_gradient, grad.params, &grad.points);
    return grad;
}

void save_field(const std::filesystem::path& path, const FieldParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    const FieldConfig& c = params.config;
    detail::put_magic(os, "TFLD");
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.levels));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.base_resolution));
    detail::put_f64(os, c.growth_factor);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.features_per_level));
    detail::put_le<std::uint32_t>(os, c.table_size);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.mlp_hidden.size()));
    for (int h : c.mlp_hidden) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(h));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.output_dim));
    detail::put_le<std::uint64_t>(os, params.values.size());
    for (double v : params.values) detail::put_f32(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

FieldParams load_field(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    detail::expect_magic(is, "TFLD");
    if (detail::get_le<std::uint32_t>(is) != kCheckpointVersion) throw IoError("unsupported TFLD version");
    FieldParams params;
    FieldConfig& c = params.config;
    c.levels = static_cast<int>(detail::get_le<std::uint32_t>(is));
    c.base_resolution = static_cast<int>(detail::get_le<std::uint32_t>(is));
    c.growth_factor = detail::get_f64(is);
    c.features_per_level = static_cast<int>(detail::get_le<std::uint32_t>(is));
    c.table_size = detail::get_le<std::uint32_t>(is);
    const auto n_hidden = detail::get_le<std::uint32_t>(is);
    if (n_hidden > 64) throw IoError("TFLD: implausible hidden layer count");
    c.mlp_hidden.resize(n_hidden);
    for (auto& h : c.mlp_hidden) h = static_cast<int>(detail::get_le<std::uint32_t>(is));
    c.output_dim = static_cast<int>(detail::get_le<std::uint32_t>(is));
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("TFLD: invalid stored config: ") + e.what());
    }
    const auto count = detail::get_le<std::uint64_t>(is);
    if (count != c.param_count()) throw IoError("TFLD: parameter count does not match config");
    params.values.resize(count);
    for (double& v : params.values) v = detail::get_f32(is);
    return params;
}

namespace {
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Material decode_material(std::span<const double> raw) {
    require(raw.size() >= 5, "decode_material: need at least 5 raw outputs");
    Material m;
    m.albedo = Vec3(logistic(raw[0]), logistic(raw[1]), logistic(raw[2]));
    m.roughness = logistic(raw[3]);
    m.metalness = logistic(raw[4]);
    if (raw.size() >= 8) {
        const Vec3 v(raw[5], raw[6], 1.0 + raw[7]);
        const double len = v.norm();
        m.normal_ts = len > 1e-12 ? Vec3(v / len) : Vec3(0.0, 0.0, 1.0);
    }
    return m;
}

void decode_material_backward(std::span<const double> raw, const Material& grad, std::span<double> raw_grad) {
    require(raw.size() >= 5 && raw_grad.size() == raw.size(), "decode_material_backward: shape mismatch");
    for (int c = 0; c < 3; ++c) {
        const double s = logistic(raw[c]);
        raw_grad[c] = grad.albedo[c] * s * (1.0 - s);
    }
    const double sr = logistic(raw[3]), sm = logistic(raw[4]);
    raw_grad[3] = grad.roughness * sr * (1.0 - sr);
    raw_grad[4] = grad.metalness * sm * (1.0 - sm);
    for (std::size_t i = 5; i < raw.size(); ++i) raw_grad[i] = 0.0;
    if (raw.size() >= 8) {
        const Vec3 v(raw[5], raw[6], 1.0 + raw[7]);
        const double len = v.norm();
        if (len > 1e-12) {
            const Vec3 n = v / len;
            const Vec3 dv = (grad.normal_ts - n * n.dot(grad.normal_ts)) / len;
            raw_grad[5] = dv[0];
            raw_grad[6] = dv[1];
            raw_grad[7] = dv[2];
        }
    }
}

}  // namespace tetsculpt
