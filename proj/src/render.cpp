#include "tetsculpt/render.hpp"

#include <ceres/jet.h>

#include <algorithm>
#include <atomic>
#include <numbers>
#include <random>
#include <thread>
#include <unordered_map>

namespace tetsculpt {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

// Runs fn(row_begin, row_end) over horizontal bands, one per hardware thread.
template <typename Fn>
void parallel_rows(int height, Fn&& fn) {
    const int threads = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, 16);
    if (threads == 1 || height < 32) {
        fn(0, height);
        return;
    }
    std::vector<std::thread> pool;
    const int band = (height + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int y0 = t * band, y1 = std::min(height, y0 + band);
        if (y0 >= y1) break;
        pool.emplace_back([&fn, y0, y1] { fn(y0, y1); });
    }
    for (auto& th : pool) th.join();
}

double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint32_t>(std::max(a, b));
}

struct ScreenFace {
    std::array<Vec2, 3> p;
    std::array<double, 3> z;
    double area = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

// Mask value as a function of signed pixel distance (positive outside).
// Logistic shape rescaled to reach exactly 0/1 at the band edge.
double band_mask(double ds) {
    const double k = kSilhouetteSteepness;
    const double norm = std::tanh(0.5 * k * kSilhouetteBand);
    return std::clamp(0.5 + 0.5 * std::tanh(-0.5 * k * ds) / norm, 0.0, 1.0);
}

double band_mask_derivative(double ds) {
    const double k = kSilhouetteSteepness;
    const double norm = std::tanh(0.5 * k * kSilhouetteBand);
    const double c = std::cosh(0.5 * k * ds);
    return -0.25 * k / (norm * c * c);
}

}  // namespace

// Camera

void Camera::validate() const {
    require(fov_deg > 1.0 && fov_deg < 179.0, "Camera: fov must be in (1, 179) degrees");
    require(width > 0 && height > 0, "Camera: image size must be positive");
    const Vec3 f = target - position;
    require(f.norm() > 1e-12, "Camera: position equals target");
    require(f.normalized().cross(up).norm() > 1e-9, "Camera: up vector parallel to view direction");
}

Camera::Basis Camera::basis() const {
    Basis b;
    b.forward = (target - position).normalized();
    b.right = b.forward.cross(up).normalized();
    b.up = b.right.cross(b.forward);
    return b;
}

double Camera::focal_px() const { return 0.5 * height / std::tan(0.5 * deg2rad(fov_deg)); }

Vec3 Camera::project(const Vec3& p) const {
    const Basis b = basis();
    const Vec3 d = p - position;
    const double xc = d.dot(b.right), yc = d.dot(b.up), zc = d.dot(b.forward);
    const double f = focal_px();
    return {0.5 * width + f * xc / zc, 0.5 * height - f * yc / zc, zc};
}

Eigen::Matrix<double, 2, 3> Camera::project_jacobian(const Vec3& p) const {
    const Basis b = basis();
    const Vec3 d = p - position;
    const double xc = d.dot(b.right), yc = d.dot(b.up), zc = d.dot(b.forward);
    const double f = focal_px();
    Eigen::Matrix<double, 2, 3> j;
    j.row(0) = (f * (b.right / zc - xc * b.forward / (zc * zc))).transpose();
    j.row(1) = (-f * (b.up / zc - yc * b.forward / (zc * zc))).transpose();
    return j;
}

Vec3 Camera::ray_direction(double px, double py) const {
    const Basis b = basis();
    const double f = focal_px();
    return (b.forward * f + b.right * (px - 0.5 * width) - b.up * (py - 0.5 * height)).normalized();
}

std::uint64_t next_frame_token() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

std::size_t FrameBuffer::covered_count() const {
    return static_cast<std::size_t>(std::count_if(face_id.begin(), face_id.end(), [](int f) { return f >= 0; }));
}

// Rasterization

FrameBuffer rasterize(const TriMesh& mesh, const Camera& camera, std::span<const double> attributes, int channels) {
    camera.validate();
    require(channels >= 0, "rasterize: negative channel count");
    require(attributes.size() == mesh.vertices.size() * static_cast<std::size_t>(channels),
            "rasterize: attribute count must equal vertex count times channels");
    const int w = camera.width, h = camera.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;

    FrameBuffer fb;
    fb.width = w;
    fb.height = h;
    fb.camera = camera;
    fb.face_id.assign(n, -1);
    fb.bary.assign(n, Vec3::Zero());
    fb.depth.assign(n, std::numeric_limits<double>::infinity());
    fb.token = next_frame_token();

    std::vector<ScreenFace> screen(mesh.faces.size());
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        ScreenFace& s = screen[fi];
        bool ok = true;
        for (int k = 0; k < 3; ++k) {
            const Vec3 q = camera.project(mesh.vertices[mesh.faces[fi][k]]);
            s.p[k] = q.head<2>();
            s.z[k] = q.z();
            ok = ok && q.z() > kNearPlane;
        }
        if (!ok) continue;
        s.area = edge_fn(s.p[0], s.p[1], s.p[2]);
        if (s.area == 0.0) continue;
        const double minx = std::min({s.p[0].x(), s.p[1].x(), s.p[2].x()});
        const double maxx = std::max({s.p[0].x(), s.p[1].x(), s.p[2].x()});
        const double miny = std::min({s.p[0].y(), s.p[1].y(), s.p[2].y()});
        const double maxy = std::max({s.p[0].y(), s.p[1].y(), s.p[2].y()});
        s.x0 = std::max(0, static_cast<int>(std::floor(minx - 0.5)));
        s.x1 = std::min(w - 1, static_cast<int>(std::ceil(maxx - 0.5)));
        s.y0 = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
        s.y1 = std::min(h - 1, static_cast<int>(std::ceil(maxy - 0.5)));
    }

    parallel_rows(h, [&](int row0, int row1) {
        for (std::size_t fi = 0; fi < screen.size(); ++fi) {
            const ScreenFace& s = screen[fi];
            if (s.area == 0.0) continue;
            const int y0 = std::max(s.y0, row0), y1 = std::min(s.y1, row1 - 1);
            for (int y = y0; y <= y1; ++y) {
                for (int x = s.x0; x <= s.x1; ++x) {
                    const Vec2 q(x + 0.5, y + 0.5);
                    const double l0 = edge_fn(s.p[1], s.p[2], q) / s.area;
                    const double l1 = edge_fn(s.p[2], s.p[0], q) / s.area;
                    const double l2 = edge_fn(s.p[0], s.p[1], q) / s.area;
                    if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
                    const double w0 = l0 / s.z[0], w1 = l1 / s.z[1], w2 = l2 / s.z[2];
                    const double inv_z = w0 + w1 + w2;
                    const double z = 1.0 / inv_z;
                    const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                    if (z < fb.depth[pix]) {
                        fb.depth[pix] = z;
                        fb.face_id[pix] = static_cast<int>(fi);
                        fb.bary[pix] = Vec3(w0, w1, w2) * z;
                    }
                }
            }
        }
    });

    fb.position = Image(w, h, 3);
    fb.position.token = fb.token;
    if (channels > 0) {
        fb.attributes = Image(w, h, channels);
        fb.attributes.token = fb.token;
    }
    for (std::size_t pix = 0; pix < n; ++pix) {
        if (fb.face_id[pix] < 0) continue;
        const auto& f = mesh.faces[fb.face_id[pix]];
        const Vec3& b = fb.bary[pix];
        const Vec3 pos = b[0] * mesh.vertices[f[0]] + b[1] * mesh.vertices[f[1]] + b[2] * mesh.vertices[f[2]];
        for (int c = 0; c < 3; ++c) fb.position.pixels[pix * 3 + c] = pos[c];
        for (int c = 0; c < channels; ++c) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += b[k] * attributes[static_cast<std::size_t>(f[k]) * channels + c];
            fb.attributes.pixels[pix * channels + c] = v;
        }
    }
    return fb;
}

std::vector<double> rasterize_backward(const FrameBuffer& frame, const TriMesh& mesh, const Image& grad) {
    require(grad.width == frame.width && grad.height == frame.height && grad.channels == frame.attributes.channels,
            "rasterize_backward: gradient shape mismatch");
    const int c_count = grad.channels;
    std::vector<double> out(mesh.vertices.size() * c_count, 0.0);
    for (std::size_t pix = 0; pix < frame.face_id.size(); ++pix) {
        if (frame.face_id[pix] < 0) continue;
        const auto& f = mesh.faces[frame.face_id[pix]];
        for (int k = 0; k < 3; ++k)
            for (int c = 0; c < c_count; ++c)
                out[static_cast<std::size_t>(f[k]) * c_count + c] += frame.bary[pix][k] * grad.pixels[pix * c_count + c];
    }
    return out;
}

// Normal and mask

NormalMaskRender render_normal_mask(const TriMesh& mesh, const Camera& camera) {
    NormalMaskRender r;
    r.frame = rasterize(mesh, camera);
    FrameBuffer& fb = r.frame;
    const int w = fb.width, h = fb.height;
    const std::size_t n = fb.face_id.size();
    fb.normal = Image(w, h, 3);
    fb.mask = Image(w, h, 1);
    fb.normal.token = fb.mask.token = fb.token;

    r.vertex_normal_sums.assign(mesh.vertices.size(), Vec3::Zero());
    std::vector<Vec3> face_cross(mesh.faces.size());
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& f = mesh.faces[fi];
        face_cross[fi] = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
        for (int k = 0; k < 3; ++k) r.vertex_normal_sums[f[k]] += face_cross[fi];
    }
    r.vertex_normals.resize(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const double len = r.vertex_normal_sums[v].norm();
        r.vertex_normals[v] = len > 0.0 ? Vec3(r.vertex_normal_sums[v] / len) : Vec3::Zero();
    }

    for (std::size_t pix = 0; pix < n; ++pix) {
        if (fb.face_id[pix] < 0) continue;
        const auto& f = mesh.faces[fb.face_id[pix]];
        const Vec3& b = fb.bary[pix];
        Vec3 nn = b[0] * r.vertex_normals[f[0]] + b[1] * r.vertex_normals[f[1]] + b[2] * r.vertex_normals[f[2]];
        const double len = nn.norm();
        nn = len > 1e-12 ? Vec3(nn / len) : face_cross[fb.face_id[pix]].normalized();
        for (int c = 0; c < 3; ++c) fb.normal.pixels[pix * 3 + c] = nn[c];
        fb.mask.pixels[pix] = 1.0;
    }
    if (mesh.empty()) return r;

    // Pixels within two pixels of a coverage change.
    std::vector<char> near_boundary(n, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool c0 = fb.face_id[static_cast<std::size_t>(y) * w + x] >= 0;
            bool differs = false;
            for (int dy = -2; dy <= 2 && !differs; ++dy) {
                for (int dx = -2; dx <= 2; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    const bool c1 = (xx >= 0 && yy >= 0 && xx < w && yy < h) &&
                                    fb.face_id[static_cast<std::size_t>(yy) * w + xx] >= 0;
                    if (c0 != c1) {
                        differs = true;
                        break;
                    }
                }
            }
            near_boundary[static_cast<std::size_t>(y) * w + x] = differs;
        }
    }

    // Silhouette edges: boundary edges and front/back transitions.
    struct EdgeFaces {
        int a, v0, v1;
        int b = -1;
        int count = 0;
    };
    std::unordered_map<std::uint64_t, EdgeFaces> edges;
    edges.reserve(mesh.faces.size() * 2);
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& f = mesh.faces[fi];
        for (int k = 0; k < 3; ++k) {
            const int va = f[k], vb = f[(k + 1) % 3];
            auto [it, inserted] = edges.try_emplace(edge_key(va, vb), EdgeFaces{static_cast<int>(fi), va, vb});
            if (!inserted && it->second.count == 1) it->second.b = static_cast<int>(fi);
            ++it->second.count;
        }
    }
    auto front = [&](int fi) {
        return face_cross[fi].dot(camera.position - mesh.vertices[mesh.faces[fi][0]]) > 0.0;
    };
    auto third_vertex = [&](int fi, int va, int vb) {
        for (int v : mesh.faces[fi])
            if (v != va && v != vb) return v;
        return mesh.faces[fi][0];
    };

    std::vector<double> best(n, kSilhouetteBand);
    std::vector<SilhouetteSample> samples(n, SilhouetteSample{0, -1, -1, 0.0, 0.0});
    std::vector<std::uint64_t> keys;
    keys.reserve(edges.size());
    for (const auto& kv : edges) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end());
    for (std::uint64_t key : keys) {
        const EdgeFaces& e = edges.at(key);
        int inner_face = e.a;
        if (e.count == 2) {
            const bool fa = front(e.a), fb_front = front(e.b);
            if (fa == fb_front) continue;
            inner_face = fa ? e.a : e.b;
        } else if (e.count != 1) {
            continue;
        }
        const Vec3 pa = camera.project(mesh.vertices[e.v0]);
        const Vec3 pb = camera.project(mesh.vertices[e.v1]);
        const Vec3 pc = camera.project(mesh.vertices[third_vertex(inner_face, e.v0, e.v1)]);
        if (pa.z() <= kNearPlane || pb.z() <= kNearPlane || pc.z() <= kNearPlane) continue;
        const Vec2 a = pa.head<2>(), b = pb.head<2>();
        const Vec2 ab = b - a;
        const double len2 = ab.squaredNorm();
        if (len2 == 0.0) continue;
        Vec2 outward(ab.y(), -ab.x());
        outward.normalize();
        if (outward.dot(pc.head<2>() - a) > 0.0) outward = -outward;

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - kSilhouetteBand - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + kSilhouetteBand - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - kSilhouetteBand - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + kSilhouetteBand - 0.5)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                if (!near_boundary[pix]) continue;
                const Vec2 q(x + 0.5, y + 0.5);
                const double s = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
                const Vec2 c = a + s * ab;
                const double d = (q - c).norm();
                if (d >= best[pix] || d == 0.0) continue;
                // The edge must border background on its outer side.
                const Vec2 probe = c + outward;
                const int px = static_cast<int>(std::floor(probe.x())), py = static_cast<int>(std::floor(probe.y()));
                if (px >= 0 && py >= 0 && px < w && py < h && fb.face_id[static_cast<std::size_t>(py) * w + px] >= 0)
                    continue;
                best[pix] = d;
                const bool covered = fb.face_id[pix] >= 0;
                samples[pix] = SilhouetteSample{pix, e.v0, e.v1, s, covered ? -d : d};
            }
        }
    }
    for (std::size_t pix = 0; pix < n; ++pix) {
        if (samples[pix].v0 < 0) continue;
        fb.mask.pixels[pix] = band_mask(samples[pix].signed_distance);
        r.band.push_back(samples[pix]);
    }
    return r;
}

namespace {

using Jet9 = ceres::Jet<double, 9>;

// Barycentrics of the intersection of ray (o, d) with triangle (p0, p1, p2),
// differentiated with respect to the nine vertex coordinates.
std::array<Jet9, 3> ray_barycentrics(const Vec3& o, const Vec3& d, const Vec3& p0, const Vec3& p1, const Vec3& p2) {
    std::array<std::array<Jet9, 3>, 3> p;
    const std::array<const Vec3*, 3> src{&p0, &p1, &p2};
    for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 3; ++c) p[k][c] = Jet9((*src[k])[c], 3 * k + c);
    auto sub = [](const std::array<Jet9, 3>& u, const std::array<Jet9, 3>& v) {
        return std::array<Jet9, 3>{u[0] - v[0], u[1] - v[1], u[2] - v[2]};
    };
    auto cross = [](const std::array<Jet9, 3>& u, const std::array<Jet9, 3>& v) {
        return std::array<Jet9, 3>{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    };
    auto dot = [](const std::array<Jet9, 3>& u, const std::array<Jet9, 3>& v) {
        return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    };
    const std::array<Jet9, 3> dj{Jet9(d[0]), Jet9(d[1]), Jet9(d[2])};
    const std::array<Jet9, 3> oj{Jet9(o[0]), Jet9(o[1]), Jet9(o[2])};
    const auto e1 = sub(p[1], p[0]), e2 = sub(p[2], p[0]);
    const auto pvec = cross(dj, e2);
    const Jet9 det = dot(e1, pvec);
    const auto tvec = sub(oj, p[0]);
    const Jet9 b1 = dot(tvec, pvec) / det;
    const auto qvec = cross(tvec, e1);
    const Jet9 b2 = dot(dj, qvec) / det;
    return {Jet9(1.0) - b1 - b2, b1, b2};
}

}  // namespace

std::vector<Vec3> render_normal_mask_backward(const NormalMaskRender& render, const TriMesh& mesh,
                                              const Image* normal_grad, const Image* mask_grad) {
    const FrameBuffer& fb = render.frame;
    std::vector<Vec3> grad(mesh.vertices.size(), Vec3::Zero());
    if (normal_grad) {
        require(normal_grad->width == fb.width && normal_grad->height == fb.height && normal_grad->channels == 3,
                "render_normal_mask_backward: normal gradient shape mismatch");
        std::vector<Vec3> vn_grad(mesh.vertices.size(), Vec3::Zero());
        for (std::size_t pix = 0; pix < fb.face_id.size(); ++pix) {
            if (fb.face_id[pix] < 0) continue;
            const Vec3 g(normal_grad->pixels[pix * 3], normal_grad->pixels[pix * 3 + 1], normal_grad->pixels[pix * 3 + 2]);
            if (g.isZero(0.0)) continue;
            const auto& f = mesh.faces[fb.face_id[pix]];
            const Vec3& b = fb.bary[pix];
            const Vec3 nn = b[0] * render.vertex_normals[f[0]] + b[1] * render.vertex_normals[f[1]] +
                            b[2] * render.vertex_normals[f[2]];
            const double len = nn.norm();
            if (len <= 1e-12) continue;
            const Vec3 unit = nn / len;
            const Vec3 dn = (g - unit * unit.dot(g)) / len;
            for (int k = 0; k < 3; ++k) vn_grad[f[k]] += b[k] * dn;

            const int x = static_cast<int>(pix % fb.width), y = static_cast<int>(pix / fb.width);
            const Vec3 dir = fb.camera.ray_direction(x + 0.5, y + 0.5);
            const auto bj = ray_barycentrics(fb.camera.position, dir, mesh.vertices[f[0]], mesh.vertices[f[1]],
                                             mesh.vertices[f[2]]);
            for (int j = 0; j < 3; ++j) {
                const double db = dn.dot(render.vertex_normals[f[j]]);
                if (db == 0.0) continue;
                for (int k = 0; k < 3; ++k)
                    for (int c = 0; c < 3; ++c) grad[f[k]][c] += db * bj[j].v[3 * k + c];
            }
        }
        // Through n_v = m_v / |m_v|, m_v = sum of adjacent face cross products.
        std::vector<Vec3> m_grad(mesh.vertices.size(), Vec3::Zero());
        for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
            const double len = render.vertex_normal_sums[v].norm();
            if (len <= 0.0) continue;
            const Vec3& nv = render.vertex_normals[v];
            m_grad[v] = (vn_grad[v] - nv * nv.dot(vn_grad[v])) / len;
        }
        for (const auto& f : mesh.faces) {
            const Vec3 hsum = m_grad[f[0]] + m_grad[f[1]] + m_grad[f[2]];
            if (hsum.isZero(0.0)) continue;
            const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
            const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
            const Vec3 g1 = e2.cross(hsum), g2 = hsum.cross(e1);
            grad[f[1]] += g1;
            grad[f[2]] += g2;
            grad[f[0]] -= g1 + g2;
        }
    }
    if (mask_grad) {
        require(mask_grad->width == fb.width && mask_grad->height == fb.height && mask_grad->channels == 1,
                "render_normal_mask_backward: mask gradient shape mismatch");
        for (const SilhouetteSample& s : render.band) {
            const double g = mask_grad->pixels[s.pixel];
            if (g == 0.0) continue;
            const int x = static_cast<int>(s.pixel % fb.width), y = static_cast<int>(s.pixel / fb.width);
            const Vec2 q(x + 0.5, y + 0.5);
            const Vec3 p0 = mesh.vertices[s.v0], p1 = mesh.vertices[s.v1];
            const Vec2 a = fb.camera.project(p0).head<2>(), b = fb.camera.project(p1).head<2>();
            const Vec2 c = a + s.param * (b - a);
            const double d = (q - c).norm();
            if (d == 0.0) continue;
            const Vec2 u = (c - q) / d;  // dd/dc
            const double sign = s.signed_distance > 0.0 ? 1.0 : -1.0;
            const double coeff = g * band_mask_derivative(s.signed_distance) * sign;
            grad[s.v0] += coeff * (1.0 - s.param) * fb.camera.project_jacobian(p0).transpose() * u;
            grad[s.v1] += coeff * s.param * fb.camera.project_jacobian(p1).transpose() * u;
        }
    }
    return grad;
}

// Shading

void LightRig::validate() const {
    require(!lights.empty(), "LightRig: at least one light required");
    for (const auto& l : lights) {
        require(std::abs(l.direction.norm() - 1.0) < 1e-6, "LightRig: light direction must be unit");
        require((l.radiance.array() >= 0.0).all(), "LightRig: radiance must be nonnegative");
    }
    require((ambient.array() >= 0.0).all(), "LightRig: ambient must be nonnegative");
}

LightRig LightRig::studio() {
    LightRig rig;
    rig.lights = {
        {Vec3(0.4, 0.6, 1.0).normalized(), Vec3(2.0, 2.0, 2.0)},
        {Vec3(-0.9, 0.3, 0.5).normalized(), Vec3(0.9, 0.9, 0.9)},
        {Vec3(0.1, 0.5, -1.0).normalized(), Vec3(0.8, 0.8, 0.8)},
        {Vec3(0.2, -1.0, 0.3).normalized(), Vec3(0.35, 0.35, 0.35)},
    };
    rig.ambient = Vec3(0.08, 0.08, 0.08);
    return rig;
}

namespace {

template <typename T>
using V3 = std::array<T, 3>;

template <typename T>
T dot3(const V3<T>& a, const V3<T>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Duff et al., "Building an Orthonormal Basis, Revisited".
void onb(const Vec3& n, Vec3& t, Vec3& b) {
    const double sign = std::copysign(1.0, n.z());
    const double a = -1.0 / (sign + n.z());
    const double c = n.x() * n.y() * a;
    t = Vec3(1.0 + sign * n.x() * n.x() * a, sign * c, -sign * n.x());
    b = Vec3(c, sign + n.y() * n.y() * a, -n.y());
}

template <typename T>
V3<T> perturb(const Vec3& n, const V3<T>& kn) {
    Vec3 t, b;
    onb(n, t, b);
    V3<T> out;
    for (int c = 0; c < 3; ++c) out[c] = kn[0] * t[c] + kn[1] * b[c] + kn[2] * n[c];
    using std::sqrt;
    const T len = sqrt(dot3(out, out));
    if (len > T(1e-12))
        for (auto& v : out) v = v / len;
    else
        out = {T(n[0]), T(n[1]), T(n[2])};
    return out;
}

template <typename T>
struct ShadeT {
    V3<T> diffuse{}, specular{}, ambient{};
};

template <typename T>
ShadeT<T> shade_generic(const Vec3& geometric, const Vec3& to_eye, const V3<T>& kd, const T& rough, const T& metal,
                        const V3<T>& kn, const LightRig& rig) {
    using std::sqrt;
    ShadeT<T> out;
    for (int c = 0; c < 3; ++c) {
        out.diffuse[c] = T(0.0);
        out.specular[c] = T(0.0);
        out.ambient[c] = rig.ambient[c] * kd[c];
    }
    const V3<T> ns = perturb(geometric, kn);
    const V3<T> v{T(to_eye[0]), T(to_eye[1]), T(to_eye[2])};
    T n_dot_v = dot3(ns, v);
    if (n_dot_v < T(1e-4)) n_dot_v = T(1e-4);
    T alpha = rough * rough;
    if (alpha < T(1e-3)) alpha = T(1e-3);
    const T alpha2 = alpha * alpha;
    const T k = alpha * 0.5;
    const T g_v = n_dot_v / (n_dot_v * (1.0 - k) + k);
    V3<T> f0;
    for (int c = 0; c < 3; ++c) f0[c] = 0.04 * (1.0 - metal) + kd[c] * metal;

    for (const auto& light : rig.lights) {
        const V3<T> l{T(light.direction[0]), T(light.direction[1]), T(light.direction[2])};
        const T n_dot_l = dot3(ns, l);
        if (!(n_dot_l > T(0.0))) continue;
        V3<T> hv{l[0] + v[0], l[1] + v[1], l[2] + v[2]};
        const T hlen = sqrt(dot3(hv, hv));
        if (hlen > T(1e-12))
            for (auto& x : hv) x = x / hlen;
        else
            hv = ns;
        T n_dot_h = dot3(ns, hv);
        if (n_dot_h < T(0.0)) n_dot_h = T(0.0);
        T v_dot_h = dot3(v, hv);
        if (v_dot_h < T(0.0)) v_dot_h = T(0.0);
        const T dd = n_dot_h * n_dot_h * (alpha2 - 1.0) + 1.0;
        const T d_term = alpha2 / (kPi * dd * dd);
        const T g_l = n_dot_l / (n_dot_l * (1.0 - k) + k);
        const T one_minus = 1.0 - v_dot_h;
        const T fres = one_minus * one_minus * one_minus * one_minus * one_minus;
        const T spec_common = d_term * g_l * g_v / (4.0 * n_dot_v);
        for (int c = 0; c < 3; ++c) {
            const T f = f0[c] + (1.0 - f0[c]) * fres;
            out.diffuse[c] += (1.0 - metal) * kd[c] / kPi * n_dot_l * light.radiance[c];
            out.specular[c] += spec_common * f * light.radiance[c];
        }
    }
    return out;
}

Vec3 pixel_vec(const Image& img, std::size_t pix) {
    return {img.pixels[pix * img.channels], img.pixels[pix * img.channels + 1], img.pixels[pix * img.channels + 2]};
}

void check_shading_inputs(const FrameBuffer& frame) {
    const std::size_t n = static_cast<std::size_t>(frame.width) * frame.height;
    require(frame.normal.pixel_count() == n && frame.normal.channels == 3, "shade_pbr: normal channel missing");
    require(frame.albedo.pixel_count() == n && frame.albedo.channels == 3, "shade_pbr: albedo channel missing");
    require(frame.specular.pixel_count() == n && frame.specular.channels == 2, "shade_pbr: specular channel missing");
    require(frame.shading_normal.pixels.empty() ||
                (frame.shading_normal.pixel_count() == n && frame.shading_normal.channels == 3),
            "shade_pbr: shading normal channel has wrong shape");
}

}  // namespace

Vec3 perturb_normal(const Vec3& geometric, const Vec3& tangent_space) {
    const V3<double> r = perturb<double>(geometric, {tangent_space[0], tangent_space[1], tangent_space[2]});
    return {r[0], r[1], r[2]};
}

ShadeComponents shade_point(const Vec3& geometric_normal, const Vec3& to_eye, const Material& material,
                            const LightRig& lights) {
    const auto s = shade_generic<double>(geometric_normal, to_eye,
                                         {material.albedo[0], material.albedo[1], material.albedo[2]},
                                         material.roughness, material.metalness,
                                         {material.normal_ts[0], material.normal_ts[1], material.normal_ts[2]}, lights);
    ShadeComponents out;
    for (int c = 0; c < 3; ++c) {
        out.diffuse[c] = s.diffuse[c];
        out.specular[c] = s.specular[c];
        out.ambient[c] = s.ambient[c];
    }
    return out;
}

Image shade_pbr(const FrameBuffer& frame, const LightRig& lights) {
    lights.validate();
    check_shading_inputs(frame);
    Image out(frame.width, frame.height, 3);
    out.token = frame.token;
    const bool has_kn = !frame.shading_normal.pixels.empty();
    for (std::size_t pix = 0; pix < frame.face_id.size(); ++pix) {
        if (frame.face_id[pix] < 0) continue;
        const int x = static_cast<int>(pix % frame.width), y = static_cast<int>(pix / frame.width);
        Material m;
        m.albedo = pixel_vec(frame.albedo, pix);
        m.roughness = frame.specular.pixels[pix * 2];
        m.metalness = frame.specular.pixels[pix * 2 + 1];
        if (has_kn) m.normal_ts = pixel_vec(frame.shading_normal, pix);
        const Vec3 c = shade_point(pixel_vec(frame.normal, pix), -frame.camera.ray_direction(x + 0.5, y + 0.5), m,
                                   lights)
                           .total();
        for (int k = 0; k < 3; ++k) out.pixels[pix * 3 + k] = c[k];
    }
    return out;
}

ShadeGradient shade_pbr_backward(const FrameBuffer& frame, const LightRig& lights, const Image& color_grad) {
    check_shading_inputs(frame);
    require(color_grad.width == frame.width && color_grad.height == frame.height && color_grad.channels == 3,
            "shade_pbr_backward: gradient shape mismatch");
    using Jet8 = ceres::Jet<double, 8>;
    ShadeGradient g{Image(frame.width, frame.height, 3), Image(frame.width, frame.height, 2),
                    Image(frame.width, frame.height, 3)};
    const bool has_kn = !frame.shading_normal.pixels.empty();
    for (std::size_t pix = 0; pix < frame.face_id.size(); ++pix) {
        if (frame.face_id[pix] < 0) continue;
        const Vec3 up = pixel_vec(color_grad, pix);
        if (up.isZero(0.0)) continue;
        const int x = static_cast<int>(pix % frame.width), y = static_cast<int>(pix / frame.width);
        V3<Jet8> kd, kn;
        for (int c = 0; c < 3; ++c) {
            kd[c] = Jet8(frame.albedo.pixels[pix * 3 + c], c);
            kn[c] = Jet8(has_kn ? frame.shading_normal.pixels[pix * 3 + c] : (c == 2 ? 1.0 : 0.0), 5 + c);
        }
        const Jet8 rough(frame.specular.pixels[pix * 2], 3), metal(frame.specular.pixels[pix * 2 + 1], 4);
        const auto s = shade_generic<Jet8>(pixel_vec(frame.normal, pix),
                                           -frame.camera.ray_direction(x + 0.5, y + 0.5), kd, rough, metal, kn, lights);
        Eigen::Matrix<double, 8, 1> acc = Eigen::Matrix<double, 8, 1>::Zero();
        for (int c = 0; c < 3; ++c) {
            const Jet8 total = s.diffuse[c] + s.specular[c] + s.ambient[c];
            if (total.a <= 0.0) continue;  // clamped
            acc += up[c] * total.v;
        }
        for (int c = 0; c < 3; ++c) g.albedo.pixels[pix * 3 + c] = acc[c];
        g.specular.pixels[pix * 2] = acc[3];
        g.specular.pixels[pix * 2 + 1] = acc[4];
        if (has_kn)
            for (int c = 0; c < 3; ++c) g.shading_normal.pixels[pix * 3 + c] = acc[5 + c];
    }
    return g;
}

// Cameras

Camera orbit_camera(const CameraRig& rig, ViewMode mode, int part_id, double azimuth_deg, double elevation_deg) {
    Camera cam;
    cam.fov_deg = rig.fov_deg;
    cam.width = rig.width;
    cam.height = rig.height;
    double dist = rig.full_body_distance;
    cam.target = rig.body_center;
    if (mode == ViewMode::part) {
        const auto it = rig.part_anchors.find(part_id);
        if (it == rig.part_anchors.end()) throw ContractError("sample_camera: unknown part id");
        cam.target = it->second;
        dist = rig.part_distance;
    }
    const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
    cam.position = cam.target + dist * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
    cam.up = Vec3(0.0, 1.0, 0.0);
    cam.validate();
    return cam;
}

CameraSample sample_camera(const CameraRig& rig, ViewMode mode, int part_id, std::uint64_t seed) {
    require(rig.elevation_min_deg <= rig.elevation_max_deg && rig.elevation_max_deg < 90.0 &&
                rig.elevation_min_deg > -90.0,
            "sample_camera: invalid elevation range");
    require(rig.part_distance > 0.0 && rig.full_body_distance > 0.0, "sample_camera: distances must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> az(0.0, 360.0);
    std::uniform_real_distribution<double> el(rig.elevation_min_deg, rig.elevation_max_deg);
    CameraSample s;
    s.azimuth_deg = az(rng);
    s.elevation_deg = el(rng);
    s.camera = orbit_camera(rig, mode, part_id, s.azimuth_deg, s.elevation_deg);
    return s;
}

}  // namespace tetsculpt
