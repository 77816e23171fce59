// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/pbir.hpp"

#include "npbir/io_metrics.hpp"
#include "npbir/sampling.hpp"
#include "npbir/volume_render.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace npbir::pbir {

namespace fs = std::filesystem;

namespace {

constexpr int kReduceChunks = 8;

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Pseudo-random permutation of [0, n) (Kensler 2013, cycle walking).
uint32_t permute(uint32_t i, uint32_t n, uint32_t p) {
    uint32_t w = n - 1;
    w |= w >> 1;
    w |= w >> 2;
    w |= w >> 4;
    w |= w >> 8;
    w |= w >> 16;
    do {
        i ^= p;
        i *= 0xe170893d;
        i ^= p >> 16;
        i ^= (i & w) >> 4;
        i ^= p >> 8;
        i *= 0x0929eb3f;
        i ^= p >> 23;
        i ^= (i & w) >> 1;
        i *= 1 | p >> 27;
        i *= 0x6935fa69;
        i ^= (i & w) >> 11;
        i *= 0x74dcb303;
        i ^= (i & w) >> 2;
        i *= 0x9e501cc3;
        i ^= (i & w) >> 2;
        i *= 0xc860a3df;
        i &= w;
        i ^= i >> 5;
    } while (i >= n);
    return (i + p) % n;
}

void add_light_grad(const Light& light, const Vec3& w, const Rgb& d, std::vector<double>& grad) {
    if (light.is_env()) {
        const auto s = shading::env_stencil(light.env.width(), light.env.height(), w);
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 3; ++c) grad[3 * s.texel[b] + c] += s.weight[b] * d[c];
    } else {
        shading::sg_eval_backward(light.sg, w, d, grad);
    }
}

// One surface interaction of a recorded path.
struct PathVertex {
    int triangle = -1;
    bool flipped = false;
    Vec3 n = Vec3::UnitZ();
    Vec3 wo = Vec3::UnitZ();
    Vec2 uv = Vec2::Zero();
    shading::BrdfParams brdf;
    Rgb beta = Rgb::Ones();  // throughput from the camera to this vertex
    // Light sample: contributes f(wl) cos le_l * k_l.
    bool nee = false;
    Vec3 wl = Vec3::UnitZ();
    Rgb le_l = Rgb::Zero();
    double k_l = 0.0;
    // BRDF sample: contributes f(wi) cos / pdf * (radiance arriving along wi).
    bool sampled = false;
    Vec3 wi = Vec3::UnitZ();
    double inv_pdf = 0.0;
    enum class Next { None, Miss, Surface } next = Next::None;
    Rgb le_b = Rgb::Zero();
    double w_b = 0.0;
};

struct Path {
    bool primary_miss = false;
    Vec3 primary_dir = Vec3::UnitZ();
    std::vector<PathVertex> vertices;
};

Rgb trace_path(const Scene& scene, const Vec3& origin, const Vec3& dir, PixelSampler& rng, const RenderConfig& cfg,
               Path* rec) {
    const TexturedAssets& a = scene.assets();
    const auto& mesh = a.mesh;
    const auto& bvh = scene.bvh();
    const auto& sampler = scene.light_sampler();
    if (rec) {
        rec->vertices.clear();
        rec->primary_dir = dir;
        rec->primary_miss = false;
    }
    std::optional<geometry::Hit> hit;
    if (!bvh.empty()) hit = bvh.intersect(mesh, origin, dir, 0.0);
    if (!hit) {
        if (rec) rec->primary_miss = true;
        return a.light.eval(dir);
    }
    Rgb L = Rgb::Zero();
    Rgb beta = Rgb::Ones();
    Vec3 d = dir;
    for (int depth = 0; depth < cfg.max_depth; ++depth) {
        PathVertex v;
        v.triangle = hit->triangle;
        v.wo = -d;
        const Vec3 nf = mesh.face_cross(static_cast<std::size_t>(hit->triangle)).normalized();
        v.flipped = nf.dot(v.wo) < 0.0;
        v.n = v.flipped ? Vec3(-nf) : nf;
        const auto f = static_cast<std::size_t>(hit->triangle);
        v.uv = (1.0 - hit->b1 - hit->b2) * mesh.corner_uv(f, 0) + hit->b1 * mesh.corner_uv(f, 1) +
               hit->b2 * mesh.corner_uv(f, 2);
        v.brdf = a.material(v.uv);
        const shading::BrdfParams sp = scene.sampling_material(v.uv);
        v.beta = beta;
        const Vec3 x = hit->point + scene.epsilon() * v.n;

        const Vec2 ul = rng.next2();
        const Vec2 ub = rng.next2();
        const double u_lobe = rng.next1();

        double pl = 0.0;
        const Vec3 wl = sampler.sample(ul, &pl);
        const double cos_l = v.n.dot(wl);
        if (pl > 0.0 && cos_l > 0.0 && !bvh.occluded(mesh, x, wl, 0.0, kInf)) {
            const double pb = shading::brdf_pdf(sp, v.n, v.wo, wl);
            v.nee = true;
            v.wl = wl;
            v.le_l = a.light.eval(wl);
            v.k_l = pl / (pl * pl + pb * pb);
            L += beta * shading::brdf_eval(v.brdf, v.n, wl, v.wo) * cos_l * v.le_l * v.k_l;
        }

        const auto bs = shading::brdf_sample(sp, v.n, v.wo, ub, u_lobe);
        if (!bs.valid) {
            if (rec) rec->vertices.push_back(v);
            break;
        }
        v.sampled = true;
        v.wi = bs.wi;
        v.inv_pdf = 1.0 / bs.pdf;
        const Rgb weight = shading::brdf_eval(v.brdf, v.n, bs.wi, v.wo) * (v.n.dot(bs.wi) * v.inv_pdf);
        const auto next = bvh.intersect(mesh, x, bs.wi, 0.0);
        if (!next) {
            const double pl2 = sampler.empty() ? 0.0 : sampler.pdf(bs.wi);
            v.next = PathVertex::Next::Miss;
            v.le_b = a.light.eval(bs.wi);
            v.w_b = bs.pdf * bs.pdf / (bs.pdf * bs.pdf + pl2 * pl2);
            L += beta * weight * v.le_b * v.w_b;
            if (rec) rec->vertices.push_back(v);
            break;
        }
        if (!cfg.gi || depth + 1 >= cfg.max_depth) {
            if (rec) rec->vertices.push_back(v);
            break;
        }
        v.next = PathVertex::Next::Surface;
        if (rec) rec->vertices.push_back(v);
        beta = beta * weight;
        hit = next;
        d = bs.wi;
    }
    return L;
}

// Local contribution of vertex `v` with shading normal `n`, given the
// radiance `li` arriving along the sampled direction.
Rgb local_contribution(const PathVertex& v, const Vec3& n, const Rgb& li) {
    Rgb c = Rgb::Zero();
    if (v.nee) c += shading::brdf_eval(v.brdf, n, v.wl, v.wo) * std::max(0.0, n.dot(v.wl)) * v.le_l * v.k_l;
    if (v.sampled) c += shading::brdf_eval(v.brdf, n, v.wi, v.wo) * (std::max(0.0, n.dot(v.wi)) * v.inv_pdf) * li;
    return c;
}

void add_texture_grad(const ImageBuffer& tex, const Vec2& uv, const double* g, std::vector<double>& grad) {
    const auto s = geometry::texel_stencil(tex.width, tex.height, uv);
    for (int b = 0; b < 4; ++b)
        for (int c = 0; c < tex.channels; ++c) grad[s.texel[b] * tex.channels + c] += s.weight[b] * g[c];
}

void backprop_path(const Scene& scene, const Path& path, const Rgb& adjoint, const GradientOptions& opts,
                   AssetGradient& grad) {
    const TexturedAssets& a = scene.assets();
    if (path.primary_miss) {
        if (opts.appearance) add_light_grad(a.light, path.primary_dir, adjoint, grad.light);
        return;
    }
    Rgb c_next = Rgb::Zero();
    for (auto it = path.vertices.rbegin(); it != path.vertices.rend(); ++it) {
        const PathVertex& v = *it;
        Rgb li = Rgb::Zero();
        if (v.next == PathVertex::Next::Miss) li = v.le_b * v.w_b;
        if (v.next == PathVertex::Next::Surface) li = c_next;
        const Rgb adj = adjoint * v.beta;

        if (opts.appearance) {
            Rgb g_a = Rgb::Zero();
            double g_r = 0.0;
            if (v.nee) {
                const auto e = shading::brdf_eval_grad(v.brdf, v.n, v.wl, v.wo);
                const double k = v.n.dot(v.wl) * v.k_l;
                const Rgb g = adj * v.le_l * k;
                g_a += g * e.d_albedo;
                g_r += g.sum() * e.d_roughness;
                add_light_grad(a.light, v.wl, adj * e.value * k, grad.light);
            }
            if (v.sampled) {
                const auto e = shading::brdf_eval_grad(v.brdf, v.n, v.wi, v.wo);
                const double k = v.n.dot(v.wi) * v.inv_pdf;
                const Rgb g = adj * li * k;
                g_a += g * e.d_albedo;
                g_r += g.sum() * e.d_roughness;
                if (v.next == PathVertex::Next::Miss) add_light_grad(a.light, v.wi, adj * e.value * (k * v.w_b), grad.light);
            }
            add_texture_grad(a.albedo, v.uv, g_a.data(), grad.albedo);
            add_texture_grad(a.roughness, v.uv, &g_r, grad.roughness);
        }

        if (opts.vertex_shading) {
            Vec3 t, b;
            make_frame(v.n, t, b);
            constexpr double h = 1e-4;
            auto probe = [&](const Vec3& dir) {
                const double sp = adj.matrix().dot(local_contribution(v, (v.n + h * dir).normalized(), li).matrix());
                const double sm = adj.matrix().dot(local_contribution(v, (v.n - h * dir).normalized(), li).matrix());
                return (sp - sm) / (2.0 * h);
            };
            Vec3 g_n = probe(t) * t + probe(b) * b;
            if (v.flipped) g_n = -g_n;
            const auto f = static_cast<std::size_t>(v.triangle);
            const Vec3 cr = a.mesh.face_cross(f);
            const double len = cr.norm();
            if (len > 0.0) {
                const Vec3 g_c = g_n / len;
                const auto& tri = a.mesh.triangles[f];
                const Vec3 e1 = a.mesh.vertices[tri[1]] - a.mesh.vertices[tri[0]];
                const Vec3 e2 = a.mesh.vertices[tri[2]] - a.mesh.vertices[tri[0]];
                const Vec3 d1 = e2.cross(g_c), d2 = g_c.cross(e1);
                grad.vertices[tri[1]] += d1;
                grad.vertices[tri[2]] += d2;
                grad.vertices[tri[0]] -= d1 + d2;
            }
        }

        c_next = local_contribution(v, v.n, li);
    }
}

void check_pixels(const Camera& camera, std::span<const int> pixels) {
    const long n = static_cast<long>(camera.width) * camera.height;
    for (int p : pixels)
        if (p < 0 || p >= n) throw ArgumentError("pixel index out of range");
}

double l1(const ImageBuffer& a, const ImageBuffer& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s;
}

std::vector<int> all_pixels(const Camera& camera) {
    std::vector<int> px(static_cast<std::size_t>(camera.width) * camera.height);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<int>(i);
    return px;
}

}  // namespace

// ---------------------------------------------------------------------------

PixelSampler::PixelSampler(uint64_t seed, uint64_t pixel, int sample, int spp)
    : rng_(make_rng(seed, pixel, static_cast<uint64_t>(sample))),
      key_(hash_combine(hash_combine(seed, 0x5a3713c5), pixel)),
      sample_(static_cast<uint32_t>(sample)),
      spp_(static_cast<uint32_t>(std::max(1, spp))) {
    side_ = static_cast<uint32_t>(std::lround(std::sqrt(static_cast<double>(spp_))));
    if (side_ * side_ != spp_) side_ = 0;
}

uint32_t PixelSampler::stratum(uint32_t count) {
    const auto p = static_cast<uint32_t>(hash_combine(key_, dim_++));
    return permute(sample_ % count, count, p);
}

double PixelSampler::next1() {
    const uint32_t k = stratum(spp_);
    return std::min((k + rng_.uniform()) / spp_, 1.0 - 0x1p-53);
}

Vec2 PixelSampler::next2() {
    if (side_ == 0) {
        const double a = next1();
        return {a, next1()};
    }
    const uint32_t k = stratum(spp_);
    const double a = rng_.uniform();
    const double b = rng_.uniform();
    return {std::min((k % side_ + a) / side_, 1.0 - 0x1p-53), std::min((k / side_ + b) / side_, 1.0 - 0x1p-53)};
}

Light Light::from_sg(shading::SgMixture mix) {
    Light l;
    l.kind = Kind::Sg;
    l.sg = std::move(mix);
    return l;
}

Light Light::from_env(shading::EnvMap map) {
    Light l;
    l.kind = Kind::Env;
    l.env = std::move(map);
    return l;
}

Rgb Light::eval(const Vec3& w) const { return is_env() ? shading::envmap_lookup(env, w) : shading::sg_eval(sg, w); }

std::size_t Light::parameter_count() const {
    return is_env() ? env.image.data.size() : sg.size() * static_cast<std::size_t>(shading::kSgParams);
}

void TexturedAssets::validate() const {
    mesh.validate();
    if (!mesh.empty() && !mesh.has_uvs()) throw ArgumentError("assets: mesh has no texture coordinates");
    if (albedo.channels != 3 || albedo.width < 1 || albedo.height < 1)
        throw ArgumentError("assets: albedo texture must be a non-empty 3-channel image");
    if (roughness.channels != 1 || roughness.width < 1 || roughness.height < 1)
        throw ArgumentError("assets: roughness texture must be a non-empty 1-channel image");
    for (double v : albedo.data)
        if (!(v >= 0.0 && v < 1.0)) throw ArgumentError("assets: albedo texels must lie in [0, 1)");
    for (double v : roughness.data)
        if (!(v >= shading::kMinRoughness && v <= shading::kMaxRoughness))
            throw ArgumentError("assets: roughness texels must lie in [0.01, 1]");
    if (!(f0 >= 0.0 && f0 <= 1.0)) throw ArgumentError("assets: f0 must lie in [0, 1]");
    if (!(specular >= 0.0 && specular <= 1.0)) throw ArgumentError("assets: specular weight must lie in [0, 1]");
    if (light.is_env()) {
        if (light.env.width() < 1 || light.env.height() < 1 || light.env.image.channels != 3)
            throw ArgumentError("assets: empty environment map");
        for (double v : light.env.image.data)
            if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("assets: environment must be non-negative");
    } else {
        for (const auto& l : light.sg)
            if (!(l.lambda >= 0.0) || (l.amplitude.array() < 0.0).any() || !l.amplitude.allFinite() ||
                !is_unit(l.axis, 1e-6))
                throw ArgumentError("assets: invalid SG lobe");
    }
}

shading::BrdfParams TexturedAssets::material(const Vec2& uv) const {
    shading::BrdfParams p;
    p.albedo = geometry::sample_bilinear(albedo, uv);
    p.roughness = geometry::sample_bilinear_scalar(roughness, uv);
    p.f0 = f0;
    p.specular = specular;
    return p;
}

void save_assets(const std::string& dir, const TexturedAssets& assets) {
    const fs::path base(dir);
    fs::create_directories(base);
    geometry::save_mesh((base / "mesh.npbm").string(), assets.mesh);
    geometry::write_obj((base / "mesh.obj").string(), assets.mesh);
    io::write_pfm((base / "albedo.pfm").string(), assets.albedo);
    io::write_pfm((base / "roughness.pfm").string(), assets.roughness);
    if (assets.light.is_env())
        shading::save_envmap((base / "env.pfm").string(), assets.light.env);
    else
        shading::save_sg((base / "sg.json").string(), assets.light.sg);
    const nlohmann::json j = {{"f0", assets.f0},
                              {"specular", assets.specular},
                              {"light", assets.light.is_env() ? "env" : "sg"}};
    std::ofstream os(base / "assets.json");
    os << j.dump(2) << '\n';
    if (!os) throw LoadError("write failed: " + (base / "assets.json").string());
}

TexturedAssets load_assets(const std::string& dir) {
    const fs::path base(dir);
    std::ifstream is(base / "assets.json");
    if (!is) throw LoadError("missing " + (base / "assets.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("assets.json: " + std::string(e.what()));
    }
    TexturedAssets a;
    a.mesh = geometry::load_mesh((base / "mesh.npbm").string());
    a.albedo = io::read_pfm((base / "albedo.pfm").string());
    a.roughness = io::read_pfm((base / "roughness.pfm").string());
    a.f0 = j.value("f0", 0.04);
    a.specular = j.value("specular", 1.0);
    const std::string kind = j.value("light", "sg");
    if (kind == "env")
        a.light = Light::from_env(shading::load_envmap((base / "env.pfm").string()));
    else if (kind == "sg")
        a.light = Light::from_sg(shading::load_sg((base / "sg.json").string()));
    else
        throw LoadError("assets.json: unknown light kind \"" + kind + "\"");
    // Single-precision files may round texels onto the open upper bound.
    for (double& v : a.albedo.data) v = std::clamp(v, 0.0, 1.0 - 1e-4);
    for (double& v : a.roughness.data) v = shading::clamp_roughness(v);
    try {
        a.validate();
    } catch (const ArgumentError& e) {
        throw LoadError(dir + ": " + e.what());
    }
    return a;
}

TexturedAssets assets_from_vertices(const geometry::TriMesh& mesh, const shading::SgMixture& sg, int texel_res,
                                    double f0, double specular) {
    auto bake = geometry::uv_atlas_and_bake(mesh, texel_res);
    TexturedAssets a;
    a.mesh = std::move(bake.mesh);
    a.albedo = std::move(bake.albedo);
    a.roughness = std::move(bake.roughness);
    for (double& v : a.albedo.data) v = std::clamp(v, 0.0, 1.0 - 1e-4);
    for (double& v : a.roughness.data) v = shading::clamp_roughness(v);
    a.light = Light::from_sg(sg);
    a.f0 = f0;
    a.specular = specular;
    return a;
}

TexturedAssets constant_assets(const geometry::TriMesh& mesh, int texel_res, int sg_lobes, double level, double f0,
                               double specular) {
    geometry::TriMesh m = mesh;
    m.albedo.assign(m.vertex_count(), Rgb::Constant(level));
    m.roughness.assign(m.vertex_count(), level);
    auto sg = shading::init_sg(sg_lobes, Rgb::Ones());
    const auto env = shading::envmap_from_sg(sg, 64, 32);
    double mean = 0.0, area = 0.0;
    for (int y = 0; y < env.height(); ++y)
        for (int x = 0; x < env.width(); ++x) {
            mean += env.texel(x, y).mean() * env.texel_solid_angle(y);
            area += env.texel_solid_angle(y);
        }
    mean /= area;
    for (auto& l : sg) l.amplitude = Rgb::Constant(level / mean);
    return assets_from_vertices(m, sg, texel_res, f0, specular);
}

void RenderConfig::validate() const {
    if (spp < 1) throw ArgumentError("render: spp must be >= 1");
    if (max_depth < 1) throw ArgumentError("render: max_depth must be >= 1");
}

Scene::Scene(const TexturedAssets& assets, const shading::EnvMap* proposal, const TexturedAssets* sampling)
    : assets_(&assets), sampling_(sampling ? sampling : &assets) {
    if (!assets.mesh.empty()) {
        bvh_ = geometry::Bvh(assets.mesh);
        eps_ = 1e-4 * assets.mesh.bounds().diagonal();
    }
    const auto& light = assets.light;
    if (proposal)
        sampler_ = shading::EnvSampler(*proposal);
    else if (light.is_env())
        sampler_ = shading::EnvSampler(light.env);
    else if (!light.sg.empty())
        sampler_ = shading::EnvSampler(shading::envmap_from_sg(light.sg, 64, 32));
}

std::vector<Rgb> trace_pixels(const Scene& scene, const Camera& camera, std::span<const int> pixels,
                              const RenderConfig& cfg) {
    cfg.validate();
    camera.validate();
    check_pixels(camera, pixels);
    std::vector<Rgb> out(pixels.size(), Rgb::Zero());
    parallel_chunks(pixels.size(), worker_count() * 4, [&](int, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const int p = pixels[i];
            const int x = p % camera.width, y = p / camera.width;
            Rgb mean = Rgb::Zero();
            for (int s = 0; s < cfg.spp; ++s) {
                PixelSampler rng(cfg.seed, static_cast<uint64_t>(p), s, cfg.spp);
                const Vec2 j = cfg.jitter ? rng.next2() : Vec2(0.5, 0.5);
                Vec3 o, d;
                camera.ray(x + j.x(), y + j.y(), o, d);
                // Running mean: exact when every sample agrees.
                mean += (trace_path(scene, o, d, rng, cfg, nullptr) - mean) / (s + 1.0);
            }
            out[i] = mean;
        }
    });
    return out;
}

ImageBuffer path_trace(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg) {
    assets.validate();
    const Scene scene(assets);
    const auto px = all_pixels(camera);
    const auto values = trace_pixels(scene, camera, px, cfg);
    ImageBuffer img(camera.width, camera.height, 3);
    for (std::size_t i = 0; i < values.size(); ++i)
        for (int c = 0; c < 3; ++c) img.data[3 * i + c] = values[i][c];
    return img;
}

Aovs render_aovs(const TexturedAssets& assets, const Camera& camera) {
    assets.validate();
    camera.validate();
    const geometry::Bvh bvh(assets.mesh);
    Aovs out{ImageBuffer(camera.width, camera.height, 3), ImageBuffer(camera.width, camera.height, 1),
             ImageBuffer(camera.width, camera.height, 1)};
    parallel_chunks(out.coverage.pixel_count(), worker_count() * 4, [&](int, std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            const int x = static_cast<int>(p % camera.width), y = static_cast<int>(p / camera.width);
            Vec3 o, d;
            camera.ray(x + 0.5, y + 0.5, o, d);
            if (bvh.empty()) continue;
            const auto hit = bvh.intersect(assets.mesh, o, d, 0.0);
            if (!hit) continue;
            const auto f = static_cast<std::size_t>(hit->triangle);
            const Vec2 uv = (1.0 - hit->b1 - hit->b2) * assets.mesh.corner_uv(f, 0) +
                            hit->b1 * assets.mesh.corner_uv(f, 1) + hit->b2 * assets.mesh.corner_uv(f, 2);
            const auto m = assets.material(uv);
            out.albedo.set_rgb(x, y, m.albedo);
            out.roughness.at(x, y) = m.roughness;
            out.coverage.at(x, y) = 1.0;
        }
    });
    return out;
}

void AssetGradient::resize_for(const TexturedAssets& assets, bool with_vertices) {
    albedo.assign(assets.albedo.data.size(), 0.0);
    roughness.assign(assets.roughness.data.size(), 0.0);
    light.assign(assets.light.parameter_count(), 0.0);
    vertices.assign(with_vertices ? assets.mesh.vertex_count() : 0, Vec3::Zero());
}

void AssetGradient::add(const AssetGradient& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) a[i] += b[i];
    };
    acc(albedo, o.albedo);
    acc(roughness, o.roughness);
    acc(light, o.light);
    for (std::size_t i = 0; i < vertices.size() && i < o.vertices.size(); ++i) vertices[i] += o.vertices[i];
}

AssetGradient backprop_pixels(const Scene& scene, const Camera& camera, std::span<const int> pixels,
                              std::span<const Rgb> adjoints, const RenderConfig& cfg, const GradientOptions& opts) {
    cfg.validate();
    camera.validate();
    check_pixels(camera, pixels);
    if (adjoints.size() != pixels.size()) throw ArgumentError("backprop: one adjoint per pixel required");
    const TexturedAssets& a = scene.assets();
    std::vector<AssetGradient> partial(kReduceChunks);
    for (auto& g : partial) g.resize_for(a, opts.vertex_shading);
    const double inv = 1.0 / cfg.spp;
    parallel_chunks(pixels.size(), kReduceChunks, [&](int chunk, std::size_t b, std::size_t e) {
        AssetGradient& g = partial[static_cast<std::size_t>(chunk)];
        Path path;
        for (std::size_t i = b; i < e; ++i) {
            const Rgb adj = adjoints[i] * inv;
            if ((adj == 0.0).all()) continue;
            const int p = pixels[i];
            const int x = p % camera.width, y = p / camera.width;
            for (int s = 0; s < cfg.spp; ++s) {
                PixelSampler rng(cfg.seed, static_cast<uint64_t>(p), s, cfg.spp);
                const Vec2 j = cfg.jitter ? rng.next2() : Vec2(0.5, 0.5);
                Vec3 o, d;
                camera.ray(x + j.x(), y + j.y(), o, d);
                trace_path(scene, o, d, rng, cfg, &path);
                backprop_path(scene, path, adj, opts, g);
            }
        }
    });
    AssetGradient out;
    out.resize_for(a, opts.vertex_shading);
    for (const auto& g : partial) out.add(g);
    return out;
}

Rendering render(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg) {
    return {path_trace(assets, camera, cfg), cfg};
}

namespace {

void check_replay(const Camera& camera, const RenderConfig& cfg, const Rendering& forward,
                  const ImageBuffer& adjoint) {
    if (forward.config.seed != cfg.seed || forward.config.spp != cfg.spp ||
        forward.config.max_depth != cfg.max_depth || forward.config.gi != cfg.gi ||
        forward.config.jitter != cfg.jitter)
        throw ArgumentError("backprop: sampler config differs from the forward render (seed mismatch)");
    if (adjoint.width != camera.width || adjoint.height != camera.height || adjoint.channels != 3 ||
        !adjoint.same_shape(forward.image))
        throw ArgumentError("backprop: adjoint image shape does not match the render");
}

std::vector<Rgb> to_rgb(const ImageBuffer& img) {
    std::vector<Rgb> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]};
    return out;
}

}  // namespace

AssetGradient backprop_appearance(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg,
                                  const Rendering& forward, const ImageBuffer& adjoint) {
    check_replay(camera, cfg, forward, adjoint);
    assets.validate();
    const Scene scene(assets);
    const auto px = all_pixels(camera);
    return backprop_pixels(scene, camera, px, to_rgb(adjoint), cfg, {true, false});
}

std::vector<Vec3> silhouette_gradient(const geometry::TriMesh& mesh, const geometry::Bvh& bvh,
                                      const Camera& camera, const ImageBuffer& mask_adjoint,
                                      int samples_per_pixel) {
    if (samples_per_pixel < 1) throw ArgumentError("silhouette_gradient: samples_per_pixel must be >= 1");
    if (mask_adjoint.width != camera.width || mask_adjoint.height != camera.height || mask_adjoint.channels != 1)
        throw ArgumentError("silhouette_gradient: adjoint must be a 1-channel image of the camera size");
    std::vector<std::pair<std::pair<int, int>, int>> edge_faces;
    edge_faces.reserve(3 * mesh.triangle_count());
    for (std::size_t f = 0; f < mesh.triangle_count(); ++f) {
        const auto& t = mesh.triangles[f];
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            edge_faces.push_back({{std::min(a, b), std::max(a, b)}, static_cast<int>(f)});
        }
    }
    std::sort(edge_faces.begin(), edge_faces.end());
    struct Edge {
        int a, b, front;
    };
    auto facing = [&](int f) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(f)];
        const Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
        return mesh.face_cross(static_cast<std::size_t>(f)).dot(c - camera.position) < 0.0;
    };
    std::vector<Edge> sil;
    for (std::size_t i = 0; i < edge_faces.size();) {
        std::size_t j = i;
        while (j < edge_faces.size() && edge_faces[j].first == edge_faces[i].first) ++j;
        const auto [a, b] = edge_faces[i].first;
        if (j - i == 1) {
            sil.push_back({a, b, edge_faces[i].second});
        } else if (j - i == 2) {
            const int f1 = edge_faces[i].second, f2 = edge_faces[i + 1].second;
            const bool s1 = facing(f1), s2 = facing(f2);
            if (s1 != s2) sil.push_back({a, b, s1 ? f1 : f2});
        }
        i = j;
    }

    std::vector<std::vector<Vec3>> partial(kReduceChunks, std::vector<Vec3>(mesh.vertex_count(), Vec3::Zero()));
    parallel_chunks(sil.size(), kReduceChunks, [&](int chunk, std::size_t b, std::size_t e) {
        auto& g = partial[static_cast<std::size_t>(chunk)];
        for (std::size_t i = b; i < e; ++i) {
            const Edge& ed = sil[i];
            const auto& tri = mesh.triangles[static_cast<std::size_t>(ed.front)];
            int c = tri[0];
            for (int k : tri)
                if (k != ed.a && k != ed.b) c = k;
            const Vec3 &va = mesh.vertices[static_cast<std::size_t>(ed.a)],
                       &vb = mesh.vertices[static_cast<std::size_t>(ed.b)],
                       &vc = mesh.vertices[static_cast<std::size_t>(c)];
            double za = 0.0, zb = 0.0, zc = 0.0;
            const Vec2 qa = camera.project(va, &za), qb = camera.project(vb, &zb), qc = camera.project(vc, &zc);
            if (za <= 0.0 || zb <= 0.0 || zc <= 0.0) continue;
            const Vec2 ev = qb - qa;
            const double len = ev.norm();
            if (!(len > 1e-12)) continue;
            Vec2 m(-ev.y() / len, ev.x() / len);
            if (m.dot(qc - qa) > 0.0) m = -m;
            const int n = std::max(1, static_cast<int>(std::ceil(len * samples_per_pixel)));
            const double seg = len / n;
            for (int s = 0; s < n; ++s) {
                const double t = (s + 0.5) / n;
                const Vec3 P = (1.0 - t) * va + t * vb;
                const Vec2 q = camera.project(P);
                const int px = static_cast<int>(std::floor(q.x())), py = static_cast<int>(std::floor(q.y()));
                if (px < 0 || py < 0 || px >= camera.width || py >= camera.height) continue;
                const double adj = mask_adjoint.at(px, py);
                if (adj == 0.0) continue;
                const Vec3 to = P - camera.position;
                const double dist = to.norm();
                if (bvh.occluded(mesh, camera.position, to / dist, 0.0, dist * (1.0 - 1e-4))) continue;
                Vec3 o, d;
                camera.ray(q.x() + 0.05 * m.x(), q.y() + 0.05 * m.y(), o, d);
                if (bvh.occluded(mesh, o, d, 0.0, kInf)) continue;
                const Vec3 dq = camera.project_jacobian(P).transpose() * m;
                const Vec3 gp = adj * seg * dq;
                g[static_cast<std::size_t>(ed.a)] += (1.0 - t) * gp;
                g[static_cast<std::size_t>(ed.b)] += t * gp;
            }
        }
    });
    std::vector<Vec3> out(mesh.vertex_count(), Vec3::Zero());
    for (const auto& g : partial)
        for (std::size_t v = 0; v < out.size(); ++v) out[v] += g[v];
    return out;
}

std::vector<Vec3> backprop_vertices(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg,
                                    const Rendering& forward, const ImageBuffer& adjoint,
                                    const ImageBuffer* target_mask, double w_mask, int mask_supersample) {
    check_replay(camera, cfg, forward, adjoint);
    assets.validate();
    const Scene scene(assets);
    const auto px = all_pixels(camera);
    auto g = backprop_pixels(scene, camera, px, to_rgb(adjoint), cfg, {false, true});
    if (target_mask && w_mask != 0.0) {
        if (target_mask->width != camera.width || target_mask->height != camera.height || target_mask->channels != 1)
            throw ArgumentError("backprop_vertices: target mask shape does not match the camera");
        const auto rmask = volren::render_mask(assets.mesh, scene.bvh(), camera, mask_supersample);
        ImageBuffer madj(camera.width, camera.height, 1);
        for (std::size_t i = 0; i < madj.data.size(); ++i)
            madj.data[i] = w_mask * sign(rmask.data[i] - target_mask->data[i]);
        const auto s = silhouette_gradient(assets.mesh, scene.bvh(), camera, madj, mask_supersample);
        for (std::size_t v = 0; v < s.size(); ++v) g.vertices[v] += s[v];
    }
    return g.vertices;
}

// ---------------------------------------------------------------------------

double roughness_tv(const ImageBuffer& tex, std::vector<double>* grad, double scale) {
    if (tex.channels != 1) throw ArgumentError("roughness_tv: expected a 1-channel texture");
    if (grad && grad->size() != tex.data.size()) throw ArgumentError("roughness_tv: gradient size mismatch");
    double sum = 0.0;
    auto term = [&](std::size_t i, std::size_t j) {
        const double d = tex.data[j] - tex.data[i];
        sum += std::abs(d);
        if (grad) {
            (*grad)[j] += scale * sign(d);
            (*grad)[i] -= scale * sign(d);
        }
    };
    const auto W = static_cast<std::size_t>(tex.width);
    for (std::size_t y = 0; y < static_cast<std::size_t>(tex.height); ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t i = y * W + x;
            if (x + 1 < W) term(i, i + 1);
            if (y + 1 < static_cast<std::size_t>(tex.height)) term(i, i + W);
        }
    return sum;
}

IrLosses ir_loss(const TexturedAssets& assets, const PosedDataset& dataset, std::span<const ImageBuffer> renders,
                 std::span<const ImageBuffer> rendered_masks, const IrWeights& weights) {
    if (renders.size() != dataset.size() || rendered_masks.size() != dataset.size())
        throw ArgumentError("ir_loss: need one render and one mask per view");
    IrLosses out;
    for (std::size_t j = 0; j < dataset.size(); ++j) {
        const View& v = dataset.views[j];
        if (!renders[j].same_shape(v.image)) throw ArgumentError("ir_loss: render shape mismatch in view " + v.name);
        out.img += l1(v.image, renders[j]);
        if (v.mask) {
            if (!rendered_masks[j].same_shape(*v.mask))
                throw ArgumentError("ir_loss: mask shape mismatch in view " + v.name);
            out.mask += l1(*v.mask, rendered_masks[j]);
        }
    }
    out.reg = roughness_tv(assets.roughness);
    out.total = out.img + weights.w_mask * out.mask + weights.w_reg * out.reg;
    return out;
}

IrLosses evaluate_ir(const TexturedAssets& assets, const PosedDataset& dataset, const RenderConfig& cfg,
                     const IrWeights& weights, int mask_supersample) {
    assets.validate();
    const Scene scene(assets);
    std::vector<ImageBuffer> renders, masks;
    for (const auto& v : dataset.views) {
        renders.push_back(path_trace(assets, v.camera, cfg));
        masks.push_back(volren::render_mask(assets.mesh, scene.bvh(), v.camera, mask_supersample));
    }
    return ir_loss(assets, dataset, renders, masks, weights);
}

// ---------------------------------------------------------------------------

void Stage3Schedule::validate() const {
    if (step1_iterations < 0 || step2_iterations < 0 || step3_iterations < 0)
        throw ArgumentError("schedule: iteration counts must be non-negative");
    for (double v : {lr_albedo, lr_roughness, lr_sg, lr_env, lr_vertex})
        if (!(v >= 0.0)) throw ArgumentError("schedule: learning rates must be non-negative");
    if (!(lambda_env >= 0.0) || !(lambda_vertex >= 0.0)) throw ArgumentError("schedule: lambda must be >= 0");
    if (!(weights.w_mask >= 0.0) || !(weights.w_reg >= 0.0)) throw ArgumentError("schedule: weights must be >= 0");
    if (env_width < 2 || env_height < 2) throw ArgumentError("schedule: envmap must be at least 2x2");
    if (batch_pixels < 1) throw ArgumentError("schedule: batch_pixels must be >= 1");
    if (mask_supersample < 1) throw ArgumentError("schedule: mask_supersample must be >= 1");
    render.validate();
}

namespace {

class LightOptimizer {
public:
    void reset(const Light& light, const Stage3Schedule& s) {
        if (light.is_env()) {
            env_ = optim::UniformLaplacian(optim::image_laplacian(light.env.width(), light.env.height(), true), 3,
                                           s.lambda_env, s.adam);
            lr_ = s.lr_env;
            is_env_ = true;
        } else {
            adam_ = optim::Adam(light.parameter_count(), s.adam);
            lr_ = s.lr_sg;
            is_env_ = false;
        }
    }

    void step(Light& light, const std::vector<double>& grad) {
        if (is_env_) {
            env_.step(light.env.image.data, grad, lr_);
            for (double& v : light.env.image.data) v = std::max(0.0, v);
        } else {
            auto flat = shading::sg_flatten(light.sg);
            adam_.step(flat, grad, lr_);
            shading::sg_unflatten(light.sg, flat);
            shading::sg_project(light.sg);
        }
    }

private:
    bool is_env_ = false;
    double lr_ = 0.0;
    optim::Adam adam_;
    optim::UniformLaplacian env_;
};

std::vector<double> flatten(const std::vector<Vec3>& v) {
    std::vector<double> out(3 * v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int c = 0; c < 3; ++c) out[3 * i + c] = v[i][c];
    return out;
}

}  // namespace

TexturedAssets run_pbir(TexturedAssets initial, const PosedDataset& dataset, const Stage3Schedule& schedule,
                        const Stage3Logger& log, const Stage3Checkpoint& checkpoint) {
    schedule.validate();
    initial.validate();
    const auto train = dataset.split("train");
    if (train.empty()) throw ArgumentError("run_pbir: dataset has no training views");
    for (const View* v : train)
        if (v->image.channels != 3) throw ArgumentError("run_pbir: view " + v->name + " is not an RGB image");

    TexturedAssets assets = std::move(initial);
    optim::Adam albedo_opt(assets.albedo.data.size(), schedule.adam);
    optim::Adam rough_opt(assets.roughness.data.size(), schedule.adam);
    LightOptimizer light_opt;
    light_opt.reset(assets.light, schedule);
    const auto edges = geometry::mesh_edges(assets.mesh);
    optim::UniformLaplacian vertex_opt(optim::graph_laplacian(assets.mesh.vertex_count(), edges), 3,
                                       schedule.lambda_vertex, schedule.adam);

    const int iterations[3] = {schedule.step1_iterations, schedule.step2_iterations, schedule.step3_iterations};
    for (int step = 1; step <= 3; ++step) {
        if (step == 2 && !assets.light.is_env()) {
            assets.light = Light::from_env(
                shading::envmap_from_sg(assets.light.sg, schedule.env_width, schedule.env_height));
            light_opt.reset(assets.light, schedule);
        }
        const bool shape = step == 3;
        for (int it = 0; it < iterations[step - 1]; ++it) {
            auto rng = make_rng(schedule.seed, 0x3b1fc0de, static_cast<uint64_t>(step), static_cast<uint64_t>(it));
            const auto vi = static_cast<std::size_t>(rng.next_u32() % train.size());
            const View& view = *train[vi];
            const Camera& cam = view.camera;
            const long npx = static_cast<long>(cam.width) * cam.height;
            std::vector<int> pixels(static_cast<std::size_t>(schedule.batch_pixels));
            for (int& p : pixels) p = static_cast<int>(rng.next_u32() % static_cast<uint32_t>(npx));

            RenderConfig cfg = schedule.render;
            cfg.seed = hash_combine(schedule.seed, rng.next_u32());
            const Scene scene(assets);
            const auto values = trace_pixels(scene, cam, pixels, cfg);
            const double scale = static_cast<double>(npx) / schedule.batch_pixels;
            IrLosses losses;
            std::vector<Rgb> adj(pixels.size());
            for (std::size_t i = 0; i < pixels.size(); ++i) {
                const int x = pixels[i] % cam.width, y = pixels[i] / cam.width;
                const Rgb r = values[i] - view.image.rgb(x, y);
                losses.img += scale * r.abs().sum();
                for (int c = 0; c < 3; ++c) adj[i][c] = scale * sign(r[c]);
            }
            auto grad = backprop_pixels(scene, cam, pixels, adj, cfg, {true, shape});
            losses.reg = roughness_tv(assets.roughness, &grad.roughness, schedule.weights.w_reg);
            if (shape && view.mask) {
                const auto rmask = volren::render_mask(assets.mesh, scene.bvh(), cam, schedule.mask_supersample);
                ImageBuffer madj(cam.width, cam.height, 1);
                for (std::size_t i = 0; i < madj.data.size(); ++i) {
                    const double r = rmask.data[i] - view.mask->data[i];
                    losses.mask += std::abs(r);
                    madj.data[i] = schedule.weights.w_mask * sign(r);
                }
                const auto s =
                    silhouette_gradient(assets.mesh, scene.bvh(), cam, madj, schedule.mask_supersample);
                for (std::size_t v = 0; v < s.size(); ++v) grad.vertices[v] += s[v];
            }
            losses.total = losses.img + schedule.weights.w_mask * losses.mask + schedule.weights.w_reg * losses.reg;
            if (log) log({step, it, static_cast<int>(vi), losses});

            albedo_opt.step(assets.albedo.data, grad.albedo, schedule.lr_albedo);
            rough_opt.step(assets.roughness.data, grad.roughness, schedule.lr_roughness);
            light_opt.step(assets.light, grad.light);
            for (double& v : assets.albedo.data) v = std::clamp(v, 0.0, 1.0 - 1e-4);
            for (double& v : assets.roughness.data) v = shading::clamp_roughness(v);
            if (shape) {
                auto pos = flatten(assets.mesh.vertices);
                vertex_opt.step(pos, flatten(grad.vertices), schedule.lr_vertex);
                for (std::size_t v = 0; v < assets.mesh.vertex_count(); ++v)
                    assets.mesh.vertices[v] = Vec3(pos[3 * v], pos[3 * v + 1], pos[3 * v + 2]);
                if (!assets.mesh.normals.empty()) assets.mesh.normals = geometry::area_weighted_normals(assets.mesh);
            }
        }
        if (checkpoint) checkpoint(step, assets);
    }
    return assets;
}

}  // namespace npbir::pbir
