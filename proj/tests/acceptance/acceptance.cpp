// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance checks. Usage: npbir_acceptance [criterion...]
// Prints one PASS/FAIL line per criterion; exit status 1 if any failed.

#include "npbir/distill.hpp"
#include "npbir/geometry.hpp"
#include "npbir/grid_field.hpp"
#include "npbir/io_metrics.hpp"
#include "npbir/pbir.hpp"
#include "npbir/pipeline.hpp"
#include "npbir/sampling.hpp"
#include "npbir/shading.hpp"
#include "npbir/toy.hpp"
#include "npbir/volume_render.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace npbir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects named sub-checks; the first failures are reported.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok) {
            ++failed_;
            if (failed_ <= 3) failures_ += (failures_.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : ", ") + s; }
    Outcome outcome() const {
        Outcome o;
        o.pass = failed_ == 0;
        o.detail = notes_;
        if (!o.pass) o.detail += (o.detail.empty() ? "" : "; ") + std::to_string(failed_) + "/" +
                                 std::to_string(count_) + " checks failed: " + failures_;
        else if (o.detail.empty()) o.detail = std::to_string(count_) + " checks";
        return o;
    }

private:
    int count_ = 0, failed_ = 0;
    std::string failures_, notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

double rel_err(double a, double b, double floor = 1e-300) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

bool close_rel(double a, double b, double tol = 1e-12) { return a == b || rel_err(a, b) <= tol; }

// Extended precision: the direct formula cancels when both sigmoids are near 1.
long double sigmoid_ld(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

// ---------------------------------------------------------------------------
// 1. Scalar oracles

Outcome oracles() {
    Checks c;
    Pcg32 rng(101);

    for (int i = 0; i < 200; ++i) {
        const double s = 1.0 + 60.0 * rng.uniform();
        const double a = 0.6 * (rng.uniform() - 0.5);
        const double b = a - (0.02 + 0.2 * rng.uniform());
        const long double sa = sigmoid_ld(s * a), sb = sigmoid_ld(s * b);
        const double ref = static_cast<double>(std::max(0.0L, (sa - sb) / sa));
        c.expect(close_rel(volren::alpha_from_sdf(a, b, s), ref), "alpha");
        c.expect(volren::alpha_from_sdf(b, a, s) == 0.0, "alpha clamp");
    }

    for (int t = 0; t < 50; ++t) {
        const int n = 1 + static_cast<int>(rng.uniform() * 20);
        std::vector<double> al(n);
        std::vector<Rgb> rad(n);
        for (int i = 0; i < n; ++i) {
            al[i] = rng.uniform();
            rad[i] = Rgb(rng.uniform(), rng.uniform(), rng.uniform());
        }
        const auto comp = volren::composite(al, rad);
        Rgb color = Rgb::Zero();
        for (int i = 0; i < n; ++i) {
            double T = 1.0;
            for (int j = 0; j < i; ++j) T *= 1.0 - al[j];
            c.expect(close_rel(comp.weights[i], T * al[i]), "composite weight");
            color += T * al[i] * rad[i];
        }
        double T = 1.0;
        for (double x : al) T *= 1.0 - x;
        for (int ch = 0; ch < 3; ++ch) c.expect(close_rel(comp.color[ch], color[ch]), "composite colour");
        c.expect(close_rel(comp.residual_transmittance, T), "residual transmittance");
    }

    for (int i = 0; i < 200; ++i) {
        volren::HuberState h;
        h.t = 0.01 + 0.3 * rng.uniform();
        const Rgb p(rng.uniform(), rng.uniform(), rng.uniform()), q(rng.uniform(), rng.uniform(), rng.uniform());
        double ref = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            const double e = q[ch] - p[ch];
            ref += std::abs(e) <= h.t ? e * e : 2.0 * h.t * std::abs(e) - h.t * h.t;
        }
        c.expect(close_rel(volren::photo_loss(p, q, h), ref), "huber");
    }

    for (int t = 0; t < 5; ++t) {
        const std::array<int, 3> res{3 + t, 4 + t % 3, 5};
        grid::VoxelGrid g(res, Box3{Vec3::Zero(), Vec3::Ones()}, 1);
        for (auto& v : g.values()) v = rng.uniform() - 0.5;
        double ref = 0.0;
        for (int i = 1; i + 1 < res[0]; ++i)
            for (int j = 1; j + 1 < res[1]; ++j)
                for (int k = 1; k + 1 < res[2]; ++k) {
                    const double m = (g.at(i - 1, j, k) + g.at(i + 1, j, k) + g.at(i, j - 1, k) + g.at(i, j + 1, k) +
                                      g.at(i, j, k - 1) + g.at(i, j, k + 1)) / 6.0;
                    ref += (g.at(i, j, k) - m) * (g.at(i, j, k) - m);
                }
        c.expect(close_rel(volren::laplacian_loss(g), ref), "laplacian");
    }

    for (int t = 0; t < 50; ++t) {
        const int n = 1 + static_cast<int>(rng.uniform() * 16);
        std::vector<double> w(n);
        std::vector<Rgb> l(n);
        const Rgb target(rng.uniform(), rng.uniform(), rng.uniform());
        double ref = 0.0;
        for (int i = 0; i < n; ++i) {
            w[i] = rng.uniform();
            l[i] = Rgb(rng.uniform(), rng.uniform(), rng.uniform());
            ref += w[i] * ((l[i] - target).abs().sum());
        }
        c.expect(close_rel(volren::pp_rgb_loss(w, l, target), ref), "pp-rgb");
    }

    for (int t = 0; t < 50; ++t) {
        shading::SgMixture mix;
        for (int i = 0; i < 5; ++i)
            mix.push_back({sample_uniform_sphere(rng.uniform2()), 40.0 * rng.uniform(),
                           Rgb(rng.uniform(), rng.uniform(), rng.uniform())});
        const Vec3 w = sample_uniform_sphere(rng.uniform2());
        Rgb ref = Rgb::Zero();
        for (const auto& l : mix) {
            const double d = l.axis.x() * w.x() + l.axis.y() * w.y() + l.axis.z() * w.z();
            ref += l.amplitude * std::exp(l.lambda * (d - 1.0));
        }
        const Rgb got = shading::sg_eval(mix, w);
        for (int ch = 0; ch < 3; ++ch) c.expect(close_rel(got[ch], ref[ch]), "sg lobe");
    }

    auto tv = [](const ImageBuffer& tex) {
        double s = 0.0;
        for (int y = 0; y < tex.height; ++y)
            for (int x = 0; x < tex.width; ++x) {
                if (x + 1 < tex.width) s += std::abs(tex.at(x + 1, y) - tex.at(x, y));
                if (y + 1 < tex.height) s += std::abs(tex.at(x, y + 1) - tex.at(x, y));
            }
        return s;
    };
    for (int t = 0; t < 10; ++t) {
        ImageBuffer tex(3 + t, 2 + 2 * t, 1);
        for (double& v : tex.data) v = rng.uniform();
        c.expect(close_rel(pbir::roughness_tv(tex), tv(tex)), "tv");
    }

    {
        auto quad = toy::make_quad(Vec3(-1, -1, 0), Vec3(2, 0, 0), Vec3(0, 2, 0), 1);
        quad.albedo.assign(quad.vertex_count(), Rgb::Constant(0.5));
        quad.roughness.assign(quad.vertex_count(), 0.5);
        auto a = pbir::assets_from_vertices(quad, {}, 8);
        for (double& v : a.roughness.data) v = 0.1 + 0.8 * rng.uniform();
        a.light = pbir::Light::from_env(shading::EnvMap(8, 4, Rgb::Constant(0.5)));
        PosedDataset ds;
        std::vector<ImageBuffer> renders, masks;
        for (int i = 0; i < 3; ++i) {
            View v;
            v.camera = Camera::look_at(Vec3(0.3 * i, 0, 3), Vec3::Zero(), Vec3(0, 1, 0), 40, 7, 5);
            v.image = ImageBuffer(7, 5, 3);
            for (double& x : v.image.data) x = rng.uniform();
            ImageBuffer r(7, 5, 3), rm(7, 5, 1);
            for (double& x : r.data) x = rng.uniform();
            for (double& x : rm.data) x = rng.uniform();
            if (i != 1) {
                v.mask = ImageBuffer(7, 5, 1);
                for (double& x : v.mask->data) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
            }
            ds.views.push_back(v);
            renders.push_back(r);
            masks.push_back(rm);
        }
        double img = 0.0, mask = 0.0;
        for (std::size_t i = 0; i < ds.views.size(); ++i) {
            for (std::size_t k = 0; k < renders[i].data.size(); ++k)
                img += std::abs(ds.views[i].image.data[k] - renders[i].data[k]);
            if (ds.views[i].mask)
                for (std::size_t k = 0; k < masks[i].data.size(); ++k)
                    mask += std::abs(ds.views[i].mask->data[k] - masks[i].data[k]);
        }
        const double reg = tv(a.roughness);
        const pbir::IrWeights w{10.0, 0.1};
        const auto l = pbir::ir_loss(a, ds, renders, masks, w);
        c.expect(close_rel(l.img, img), "L_img");
        c.expect(close_rel(l.mask, mask), "L_mask");
        c.expect(close_rel(l.reg, reg), "L_reg");
        c.expect(close_rel(l.total, img + w.w_mask * mask + w.w_reg * reg), "L_IR");
    }
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

grid::SdfScene fd_scene() {
    grid::SceneOptions so;
    so.fg_bbox = Box3{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
    so.bg_scale = 3.0;
    so.fg_resolution = {5, 5, 5};
    so.bg_resolution = {4, 4, 4};
    so.feature_width = 3;
    so.hidden_width = 6;
    so.encoding_degree = 1;
    so.sharpness = 8.0;
    so.seed = 21;
    auto scene = grid::make_scene(so);
    Pcg32 rng(21, 3);
    for (auto* g : {&scene.fg_sdf, &scene.bg_sdf})
        for (auto& v : g->values()) v += 0.1 * (rng.uniform() - 0.5);
    for (auto* g : {&scene.fg_feat, &scene.bg_feat})
        for (auto& v : g->values()) v = rng.uniform() - 0.5;
    scene.background = Rgb(0.2, 0.4, 0.1);
    return scene;
}

std::vector<volren::RayTarget> fd_batch(int n, uint64_t seed) {
    Pcg32 rng(seed, 9);
    std::vector<volren::RayTarget> b;
    for (int i = 0; i < n; ++i) {
        const Vec3 o = 2.5 * sample_uniform_sphere(rng.uniform2());
        const Vec3 aim = 0.6 * (Vec3(rng.uniform(), rng.uniform(), rng.uniform()) - Vec3::Constant(0.5));
        b.push_back({o, (aim - o).normalized(), Rgb(rng.uniform(), rng.uniform(), rng.uniform())});
    }
    return b;
}

void surface_gradients(Checks& c, double& worst) {
    const auto scene = fd_scene();
    const auto batch = fd_batch(8, 12);
    volren::HuberState h;
    h.t = 0.15;
    const volren::ObjectiveWeights w{0.3, 0.05};
    const volren::RenderOptions exact{0.0, 0.0};
    volren::SceneGradient g(scene);
    volren::surface_objective(batch, scene, h, w, exact, &g);
    auto eval = [&](const grid::SdfScene& s) { return volren::surface_objective(batch, s, h, w, exact, nullptr).total; };

    auto block = [&](const char* name, const std::vector<double>& grad, auto get) {
        grid::SdfScene s = scene;
        int checked = 0;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double& v = get(s, i);
            const double v0 = v;
            v = v0 + 1e-5;
            const double lp = eval(s);
            v = v0 - 1e-5;
            const double lm = eval(s);
            v = v0;
            const double fd = (lp - lm) / 2e-5;
            if (std::abs(fd) < 1e-7 && std::abs(grad[i]) < 1e-7) continue;
            const double e = rel_err(grad[i], fd, 1e-7);
            worst = std::max(worst, e);
            ++checked;
            c.expect(e < 1e-3, std::string(name) + "[" + std::to_string(i) + "] " + fmt("%.3g", grad[i]) + " vs fd " +
                                   fmt("%.3g", fd));
        }
        c.expect(checked > 0, std::string(name) + " has no nonzero entries");
    };
    block("fg_sdf", g.fg_sdf, [](grid::SdfScene& s, std::size_t i) -> double& { return s.fg_sdf.values()[i]; });
    block("bg_sdf", g.bg_sdf, [](grid::SdfScene& s, std::size_t i) -> double& { return s.bg_sdf.values()[i]; });
    block("fg_feat", g.fg_feat, [](grid::SdfScene& s, std::size_t i) -> double& { return s.fg_feat.values()[i]; });
    block("head", g.head, [](grid::SdfScene& s, std::size_t i) -> double& {
        for (auto* blk : {&s.head.w1, &s.head.b1, &s.head.w2, &s.head.b2}) {
            if (i < blk->size()) return (*blk)[i];
            i -= blk->size();
        }
        return s.head.b2.back();
    });
}

void distill_gradients(Checks& c, double& worst) {
    using namespace distill;
    auto mesh = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 3, 4);
    Pcg32 rng(21);
    mesh.albedo.resize(mesh.vertex_count());
    mesh.roughness.resize(mesh.vertex_count());
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        mesh.albedo[v] = Rgb(0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform());
        mesh.roughness[v] = 0.15 + 0.8 * rng.uniform();
    }
    RadianceField field{[](const Vec3& x, const Vec3& v) {
                            return Rgb(0.5 + 0.3 * x.x() + 0.05 * v.y(), 0.4 + 0.2 * x.y(), 0.6 - 0.1 * x.z());
                        },
                        Box3{Vec3::Constant(-2.0), Vec3::Constant(2.0)}, "fd"};
    auto tables = precompute_transport(mesh, geometry::Bvh(mesh), field, make_direction_set(8, 8));
    for (std::size_t i = 0; i < tables.vis.size(); ++i)
        if (tables.vis[i] && rng.uniform() < 0.2) {
            tables.vis[i] = 0;
            for (int ch = 0; ch < 3; ++ch) tables.l_ind[3 * i + ch] = static_cast<float>(rng.uniform());
        }
    shading::SgMixture sg;
    for (int i = 0; i < 4; ++i)
        sg.push_back({sample_uniform_sphere(rng.uniform2()), 1.0 + 6.0 * rng.uniform(),
                      Rgb(0.2 + rng.uniform(), 0.2 + rng.uniform(), 0.2 + rng.uniform())});
    std::vector<TeacherSample> samples;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const Vec3 n = mesh.normals[v];
        Vec3 d = sample_uniform_sphere(rng.uniform2());
        if (d.dot(n) < 0) d = -d;
        samples.push_back({static_cast<int>(v), (d + 0.2 * n).normalized(), Rgb(rng.uniform(), rng.uniform(), rng.uniform())});
    }
    shading::BackgroundObservation bg{shading::EnvMap(8, 4), ImageBuffer(8, 4, 1)};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x)
            if ((x + y) % 3 != 0) {
                bg.coverage.at(x, y) = 1.0;
                bg.env.image.set_rgb(x, y, 2.0 * Rgb(rng.uniform(), rng.uniform(), rng.uniform()));
            }
    const DistillWeights w;
    const MaterialModel model;
    DistillGradient g;
    distill_losses(mesh, tables, sg, samples, &bg, w, model, &g);
    auto total = [&](const geometry::TriMesh& m, const shading::SgMixture& s) {
        return distill_losses(m, tables, s, samples, &bg, w, model, nullptr).total;
    };
    const double h = 1e-6;
    auto check = [&](double analytic, double fd, const std::string& what) {
        if (std::abs(analytic) < 1e-9 && std::abs(fd) < 1e-9) return;
        const double e = rel_err(analytic, fd, 1e-6);
        worst = std::max(worst, e);
        c.expect(e < 1e-3, what + " " + fmt("%.4g", analytic) + " vs fd " + fmt("%.4g", fd));
    };
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        for (int ch = 0; ch < 3; ++ch) {
            auto p = mesh, q = mesh;
            p.albedo[v][ch] += h;
            q.albedo[v][ch] -= h;
            check(g.albedo[v][ch], (total(p, sg) - total(q, sg)) / (2 * h), "vertex albedo " + std::to_string(v));
        }
        auto p = mesh, q = mesh;
        p.roughness[v] += h;
        q.roughness[v] -= h;
        check(g.roughness[v], (total(p, sg) - total(q, sg)) / (2 * h), "vertex roughness " + std::to_string(v));
    }
    const auto flat = shading::sg_flatten(sg);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        auto a = flat, b = flat;
        a[i] += h;
        b[i] -= h;
        shading::SgMixture sa = sg, sb = sg;
        shading::sg_unflatten(sa, a);
        shading::sg_unflatten(sb, b);
        check(g.sg[i], (total(mesh, sa) - total(mesh, sb)) / (2 * h), "distill sg " + std::to_string(i));
    }
}

std::vector<int> every_pixel(const Camera& cam) {
    std::vector<int> px(static_cast<std::size_t>(cam.width) * cam.height);
    std::iota(px.begin(), px.end(), 0);
    return px;
}

// sum_p dot(adj_p, pixel_p) with the light proposal and BRDF sampling frozen at
// the unperturbed assets, so the estimate is smooth in the parameters.
double weighted_sum(const pbir::TexturedAssets& a, const Camera& cam, const std::vector<Rgb>& adj,
                    const pbir::RenderConfig& cfg, const shading::EnvMap& proposal, const pbir::TexturedAssets& ref) {
    const pbir::Scene scene(a, &proposal, &ref);
    const auto v = pbir::trace_pixels(scene, cam, every_pixel(cam), cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += adj[i].matrix().dot(v[i].matrix());
    return s;
}

void replay_gradients(Checks& c, double& worst) {
    auto m = geometry::make_uv_sphere(Vec3::Zero(), 1.0, 6, 8);
    m.albedo.assign(m.vertex_count(), Rgb::Constant(0.5));
    m.roughness.assign(m.vertex_count(), 0.5);
    auto a = pbir::assets_from_vertices(m, {}, 36, 0.04, 1.0);
    auto rng = make_rng(5, 2);
    for (double& v : a.albedo.data) v = 0.2 + 0.6 * rng.uniform();
    for (double& v : a.roughness.data) v = 0.3 + 0.5 * rng.uniform();
    shading::EnvMap env(16, 8);
    for (double& v : env.image.data) v = 0.2 + rng.uniform();
    a.light = pbir::Light::from_env(env);

    const auto cam = Camera::look_at(Vec3(0, 0, 3), Vec3::Zero(), Vec3(0, 1, 0), 45.0, 10, 10);
    std::vector<Rgb> adj(100);
    for (auto& x : adj) x = Rgb(rng.uniform(), rng.uniform(), rng.uniform()) - 0.3;
    const pbir::RenderConfig cfg{1024, 3, true, 13, true};

    auto check_largest = [&](const std::vector<double>& grad, int count, double h, const pbir::TexturedAssets& base,
                             const shading::EnvMap& proposal, auto mutate, const char* what) {
        std::vector<std::size_t> idx(grad.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + count, idx.end(),
                          [&](std::size_t x, std::size_t y) { return std::abs(grad[x]) > std::abs(grad[y]); });
        for (int k = 0; k < count; ++k) {
            const std::size_t i = idx[static_cast<std::size_t>(k)];
            auto p = base, q = base;
            mutate(p, i, h);
            mutate(q, i, -h);
            const double fd = (weighted_sum(p, cam, adj, cfg, proposal, base) -
                               weighted_sum(q, cam, adj, cfg, proposal, base)) / (2 * h);
            const double e = rel_err(grad[i], fd, 1e-8);
            worst = std::max(worst, e);
            c.expect(e < 1e-2, std::string(what) + "[" + std::to_string(i) + "] " + fmt("%.4g", grad[i]) + " vs fd " +
                                   fmt("%.4g", fd));
        }
    };

    {
        const shading::EnvMap proposal = a.light.env;
        const pbir::Scene scene(a, &proposal);
        const auto g = pbir::backprop_pixels(scene, cam, every_pixel(cam), adj, cfg);
        check_largest(g.albedo, 6, 1e-4, a, proposal,
                      [](pbir::TexturedAssets& x, std::size_t i, double h) { x.albedo.data[i] += h; }, "albedo texel");
        check_largest(g.roughness, 6, 1e-4, a, proposal,
                      [](pbir::TexturedAssets& x, std::size_t i, double h) { x.roughness.data[i] += h; },
                      "roughness texel");
        check_largest(g.light, 6, 1e-4, a, proposal,
                      [](pbir::TexturedAssets& x, std::size_t i, double h) { x.light.env.image.data[i] += h; },
                      "env texel");
    }
    {
        auto s = a;
        shading::SgMixture sg = shading::init_sg(6, Rgb(0.6, 0.5, 0.4), 4.0);
        sg[0].amplitude = Rgb(3.0, 2.5, 2.0);
        sg[0].lambda = 12.0;
        s.light = pbir::Light::from_sg(sg);
        const auto proposal = shading::envmap_from_sg(sg, 32, 16);
        const pbir::Scene scene(s, &proposal);
        const pbir::RenderConfig sg_cfg{1024, 2, true, 3, true};
        const auto g = pbir::backprop_pixels(scene, cam, every_pixel(cam), adj, sg_cfg);
        for (std::size_t i = 0; i < 2 * shading::kSgParams; ++i) {
            auto flat = shading::sg_flatten(sg);
            auto p = s, q = s;
            flat[i] += 1e-5;
            shading::sg_unflatten(p.light.sg, flat);
            flat[i] -= 2e-5;
            shading::sg_unflatten(q.light.sg, flat);
            const double fd = (weighted_sum(p, cam, adj, sg_cfg, proposal, s) -
                               weighted_sum(q, cam, adj, sg_cfg, proposal, s)) / 2e-5;
            const double e = rel_err(g.light[i], fd, 1e-3);
            worst = std::max(worst, e);
            c.expect(e < 1e-2, "sg param " + std::to_string(i) + " " + fmt("%.4g", g.light[i]) + " vs fd " + fmt("%.4g", fd));
        }
    }
}

Outcome gradients() {
    Checks c;
    double analytic = 0.0, mc = 0.0;
    surface_gradients(c, analytic);
    distill_gradients(c, analytic);
    replay_gradients(c, mc);
    c.note("worst analytic rel " + fmt("%.2e", analytic) + " (< 1e-3)");
    c.note("worst Monte Carlo rel " + fmt("%.2e", mc) + " (< 1e-2, 1024 spp)");
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 3. Furnaces

Outcome furnaces() {
    Checks c;
    const auto omega = distill::make_direction_set(16, 16);
    distill::TransportTables t;
    t.vertices = 1;
    t.omega = omega;
    t.vis.assign(omega.size(), 1);
    t.l_ind.assign(3 * omega.size(), 0.0f);
    const shading::SgMixture unit{{Vec3::UnitZ(), 0.0, Rgb::Ones()}};
    Pcg32 rng(3);
    double worst_coarse = 0.0;
    for (int i = 0; i < 64; ++i) {
        geometry::TriMesh m;
        m.vertices = {Vec3::Zero()};
        m.normals = {sample_uniform_sphere(rng.uniform2())};
        const Rgb albedo(0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform());
        m.albedo = {albedo};
        m.roughness = {0.5};
        Vec3 wo = sample_uniform_sphere(rng.uniform2());
        if (wo.dot(m.normals[0]) < 0) wo = -wo;
        wo = (wo + 0.1 * m.normals[0]).normalized();
        const Rgb lit = distill::coarse_render(m, t, unit, 0, wo, {0.04, 0.0});
        for (int ch = 0; ch < 3; ++ch) worst_coarse = std::max(worst_coarse, std::abs(lit[ch] / albedo[ch] - 1.0));
    }
    c.expect(worst_coarse < 0.03, "coarse_render diffuse furnace off by " + fmt("%.2f%%", 100 * worst_coarse));

    auto m = geometry::make_uv_sphere(Vec3::Zero(), 1.0, 24, 48);
    m.albedo.assign(m.vertex_count(), Rgb::Constant(1.0 - 1e-4));
    m.roughness.assign(m.vertex_count(), 1.0);
    auto a = pbir::assets_from_vertices(m, {}, 128, 0.0, 0.0);
    a.light = pbir::Light::from_env(shading::EnvMap(32, 16, Rgb::Ones()));
    const auto cam = Camera::look_at(Vec3(0, 0, 3.5), Vec3::Zero(), Vec3(0, 1, 0), 30.0, 24, 24);
    const auto img = pbir::path_trace(a, cam, {256, 8, true, 1, true});
    double worst_pt = 0.0;
    for (double v : img.data) worst_pt = std::max(worst_pt, std::abs(v - 1.0));
    c.expect(worst_pt < 0.03, "path-traced white furnace off by " + fmt("%.2f%%", 100 * worst_pt));
    c.note("coarse max dev " + fmt("%.2f%%", 100 * worst_coarse) + " (256 dirs)");
    c.note("path-traced max dev " + fmt("%.2f%%", 100 * worst_pt) + " (256 spp, depth 8)");
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 4. Stage-1 closed loop

const std::vector<Vec3>& unit_sphere_points() {
    static const std::vector<Vec3> pts = [] {
        std::vector<Vec3> r;
        for (const auto& p : geometry::sample_surface(geometry::make_uv_sphere(Vec3::Zero(), 1.0, 64, 128), 20000, 1))
            r.push_back(p.normalized());
        return r;
    }();
    return pts;
}

double sphere_chamfer(const geometry::TriMesh& m) {
    return geometry::chamfer(geometry::sample_surface(m, 20000, 2), unit_sphere_points());
}

Outcome stage1() {
    Checks c;
    const auto gt = toy::make_toy_assets(toy::Kind::Sphere, 128);
    const auto ds = toy::render_dataset(gt, toy::toy_cameras(toy::Kind::Sphere, 16, 64, 64), {16, 3, true, 0, true});

    volren::Stage1Config cfg;
    cfg.iterations = 3000;
    cfg.batch_rays = 1024;
    cfg.w_lap = 1e-3;
    cfg.fg_resolution = {48, 48, 48};
    cfg.bg_resolution = {16, 16, 16};
    cfg.upscale_every = cfg.iterations / 8;
    cfg.upscale_until = cfg.iterations / 2;
    cfg.hidden_width = 32;
    cfg.feature_width = 8;
    cfg.encoding_degree = 2;
    const double voxel = (cfg.fg_bbox.hi - cfg.fg_bbox.lo).x() / (cfg.fg_resolution[0] - 1);

    auto run = [&](double w_lap) {
        auto k = cfg;
        k.w_lap = w_lap;
        const auto scene = volren::train_surface(ds, k);
        return sphere_chamfer(pipeline::extract_surface(scene, true)) / voxel;
    };
    const double with_lap = run(cfg.w_lap);
    const double without_lap = run(0.0);
    c.expect(with_lap < 2.0, "CD " + fmt("%.3f", with_lap) + " voxels (need < 2)");
    c.expect(without_lap > with_lap, "ablation without L_lap did not increase CD");
    c.note("CD " + fmt("%.3f", with_lap) + " voxels");
    c.note("without L_lap " + fmt("%.3f", without_lap) + " voxels");
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 5. Stage-2 closed loop

Outcome stage2() {
    using namespace distill;
    Checks c;

    {
        auto m = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 6, 12);
        const RadianceField flat{[](const Vec3& x, const Vec3&) {
                                     return Rgb(0.5 + 0.4 * x.x(), 0.3 + 0.2 * x.y(), 0.25);
                                 },
                                 Box3{Vec3::Constant(-2.0), Vec3::Constant(2.0)}, "flat"};
        init_materials(m, flat, make_direction_set());
        bool rough_ok = true, albedo_ok = true;
        for (std::size_t v = 0; v < m.vertex_count(); ++v) {
            rough_ok = rough_ok && m.roughness[v] == 0.25;
            const Vec3& x = m.vertices[v];
            albedo_ok = albedo_ok && (m.albedo[v] == Rgb(0.5 + 0.4 * x.x(), 0.3 + 0.2 * x.y(), 0.25)).all();
        }
        c.expect(rough_ok, "initial roughness is not exactly 0.25");
        c.expect(albedo_ok, "initial albedo differs from the field on a constant field");
    }

    auto mesh = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 10, 20);
    const auto omega = make_direction_set();
    const shading::SgMixture env{{Vec3(0.3, 0.9, 0.2).normalized(), 3.0, Rgb(1.5, 1.3, 1.0)},
                                 {Vec3::UnitY(), 0.0, Rgb::Constant(0.3)}};
    std::vector<Rgb> env_at(omega.size());
    for (std::size_t k = 0; k < omega.size(); ++k) env_at[k] = shading::sg_eval(env, omega.dirs[k]);
    const RadianceField teacher{[&](const Vec3& x, const Vec3& v) {
                                    const Vec3 n = x.normalized();
                                    shading::BrdfParams p;
                                    p.albedo = toy::sphere_albedo(x);
                                    p.roughness = 0.3;
                                    Rgb sum = Rgb::Zero();
                                    for (std::size_t k = 0; k < omega.size(); ++k) {
                                        const double cs = n.dot(omega.dirs[k]);
                                        if (cs > 0)
                                            sum += omega.weights[k] * env_at[k] *
                                                   shading::brdf_eval(p, n, omega.dirs[k], -v) * cs;
                                    }
                                    return sum;
                                },
                                Box3{Vec3::Constant(-2.0), Vec3::Constant(2.0)}, "teacher"};
    const auto tables = precompute_transport(mesh, geometry::Bvh(mesh), teacher, omega);
    init_materials(mesh, teacher, omega);
    const shading::BackgroundObservation bg{shading::envmap_from_sg(env, 32, 16), ImageBuffer(32, 16, 1, 1.0)};
    Stage2Config cfg;
    const auto r = train_distill(mesh, tables, teacher, &bg, cfg);
    double mae = 0.0, mae0 = 0.0;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const Rgb truth = toy::sphere_albedo(mesh.vertices[v]);
        mae += (r.mesh.albedo[v] - truth).abs().mean();
        mae0 += (mesh.albedo[v] - truth).abs().mean();
    }
    mae /= mesh.vertex_count();
    mae0 /= mesh.vertex_count();
    c.expect(mae < 0.05, "albedo MAE " + fmt("%.4f", mae));
    c.note("albedo MAE " + fmt("%.4f", mae) + " (init " + fmt("%.4f", mae0) + ")");
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 6. Stage-3 closed loop

std::vector<Camera> cameras_of(const PosedDataset& ds) {
    std::vector<Camera> cams;
    for (const auto& v : ds.views) cams.push_back(v.camera);
    return cams;
}

// Mean absolute albedo error over pixels whose primary ray hits the ground
// truth and passes `keep`.
double albedo_mae(const pbir::TexturedAssets& a, const pbir::TexturedAssets& gt, const std::vector<Camera>& cams,
                  const std::function<bool(const Vec3&)>& keep = {}) {
    const geometry::Bvh bvh(gt.mesh);
    double s = 0.0;
    long n = 0;
    for (const auto& cam : cams) {
        const auto x = pbir::render_aovs(a, cam), y = pbir::render_aovs(gt, cam);
        for (int py = 0; py < cam.height; ++py)
            for (int px = 0; px < cam.width; ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * cam.width + px;
                if (y.coverage.data[p] <= 0.0) continue;
                if (keep) {
                    Vec3 o, d;
                    cam.ray(px + 0.5, py + 0.5, o, d);
                    const auto hit = bvh.intersect(gt.mesh, o, d, 0.0);
                    if (!hit || !keep(hit->point)) continue;
                }
                for (int k = 0; k < 3; ++k) s += std::abs(x.albedo.data[3 * p + k] - y.albedo.data[3 * p + k]);
                n += 3;
            }
    }
    return n ? s / n : 0.0;
}

Outcome stage3() {
    Checks c;

    {
        auto m = geometry::make_uv_sphere(Vec3::Zero(), 1.0, 8, 16);
        m.albedo.resize(m.vertex_count());
        m.roughness.assign(m.vertex_count(), 0.4);
        for (std::size_t v = 0; v < m.vertex_count(); ++v) m.albedo[v] = toy::sphere_albedo(m.vertices[v]);
        const auto gt =
            pbir::assets_from_vertices(m, toy::toy_sky(), geometry::atlas_resolution(m.triangle_count(), 16));
        const auto ds = toy::render_dataset(gt, toy::toy_cameras(toy::Kind::Sphere, 16, 64, 64), {32, 3, true, 0, true});
        Pcg32 rng(7);
        for (auto& al : m.albedo)
            for (int k = 0; k < 3; ++k) al[k] = std::clamp(al[k] + (rng.uniform() < 0.5 ? -0.25 : 0.25), 0.0, 0.95);
        const auto init = pbir::assets_from_vertices(m, gt.light.sg, gt.albedo.width);
        pbir::Stage3Schedule s;
        s.step1_iterations = 800;
        s.step2_iterations = 0;
        s.step3_iterations = 0;
        s.lr_albedo = 5e-3;
        s.render = {16, 2, true, 0, true};
        const auto out = pbir::run_pbir(init, ds, s);
        const auto cams = cameras_of(ds);
        const double before = albedo_mae(init, gt, cams), after = albedo_mae(out, gt, cams);
        c.expect(before >= 5.0 * after, "albedo MAE " + fmt("%.4f", before) + " -> " + fmt("%.4f", after));
        c.note("step 1 albedo MAE " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + " (" +
               fmt("%.1fx", before / after) + ")");
    }

    {
        const auto gt = toy::make_toy_assets(toy::Kind::Sphere, 64);
        const auto ds = toy::render_dataset(gt, toy::toy_cameras(toy::Kind::Sphere, 16, 64, 64), {32, 3, true, 0, true});
        auto init = gt;
        for (auto& v : init.mesh.vertices) v *= 1.03 * (1.0 + 0.05 * std::sin(3.0 * v.x()) * std::cos(2.0 * v.y()));
        pbir::Stage3Schedule s;
        s.step1_iterations = 20;
        s.step2_iterations = 20;
        s.step3_iterations = 200;
        s.lr_vertex = 1e-2;
        s.render = {4, 2, true, 0, true};
        double before = 0.0;
        const auto out = pbir::run_pbir(init, ds, s, {}, [&](int step, const pbir::TexturedAssets& a) {
            if (step == 2) before = sphere_chamfer(a.mesh);
        });
        const double after = sphere_chamfer(out.mesh);
        c.expect(after < before, "step 3 CD " + fmt("%.5f", before) + " -> " + fmt("%.5f", after));
        c.note("step 3 CD " + fmt("%.4f", before) + " -> " + fmt("%.4f", after));
    }

    {
        const auto gt = toy::make_toy_assets(toy::Kind::TexturedPlane, 32);
        const auto ds =
            toy::render_dataset(gt, toy::toy_cameras(toy::Kind::TexturedPlane, 12, 64, 64), {64, 4, true, 0, true});
        auto m = gt.mesh;
        for (auto& al : m.albedo) al = Rgb::Constant(0.5);
        const auto init = pbir::assets_from_vertices(m, gt.light.sg, gt.albedo.width);
        const auto near_wall = [](const Vec3& x) { return x.y() < 1e-6 && x.x() > 0.5; };
        double mae[2];
        for (int gi = 0; gi < 2; ++gi) {
            pbir::Stage3Schedule s;
            s.step1_iterations = 600;
            s.step2_iterations = 0;
            s.step3_iterations = 0;
            s.lr_sg = 0.0;
            s.render = {8, gi ? 3 : 1, gi == 1, 0, true};
            mae[gi] = albedo_mae(pbir::run_pbir(init, ds, s), gt, cameras_of(ds), near_wall);
        }
        c.expect(mae[1] < mae[0], "near-wall albedo MAE GI on " + fmt("%.4f", mae[1]) + " vs off " + fmt("%.4f", mae[0]));
        c.note("near-wall albedo MAE GI on " + fmt("%.4f", mae[1]) + " vs off " + fmt("%.4f", mae[0]));
    }
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 7. Determinism through the CLI

std::string cli_path() {
    if (const char* e = std::getenv("NPBIR_CLI")) return e;
#ifdef NPBIR_CLI_PATH
    return NPBIR_CLI_PATH;
#else
    return "npbir";
#endif
}

const char* kTinyConfig = R"({
  "toy": {"views": 6, "width": 24, "height": 24, "texel_res": 32, "mask_supersample": 2},
  "render": {"spp": 4, "max_depth": 2},
  "surface": {"iterations": 40, "batch_rays": 256, "fg_resolution": [16, 16, 16], "bg_resolution": [8, 8, 8],
              "upscale_every": 10, "upscale_until": 20, "lr_sdf_decay_iter": 20,
              "hidden_width": 8, "feature_width": 4, "encoding_degree": 1},
  "distill": {"iterations": 20, "sg_lobes": 8, "directions": [8, 8], "background_resolution": [16, 8],
              "texel_res": 32},
  "pbir": {"step1_iterations": 3, "step2_iterations": 3, "step3_iterations": 3, "spp": 2, "max_depth": 2,
           "batch_pixels": 64, "texel_res": 32, "const_init_lobes": 8, "env_resolution": [16, 8],
           "mask_supersample": 2}
})";

Outcome determinism() {
    Checks c;
    const fs::path root = fs::temp_directory_path() / ("npbir_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream(root / "tiny.json") << kTinyConfig;
    }
    const std::string cli = cli_path();
    auto run = [&](const std::string& args) {
        const std::string cmd = "\"" + cli + "\" --deterministic --config \"" + (root / "tiny.json").string() + "\" " +
                                args + " >> \"" + (root / "log.txt").string() + "\" 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    const std::string R = root.string() + "/";
    struct Stage {
        std::string name, args;  // "{out}" is replaced per run
    };
    const std::vector<Stage> stages = {
        {"make-toy", "make-toy sphere --out {out}"},
        {"surface", "surface --data " + R + "toy_a/data --out {out}"},
        {"distill", "distill --data " + R + "toy_a/data --surface " + R + "surface_a --out {out}"},
        {"pbir", "pbir --assets " + R + "distill_a --data " + R + "toy_a/data --out {out}"},
        {"pbir --const-init",
         "pbir --const-init --mesh " + R + "surface_a/mesh.npbm --data " + R + "toy_a/data --out {out}"},
        {"render", "render --assets " + R + "pbir_a/assets --data " + R + "toy_a/data --split test --out {out}"},
        {"relight", "relight --assets " + R + "pbir_a/assets --data " + R + "toy_a/data --env " + R +
                        "toy_a/data/env.pfm --split test --out {out}"},
        {"eval", "eval --pred " + R + "render_a --gt " + R + "gt --out {out}"},
    };
    auto dir_name = [](std::string n) {
        n = n.substr(0, n.find(' '));
        std::replace(n.begin(), n.end(), '-', '_');
        return n == "make_toy" ? std::string("toy") : n;
    };
    int matched = 0;
    std::string first_failure;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        const std::string base = dir_name(st.name) + (st.name == "pbir --const-init" ? "_const" : "");
        if (st.name == "eval" &&
            !run("render --assets " + R + "toy_a/assets --data " + R + "toy_a/data --split test --out " + R + "gt")) {
            c.expect(false, "ground-truth render failed");
            break;
        }
        std::string hash[2];
        bool ok = true;
        for (int k = 0; k < 2; ++k) {
            std::string args = st.args;
            const std::string out = R + base + (k == 0 ? "_a" : "_b");
            args.replace(args.find("{out}"), 5, "\"" + out + "\"");
            if (!run(args)) {
                ok = false;
                break;
            }
            try {
                hash[k] = pipeline::read_manifest_hash(out);
            } catch (const std::exception&) {
                ok = false;
            }
        }
        c.expect(ok, st.name + " did not complete (see " + (root / "log.txt").string() + ")");
        if (!ok) break;
        c.expect(!hash[0].empty() && hash[0] == hash[1], st.name + " manifest hashes differ");
        if (hash[0] == hash[1]) ++matched;
    }
    const auto o = c.outcome();
    if (o.pass) fs::remove_all(root);
    c.note(std::to_string(matched) + "/" + std::to_string(stages.size()) + " stages reproduce their manifest hash");
    return c.outcome();
}

// ---------------------------------------------------------------------------
// 8. Metrics

Outcome metrics() {
    Checks c;
    for (auto [w, h] : {std::pair{1, 1}, std::pair{16, 16}, std::pair{37, 23}}) {
        const ImageBuffer a(w, h, 3, 0.0), b(w, h, 3, 0.1);
        const double p = io::psnr(a, b);
        c.expect(p == 20.0, "PSNR(0 vs 0.1) = " + fmt("%.17g", p));
    }
    Pcg32 rng(9);
    ImageBuffer img(32, 24, 3);
    for (double& v : img.data) v = rng.uniform();
    c.expect(io::ssim(img, img) == 1.0, "SSIM(self) = " + fmt("%.17g", io::ssim(img, img)));

    ImageBuffer gt(20, 20, 3), mask(20, 20, 1);
    for (double& v : gt.data) v = rng.uniform();
    for (double& v : mask.data) v = rng.uniform() < 0.7 ? 1.0 : 0.0;
    ImageBuffer pred = gt;
    for (double& v : pred.data) v *= 0.5;
    const auto al = io::albedo_alignment(pred, gt, mask);
    c.expect((al.scale == 2.0).all() && !al.degenerate, "alignment scale " + fmt("%.17g", al.scale[0]));
    c.expect(io::apply_scale(pred, al.scale).data == gt.data, "aligned prediction differs from ground truth");
    return c.outcome();
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "scalar oracles", oracles},       {2, "gradient suite", gradients},
        {3, "furnace identities", furnaces},    {4, "stage-1 closed loop", stage1},
        {5, "stage-2 closed loop", stage2},     {6, "stage-3 closed loop", stage3},
        {7, "determinism", determinism},        {8, "metric sanity", metrics},
    };
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    bool all_pass = true;
    for (const auto& cr : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), cr.id) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
