// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/volume_render.hpp"

#include "npbir/geometry.hpp"
#include "npbir/optim.hpp"
#include "npbir/sampling.hpp"

#include <algorithm>
#include <numeric>

namespace npbir::volren {

using grid::Region;
using grid::SdfScene;
using grid::VoxelGrid;

namespace {

double log_sigmoid(double x) { return -grid::softplus(-x); }

}  // namespace

// 1 - sig(y)/sig(x) = -expm1(y - x) * sig(-y) for x = s*a, y = s*b.
double alpha_from_sdf(double sdf_i, double sdf_next, double sharpness) {
    const double d = sharpness * (sdf_next - sdf_i);
    if (!(d < 0.0)) return 0.0;
    return -std::expm1(d) * grid::sigmoid(-sharpness * sdf_next);
}

void alpha_derivatives(double sdf_i, double sdf_next, double sharpness, double& d_i, double& d_next) {
    const double ratio = std::exp(log_sigmoid(sharpness * sdf_next) - log_sigmoid(sharpness * sdf_i));
    if (ratio >= 1.0) {
        d_i = d_next = 0.0;
        return;
    }
    d_i = ratio * sharpness * grid::sigmoid(-sharpness * sdf_i);
    d_next = -ratio * sharpness * grid::sigmoid(-sharpness * sdf_next);
}

Composite composite(std::span<const double> alphas, std::span<const Rgb> radiances) {
    if (alphas.size() != radiances.size())
        throw ArgumentError("composite: alphas and radiances differ in length");
    Composite out;
    out.weights.resize(alphas.size());
    double T = 1.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const double w = T * alphas[i];
        out.weights[i] = w;
        out.color += w * radiances[i];
        T *= 1.0 - alphas[i];
    }
    out.residual_transmittance = T;
    return out;
}

double photo_loss(const Rgb& pred, const Rgb& target, const HuberState& h) {
    double loss = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double e = std::abs(target[c] - pred[c]);
        loss += e <= h.t ? e * e : 2.0 * h.t * e - h.t * h.t;
    }
    return loss;
}

Rgb photo_loss_grad(const Rgb& pred, const Rgb& target, const HuberState& h) {
    Rgb g;
    for (int c = 0; c < 3; ++c) {
        const double e = target[c] - pred[c];
        g[c] = std::abs(e) <= h.t ? -2.0 * e : -2.0 * h.t * (e > 0 ? 1.0 : -1.0);
    }
    return g;
}

HuberState update_huber(const HuberState& h, double median) {
    if (median < 0.0) throw ArgumentError("update_huber: median must be non-negative");
    HuberState out = h;
    out.t = std::max(h.floor, h.momentum * h.t + (1.0 - h.momentum) * median);
    return out;
}

namespace {

void check_laplacian_grid(const VoxelGrid& grid) {
    if (grid.channels() != 1) throw ArgumentError("laplacian_loss: expects a single-channel SDF grid");
    for (int r : grid.resolution())
        if (r < 3) throw ArgumentError("laplacian_loss: resolution must be >= 3 on every axis");
}

}  // namespace

double laplacian_loss(const VoxelGrid& grid) {
    check_laplacian_grid(grid);
    const auto& r = grid.resolution();
    double loss = 0.0;
    for (int k = 1; k < r[2] - 1; ++k)
        for (int j = 1; j < r[1] - 1; ++j)
            for (int i = 1; i < r[0] - 1; ++i) {
                const double mean = (grid.at(i - 1, j, k) + grid.at(i + 1, j, k) + grid.at(i, j - 1, k) +
                                     grid.at(i, j + 1, k) + grid.at(i, j, k - 1) + grid.at(i, j, k + 1)) /
                                    6.0;
                const double d = grid.at(i, j, k) - mean;
                loss += d * d;
            }
    return loss;
}

double laplacian_loss_grad(const VoxelGrid& grid, double scale, std::span<double> grad) {
    check_laplacian_grid(grid);
    const auto& r = grid.resolution();
    const auto& v = grid.values();
    const std::size_t sx = 1, sy = static_cast<std::size_t>(r[0]),
                      sz = static_cast<std::size_t>(r[0]) * r[1];
    double loss = 0.0;
    for (int k = 1; k < r[2] - 1; ++k)
        for (int j = 1; j < r[1] - 1; ++j)
            for (int i = 1; i < r[0] - 1; ++i) {
                const std::size_t u = grid.point_index(i, j, k);
                const double mean =
                    (v[u - sx] + v[u + sx] + v[u - sy] + v[u + sy] + v[u - sz] + v[u + sz]) / 6.0;
                const double d = v[u] - mean;
                loss += d * d;
                const double g = 2.0 * d * scale;
                grad[u] += g;
                const double gn = -g / 6.0;
                grad[u - sx] += gn;
                grad[u + sx] += gn;
                grad[u - sy] += gn;
                grad[u + sy] += gn;
                grad[u - sz] += gn;
                grad[u + sz] += gn;
            }
    return loss;
}

double pp_rgb_loss(std::span<const double> weights, std::span<const Rgb> radiances, const Rgb& target) {
    if (weights.size() != radiances.size())
        throw ArgumentError("pp_rgb_loss: weights and radiances differ in length");
    double loss = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) loss += weights[i] * (radiances[i] - target).abs().sum();
    return loss;
}

// ---------------------------------------------------------------------------

RaySamples sample_ray(const SdfScene& scene, const Vec3& origin, const Vec3& dir) {
    RaySamples rs;
    rs.origin = origin;
    rs.dir = dir;
    double t0 = 0.0, t1 = kInf;
    if (!scene.bg_bbox().intersect(origin, dir, t0, t1) || t1 <= 0.0) return rs;
    rs.hit_box = true;
    t0 = std::max(t0, 0.0);
    const double dt_bg = 0.5 * scene.bg_sdf.voxel_size();
    const double dt_fg = 0.5 * scene.fg_sdf.voxel_size();

    double f0 = t0, f1 = t1;
    const bool fg_hit = scene.fg_bbox().intersect(origin, dir, f0, f1) && f1 > f0;

    auto emit = [&](double a, double b, double dt, bool open_lo, bool open_hi) {
        long k = std::max(1L, static_cast<long>(std::ceil(a / dt)));
        for (;; ++k) {
            const double t = static_cast<double>(k) * dt;
            if (t > b || (open_hi && t >= b)) break;
            if (t < a || (open_lo && t <= a)) continue;
            if (!rs.samples.empty() && t <= rs.samples.back().t) continue;
            rs.samples.push_back({t, Region::Background});
        }
    };
    if (fg_hit) {
        emit(t0, f0, dt_bg, false, true);
        emit(f0, f1, dt_fg, false, false);
        emit(f1, t1, dt_bg, true, false);
    } else {
        emit(t0, t1, dt_bg, false, false);
    }
    for (auto& s : rs.samples) {
        const Vec3 x = origin + s.t * dir;
        s.region = scene.fg_bbox().contains(x) ? Region::Foreground : Region::Background;
    }
    if (!rs.samples.empty()) {
        const auto& last = rs.samples.back();
        const double dt = last.region == Region::Foreground ? dt_fg : dt_bg;
        rs.tail.t = std::min(last.t + dt, t1);
        const Vec3 x = origin + rs.tail.t * dir;
        rs.tail.region = scene.fg_bbox().contains(x) ? Region::Foreground : Region::Background;
    }
    return rs;
}

namespace {

// Fixed partition of each batch so reductions do not depend on the thread count.
constexpr std::size_t kReduceChunks = 4;

Vec3 clamp_to(const Box3& b, const Vec3& x) { return x.cwiseMax(b.lo).cwiseMin(b.hi); }

struct KeptSample {
    std::size_t index;
    Region region;
    Vec3 x;
    Rgb radiance;
    grid::HeadActivations cache;
};

// Forward (and optionally backward) pass for one ray.
struct RayPass {
    const SdfScene& scene;
    const RenderOptions& opts;

    std::vector<double> sdf;     // per sample, plus tail at [count]
    std::vector<Vec3> points;    // clamped positions matching sdf
    std::vector<Region> regions;
    std::vector<double> alpha, trans, weight;
    std::size_t count = 0;       // samples actually composited
    std::vector<KeptSample> kept;
    Rgb color = Rgb::Zero();
    double residual = 1.0;
    double opacity = 0.0;
    double depth = 0.0;
    RaySamples rs;

    RayPass(const SdfScene& s, const RenderOptions& o) : scene(s), opts(o) {}

    double eval_sdf(const Vec3& x, Region r) const {
        return grid::interp_scalar(r == Region::Foreground ? scene.fg_sdf : scene.bg_sdf, x);
    }

    void forward(const Vec3& origin, const Vec3& dir) {
        rs = sample_ray(scene, origin, dir);
        if (!rs.hit_box || rs.samples.empty()) {
            color = scene.background;
            residual = 1.0;
            return;
        }
        const Box3& bg = scene.bg_bbox();
        const std::size_t N = rs.samples.size();
        auto point_of = [&](std::size_t i) {
            const RaySample& s = i < N ? rs.samples[i] : rs.tail;
            return std::pair{clamp_to(bg, origin + s.t * dir), s.region};
        };
        auto push = [&](std::size_t i) {
            auto [x, r] = point_of(i);
            points.push_back(x);
            regions.push_back(r);
            sdf.push_back(eval_sdf(x, r));
        };
        push(0);
        double T = 1.0;
        for (std::size_t i = 0; i < N; ++i) {
            push(i + 1);
            const double a = alpha_from_sdf(sdf[i], sdf[i + 1], scene.sharpness);
            alpha.push_back(a);
            trans.push_back(T);
            weight.push_back(T * a);
            T *= 1.0 - a;
            count = i + 1;
            if (opts.transmittance_threshold > 0.0 && T < opts.transmittance_threshold) break;
        }
        residual = T;

        double fbuf[256];
        for (std::size_t i = 0; i < count; ++i) {
            if (opts.weight_threshold > 0.0 && !(weight[i] > opts.weight_threshold)) continue;
            KeptSample ks{i, regions[i], points[i], Rgb::Zero(), {}};
            const VoxelGrid& feat = ks.region == Region::Foreground ? scene.fg_feat : scene.bg_feat;
            std::span<double> f(fbuf, static_cast<std::size_t>(feat.channels()));
            grid::interp_into(feat, ks.x, f);
            ks.radiance = grid::head_forward(scene.head, f, dir, &ks.cache);
            color += weight[i] * ks.radiance;
            opacity += weight[i];
            depth += weight[i] * rs.samples[i].t;
            kept.push_back(std::move(ks));
        }
        color += residual * scene.background;
    }

    // d_color: dLoss/dC; pp_weight/target: the per-point RGB term.
    void backward(const Rgb& d_color, double pp_weight, const Rgb& target, SceneGradient& g) const {
        if (!rs.hit_box || rs.samples.empty()) {
            g.background += d_color;
            return;
        }
        g.background += residual * d_color;
        // G_i = dLoss/dw_i for kept samples.
        std::vector<double> G(count, 0.0);
        for (const auto& ks : kept) {
            G[ks.index] = (d_color * ks.radiance).sum() + pp_weight * (ks.radiance - target).abs().sum();
        }
        // Suffix recursion S_k = a_k G_k + (1 - a_k) S_{k+1}; background acts as a final opaque sample.
        std::vector<double> d_sdf(count + 1, 0.0);
        double S_next = (d_color * scene.background).sum();
        for (std::size_t kk = count; kk-- > 0;) {
            const double d_alpha = trans[kk] * (G[kk] - S_next);
            if (d_alpha != 0.0) {
                double di, dn;
                alpha_derivatives(sdf[kk], sdf[kk + 1], scene.sharpness, di, dn);
                d_sdf[kk] += d_alpha * di;
                d_sdf[kk + 1] += d_alpha * dn;
            }
            S_next = alpha[kk] * G[kk] + (1.0 - alpha[kk]) * S_next;
        }
        for (std::size_t i = 0; i <= count; ++i) {
            if (d_sdf[i] == 0.0) continue;
            const bool fg = regions[i] == Region::Foreground;
            const VoxelGrid& grid = fg ? scene.fg_sdf : scene.bg_sdf;
            auto& dst = fg ? g.fg_sdf : g.bg_sdf;
            const auto st = grid::stencil(grid, points[i]);
            for (int c = 0; c < 8; ++c) dst[st.index[c]] += d_sdf[i] * st.weight[c];
        }
        // Radiance path.
        double dfeat_buf[256];
        for (const auto& ks : kept) {
            const double w = weight[ks.index];
            Rgb d_L = w * d_color;
            if (pp_weight != 0.0) {
                for (int c = 0; c < 3; ++c) {
                    const double diff = ks.radiance[c] - target[c];
                    d_L[c] += pp_weight * w * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
                }
            }
            const bool fg = ks.region == Region::Foreground;
            const VoxelGrid& feat = fg ? scene.fg_feat : scene.bg_feat;
            const int C = feat.channels();
            std::span<double> dfeat(dfeat_buf, static_cast<std::size_t>(C));
            std::fill(dfeat.begin(), dfeat.end(), 0.0);
            grid::head_backward(scene.head, ks.cache, d_L, g.head, dfeat);
            auto& dst = fg ? g.fg_feat : g.bg_feat;
            const auto st = grid::stencil(feat, ks.x);
            for (int c = 0; c < 8; ++c) {
                double* out = dst.data() + st.index[c] * C;
                for (int ch = 0; ch < C; ++ch) out[ch] += st.weight[c] * dfeat[ch];
            }
        }
    }

    double pp_term(const Rgb& target) const {
        double s = 0.0;
        for (const auto& ks : kept) s += weight[ks.index] * (ks.radiance - target).abs().sum();
        return s;
    }
};

}  // namespace

RayResult render_ray(const SdfScene& scene, const Vec3& origin, const Vec3& dir, const RenderOptions& opts) {
    RayPass pass(scene, opts);
    pass.forward(origin, dir);
    RayResult r;
    r.color = pass.color;
    r.opacity = pass.opacity;
    r.depth = pass.opacity > 0 ? pass.depth / pass.opacity : 0.0;
    return r;
}

ImageBuffer render_image(const SdfScene& scene, const Camera& camera, const RenderOptions& opts) {
    camera.validate();
    ImageBuffer img(camera.width, camera.height, 3);
    const std::size_t n = img.pixel_count();
    parallel_chunks(n, worker_count(), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            const int x = static_cast<int>(p % camera.width), y = static_cast<int>(p / camera.width);
            Vec3 o, d;
            camera.ray(x + 0.5, y + 0.5, o, d);
            img.set_rgb(x, y, render_ray(scene, o, d, opts).color);
        }
    });
    return img;
}

SceneGradient::SceneGradient(const SdfScene& scene)
    : fg_sdf(scene.fg_sdf.values().size(), 0.0),
      fg_feat(scene.fg_feat.values().size(), 0.0),
      bg_sdf(scene.bg_sdf.values().size(), 0.0),
      bg_feat(scene.bg_feat.values().size(), 0.0),
      head(scene.head.parameter_count(), 0.0) {}

void SceneGradient::clear() {
    for (auto* v : {&fg_sdf, &fg_feat, &bg_sdf, &bg_feat, &head}) std::fill(v->begin(), v->end(), 0.0);
    background = Rgb::Zero();
}

void SceneGradient::add(const SceneGradient& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(fg_sdf, o.fg_sdf);
    acc(fg_feat, o.fg_feat);
    acc(bg_sdf, o.bg_sdf);
    acc(bg_feat, o.bg_feat);
    acc(head, o.head);
    background += o.background;
}

ObjectiveTerms surface_objective(std::span<const RayTarget> batch, const SdfScene& scene,
                                 const HuberState& huber, const ObjectiveWeights& weights,
                                 const RenderOptions& opts, SceneGradient* grad) {
    ObjectiveTerms terms;
    terms.abs_residuals.resize(batch.size() * 3);
    const int chunks = static_cast<int>(std::clamp<std::size_t>(batch.size(), 1, kReduceChunks));
    std::vector<double> photo(static_cast<std::size_t>(chunks), 0.0), pp(static_cast<std::size_t>(chunks), 0.0);
    std::vector<SceneGradient> partial;
    if (grad) partial.assign(static_cast<std::size_t>(std::max(0, chunks - 1)), SceneGradient(scene));

    parallel_chunks(batch.size(), chunks, [&](int c, std::size_t b, std::size_t e) {
        SceneGradient* g = nullptr;
        if (grad) g = c == 0 ? grad : &partial[static_cast<std::size_t>(c - 1)];
        for (std::size_t r = b; r < e; ++r) {
            const auto& ray = batch[r];
            RayPass pass(scene, opts);
            pass.forward(ray.origin, ray.dir);
            photo[static_cast<std::size_t>(c)] += photo_loss(pass.color, ray.target, huber);
            pp[static_cast<std::size_t>(c)] += pass.pp_term(ray.target);
            for (int ch = 0; ch < 3; ++ch) terms.abs_residuals[r * 3 + ch] = std::abs(ray.target[ch] - pass.color[ch]);
            if (g) pass.backward(photo_loss_grad(pass.color, ray.target, huber), weights.w_pp_rgb, ray.target, *g);
        }
    });
    if (grad)
        for (const auto& p : partial) grad->add(p);
    for (int c = 0; c < chunks; ++c) {
        terms.photo += photo[static_cast<std::size_t>(c)];
        terms.pp_rgb += pp[static_cast<std::size_t>(c)];
    }

    if (grad) {
        terms.lap = laplacian_loss_grad(scene.fg_sdf, weights.w_lap, grad->fg_sdf) +
                    laplacian_loss_grad(scene.bg_sdf, weights.w_lap, grad->bg_sdf);
    } else {
        terms.lap = laplacian_loss(scene.fg_sdf) + laplacian_loss(scene.bg_sdf);
    }
    terms.total = terms.photo + weights.w_lap * terms.lap + weights.w_pp_rgb * terms.pp_rgb;
    return terms;
}

// ---------------------------------------------------------------------------

std::array<int, 3> scheduled_resolution(const std::array<int, 3>& final_res, int iteration,
                                        int upscale_every, int upscale_until) {
    if (upscale_every <= 0 || upscale_until <= 0) return final_res;
    const int total = upscale_until / upscale_every;
    const int done = std::min(total, iteration / upscale_every);
    const double factor = std::pow(2.0, static_cast<double>(done - total) / 3.0);
    std::array<int, 3> r{};
    for (int a = 0; a < 3; ++a) r[a] = std::max(3, static_cast<int>(std::lround(final_res[a] * factor)));
    return r;
}

grid::SdfScene train_surface(const PosedDataset& dataset, const Stage1Config& cfg, const Stage1Logger& log) {
    std::vector<const View*> views = dataset.split("train");
    if (views.empty())
        for (const auto& v : dataset.views) views.push_back(&v);
    if (views.size() < 2) throw ArgumentError("train_surface: need at least two posed images");
    for (const auto* v : views) v->camera.validate(1e-4);

    const bool masked = std::all_of(views.begin(), views.end(), [](const View* v) { return v->mask.has_value(); });
    grid::SceneOptions so;
    so.fg_bbox = cfg.fg_bbox;
    so.bg_scale = cfg.bg_scale;
    so.fg_resolution = scheduled_resolution(cfg.fg_resolution, 0, cfg.upscale_every, cfg.upscale_until);
    so.bg_resolution = scheduled_resolution(cfg.bg_resolution, 0, cfg.upscale_every, cfg.upscale_until);
    so.feature_width = cfg.feature_width;
    so.hidden_width = cfg.hidden_width;
    so.encoding_degree = cfg.encoding_degree;
    so.init_radius_fraction = cfg.init_radius_fraction;
    so.sharpness = cfg.sharpness_start > 0 ? cfg.sharpness_start : (masked ? 30.0 : 5.0);
    so.seed = cfg.seed;
    SdfScene scene = grid::make_scene(so);

    // Pixel index over all training views, for uniform ray sampling.
    std::vector<double> view_weights;
    Rgb mean_color = Rgb::Zero();
    double npix = 0.0;
    for (const auto* v : views) {
        view_weights.push_back(static_cast<double>(v->image.pixel_count()));
        for (int y = 0; y < v->image.height; ++y)
            for (int x = 0; x < v->image.width; ++x) mean_color += v->image.rgb(x, y);
        npix += static_cast<double>(v->image.pixel_count());
    }
    scene.background = mean_color / npix;
    const Distribution1D view_dist(view_weights);

    const optim::AdamOptions adam_opts{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    optim::Adam opt_fg_sdf(scene.fg_sdf.values().size(), adam_opts);
    optim::Adam opt_bg_sdf(scene.bg_sdf.values().size(), adam_opts);
    optim::Adam opt_fg_feat(scene.fg_feat.values().size(), adam_opts);
    optim::Adam opt_bg_feat(scene.bg_feat.values().size(), adam_opts);
    optim::Adam opt_head(scene.head.parameter_count(), adam_opts);
    optim::Adam opt_bg(3, adam_opts);
    const optim::LrSchedule lr_sdf{cfg.lr_sdf, {{cfg.lr_sdf_decay_iter, cfg.lr_sdf_final}}};

    HuberState huber;
    huber.t = std::max(huber.floor, cfg.huber_t_init);
    const ObjectiveWeights weights{cfg.w_lap, cfg.w_pp_rgb};
    Pcg32 rng(mix64(cfg.seed), 17);
    std::vector<RayTarget> batch(static_cast<std::size_t>(cfg.batch_rays));

    for (int it = 0; it < cfg.iterations; ++it) {
        const auto fg_res = scheduled_resolution(cfg.fg_resolution, it, cfg.upscale_every, cfg.upscale_until);
        if (fg_res != scene.fg_sdf.resolution()) {
            const auto bg_res = scheduled_resolution(cfg.bg_resolution, it, cfg.upscale_every, cfg.upscale_until);
            scene.fg_sdf = grid::resample(scene.fg_sdf, fg_res);
            scene.fg_feat = grid::resample(scene.fg_feat, fg_res);
            scene.bg_sdf = grid::resample(scene.bg_sdf, bg_res);
            scene.bg_feat = grid::resample(scene.bg_feat, bg_res);
            opt_fg_sdf.reset(scene.fg_sdf.values().size());
            opt_bg_sdf.reset(scene.bg_sdf.values().size());
            opt_fg_feat.reset(scene.fg_feat.values().size());
            opt_bg_feat.reset(scene.bg_feat.values().size());
        }

        for (auto& ray : batch) {
            const View& v = *views[view_dist.sample(rng.uniform())];
            const int x = std::min(v.image.width - 1, static_cast<int>(rng.uniform() * v.image.width));
            const int y = std::min(v.image.height - 1, static_cast<int>(rng.uniform() * v.image.height));
            v.camera.ray(x + 0.5, y + 0.5, ray.origin, ray.dir);
            ray.target = v.image.rgb(x, y);
        }

        SceneGradient grad(scene);
        const ObjectiveTerms terms = surface_objective(batch, scene, huber, weights, cfg.render, &grad);

        const double lr = lr_sdf.at(it);
        opt_fg_sdf.step(scene.fg_sdf.values(), grad.fg_sdf, lr);
        opt_bg_sdf.step(scene.bg_sdf.values(), grad.bg_sdf, lr);
        opt_fg_feat.step(scene.fg_feat.values(), grad.fg_feat, cfg.lr_feat);
        opt_bg_feat.step(scene.bg_feat.values(), grad.bg_feat, cfg.lr_feat);
        auto head_params = scene.head.flatten();
        opt_head.step(head_params, grad.head, cfg.lr_head);
        scene.head.unflatten(head_params);
        std::array<double, 3> bgp{scene.background[0], scene.background[1], scene.background[2]};
        std::array<double, 3> bgg{grad.background[0], grad.background[1], grad.background[2]};
        opt_bg.step(bgp, bgg, cfg.lr_background);
        scene.background = Rgb(std::max(0.0, bgp[0]), std::max(0.0, bgp[1]), std::max(0.0, bgp[2]));

        std::vector<double> res = terms.abs_residuals;
        huber = update_huber(huber, lower_median(res));

        if (log) {
            log({it, terms.photo, terms.lap, terms.pp_rgb, scene.sharpness, huber.t});
        }
        scene.sharpness = std::min(scene.sharpness + cfg.sharpness_increment, cfg.sharpness_cap);
    }
    return scene;
}

ImageBuffer render_mask(const geometry::TriMesh& mesh, const geometry::Bvh& bvh, const Camera& camera,
                        int supersample) {
    if (supersample < 1) throw ArgumentError("render_mask: supersample must be >= 1");
    camera.validate();
    ImageBuffer mask(camera.width, camera.height, 1);
    const int k = supersample;
    const double inv = 1.0 / (k * k);
    parallel_chunks(mask.pixel_count(), worker_count(), [&](int, std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            const int x = static_cast<int>(p % camera.width), y = static_cast<int>(p / camera.width);
            int covered = 0;
            for (int sy = 0; sy < k; ++sy)
                for (int sx = 0; sx < k; ++sx) {
                    Vec3 o, d;
                    camera.ray(x + (sx + 0.5) / k, y + (sy + 0.5) / k, o, d);
                    if (bvh.occluded(mesh, o, d, 0.0, kInf)) ++covered;
                }
            mask.at(x, y) = covered * inv;
        }
    });
    return mask;
}

}  // namespace npbir::volren
