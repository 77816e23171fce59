// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/camera.hpp"
#include "npbir/grid_field.hpp"
#include "npbir/image.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace npbir::geometry {
struct TriMesh;
class Bvh;
}  // namespace npbir::geometry

namespace npbir::volren {

// ---------------------------------------------------------------------------
// Scalar building blocks

// Discrete opacity between consecutive samples:
// max(0, (sig(s*a) - sig(s*b)) / sig(s*a)), evaluated in log space so that
// very large sharpness never overflows.
double alpha_from_sdf(double sdf_i, double sdf_next, double sharpness);
// Partial derivatives of alpha_from_sdf w.r.t. (sdf_i, sdf_next); zero when clamped.
void alpha_derivatives(double sdf_i, double sdf_next, double sharpness, double& d_i, double& d_next);

struct Composite {
    Rgb color = Rgb::Zero();
    std::vector<double> weights;  // T_i * alpha_i
    double residual_transmittance = 1.0;
};

// Front-to-back alpha blending. Throws ArgumentError on length mismatch.
Composite composite(std::span<const double> alphas, std::span<const Rgb> radiances);

struct HuberState {
    double t = 0.1;
    double momentum = 0.99;
    double floor = 0.01;
};

// Per-channel Huber with knee t, summed over channels.
double photo_loss(const Rgb& pred, const Rgb& target, const HuberState& h);
// d(photo_loss)/d(pred).
Rgb photo_loss_grad(const Rgb& pred, const Rgb& target, const HuberState& h);
// t' = max(floor, m*t + (1-m)*median). Throws ArgumentError for a negative median.
HuberState update_huber(const HuberState& h, double batch_median_abs_residual);

// Sum over interior gridpoints of (V[u] - mean of 6 face neighbours)^2.
// Throws ArgumentError unless C == 1 and every axis has >= 3 gridpoints.
double laplacian_loss(const grid::VoxelGrid& grid);
// Same value; accumulates scale * d(loss)/d(V) into `grad` (size = point count).
double laplacian_loss_grad(const grid::VoxelGrid& grid, double scale, std::span<double> grad);

// sum_i w_i * |L_i - target|_1. Throws ArgumentError on length mismatch.
double pp_rgb_loss(std::span<const double> weights, std::span<const Rgb> radiances, const Rgb& target);

// ---------------------------------------------------------------------------
// Ray sampling and rendering against an SdfScene

struct RaySample {
    double t = 0.0;
    grid::Region region = grid::Region::Background;
};

struct RaySamples {
    Vec3 origin = Vec3::Zero();
    Vec3 dir = Vec3::UnitZ();
    std::vector<RaySample> samples;  // strictly increasing t
    RaySample tail;                  // extra sample used only for the last alpha
    bool hit_box = false;
};

// Samples at integer multiples of half the owning grid's voxel size, restricted
// to the background box (foreground box segment uses the foreground spacing).
RaySamples sample_ray(const grid::SdfScene& scene, const Vec3& origin, const Vec3& dir);

struct RenderOptions {
    // Radiance is evaluated only where T_i*alpha_i exceeds this; 0 = exact.
    double weight_threshold = 1e-4;
    // March stops once transmittance falls below this; 0 = exact.
    double transmittance_threshold = 1e-4;
};

struct RayResult {
    Rgb color = Rgb::Zero();
    double opacity = 0.0;  // sum of weights, excluding the background term
    double depth = 0.0;    // weight-averaged t
};

RayResult render_ray(const grid::SdfScene& scene, const Vec3& origin, const Vec3& dir,
                     const RenderOptions& opts = {});
ImageBuffer render_image(const grid::SdfScene& scene, const Camera& camera, const RenderOptions& opts = {});

// ---------------------------------------------------------------------------
// Stage-1 objective

struct RayTarget {
    Vec3 origin;
    Vec3 dir;
    Rgb target;
};

struct SceneGradient {
    std::vector<double> fg_sdf, fg_feat, bg_sdf, bg_feat, head;
    Rgb background = Rgb::Zero();

    explicit SceneGradient(const grid::SdfScene& scene);
    void clear();
    void add(const SceneGradient& other);
};

struct ObjectiveWeights {
    double w_lap = 1e-8;
    double w_pp_rgb = 0.01;
};

struct ObjectiveTerms {
    double photo = 0.0;
    double lap = 0.0;
    double pp_rgb = 0.0;
    double total = 0.0;
    std::vector<double> abs_residuals;  // per ray and channel, for the Huber update
};

// L_photo + w_lap * L_lap + w_pp_rgb * L_pp_rgb over the batch (sums, not means).
// When `grad` is non-null it receives the exact reverse-mode gradient.
ObjectiveTerms surface_objective(std::span<const RayTarget> batch, const grid::SdfScene& scene,
                                 const HuberState& huber, const ObjectiveWeights& weights,
                                 const RenderOptions& opts, SceneGradient* grad);

// ---------------------------------------------------------------------------
// Stage-1 training

struct Stage1Config {
    int iterations = 20000;
    int batch_rays = 4096;
    double w_lap = 1e-8;
    double w_pp_rgb = 0.01;
    double lr_sdf = 0.01;
    double lr_sdf_final = 0.001;
    int lr_sdf_decay_iter = 10000;
    double lr_head = 0.001;
    double lr_feat = 0.1;
    double lr_background = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-12;
    // Initial sharpness: 30 when masks are available, 5 otherwise (negative = auto).
    double sharpness_start = -1.0;
    double sharpness_increment = 0.02;
    double sharpness_cap = 300.0;
    // The voxel count doubles every `upscale_every` iterations until `upscale_until`.
    int upscale_every = 1000;
    int upscale_until = 10000;
    std::array<int, 3> fg_resolution{96, 96, 96};
    std::array<int, 3> bg_resolution{48, 48, 48};
    Box3 fg_bbox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
    double bg_scale = 16.0;
    int feature_width = 12;
    int hidden_width = 128;
    int encoding_degree = 4;
    double init_radius_fraction = 0.5;
    double huber_t_init = 0.1;
    RenderOptions render{};
    uint64_t seed = 0;
};

struct Stage1LogRow {
    int iteration = 0;
    double photo = 0.0, lap = 0.0, pp_rgb = 0.0;
    double sharpness = 0.0, huber_t = 0.0;
};

using Stage1Logger = std::function<void(const Stage1LogRow&)>;

// Grid resolution in effect at `iteration` under the progressive schedule.
std::array<int, 3> scheduled_resolution(const std::array<int, 3>& final_res, int iteration,
                                        int upscale_every, int upscale_until);

// Throws ArgumentError when the dataset has fewer than two views.
grid::SdfScene train_surface(const PosedDataset& dataset, const Stage1Config& cfg,
                             const Stage1Logger& log = {});

// Anti-aliased object mask: per-pixel coverage from k x k stratified
// visibility rays. Throws ArgumentError for k < 1 or an invalid camera.
ImageBuffer render_mask(const geometry::TriMesh& mesh, const geometry::Bvh& bvh, const Camera& camera,
                        int supersample);

}  // namespace npbir::volren
