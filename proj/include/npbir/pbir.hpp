// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"
#include "npbir/geometry.hpp"
#include "npbir/image.hpp"
#include "npbir/optim.hpp"
#include "npbir/sampling.hpp"
#include "npbir/shading.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace npbir::pbir {

// Distant lighting: a spherical Gaussian mixture or a lat-long map.
struct Light {
    enum class Kind { Sg, Env };
    Kind kind = Kind::Sg;
    shading::SgMixture sg;
    shading::EnvMap env;

    static Light from_sg(shading::SgMixture mix);
    static Light from_env(shading::EnvMap map);
    bool is_env() const { return kind == Kind::Env; }
    Rgb eval(const Vec3& w) const;
    // Number of optimizable parameters (flat SG layout or 3 per texel).
    std::size_t parameter_count() const;
};

struct TexturedAssets {
    geometry::TriMesh mesh;  // per-corner uvs
    ImageBuffer albedo;      // T_a, 3 channels, in [0, 1)
    ImageBuffer roughness;   // T_r, 1 channel, in [0.01, 1]
    Light light;
    double f0 = 0.04;
    double specular = 1.0;  // see shading::BrdfParams::specular

    // Throws ArgumentError when an invariant does not hold.
    void validate() const;
    shading::BrdfParams material(const Vec2& uv) const;
};

// Directory layout: mesh.npbm, mesh.obj, albedo.pfm, roughness.pfm, env.pfm or
// sg.json, assets.json.
void save_assets(const std::string& dir, const TexturedAssets& assets);
TexturedAssets load_assets(const std::string& dir);

// Per-vertex materials baked into a per-triangle atlas of `texel_res`^2 texels.
TexturedAssets assets_from_vertices(const geometry::TriMesh& mesh, const shading::SgMixture& sg, int texel_res,
                                    double f0 = 0.04, double specular = 1.0);
// T_a = T_r = `level`, SG lobes whose pixelized mean radiance is `level`.
TexturedAssets constant_assets(const geometry::TriMesh& mesh, int texel_res, int sg_lobes = 256,
                               double level = 0.5, double f0 = 0.04, double specular = 1.0);

struct RenderConfig {
    int spp = 64;
    int max_depth = 3;  // surface interactions per path
    bool gi = true;     // false: direct lighting at the primary hit only
    uint64_t seed = 0;
    bool jitter = true;  // false: every sample goes through the pixel centre

    void validate() const;
};

// Random numbers of sample `sample` of a pixel, stratified across the pixel's
// `spp` samples: each call draws from its own shuffled set of strata (jittered
// 2D cells when spp is a perfect square, Latin hypercube otherwise). Streams
// are keyed by (seed, pixel, sample).
class PixelSampler {
public:
    PixelSampler(uint64_t seed, uint64_t pixel, int sample, int spp);
    double next1();
    Vec2 next2();

private:
    uint32_t stratum(uint32_t count);
    Pcg32 rng_;
    uint64_t key_;
    uint32_t sample_, spp_, side_;
    uint32_t dim_ = 0;
};

// Shared per-render state: BVH and importance samplers. The light sampler
// follows the light itself (SG lobes pixelized at 64 x 32) unless a
// `proposal` map is given; BRDF sampling and MIS use the materials of
// `sampling` (same mesh and uvs) when given. Fixed proposals make the
// estimator a smooth function of the assets under common random numbers.
class Scene {
public:
    explicit Scene(const TexturedAssets& assets, const shading::EnvMap* proposal = nullptr,
                   const TexturedAssets* sampling = nullptr);
    const TexturedAssets& assets() const { return *assets_; }
    shading::BrdfParams sampling_material(const Vec2& uv) const { return sampling_->material(uv); }
    const geometry::Bvh& bvh() const { return bvh_; }
    const shading::EnvSampler& light_sampler() const { return sampler_; }
    double epsilon() const { return eps_; }

private:
    const TexturedAssets* assets_;
    const TexturedAssets* sampling_;
    geometry::Bvh bvh_;
    shading::EnvSampler sampler_;
    double eps_ = 1e-6;
};

// Radiance estimates for the given linear pixel indices (y * W + x). Each
// (pixel, sample) owns a random stream keyed by (seed, pixel, sample).
std::vector<Rgb> trace_pixels(const Scene& scene, const Camera& camera, std::span<const int> pixels,
                              const RenderConfig& cfg);
ImageBuffer path_trace(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg);

// Material at the primary hit through each pixel centre; zero where the ray
// misses (coverage 0).
struct Aovs {
    ImageBuffer albedo;     // 3 channels
    ImageBuffer roughness;  // 1 channel
    ImageBuffer coverage;   // 1 channel, 0 or 1
};
Aovs render_aovs(const TexturedAssets& assets, const Camera& camera);

struct AssetGradient {
    std::vector<double> albedo;     // like TexturedAssets::albedo.data
    std::vector<double> roughness;  // like TexturedAssets::roughness.data
    std::vector<double> light;      // Light::parameter_count()
    std::vector<Vec3> vertices;     // empty unless requested

    void resize_for(const TexturedAssets& assets, bool with_vertices);
    void add(const AssetGradient& o);
};

struct GradientOptions {
    bool appearance = true;
    bool vertex_shading = false;  // interior shading term for vertex positions
};

// Replays the paths of trace_pixels with the same config and accumulates the
// gradient of sum_p dot(adjoint_p, pixel_p). Light sampling and MIS weights
// are treated as constants.
AssetGradient backprop_pixels(const Scene& scene, const Camera& camera, std::span<const int> pixels,
                              std::span<const Rgb> adjoints, const RenderConfig& cfg,
                              const GradientOptions& opts = {});

// Forward render tagged with its config for a later replay.
struct Rendering {
    ImageBuffer image;
    RenderConfig config;
};
Rendering render(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg);

// Image-level replay; throws ArgumentError when cfg.seed differs from the
// forward render's or the adjoint's shape does not match it.
AssetGradient backprop_appearance(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg,
                                  const Rendering& forward, const ImageBuffer& adjoint);

// Silhouette gradient of sum_p adjoint_p * coverage_p, by sampling the
// projected silhouette edges `samples_per_pixel` times per pixel of length.
std::vector<Vec3> silhouette_gradient(const geometry::TriMesh& mesh, const geometry::Bvh& bvh,
                                      const Camera& camera, const ImageBuffer& mask_adjoint,
                                      int samples_per_pixel = 4);

// Interior shading term (replay) plus w_mask times the silhouette term of
// L_mask = |S - R_mask|_1 against `target_mask`.
std::vector<Vec3> backprop_vertices(const TexturedAssets& assets, const Camera& camera, const RenderConfig& cfg,
                                    const Rendering& forward, const ImageBuffer& adjoint,
                                    const ImageBuffer* target_mask, double w_mask, int mask_supersample = 4);

// ---------------------------------------------------------------------------
// Losses

struct IrWeights {
    double w_mask = 10.0;
    double w_reg = 0.1;
};

struct IrLosses {
    double img = 0.0;
    double mask = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

// Anisotropic total variation of a 1-channel texture; `grad` (optional,
// same size) receives d/dtexel added with `scale`.
double roughness_tv(const ImageBuffer& tex, std::vector<double>* grad = nullptr, double scale = 1.0);

// One render and rendered mask per view of `dataset`; views without a mask
// skip the mask term. Throws ArgumentError on count or shape mismatch.
IrLosses ir_loss(const TexturedAssets& assets, const PosedDataset& dataset, std::span<const ImageBuffer> renders,
                 std::span<const ImageBuffer> rendered_masks, const IrWeights& weights);

// ---------------------------------------------------------------------------
// Refinement

struct Stage3Schedule {
    int step1_iterations = 1000;
    int step2_iterations = 1000;
    int step3_iterations = 500;
    // Learning rates; 0 freezes a parameter group.
    double lr_albedo = 1e-2;
    double lr_roughness = 5e-3;
    double lr_sg = 1e-3;
    double lr_env = 1e-2;
    double lr_vertex = 1e-3;
    double lambda_env = 1.0;
    double lambda_vertex = 100.0;
    IrWeights weights{};
    int env_width = 64;  // pixelized SG resolution
    int env_height = 32;
    int batch_pixels = 1024;  // pixels of one training view per iteration
    int mask_supersample = 4;
    RenderConfig render{64, 3, true, 0, true};
    optim::AdamOptions adam{0.9, 0.999, 1e-8};
    uint64_t seed = 0;

    void validate() const;
};

struct Stage3LogRow {
    int step = 1;
    int iteration = 0;  // within the step
    int view = 0;
    IrLosses losses;
};
using Stage3Logger = std::function<void(const Stage3LogRow&)>;
using Stage3Checkpoint = std::function<void(int step, const TexturedAssets&)>;

TexturedAssets run_pbir(TexturedAssets initial, const PosedDataset& dataset, const Stage3Schedule& schedule,
                        const Stage3Logger& log = {}, const Stage3Checkpoint& checkpoint = {});

// Full-image L_IR over the training views (renders with `cfg`).
IrLosses evaluate_ir(const TexturedAssets& assets, const PosedDataset& dataset, const RenderConfig& cfg,
                     const IrWeights& weights, int mask_supersample = 4);

}  // namespace npbir::pbir
