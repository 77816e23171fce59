// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"
#include "npbir/image.hpp"
#include "npbir/sampling.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

namespace npbir::geometry {
struct TriMesh;
class Bvh;
}  // namespace npbir::geometry

namespace npbir::shading {

constexpr double kMinRoughness = 0.01;
constexpr double kMaxRoughness = 1.0;

inline double clamp_roughness(double r) { return std::clamp(r, kMinRoughness, kMaxRoughness); }

struct BrdfParams {
    Rgb albedo = Rgb::Constant(0.5);
    double roughness = 0.5;  // GGX alpha = roughness^2
    double f0 = 0.04;
    // Weight of the specular lobe and of the matching Fresnel transmission on
    // the diffuse lobe; 0 gives a pure Lambertian surface.
    double specular = 1.0;
};

// Value of the BRDF and its partial derivatives. The specular lobe is grey,
// so d_roughness is shared by all channels; d_albedo is the per-channel
// factor multiplying albedo.
struct BrdfEval {
    Rgb value = Rgb::Zero();
    double d_albedo = 0.0;
    double d_roughness = 0.0;
};

inline double schlick(double f0, double cos_theta) {
    const double m = std::clamp(1.0 - cos_theta, 0.0, 1.0);
    const double m2 = m * m;
    return f0 + (1.0 - f0) * m2 * m2 * m;
}

// Lambert diffuse weighted by Fresnel transmission on both sides plus GGX /
// Smith height-correlated / Schlick specular. Zero when either direction is
// below the horizon. Directions are unit and point away from the surface.
BrdfEval brdf_eval_grad(const BrdfParams& p, const Vec3& n, const Vec3& wi, const Vec3& wo);
inline Rgb brdf_eval(const BrdfParams& p, const Vec3& n, const Vec3& wi, const Vec3& wo) {
    return brdf_eval_grad(p, n, wi, wo).value;
}

// Specular term alone (no Fresnel transmission factors), for tests.
double ggx_specular(double roughness, double f0, const Vec3& n, const Vec3& wi, const Vec3& wo);
double ggx_distribution(double alpha, double cos_h);
double smith_g1(double alpha, double cos_theta);

struct BrdfSample {
    Vec3 wi = Vec3::UnitZ();
    double pdf = 0.0;
    bool valid = false;  // false when the specular reflection fell below the horizon
};

// Probability of choosing the specular strategy.
double specular_sampling_weight(const BrdfParams& p, const Vec3& n, const Vec3& wo);
// Mixture of cosine-hemisphere and GGX visible-normal sampling.
BrdfSample brdf_sample(const BrdfParams& p, const Vec3& n, const Vec3& wo, const Vec2& u, double u_lobe);
// Density of brdf_sample over solid angle.
double brdf_pdf(const BrdfParams& p, const Vec3& n, const Vec3& wo, const Vec3& wi);

// ---------------------------------------------------------------------------
// Spherical Gaussians

struct SgLobe {
    Vec3 axis = Vec3::UnitZ();
    double lambda = 0.0;
    Rgb amplitude = Rgb::Zero();
};
using SgMixture = std::vector<SgLobe>;

// sum a * exp(lambda * (mu.w - 1)).
Rgb sg_eval(const SgMixture& mix, const Vec3& w);

// Flat parameter layout per lobe: axis(3), lambda(1), amplitude(3).
constexpr int kSgParams = 7;
std::vector<double> sg_flatten(const SgMixture& mix);
void sg_unflatten(SgMixture& mix, std::span<const double> flat);
// Accumulates dot(d_out, d sg_eval / d params) into `grad` (flat layout).
// The axis derivative is taken with respect to the stored (unit) axis.
void sg_eval_backward(const SgMixture& mix, const Vec3& w, const Rgb& d_out, std::span<double> grad);
// Renormalizes axes and clamps lambda and amplitude to be non-negative.
void sg_project(SgMixture& mix);

std::vector<Vec3> fibonacci_sphere(int n);
// Axes on a Fibonacci sphere, lambda = 25, amplitude = `mean`.
SgMixture init_sg(int lobes, const Rgb& mean, double lambda = 25.0);

// ---------------------------------------------------------------------------
// Lat-long environment maps: +Y up, phi = 0 at +X, phi increasing toward +Z;
// row 0 at theta = 0 (+Y). Texel (x, y) is centred at
// phi = 2pi (x + 0.5) / W, theta = pi (y + 0.5) / H.

Vec3 latlong_direction(double phi, double theta);
// (phi in [0, 2pi), theta in [0, pi]).
Vec2 latlong_angles(const Vec3& w);

struct EnvMap {
    ImageBuffer image;  // 3 channels, linear radiance

    EnvMap() = default;
    EnvMap(int w, int h, const Rgb& fill = Rgb::Zero());
    int width() const { return image.width; }
    int height() const { return image.height; }
    Rgb texel(int x, int y) const { return image.rgb(x, y); }
    Vec3 texel_direction(int x, int y) const;
    // Solid angle covered by a texel row.
    double texel_solid_angle(int y) const;
};

struct EnvStencil {
    std::array<std::size_t, 4> texel{};
    std::array<double, 4> weight{};
};
// Bilinear stencil with longitude wraparound and latitude clamping.
EnvStencil env_stencil(int width, int height, const Vec3& w);
Rgb envmap_lookup(const EnvMap& env, const Vec3& w);

// Throws ArgumentError for W or H below 2.
EnvMap envmap_from_sg(const SgMixture& mix, int width, int height);

void save_envmap(const std::string& path, const EnvMap& env);
EnvMap load_envmap(const std::string& path);

// JSON list of lobes; load throws LoadError on malformed or invalid lobes.
void save_sg(const std::string& path, const SgMixture& mix);
SgMixture load_sg(const std::string& path);

// Importance sampling proxy: piecewise-constant density over texels,
// proportional to luminance * sin(theta) plus a floor so every direction
// keeps a positive density. u.y picks the row, u.x the column.
class EnvSampler {
public:
    EnvSampler() = default;
    explicit EnvSampler(const EnvMap& env);
    bool empty() const { return width_ == 0; }
    Vec3 sample(const Vec2& u, double* pdf) const;
    double pdf(const Vec3& w) const;

private:
    int width_ = 0, height_ = 0;
    Distribution1D rows_;               // marginal over latitude rows
    std::vector<Distribution1D> cols_;  // conditional over columns per row
};

// Mean colour of background pixels per lat-long texel; `coverage` is 1 where
// at least one pixel landed.
struct BackgroundObservation {
    EnvMap env;
    ImageBuffer coverage;  // 1 channel
};
BackgroundObservation averaged_background(const PosedDataset& dataset, const geometry::TriMesh& mesh,
                                          const geometry::Bvh& bvh, int width, int height);

}  // namespace npbir::shading
