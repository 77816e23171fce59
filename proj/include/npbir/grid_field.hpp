// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace npbir::grid {

// Dense gridpoint lattice over an axis-aligned box. Gridpoint (i,j,k) sits at
// lo + (i,j,k) * spacing; values are stored x-fastest with `channels` values
// per gridpoint.
class VoxelGrid {
public:
    VoxelGrid() = default;
    VoxelGrid(std::array<int, 3> resolution, const Box3& bbox, int channels, double fill = 0.0);

    const std::array<int, 3>& resolution() const { return res_; }
    const Box3& bbox() const { return bbox_; }
    int channels() const { return channels_; }
    std::size_t point_count() const {
        return static_cast<std::size_t>(res_[0]) * res_[1] * res_[2];
    }
    Vec3 spacing() const { return spacing_; }
    // Mean spacing across axes; the "voxel size" used for ray step lengths.
    double voxel_size() const { return spacing_.mean(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    std::size_t point_index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * res_[1] + j) * res_[0] + i;
    }
    double& at(int i, int j, int k, int c = 0) {
        return values_[point_index(i, j, k) * channels_ + c];
    }
    double at(int i, int j, int k, int c = 0) const {
        return values_[point_index(i, j, k) * channels_ + c];
    }
    Vec3 point_position(int i, int j, int k) const {
        return bbox_.lo + Vec3(i, j, k).cwiseProduct(spacing_);
    }

    bool contains(const Vec3& x) const { return bbox_.contains(x); }

    // Fills every gridpoint with f(position) for channel 0..C-1.
    template <class F>
    void fill_with(F&& f) {
        for (int k = 0; k < res_[2]; ++k)
            for (int j = 0; j < res_[1]; ++j)
                for (int i = 0; i < res_[0]; ++i) {
                    const Vec3 p = point_position(i, j, k);
                    for (int c = 0; c < channels_; ++c) at(i, j, k, c) = f(p, c);
                }
    }

private:
    std::array<int, 3> res_{2, 2, 2};
    Box3 bbox_{};
    int channels_ = 1;
    Vec3 spacing_ = Vec3::Ones();
    std::vector<double> values_;
};

// The 8 corner gridpoint indices and trilinear weights for a point; shared by
// forward interpolation and gradient scattering.
struct TrilinearStencil {
    std::array<std::size_t, 8> index{};
    std::array<double, 8> weight{};
    // d(weight)/d(x) per corner, in world units.
    std::array<Vec3, 8> dweight{};
};

// Throws OutOfDomainError when x is outside the grid box.
TrilinearStencil stencil(const VoxelGrid& grid, const Vec3& x, bool with_derivative = false);

// Trilinear interpolation; returns grid.channels() values.
std::vector<double> interp(const VoxelGrid& grid, const Vec3& x);
// Writes channels into `out` (size >= channels); hot-path variant.
void interp_into(const VoxelGrid& grid, const Vec3& x, std::span<double> out);
double interp_scalar(const VoxelGrid& grid, const Vec3& x);

// Analytic gradient of the channel-0 trilinear interpolant.
Vec3 sdf_gradient(const VoxelGrid& grid, const Vec3& x);

// Nested 2x refinement: n -> 2n-1 gridpoints per axis over the same box, so
// every old gridpoint is also a new gridpoint and the interpolant is unchanged.
VoxelGrid upscale(const VoxelGrid& grid, int factor = 2);

// Trilinear resampling to an arbitrary resolution over the same box.
VoxelGrid resample(const VoxelGrid& grid, std::array<int, 3> resolution);

// Single-hidden-layer radiance network: feature ++ encode(view) -> ReLU(H) -> softplus(3).
struct RadianceHead {
    int feature_width = 12;
    int hidden_width = 128;
    int encoding_degree = 4;

    // Row-major blocks: w1 is hidden x input, w2 is 3 x hidden.
    std::vector<double> w1, b1, w2, b2;

    RadianceHead() = default;
    RadianceHead(int feature_width, int hidden_width, int encoding_degree);

    int view_encoding_width() const { return 3 + 6 * encoding_degree; }
    int input_width() const { return feature_width + view_encoding_width(); }
    std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    // Deterministic He-style initialization from a seed.
    void initialize(uint64_t seed);

    // Flat parameter view in order (w1, b1, w2, b2).
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);
};

// Encodes a unit direction as [v, sin(2^k v), cos(2^k v)] for k < degree.
void encode_view(const Vec3& v, int degree, std::span<double> out);

// Cached activations from a forward pass, needed for backprop.
struct HeadActivations {
    std::vector<double> input;
    std::vector<double> pre_hidden;
    std::vector<double> hidden;
    std::array<double, 3> pre_out{};
    Rgb out = Rgb::Zero();
};

Rgb head_forward(const RadianceHead& head, std::span<const double> feature, const Vec3& view,
                 HeadActivations* cache = nullptr);

// Accumulates dL/d(params) (flat layout) and dL/d(feature) given dL/d(out).
void head_backward(const RadianceHead& head, const HeadActivations& cache, const Rgb& d_out,
                   std::span<double> d_params, std::span<double> d_feature);

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

enum class Region { Foreground, Background };

// Foreground/background SDF + feature grids sharing one radiance head.
struct SdfScene {
    VoxelGrid fg_sdf, fg_feat, bg_sdf, bg_feat;
    RadianceHead head;
    double sharpness = 30.0;
    Rgb background = Rgb::Zero();  // radiance for rays leaving the background box

    const Box3& fg_bbox() const { return fg_sdf.bbox(); }
    const Box3& bg_bbox() const { return bg_sdf.bbox(); }

    // Points on the foreground box surface belong to the foreground.
    Region classify(const Vec3& x) const;
};

struct SceneOptions {
    Box3 fg_bbox{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
    double bg_scale = 16.0;
    std::array<int, 3> fg_resolution{96, 96, 96};
    std::array<int, 3> bg_resolution{48, 48, 48};
    int feature_width = 12;
    int hidden_width = 128;
    int encoding_degree = 4;
    double init_radius_fraction = 0.5;  // initial fg sphere radius / fg half extent
    double sharpness = 30.0;
    uint64_t seed = 0;
};

// Foreground initialized to a sphere SDF centered in the fg box; background to
// an inward-facing shell near the bg box boundary; features small random.
SdfScene make_scene(const SceneOptions& opts);

// Throws OutOfDomainError outside the background box.
double query_sdf(const SdfScene& scene, const Vec3& x);
// Throws ArgumentError when |v| differs from 1 by more than 1e-6.
Rgb query_radiance(const SdfScene& scene, const Vec3& x, const Vec3& v);

// Binary checkpoint IO ("NPBG" header + f32 payload).
void write_grid(std::ostream& os, const VoxelGrid& grid);
VoxelGrid read_grid(std::istream& is);
void write_head(std::ostream& os, const RadianceHead& head);
RadianceHead read_head(std::istream& is);
void write_scene(std::ostream& os, const SdfScene& scene);
void save_scene(const std::string& path, const SdfScene& scene);
SdfScene load_scene(const std::string& path);

}  // namespace npbir::grid
