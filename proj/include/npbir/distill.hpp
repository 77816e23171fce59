// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"
#include "npbir/geometry.hpp"
#include "npbir/grid_field.hpp"
#include "npbir/optim.hpp"
#include "npbir/shading.hpp"

#include <functional>
#include <string>
#include <vector>

namespace npbir::distill {

// Shared global set of light directions with solid-angle weights.
struct DirectionSet {
    std::vector<Vec3> dirs;
    std::vector<double> weights;  // sum to 4pi

    std::size_t size() const { return dirs.size(); }
};

// n_z x n_phi strata of equal area over the sphere (uniform in z and phi),
// one direction per stratum: the stratum centre, or a jittered point when
// `jitter_seed` is non-zero.
DirectionSet make_direction_set(int n_z = 16, int n_phi = 16, uint64_t jitter_seed = 0);

// Outgoing radiance of the teacher. `query(x, v)` is the radiance seen along a
// ray with unit direction v arriving at x, i.e. leaving x toward -v.
struct RadianceField {
    std::function<Rgb(const Vec3& x, const Vec3& v)> query;
    Box3 domain;
    std::string fingerprint;  // identifies the field in the transport cache
};

// Wraps a trained scene. The fingerprint is the SHA-256 of its serialized form.
RadianceField scene_field(const grid::SdfScene& scene);

struct TransportTables {
    int vertices = 0;
    DirectionSet omega;
    std::vector<uint8_t> vis;   // vertices x |omega|
    std::vector<float> l_ind;   // vertices x |omega| x 3, zero where visible

    std::size_t index(int v, std::size_t k) const { return static_cast<std::size_t>(v) * omega.size() + k; }
    bool visible(int v, std::size_t k) const { return vis[index(v, k)] != 0; }
    Rgb indirect(int v, std::size_t k) const {
        const float* p = l_ind.data() + 3 * index(v, k);
        return {p[0], p[1], p[2]};
    }
};

// Offset of ray origins along the vertex normal: 1e-4 of the mesh bbox diagonal.
double ray_offset(const geometry::TriMesh& mesh);

// Casts one ray per (vertex, direction). Requires per-vertex normals.
// Throws OutOfDomainError when a vertex lies outside the field's domain.
TransportTables precompute_transport(const geometry::TriMesh& mesh, const geometry::Bvh& bvh,
                                     const RadianceField& field, const DirectionSet& omega);

// Binary cache: "NPBT" header, key, visibility bitset, f32 indirect radiance.
std::string transport_cache_key(const geometry::TriMesh& mesh, const RadianceField& field,
                                const DirectionSet& omega);
void save_transport(const std::string& path, const TransportTables& t, const std::string& key);
// Throws LoadError on a malformed file or when the stored key differs from `key`.
TransportTables load_transport(const std::string& path, const std::string& key);
// Loads `<cache_dir>/<key>.npbt` when present, otherwise computes and stores it.
TransportTables cached_transport(const std::string& cache_dir, const geometry::TriMesh& mesh,
                                 const geometry::Bvh& bvh, const RadianceField& field,
                                 const DirectionSet& omega, bool* cache_hit = nullptr);

// sg(w) where visible, cached indirect radiance otherwise.
Rgb incident_radiance(const TransportTables& t, const shading::SgMixture& sg, int v, std::size_t k);

struct MaterialModel {
    double f0 = 0.04;
    double specular = 1.0;  // see shading::BrdfParams::specular
};

// (4pi / |omega|) sum_k L_i(w_k) f(w_k, wo) max(0, n.w_k), using the per-vertex
// albedo/roughness/normal stored on the mesh. Throws ArgumentError when wo is
// below the horizon of the vertex normal.
Rgb coarse_render(const geometry::TriMesh& mesh, const TransportTables& t, const shading::SgMixture& sg, int v,
                  const Vec3& wo, const MaterialModel& model = {});

struct TeacherSample {
    int vertex = 0;
    Vec3 wo = Vec3::UnitZ();  // unit, above the vertex horizon
    Rgb target = Rgb::Zero();
};

struct DistillWeights {
    double w_v_reg = 0.1;
    double w_bg = 10.0;
};

struct DistillLosses {
    double distill = 0.0;
    double v_reg = 0.0;
    double bg = 0.0;
    double total = 0.0;
};

struct DistillGradient {
    std::vector<Rgb> albedo;
    std::vector<double> roughness;
    std::vector<double> sg;  // shading::sg_flatten layout
};

// L_distill = sum |coarse - target|_1; L_v_reg = sum over edges of L1 attribute
// differences; L_bg = sum over covered texels of |sg - bg|_1. When `grad` is
// non-null it is overwritten with the gradient of `total`.
DistillLosses distill_losses(const geometry::TriMesh& mesh, const TransportTables& t,
                             const shading::SgMixture& sg, std::span<const TeacherSample> samples,
                             const shading::BackgroundObservation* bg, const DistillWeights& weights,
                             const MaterialModel& model, DistillGradient* grad);

constexpr double kMaxAlbedo = 1.0 - 1e-4;

// Roughness = `roughness`; albedo = per-channel lower median of the field's
// outgoing radiance over the above-horizon directions of omega, clamped into
// [0, 1 - 1e-4). Falls back to 0.5 without any above-horizon direction.
void init_materials(geometry::TriMesh& mesh, const RadianceField& field, const DirectionSet& omega,
                    double roughness = 0.25);

struct Stage2Config {
    int iterations = 2000;
    double w_v_reg = 0.1;
    double w_bg = 10.0;
    double lr_vertex = 0.01;
    double lr_sg = 0.001;
    double init_roughness = 0.25;
    int sg_lobes = 256;
    double sg_lambda = 25.0;
    MaterialModel model{};
    optim::AdamOptions adam{0.9, 0.999, 1e-8};
    uint64_t seed = 0;
};

struct Stage2LogRow {
    int iteration = 0;
    DistillLosses losses;
};
using Stage2Logger = std::function<void(const Stage2LogRow&)>;

struct DistillResult {
    geometry::TriMesh mesh;  // with optimized albedo / roughness
    shading::SgMixture sg;
};

// Mean of the covered background texels, else of the teacher at the vertices.
Rgb initial_sg_amplitude(const geometry::TriMesh& mesh, const RadianceField& teacher,
                         const shading::BackgroundObservation* bg);

// Adam on per-vertex attributes and SG parameters. Each iteration draws one
// uniform outgoing direction per vertex. `mesh` must carry materials (see
// init_materials); an empty `initial_sg` is initialized by init_sg.
DistillResult train_distill(const geometry::TriMesh& mesh, const TransportTables& t, const RadianceField& teacher,
                            const shading::BackgroundObservation* bg, const Stage2Config& cfg,
                            shading::SgMixture initial_sg = {}, const Stage2Logger& log = {});

}  // namespace npbir::distill
