// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "npbir/distill.hpp"
#include "npbir/geometry.hpp"
#include "npbir/sampling.hpp"

#include <filesystem>

using namespace npbir;
using namespace npbir::distill;
using geometry::TriMesh;

namespace {

const Box3 kDomain{Vec3::Constant(-2.0), Vec3::Constant(2.0)};

RadianceField analytic_field(std::function<Rgb(const Vec3&, const Vec3&)> f, const std::string& tag = "analytic") {
    return {std::move(f), kDomain, tag};
}

Rgb smooth_color(const Vec3& x, const Vec3& v) {
    return Rgb(0.5 + 0.3 * x.x() + 0.05 * v.y(), 0.4 + 0.2 * x.y() - 0.05 * v.x(), 0.6 - 0.1 * x.z());
}

TriMesh merge(const TriMesh& a, const TriMesh& b) {
    TriMesh m = a;
    const int off = static_cast<int>(a.vertices.size());
    m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
    m.normals.insert(m.normals.end(), b.normals.begin(), b.normals.end());
    for (auto t : b.triangles) m.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
    return m;
}

void set_materials(TriMesh& m, uint64_t seed) {
    Pcg32 rng(seed);
    m.albedo.resize(m.vertex_count());
    m.roughness.resize(m.vertex_count());
    for (std::size_t v = 0; v < m.vertex_count(); ++v) {
        m.albedo[v] = Rgb(0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform(), 0.1 + 0.8 * rng.uniform());
        m.roughness[v] = 0.15 + 0.8 * rng.uniform();
    }
}

shading::SgMixture random_sg(int lobes, uint64_t seed) {
    Pcg32 rng(seed);
    shading::SgMixture mix;
    for (int i = 0; i < lobes; ++i)
        mix.push_back({sample_uniform_sphere(rng.uniform2()), 1.0 + 6.0 * rng.uniform(),
                       Rgb(0.2 + rng.uniform(), 0.2 + rng.uniform(), 0.2 + rng.uniform())});
    return mix;
}

Vec3 above(const Vec3& n, Pcg32& rng) {
    Vec3 d = sample_uniform_sphere(rng.uniform2());
    if (d.dot(n) < 0) d = -d;
    return (d + 0.2 * n).normalized();
}

}  // namespace

TEST(DirectionSetTest, StratifiedUnitWithFullSphereWeight) {
    for (uint64_t seed : {0ULL, 5ULL}) {
        const auto s = make_direction_set(16, 16, seed);
        ASSERT_EQ(s.size(), 256u);
        double total = 0;
        Vec3 mean = Vec3::Zero();
        for (std::size_t k = 0; k < s.size(); ++k) {
            EXPECT_NEAR(s.dirs[k].norm(), 1.0, 1e-12);
            total += s.weights[k];
            mean += s.dirs[k];
        }
        EXPECT_NEAR(total, 4 * kPi, 1e-6);
        EXPECT_LT((mean / 256).norm(), 0.05);
    }
    EXPECT_THROW(make_direction_set(0, 4), ArgumentError);
}

TEST(Transport, ConvexSphereVisibility) {
    const TriMesh m = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 12, 24);
    const geometry::Bvh bvh(m);
    const auto omega = make_direction_set();
    const auto field = analytic_field(smooth_color);
    const auto t = precompute_transport(m, bvh, field, omega);
    ASSERT_EQ(t.vis.size(), m.vertex_count() * omega.size());
    const double eps = ray_offset(m);
    int checked_out = 0, checked_in = 0;
    for (int v = 0; v < static_cast<int>(m.vertex_count()); ++v)
        for (std::size_t k = 0; k < omega.size(); ++k) {
            const double c = m.normals[static_cast<std::size_t>(v)].dot(omega.dirs[k]);
            if (c > 0.3) {
                EXPECT_TRUE(t.visible(v, k));
                EXPECT_TRUE((t.indirect(v, k) == 0.0).all());
                ++checked_out;
            }
            if (c < -0.3) {
                EXPECT_FALSE(t.visible(v, k));
                ++checked_in;
            }
            // Ray-cast oracle on every entry.
            const Vec3 o = m.vertices[static_cast<std::size_t>(v)] + eps * m.normals[static_cast<std::size_t>(v)];
            EXPECT_EQ(t.visible(v, k), !geometry::ray_cast_brute_force(m, o, omega.dirs[k]).has_value());
        }
    EXPECT_GT(checked_out, 1000);
    EXPECT_GT(checked_in, 1000);
}

TEST(Transport, TwoSpheresIndirectMatchesFieldAtHit) {
    TriMesh a = geometry::make_uv_sphere(Vec3(-0.6, 0, 0), 0.3, 8, 16);
    TriMesh b = geometry::make_uv_sphere(Vec3(0.6, 0, 0), 0.3, 8, 16);
    const TriMesh m = merge(a, b);
    const geometry::Bvh bvh(m);
    DirectionSet omega;
    omega.dirs = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY()};
    omega.weights = {1, 1, 1};
    const auto field = analytic_field(smooth_color);
    const auto t = precompute_transport(m, bvh, field, omega);
    int pole = -1;
    for (std::size_t v = 0; v < a.vertex_count(); ++v)
        if ((m.vertices[v] - Vec3(-0.3, 0, 0)).norm() < 1e-12) pole = static_cast<int>(v);
    ASSERT_GE(pole, 0);
    EXPECT_FALSE(t.visible(pole, 0));
    const Vec3 o = m.vertices[static_cast<std::size_t>(pole)] + ray_offset(m) * m.normals[static_cast<std::size_t>(pole)];
    const auto hit = geometry::ray_cast_brute_force(m, o, Vec3::UnitX());
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->point.x(), 0.3, 1e-3);
    const Rgb expect = smooth_color(hit->point, -Vec3::UnitX());
    EXPECT_TRUE(t.indirect(pole, 0).isApprox(expect.cast<float>().cast<double>(), 1e-7));
    EXPECT_TRUE(t.visible(pole, 2));
}

TEST(Transport, VertexOutsideDomainThrows) {
    TriMesh m = geometry::make_uv_sphere(Vec3(1.9, 0, 0), 0.3, 4, 6);
    const geometry::Bvh bvh(m);
    EXPECT_THROW(precompute_transport(m, bvh, analytic_field(smooth_color), make_direction_set(4, 4)), OutOfDomainError);
}

TEST(Transport, IndependentOfVertexOrder) {
    TriMesh a = geometry::make_uv_sphere(Vec3(-0.5, 0.1, 0), 0.35, 6, 10);
    TriMesh b = geometry::make_uv_sphere(Vec3(0.4, 0, 0.1), 0.3, 6, 10);
    const TriMesh m = merge(a, b);
    const auto omega = make_direction_set(8, 8);
    const auto field = analytic_field(smooth_color);
    const auto t = precompute_transport(m, geometry::Bvh(m), field, omega);

    const int n = static_cast<int>(m.vertex_count());
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = (i * 37 + 11) % n;  // new index of old vertex i
    TriMesh p = m;
    for (int i = 0; i < n; ++i) {
        p.vertices[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = m.vertices[static_cast<std::size_t>(i)];
        p.normals[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = m.normals[static_cast<std::size_t>(i)];
    }
    for (auto& tri : p.triangles)
        for (int& i : tri) i = perm[static_cast<std::size_t>(i)];
    const auto tp = precompute_transport(p, geometry::Bvh(p), field, omega);
    for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < omega.size(); ++k) {
            const int j = perm[static_cast<std::size_t>(i)];
            EXPECT_EQ(t.visible(i, k), tp.visible(j, k));
            EXPECT_TRUE(t.indirect(i, k).isApprox(tp.indirect(j, k), 1e-6) ||
                        (t.indirect(i, k) - tp.indirect(j, k)).abs().maxCoeff() < 1e-6);
        }
}

TEST(Transport, CacheRoundTripAndKeying) {
    const TriMesh m = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 6, 8);
    const geometry::Bvh bvh(m);
    const auto omega = make_direction_set(6, 6);
    const auto field = analytic_field(smooth_color, "f1");
    const auto dir = std::filesystem::temp_directory_path() / "npbir_distill_cache";
    std::filesystem::remove_all(dir);
    bool hit = true;
    const auto t1 = cached_transport(dir.string(), m, bvh, field, omega, &hit);
    EXPECT_FALSE(hit);
    const auto t2 = cached_transport(dir.string(), m, bvh, field, omega, &hit);
    EXPECT_TRUE(hit);
    EXPECT_EQ(t1.vis, t2.vis);
    EXPECT_EQ(t1.l_ind, t2.l_ind);
    EXPECT_EQ(t1.omega.dirs, t2.omega.dirs);
    const auto other = analytic_field(smooth_color, "f2");
    EXPECT_NE(transport_cache_key(m, field, omega), transport_cache_key(m, other, omega));
    const auto key = transport_cache_key(m, field, omega);
    EXPECT_THROW(load_transport((dir / (key + ".npbt")).string(), "wrong"), LoadError);
    std::filesystem::remove_all(dir);
}

TEST(IncidentRadiance, SelectsSgOrIndirect) {
    TriMesh a = geometry::make_uv_sphere(Vec3(-0.5, 0, 0), 0.35, 6, 10);
    TriMesh b = geometry::make_uv_sphere(Vec3(0.4, 0, 0), 0.3, 6, 10);
    const TriMesh m = merge(a, b);
    const auto t = precompute_transport(m, geometry::Bvh(m), analytic_field(smooth_color), make_direction_set(8, 8));
    const auto sg = random_sg(3, 4);
    int vis = 0, occ = 0;
    for (int v = 0; v < t.vertices; ++v)
        for (std::size_t k = 0; k < t.omega.size(); ++k) {
            const Rgb got = incident_radiance(t, sg, v, k);
            const std::size_t i = static_cast<std::size_t>(v) * t.omega.size() + k;
            Rgb want;
            if (t.vis[i]) {
                want = shading::sg_eval(sg, t.omega.dirs[k]);
                ++vis;
            } else {
                want = Rgb(t.l_ind[3 * i], t.l_ind[3 * i + 1], t.l_ind[3 * i + 2]);
                ++occ;
            }
            EXPECT_TRUE((got == want).all());
        }
    EXPECT_GT(vis, 0);
    EXPECT_GT(occ, 0);
}

// ---------------------------------------------------------------------------

namespace {

// Tables for a single vertex with normal n and uniform visibility / indirect radiance.
TransportTables flat_tables(const DirectionSet& omega, bool visible, double indirect) {
    TransportTables t;
    t.vertices = 1;
    t.omega = omega;
    t.vis.assign(omega.size(), visible ? 1 : 0);
    t.l_ind.assign(3 * omega.size(), visible ? 0.0f : static_cast<float>(indirect));
    return t;
}

TriMesh single_vertex(const Vec3& n, const Rgb& albedo, double roughness) {
    TriMesh m;
    m.vertices = {Vec3::Zero()};
    m.normals = {n.normalized()};
    m.albedo = {albedo};
    m.roughness = {roughness};
    return m;
}

}  // namespace

TEST(CoarseRender, ZeroEnvironmentGivesZero) {
    const auto omega = make_direction_set();
    const TriMesh m = single_vertex(Vec3(0.2, 0.3, 0.9), Rgb::Constant(0.7), 0.4);
    shading::SgMixture dark{{Vec3::UnitZ(), 0.0, Rgb::Zero()}};
    EXPECT_TRUE((coarse_render(m, flat_tables(omega, true, 0), dark, 0, Vec3(0.2, 0.3, 0.9).normalized()) == 0.0).all());
    EXPECT_THROW(coarse_render(m, flat_tables(omega, true, 0), dark, 0, -Vec3::UnitZ()), ArgumentError);
}

TEST(CoarseRender, DiffuseFurnace) {
    const auto omega = make_direction_set();
    shading::SgMixture unit{{Vec3::UnitZ(), 0.0, Rgb::Ones()}};
    MaterialModel lambert{0.04, 0.0};
    Pcg32 rng(3);
    for (int i = 0; i < 30; ++i) {
        const Vec3 n = sample_uniform_sphere(rng.uniform2());
        const Rgb c(0.2 + 0.7 * rng.uniform(), 0.9 * rng.uniform(), 0.5);
        const TriMesh m = single_vertex(n, c, 0.5);
        const Vec3 wo = above(n, rng);
        const Rgb lit = coarse_render(m, flat_tables(omega, true, 0), unit, 0, wo, lambert);
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(lit[ch], c[ch], 0.03 * c[ch]);
        const Rgb occ = coarse_render(m, flat_tables(omega, false, 0.6), unit, 0, wo, lambert);
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(occ[ch], 0.6 * c[ch], 0.03 * 0.6 * c[ch]);
    }
}

TEST(CoarseRender, EnergyBoundLinearityAndNonNegativity) {
    const auto omega = make_direction_set();
    shading::SgMixture unit{{Vec3::UnitZ(), 0.0, Rgb::Ones()}};
    Pcg32 rng(9);
    for (int i = 0; i < 40; ++i) {
        const Vec3 n = sample_uniform_sphere(rng.uniform2());
        const double a = 0.3 + 0.6 * rng.uniform();
        const TriMesh m = single_vertex(n, Rgb::Constant(a), 0.3 + 0.7 * rng.uniform());
        const Vec3 wo = above(n, rng);
        const Rgb lit = coarse_render(m, flat_tables(omega, true, 0), unit, 0, wo);
        EXPECT_LE(lit[0], a + 0.05);

        auto sg = random_sg(4, 100 + static_cast<uint64_t>(i));
        const Rgb base = coarse_render(m, flat_tables(omega, true, 0), sg, 0, wo);
        EXPECT_TRUE((base >= 0.0).all());
        for (auto& l : sg) l.amplitude *= 2.0;
        EXPECT_TRUE((coarse_render(m, flat_tables(omega, true, 0), sg, 0, wo) == 2.0 * base).all());
    }
}

// ---------------------------------------------------------------------------

namespace {

struct SmallScene {
    TriMesh mesh;
    TransportTables tables;
    shading::SgMixture sg;
    std::vector<TeacherSample> samples;
    shading::BackgroundObservation bg;
};

SmallScene small_scene() {
    SmallScene s;
    s.mesh = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 3, 4);
    EXPECT_EQ(s.mesh.vertex_count(), 10u);
    set_materials(s.mesh, 21);
    s.tables = precompute_transport(s.mesh, geometry::Bvh(s.mesh), analytic_field(smooth_color), make_direction_set(8, 8));
    // Occlude a few above-horizon entries to exercise the indirect branch.
    Pcg32 rng(5);
    for (std::size_t i = 0; i < s.tables.vis.size(); ++i)
        if (s.tables.vis[i] && rng.uniform() < 0.2) {
            s.tables.vis[i] = 0;
            for (int c = 0; c < 3; ++c) s.tables.l_ind[3 * i + c] = static_cast<float>(rng.uniform());
        }
    s.sg = random_sg(4, 17);
    for (int v = 0; v < 10; ++v) {
        const Vec3 wo = above(s.mesh.normals[static_cast<std::size_t>(v)], rng);
        s.samples.push_back({v, wo, Rgb(rng.uniform(), rng.uniform(), rng.uniform())});
    }
    s.bg.env = shading::EnvMap(8, 4);
    s.bg.coverage = ImageBuffer(8, 4, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 8; ++x)
            if ((x + y) % 3 != 0) {
                s.bg.coverage.at(x, y) = 1.0;
                s.bg.env.image.set_rgb(x, y, Rgb(rng.uniform(), rng.uniform(), rng.uniform()) * 2.0);
            }
    return s;
}

}  // namespace

TEST(DistillLossesTest, Examples) {
    SmallScene s = small_scene();
    const DistillWeights w;
    const MaterialModel model;
    for (auto& smp : s.samples) smp.target = coarse_render(s.mesh, s.tables, s.sg, smp.vertex, smp.wo, model);
    EXPECT_EQ(distill_losses(s.mesh, s.tables, s.sg, s.samples, nullptr, w, model, nullptr).distill, 0.0);

    TriMesh flat = s.mesh;
    std::fill(flat.albedo.begin(), flat.albedo.end(), Rgb(0.3, 0.4, 0.5));
    std::fill(flat.roughness.begin(), flat.roughness.end(), 0.6);
    EXPECT_EQ(distill_losses(flat, s.tables, s.sg, s.samples, nullptr, w, model, nullptr).v_reg, 0.0);

    // Background built from the mixture itself matches exactly on covered texels.
    shading::BackgroundObservation bg = s.bg;
    bg.env = shading::envmap_from_sg(s.sg, 8, 4);
    EXPECT_EQ(distill_losses(s.mesh, s.tables, s.sg, s.samples, &bg, w, model, nullptr).bg, 0.0);
    const double delta = 0.0625;
    ASSERT_EQ(bg.coverage.at(1, 0), 1.0);
    bg.env.image.set_rgb(1, 0, bg.env.texel(1, 0) + delta);
    const auto l = distill_losses(s.mesh, s.tables, s.sg, s.samples, &bg, w, model, nullptr);
    EXPECT_NEAR(l.bg, 3 * delta, 1e-15);
    EXPECT_NEAR(l.total, l.distill + 0.1 * l.v_reg + 10 * l.bg, 1e-12);
}

TEST(DistillLossesTest, VertexRegularizerMatchesEdgeSum) {
    SmallScene s = small_scene();
    double want = 0;
    for (const auto& [a, b] : geometry::mesh_edges(s.mesh))
        want += (s.mesh.albedo[static_cast<std::size_t>(a)] - s.mesh.albedo[static_cast<std::size_t>(b)]).abs().sum() +
                std::abs(s.mesh.roughness[static_cast<std::size_t>(a)] - s.mesh.roughness[static_cast<std::size_t>(b)]);
    EXPECT_NEAR(distill_losses(s.mesh, s.tables, s.sg, s.samples, nullptr, {}, {}, nullptr).v_reg, want, 1e-12 * want);
}

TEST(DistillLossesTest, GradientsMatchFiniteDifferences) {
    SmallScene s = small_scene();
    const DistillWeights w;
    const MaterialModel model;
    DistillGradient g;
    distill_losses(s.mesh, s.tables, s.sg, s.samples, &s.bg, w, model, &g);
    auto total = [&](const TriMesh& m, const shading::SgMixture& sg) {
        return distill_losses(m, s.tables, sg, s.samples, &s.bg, w, model, nullptr).total;
    };
    const double h = 1e-6;
    auto check = [&](double analytic, double fd, const std::string& what) {
        EXPECT_LE(std::abs(analytic - fd), 1e-3 * std::max(std::abs(fd), 1e-2)) << what << " analytic " << analytic << " fd " << fd;
    };
    for (std::size_t v = 0; v < 10; ++v) {
        for (int c = 0; c < 3; ++c) {
            TriMesh p = s.mesh, q = s.mesh;
            p.albedo[v][c] += h;
            q.albedo[v][c] -= h;
            check(g.albedo[v][c], (total(p, s.sg) - total(q, s.sg)) / (2 * h), "albedo " + std::to_string(v));
        }
        TriMesh p = s.mesh, q = s.mesh;
        p.roughness[v] += h;
        q.roughness[v] -= h;
        check(g.roughness[v], (total(p, s.sg) - total(q, s.sg)) / (2 * h), "roughness " + std::to_string(v));
    }
    const auto flat = shading::sg_flatten(s.sg);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        auto a = flat, b = flat;
        a[i] += h;
        b[i] -= h;
        shading::SgMixture sa, sb;
        shading::sg_unflatten(sa, a);
        shading::sg_unflatten(sb, b);
        check(g.sg[i], (total(s.mesh, sa) - total(s.mesh, sb)) / (2 * h), "sg " + std::to_string(i));
    }
}

// ---------------------------------------------------------------------------

TEST(InitMaterials, MedianOfFieldAndFixedRoughness) {
    TriMesh m = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 4, 6);
    const auto omega = make_direction_set();
    init_materials(m, analytic_field([](const Vec3&, const Vec3&) { return Rgb(0.3, 0.6, 0.9); }), omega);
    for (std::size_t v = 0; v < m.vertex_count(); ++v) {
        EXPECT_TRUE(m.albedo[v].isApprox(Rgb(0.3, 0.6, 0.9), 1e-15));
        EXPECT_EQ(m.roughness[v], 0.25);
    }
    init_materials(m, analytic_field([](const Vec3&, const Vec3&) { return Rgb::Constant(3.0); }), omega);
    EXPECT_EQ(m.albedo[0][0], kMaxAlbedo);
    EXPECT_LT(m.albedo[0][0], 1.0);
}

TEST(InitMaterials, HalfAndHalfUsesLowerMedian) {
    TriMesh m = single_vertex(Vec3::UnitZ(), Rgb::Zero(), 0.1);
    const auto omega = make_direction_set();
    auto f = [](const Vec3&, const Vec3& v) { return Rgb::Constant(-v.x() > 0 ? 0.2 : 0.8); };
    init_materials(m, analytic_field(f), omega);
    std::vector<double> vals;
    for (const auto& w : omega.dirs)
        if (w.z() > 0) vals.push_back(f(Vec3::Zero(), -w)[0]);
    std::sort(vals.begin(), vals.end());
    EXPECT_EQ(vals.size() % 2, 0u);
    EXPECT_EQ(m.albedo[0][0], vals[(vals.size() - 1) / 2]);
    EXPECT_EQ(m.albedo[0][0], 0.2);
    EXPECT_EQ(m.roughness[0], 0.25);

    DirectionSet below;
    below.dirs = {-Vec3::UnitZ()};
    below.weights = {4 * kPi};
    init_materials(m, analytic_field(f), below);
    EXPECT_TRUE(m.albedo[0].isApprox(Rgb::Constant(0.5)));
}

// ---------------------------------------------------------------------------

namespace {

// Teacher rendering a sphere with known materials and lighting, using an
// independent evaluation of the reflection sum with the analytic normal.
RadianceField sphere_teacher(const shading::SgMixture& env, const DirectionSet& omega, double roughness) {
    auto albedo = [](const Vec3& x) {
        return Rgb(0.5 + 0.3 * std::sin(4 * x.x()), 0.4 + 0.2 * x.y(), 0.6 - 0.25 * x.z());
    };
    return analytic_field([=](const Vec3& x, const Vec3& v) {
        const Vec3 n = x.normalized();
        const Vec3 wo = -v;
        shading::BrdfParams p;
        p.albedo = albedo(x);
        p.roughness = roughness;
        Rgb sum = Rgb::Zero();
        for (std::size_t k = 0; k < omega.size(); ++k) {
            const double c = n.dot(omega.dirs[k]);
            if (c > 0) sum += omega.weights[k] * shading::sg_eval(env, omega.dirs[k]) * shading::brdf_eval(p, n, omega.dirs[k], wo) * c;
        }
        return sum;
    });
}

}  // namespace

TEST(TrainDistill, DeterministicAndDecreasing) {
    TriMesh m = geometry::make_uv_sphere(Vec3::Zero(), 0.5, 5, 8);
    const auto omega = make_direction_set(8, 8);
    const shading::SgMixture env{{Vec3(0.3, 0.9, 0.2).normalized(), 3.0, Rgb(1.5, 1.3, 1.0)},
                                 {Vec3::UnitY(), 0.0, Rgb::Constant(0.3)}};
    const auto teacher = sphere_teacher(env, omega, 0.3);
    const auto tables = precompute_transport(m, geometry::Bvh(m), teacher, omega);
    init_materials(m, teacher, omega);
    const shading::BackgroundObservation bg{shading::envmap_from_sg(env, 16, 8), ImageBuffer(16, 8, 1, 1.0)};
    Stage2Config cfg;
    cfg.iterations = 300;
    cfg.sg_lobes = 64;
    std::vector<double> totals;
    const auto r1 = train_distill(m, tables, teacher, &bg, cfg, {}, [&](const Stage2LogRow& r) { totals.push_back(r.losses.total); });
    const auto r2 = train_distill(m, tables, teacher, &bg, cfg);
    ASSERT_EQ(totals.size(), 301u);
    EXPECT_LT(totals.back(), 0.5 * totals.front());
    for (std::size_t v = 0; v < m.vertex_count(); ++v) EXPECT_TRUE((r1.mesh.albedo[v] == r2.mesh.albedo[v]).all());
    EXPECT_EQ(r1.mesh.roughness, r2.mesh.roughness);
    EXPECT_EQ(shading::sg_flatten(r1.sg), shading::sg_flatten(r2.sg));
    for (std::size_t v = 0; v < m.vertex_count(); ++v) {
        EXPECT_TRUE((r1.mesh.albedo[v] >= 0.0).all() && (r1.mesh.albedo[v] < 1.0).all());
        EXPECT_GE(r1.mesh.roughness[v], shading::kMinRoughness);
    }
    TriMesh bare = m;
    bare.albedo.clear();
    EXPECT_THROW(train_distill(bare, tables, teacher, nullptr, cfg), ArgumentError);
}
