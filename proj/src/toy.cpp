// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/toy.hpp"

#include "npbir/sampling.hpp"
#include "npbir/volume_render.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

namespace npbir::toy {

Kind parse_kind(const std::string& name) {
    if (name == "sphere") return Kind::Sphere;
    if (name == "two-spheres") return Kind::TwoSpheres;
    if (name == "textured-plane") return Kind::TexturedPlane;
    throw ArgumentError("unknown toy scene \"" + name + "\" (expected sphere, two-spheres or textured-plane)");
}

std::string kind_name(Kind kind) {
    switch (kind) {
        case Kind::Sphere: return "sphere";
        case Kind::TwoSpheres: return "two-spheres";
        case Kind::TexturedPlane: return "textured-plane";
    }
    return "sphere";
}

shading::SgMixture toy_sky() {
    shading::SgMixture mix;
    mix.push_back({Vec3(0, 1, 0), 1.5, Rgb(0.55, 0.65, 0.85)});
    mix.push_back({Vec3(0, -1, 0), 1.5, Rgb(0.30, 0.25, 0.20)});
    mix.push_back({Vec3(0.5, 0.75, 0.45).normalized(), 40.0, Rgb(9.0, 8.0, 6.5)});
    return mix;
}

geometry::TriMesh make_quad(const Vec3& origin, const Vec3& u, const Vec3& v, int n) {
    if (n < 1) throw ArgumentError("make_quad: n must be >= 1");
    geometry::TriMesh m;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) m.vertices.push_back(origin + u * (double(i) / n) + v * (double(j) / n));
    auto id = [&](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    const Vec3 nrm = u.cross(v).normalized();
    m.normals.assign(m.vertices.size(), nrm);
    return m;
}

geometry::TriMesh merge_meshes(const geometry::TriMesh& a, const geometry::TriMesh& b) {
    geometry::TriMesh m = a;
    const int off = static_cast<int>(a.vertices.size());
    m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
    m.normals.insert(m.normals.end(), b.normals.begin(), b.normals.end());
    m.albedo.insert(m.albedo.end(), b.albedo.begin(), b.albedo.end());
    m.roughness.insert(m.roughness.end(), b.roughness.begin(), b.roughness.end());
    for (auto t : b.triangles) m.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
    return m;
}

Rgb sphere_albedo(const Vec3& x) {
    return Rgb(0.5 + 0.3 * std::sin(4.0 * x.x()), 0.4 + 0.2 * x.y(), 0.6 - 0.25 * x.z());
}

namespace {

void paint(geometry::TriMesh& m, const std::function<Rgb(const Vec3&)>& albedo,
           const std::function<double(const Vec3&)>& roughness) {
    m.albedo.resize(m.vertex_count());
    m.roughness.resize(m.vertex_count());
    for (std::size_t v = 0; v < m.vertex_count(); ++v) {
        m.albedo[v] = albedo(m.vertices[v]);
        m.roughness[v] = roughness(m.vertices[v]);
    }
}

}  // namespace

pbir::TexturedAssets make_toy_assets(Kind kind, int texel_res) {
    geometry::TriMesh mesh;
    switch (kind) {
        case Kind::Sphere:
            mesh = geometry::make_uv_sphere(Vec3::Zero(), 1.0, 16, 32);
            paint(mesh, sphere_albedo, [](const Vec3& x) { return 0.35 + 0.1 * std::sin(3.0 * x.y()); });
            break;
        case Kind::TwoSpheres: {
            auto a = geometry::make_uv_sphere(Vec3(-0.55, 0, 0), 0.5, 12, 24);
            auto b = geometry::make_uv_sphere(Vec3(0.55, 0, 0), 0.5, 12, 24);
            paint(a, [](const Vec3& x) { return Rgb(0.75, 0.35 + 0.2 * x.y(), 0.2); },
                  [](const Vec3&) { return 0.3; });
            paint(b, [](const Vec3& x) { return Rgb(0.2, 0.45, 0.7 + 0.1 * x.y()); },
                  [](const Vec3&) { return 0.6; });
            mesh = merge_meshes(a, b);
            break;
        }
        case Kind::TexturedPlane: {
            auto floor = make_quad(Vec3(-1, 0, -1), Vec3(0, 0, 2), Vec3(2, 0, 0), 16);
            auto wall = make_quad(Vec3(1, 0, -1), Vec3(0, 0, 2), Vec3(0, 1.5, 0), 8);
            paint(floor,
                  [](const Vec3& x) {
                      const double s = std::sin(3.0 * x.x()) * std::sin(3.0 * x.z());
                      return Rgb(0.55 + 0.25 * s, 0.55 + 0.25 * s, 0.5 + 0.2 * s);
                  },
                  [](const Vec3&) { return 0.8; });
            paint(wall, [](const Vec3&) { return Rgb(0.85, 0.08, 0.06); }, [](const Vec3&) { return 0.9; });
            mesh = merge_meshes(floor, wall);
            break;
        }
    }
    return pbir::assets_from_vertices(mesh, toy_sky(), geometry::atlas_resolution(mesh.triangle_count(), texel_res));
}

std::vector<Camera> orbit_cameras(int count, int width, int height, double distance, double fov_y_deg,
                                  const Vec3& target, double min_elevation_deg, double max_elevation_deg) {
    if (count < 1) throw ArgumentError("orbit_cameras: count must be >= 1");
    std::vector<Camera> cams;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.5 : double(i) / (count - 1);
        const double el = (min_elevation_deg + t * (max_elevation_deg - min_elevation_deg)) * kPi / 180.0;
        const double az = golden * i;
        const Vec3 dir(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
        cams.push_back(Camera::look_at(target + distance * dir, target, Vec3(0, 1, 0), fov_y_deg, width, height));
    }
    return cams;
}

std::vector<Camera> toy_cameras(Kind kind, int count, int width, int height) {
    switch (kind) {
        case Kind::Sphere: return orbit_cameras(count, width, height, 3.5, 40.0, Vec3::Zero(), -30.0, 50.0);
        case Kind::TwoSpheres: return orbit_cameras(count, width, height, 4.0, 40.0, Vec3::Zero(), -20.0, 50.0);
        case Kind::TexturedPlane: {
            auto cams = orbit_cameras(count, width, height, 3.2, 45.0, Vec3(0, 0.3, 0), 25.0, 60.0);
            // Keep the wall's lit side in view: stay on the -x half.
            for (auto& c : cams)
                if (c.position.x() > 0.0) {
                    Vec3 p = c.position;
                    p.x() = -p.x();
                    c = Camera::look_at(p, Vec3(0, 0.3, 0), Vec3(0, 1, 0), 45.0, width, height);
                }
            return cams;
        }
    }
    return {};
}

PosedDataset render_dataset(const pbir::TexturedAssets& assets, const std::vector<Camera>& cameras,
                            const pbir::RenderConfig& cfg, int mask_supersample) {
    PosedDataset ds;
    const geometry::Bvh bvh(assets.mesh);
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        View v;
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03zu", i);
        v.name = name;
        v.camera = cameras[i];
        pbir::RenderConfig c = cfg;
        c.seed = hash_combine(cfg.seed, i);
        v.image = pbir::path_trace(assets, cameras[i], c);
        v.mask = volren::render_mask(assets.mesh, bvh, cameras[i], mask_supersample);
        v.split = (i % 3 == 2) ? "test" : "train";
        ds.views.push_back(std::move(v));
    }
    return ds;
}

}  // namespace npbir::toy
