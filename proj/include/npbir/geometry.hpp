// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"
#include "npbir/grid_field.hpp"
#include "npbir/image.hpp"

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace npbir::geometry {

using Tri = std::array<int, 3>;

// Indexed triangle mesh. Texture coordinates are stored per corner:
// uv_triangles[f][c] indexes `uvs` for corner c of triangle f, so charts may
// be cut along any edge while positions stay shared.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Tri> triangles;
    std::vector<Vec3> normals;  // per vertex, unit
    std::vector<Vec2> uvs;
    std::vector<Tri> uv_triangles;
    std::vector<Rgb> albedo;        // optional per vertex, in [0,1)
    std::vector<double> roughness;  // optional per vertex, > 0

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t triangle_count() const { return triangles.size(); }
    bool empty() const { return triangles.empty(); }
    bool has_uvs() const { return !uv_triangles.empty(); }
    bool has_materials() const { return albedo.size() == vertices.size() && roughness.size() == vertices.size(); }

    // Cross product of the edges (length = twice the area).
    Vec3 face_cross(std::size_t f) const {
        const auto& t = triangles[f];
        return (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    }
    double face_area(std::size_t f) const { return 0.5 * face_cross(f).norm(); }
    Vec2 corner_uv(std::size_t f, int c) const { return uvs[uv_triangles[f][c]]; }
    Box3 bounds() const;

    // Throws ArgumentError on out-of-range indices or mismatched attribute sizes.
    void validate() const;
};

// Iso-surface of a single-channel grid. Triangles face toward larger values.
TriMesh marching_cubes(const grid::VoxelGrid& grid, double iso = 0.0);

// Merges vertices closer than `tol`, drops degenerate triangles and unused vertices.
void weld_and_clean(TriMesh& mesh, double tol);

// Edge-connected component with the most triangles (the lowest vertex index
// wins ties), compacted.
TriMesh largest_component(const TriMesh& mesh);

// Unit normals from the SDF gradient; area-weighted face normals where the
// gradient vanishes.
std::vector<Vec3> vertex_normals_from_sdf(const TriMesh& mesh, const grid::VoxelGrid& grid);
std::vector<Vec3> area_weighted_normals(const TriMesh& mesh);

// Unique undirected edges (i < j), sorted.
std::vector<std::pair<int, int>> mesh_edges(const TriMesh& mesh);
// Every undirected edge used by exactly two triangles with opposite directions.
bool is_watertight(const TriMesh& mesh);
double signed_volume(const TriMesh& mesh);

// ---------------------------------------------------------------------------
// Textures

// Bilinear lookup, texel (x, y) centred at ((x+0.5)/W, (y+0.5)/H), clamped to
// the edge. The stencil lists the four texels and weights.
struct TexelStencil {
    std::array<std::size_t, 4> texel{};
    std::array<double, 4> weight{};
};
TexelStencil texel_stencil(int width, int height, const Vec2& uv);
Rgb sample_bilinear(const ImageBuffer& tex, const Vec2& uv);
double sample_bilinear_scalar(const ImageBuffer& tex, const Vec2& uv);

struct BakeResult {
    TriMesh mesh;              // input mesh with per-corner atlas uvs
    ImageBuffer albedo;        // 3 channels
    ImageBuffer roughness;     // 1 channel
    std::vector<int> owner;    // texel -> triangle covering its centre, or -1
    int cell = 0;              // chart cell size in texels
};

// One right-triangle chart per face in a k x k texel cell, corners on texel
// centres, then dilation of uncovered texels. Throws CapacityError when a
// cell would be smaller than 2 texels and ArgumentError without materials.
BakeResult uv_atlas_and_bake(const TriMesh& mesh, int texel_res);
// `minimum` doubled until the atlas cells of `triangles` faces span at least
// `min_cell` texels.
int atlas_resolution(std::size_t triangles, int minimum, int min_cell = 4);

// ---------------------------------------------------------------------------
// Ray casting

struct Hit {
    double t = 0.0;
    int triangle = -1;
    double b1 = 0.0, b2 = 0.0;  // weights of vertices 1 and 2
    Vec3 point = Vec3::Zero();
};

// Watertight ray/triangle test; returns t in (t_min, t_max) or nullopt.
std::optional<Hit> intersect_triangle(const TriMesh& mesh, int f, const Vec3& o, const Vec3& d, double t_min,
                                      double t_max);

class Bvh {
public:
    struct Node {
        Box3 box;
        int left = -1;   // child index, or -1 for a leaf
        int right = -1;
        int start = 0;   // leaf range into `order`
        int count = 0;
    };

    Bvh() = default;
    explicit Bvh(const TriMesh& mesh, int leaf_size = 4);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<int>& order() const { return order_; }
    bool empty() const { return nodes_.empty(); }

    std::optional<Hit> intersect(const TriMesh& mesh, const Vec3& o, const Vec3& d, double t_min,
                                 double t_max = kInf) const;
    bool occluded(const TriMesh& mesh, const Vec3& o, const Vec3& d, double t_min, double t_max) const;

private:
    int build(const TriMesh& mesh, const std::vector<Box3>& boxes, const std::vector<Vec3>& centroids, int begin,
              int end, int leaf_size);
    std::vector<Node> nodes_;
    std::vector<int> order_;
};

// Nearest hit with t > t_min. Throws ArgumentError for a non-unit direction.
std::optional<Hit> ray_cast(const Bvh& bvh, const TriMesh& mesh, const Vec3& origin, const Vec3& dir,
                            double t_min = 0.0);
std::optional<Hit> ray_cast_brute_force(const TriMesh& mesh, const Vec3& origin, const Vec3& dir,
                                        double t_min = 0.0);

// ---------------------------------------------------------------------------
// Point sets

class KdTree {
public:
    KdTree() = default;
    explicit KdTree(std::vector<Vec3> points);
    // Index and squared distance of the nearest point. Requires a non-empty tree.
    std::pair<std::size_t, double> nearest(const Vec3& q) const;
    std::size_t size() const { return points_.size(); }

private:
    struct Node {
        int axis = 0;
        int left = -1, right = -1;
        std::size_t point = 0;
    };
    int build(std::vector<std::size_t>& idx, std::size_t b, std::size_t e, int depth);
    void search(int node, const Vec3& q, std::size_t& best, double& best_d2) const;
    std::vector<Vec3> points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|); squared distances when
// `squared`. Throws ArgumentError for an empty set.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b, bool squared = false);

// Area-uniform surface samples.
std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, uint64_t seed);

// ---------------------------------------------------------------------------
// IO

void write_obj(const std::string& path, const TriMesh& mesh);
TriMesh read_obj(const std::string& path);
// Binary "NPBM" format; bit-exact round trip of every field.
void save_mesh(const std::string& path, const TriMesh& mesh);
TriMesh load_mesh(const std::string& path);

// UV sphere (for tests and toy scenes), outward facing.
TriMesh make_uv_sphere(const Vec3& center, double radius, int stacks, int slices);

}  // namespace npbir::geometry
