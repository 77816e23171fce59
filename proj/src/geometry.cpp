// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/geometry.hpp"

#include "npbir/binary_io.hpp"
#include "npbir/sampling.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace npbir::geometry {

namespace {
#include "mc_tables.inc"

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
}  // namespace

Box3 TriMesh::bounds() const {
    Box3 b = Box3::empty();
    for (const auto& v : vertices) b.expand(v);
    return b;
}

void TriMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles)
        for (int i : t)
            if (i < 0 || i >= n) throw ArgumentError("mesh: triangle index out of range");
    if (!normals.empty() && normals.size() != vertices.size())
        throw ArgumentError("mesh: normal count differs from vertex count");
    if (!uv_triangles.empty()) {
        if (uv_triangles.size() != triangles.size()) throw ArgumentError("mesh: uv triangle count mismatch");
        const int m = static_cast<int>(uvs.size());
        for (const auto& t : uv_triangles)
            for (int i : t)
                if (i < 0 || i >= m) throw ArgumentError("mesh: uv index out of range");
    }
    if (!albedo.empty() && albedo.size() != vertices.size()) throw ArgumentError("mesh: albedo count mismatch");
    if (!roughness.empty() && roughness.size() != vertices.size())
        throw ArgumentError("mesh: roughness count mismatch");
}

// ---------------------------------------------------------------------------

TriMesh marching_cubes(const grid::VoxelGrid& grid, double iso) {
    if (grid.channels() != 1) throw ArgumentError("marching_cubes: expects a single-channel grid");
    const auto& r = grid.resolution();
    TriMesh mesh;
    std::vector<int> edge_vertex(grid.point_count() * 3, -1);

    auto vertex_on_edge = [&](int i, int j, int k, int e) {
        const int* a = kCorner[kEdge[e][0]];
        const int* b = kCorner[kEdge[e][1]];
        const int ai = i + a[0], aj = j + a[1], ak = k + a[2];
        const int bi = i + b[0], bj = j + b[1], bk = k + b[2];
        const int axis = ai != bi ? 0 : (aj != bj ? 1 : 2);
        const std::size_t lo = grid.point_index(std::min(ai, bi), std::min(aj, bj), std::min(ak, bk));
        int& slot = edge_vertex[lo * 3 + axis];
        if (slot >= 0) return slot;
        const double va = grid.at(ai, aj, ak), vb = grid.at(bi, bj, bk);
        const double t = std::clamp((iso - va) / (vb - va), 0.0, 1.0);
        const Vec3 pa = grid.point_position(ai, aj, ak), pb = grid.point_position(bi, bj, bk);
        slot = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(pa + t * (pb - pa));
        return slot;
    };

    for (int k = 0; k + 1 < r[2]; ++k)
        for (int j = 0; j + 1 < r[1]; ++j)
            for (int i = 0; i + 1 < r[0]; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c)
                    if (grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < iso) cube |= 1 << c;
                if (cube == 0 || cube == 255) continue;
                const signed char* row = kTriTable[cube];
                for (int t = 0; row[t] >= 0; t += 3) {
                    const int v0 = vertex_on_edge(i, j, k, row[t]);
                    const int v1 = vertex_on_edge(i, j, k, row[t + 1]);
                    const int v2 = vertex_on_edge(i, j, k, row[t + 2]);
                    mesh.triangles.push_back({v0, v2, v1});
                }
            }
    if (!mesh.empty()) weld_and_clean(mesh, 1e-7 * grid.bbox().diagonal());
    return mesh;
}

void weld_and_clean(TriMesh& mesh, double tol) {
    const std::size_t n = mesh.vertices.size();
    std::vector<int> remap(n);
    if (tol > 0) {
        std::map<std::array<long long, 3>, int> cells;
        for (std::size_t v = 0; v < n; ++v) {
            const Vec3& p = mesh.vertices[v];
            const std::array<long long, 3> key{std::llround(p.x() / tol), std::llround(p.y() / tol),
                                               std::llround(p.z() / tol)};
            auto [it, inserted] = cells.emplace(key, static_cast<int>(v));
            remap[v] = it->second;
        }
    } else {
        std::iota(remap.begin(), remap.end(), 0);
    }

    std::vector<Tri> tris;
    std::vector<Tri> uv_tris;
    const double diag = std::max(mesh.bounds().diagonal(), 1e-300);
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        Tri t = mesh.triangles[f];
        for (int& i : t) i = remap[static_cast<std::size_t>(i)];
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        const Vec3 c = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        if (!(c.norm() > 1e-24 * diag * diag)) continue;
        tris.push_back(t);
        if (mesh.has_uvs()) uv_tris.push_back(mesh.uv_triangles[f]);
    }

    std::vector<int> compact(n, -1);
    TriMesh out;
    out.uvs = mesh.uvs;
    for (auto& t : tris)
        for (int& i : t) {
            if (compact[static_cast<std::size_t>(i)] < 0) {
                compact[static_cast<std::size_t>(i)] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[static_cast<std::size_t>(i)]);
                if (!mesh.normals.empty()) out.normals.push_back(mesh.normals[static_cast<std::size_t>(i)]);
                if (!mesh.albedo.empty()) out.albedo.push_back(mesh.albedo[static_cast<std::size_t>(i)]);
                if (!mesh.roughness.empty()) out.roughness.push_back(mesh.roughness[static_cast<std::size_t>(i)]);
            }
            i = compact[static_cast<std::size_t>(i)];
        }
    out.triangles = std::move(tris);
    out.uv_triangles = std::move(uv_tris);
    mesh = std::move(out);
}

std::vector<Vec3> area_weighted_normals(const TriMesh& mesh) {
    std::vector<Vec3> n(mesh.vertices.size(), Vec3::Zero());
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const Vec3 c = mesh.face_cross(f);
        for (int i : mesh.triangles[f]) n[static_cast<std::size_t>(i)] += c;
    }
    for (auto& v : n) v = v.norm() > 0 ? Vec3(v.normalized()) : Vec3::UnitZ();
    return n;
}

TriMesh largest_component(const TriMesh& mesh) {
    std::vector<int> parent(mesh.vertex_count());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x)
            x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        return x;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    };
    for (const auto& t : mesh.triangles) {
        unite(t[0], t[1]);
        unite(t[1], t[2]);
    }
    std::vector<std::size_t> count(mesh.vertex_count(), 0);
    for (const auto& t : mesh.triangles) ++count[static_cast<std::size_t>(find(t[0]))];
    const auto best = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
    TriMesh out = mesh;
    out.triangles.clear();
    out.uv_triangles.clear();
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f)
        if (find(mesh.triangles[f][0]) == best) {
            out.triangles.push_back(mesh.triangles[f]);
            if (mesh.has_uvs()) out.uv_triangles.push_back(mesh.uv_triangles[f]);
        }
    weld_and_clean(out, 0.0);
    return out;
}

std::vector<Vec3> vertex_normals_from_sdf(const TriMesh& mesh, const grid::VoxelGrid& grid) {
    const auto fallback = area_weighted_normals(mesh);
    std::vector<Vec3> n(mesh.vertices.size());
    const Box3& b = grid.bbox();
    for (std::size_t v = 0; v < n.size(); ++v) {
        const Vec3 x = mesh.vertices[v].cwiseMax(b.lo).cwiseMin(b.hi);
        const Vec3 g = grid::sdf_gradient(grid, x);
        n[v] = g.norm() < 1e-8 ? fallback[v] : Vec3(g.normalized());
    }
    return n;
}

std::vector<std::pair<int, int>> mesh_edges(const TriMesh& mesh) {
    std::vector<std::pair<int, int>> e;
    e.reserve(mesh.triangles.size() * 3);
    for (const auto& t : mesh.triangles)
        for (int c = 0; c < 3; ++c) {
            const int a = t[c], b = t[(c + 1) % 3];
            e.emplace_back(std::min(a, b), std::max(a, b));
        }
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    return e;
}

bool is_watertight(const TriMesh& mesh) {
    if (mesh.empty()) return false;
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : mesh.triangles)
        for (int c = 0; c < 3; ++c) ++directed[{t[c], t[(c + 1) % 3]}];
    for (const auto& [e, count] : directed) {
        if (count != 1) return false;
        auto it = directed.find({e.second, e.first});
        if (it == directed.end() || it->second != 1) return false;
    }
    return true;
}

double signed_volume(const TriMesh& mesh) {
    double v = 0.0;
    for (const auto& t : mesh.triangles)
        v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
    return v / 6.0;
}

// ---------------------------------------------------------------------------

TexelStencil texel_stencil(int width, int height, const Vec2& uv) {
    const double x = uv.x() * width - 0.5, y = uv.y() * height - 0.5;
    const double fx = std::floor(x), fy = std::floor(y);
    const double tx = x - fx, ty = y - fy;
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    auto cx = [&](int v) { return std::clamp(v, 0, width - 1); };
    auto cy = [&](int v) { return std::clamp(v, 0, height - 1); };
    TexelStencil s;
    const int xs[2] = {cx(x0), cx(x0 + 1)}, ys[2] = {cy(y0), cy(y0 + 1)};
    for (int b = 0; b < 4; ++b) {
        const int dx = b & 1, dy = b >> 1;
        s.texel[b] = static_cast<std::size_t>(ys[dy]) * width + xs[dx];
        s.weight[b] = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty);
    }
    return s;
}

Rgb sample_bilinear(const ImageBuffer& tex, const Vec2& uv) {
    const auto s = texel_stencil(tex.width, tex.height, uv);
    Rgb out = Rgb::Zero();
    for (int b = 0; b < 4; ++b) {
        const double* p = tex.data.data() + s.texel[b] * tex.channels;
        out += s.weight[b] * (tex.channels == 1 ? Rgb::Constant(p[0]) : Rgb(p[0], p[1], p[2]));
    }
    return out;
}

double sample_bilinear_scalar(const ImageBuffer& tex, const Vec2& uv) {
    const auto s = texel_stencil(tex.width, tex.height, uv);
    double out = 0.0;
    for (int b = 0; b < 4; ++b) out += s.weight[b] * tex.data[s.texel[b] * tex.channels];
    return out;
}

int atlas_resolution(std::size_t triangles, int minimum, int min_cell) {
    const int per_row = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(triangles)))));
    int res = std::max(minimum, 2);
    while (res / per_row < min_cell) res *= 2;
    return res;
}

BakeResult uv_atlas_and_bake(const TriMesh& mesh, int texel_res) {
    if (!mesh.has_materials()) throw ArgumentError("uv_atlas_and_bake: mesh needs per-vertex albedo and roughness");
    if (texel_res < 2) throw CapacityError("uv_atlas_and_bake: texture too small");
    const std::size_t F = mesh.triangles.size();
    const int per_row = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(F)))));
    const int k = texel_res / per_row;
    if (k < 2) throw CapacityError("uv_atlas_and_bake: texel_res too small to pack every triangle");

    BakeResult res;
    res.cell = k;
    res.mesh = mesh;
    res.albedo = ImageBuffer(texel_res, texel_res, 3);
    res.roughness = ImageBuffer(texel_res, texel_res, 1);
    res.owner.assign(static_cast<std::size_t>(texel_res) * texel_res, -1);
    res.mesh.uvs.resize(3 * F);
    res.mesh.uv_triangles.resize(F);
    const double inv = 1.0 / texel_res;
    auto uv_of = [&](int x, int y) { return Vec2((x + 0.5) * inv, (y + 0.5) * inv); };

    for (std::size_t f = 0; f < F; ++f) {
        const int x0 = static_cast<int>(f % per_row) * k, y0 = static_cast<int>(f / per_row) * k;
        const int fi = static_cast<int>(f);
        res.mesh.uvs[3 * f] = uv_of(x0, y0);
        res.mesh.uvs[3 * f + 1] = uv_of(x0 + k - 1, y0);
        res.mesh.uvs[3 * f + 2] = uv_of(x0, y0 + k - 1);
        res.mesh.uv_triangles[f] = {3 * fi, 3 * fi + 1, 3 * fi + 2};
        const auto& t = mesh.triangles[f];
        for (int j = 0; j < k; ++j)
            for (int i = 0; i + j < k; ++i) {
                const double b1 = static_cast<double>(i) / (k - 1), b2 = static_cast<double>(j) / (k - 1);
                const double b0 = 1.0 - b1 - b2;
                const int x = x0 + i, y = y0 + j;
                res.owner[static_cast<std::size_t>(y) * texel_res + x] = fi;
                res.albedo.set_rgb(x, y, b0 * mesh.albedo[t[0]] + b1 * mesh.albedo[t[1]] + b2 * mesh.albedo[t[2]]);
                res.roughness.at(x, y) = b0 * mesh.roughness[t[0]] + b1 * mesh.roughness[t[1]] + b2 * mesh.roughness[t[2]];
            }
    }

    // Breadth-first dilation from covered texels.
    std::vector<char> filled(res.owner.size(), 0);
    std::deque<std::size_t> queue;
    for (std::size_t p = 0; p < res.owner.size(); ++p)
        if (res.owner[p] >= 0) {
            filled[p] = 1;
            queue.push_back(p);
        }
    while (!queue.empty()) {
        const std::size_t p = queue.front();
        queue.pop_front();
        const int x = static_cast<int>(p % texel_res), y = static_cast<int>(p / texel_res);
        const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
        for (int n = 0; n < 4; ++n) {
            if (nx[n] < 0 || ny[n] < 0 || nx[n] >= texel_res || ny[n] >= texel_res) continue;
            const std::size_t q = static_cast<std::size_t>(ny[n]) * texel_res + nx[n];
            if (filled[q]) continue;
            filled[q] = 1;
            res.albedo.set_rgb(nx[n], ny[n], res.albedo.rgb(x, y));
            res.roughness.at(nx[n], ny[n]) = res.roughness.at(x, y);
            queue.push_back(q);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

std::optional<Hit> intersect_triangle(const TriMesh& mesh, int f, const Vec3& o, const Vec3& d, double t_min,
                                      double t_max) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(f)];
    int kz = 0;
    d.cwiseAbs().maxCoeff(&kz);
    int kx = (kz + 1) % 3, ky = (kx + 1) % 3;
    if (d[kz] < 0) std::swap(kx, ky);
    const double sx = d[kx] / d[kz], sy = d[ky] / d[kz], sz = 1.0 / d[kz];
    const Vec3 A = mesh.vertices[tri[0]] - o, B = mesh.vertices[tri[1]] - o, C = mesh.vertices[tri[2]] - o;
    const double ax = A[kx] - sx * A[kz], ay = A[ky] - sy * A[kz];
    const double bx = B[kx] - sx * B[kz], by = B[ky] - sy * B[kz];
    const double cx = C[kx] - sx * C[kz], cy = C[ky] - sy * C[kz];
    double U = cx * by - cy * bx, V = ax * cy - ay * cx, W = bx * ay - by * ax;
    if (U == 0.0 || V == 0.0 || W == 0.0) {
        const long double lu = static_cast<long double>(cx) * by - static_cast<long double>(cy) * bx;
        const long double lv = static_cast<long double>(ax) * cy - static_cast<long double>(ay) * cx;
        const long double lw = static_cast<long double>(bx) * ay - static_cast<long double>(by) * ax;
        U = static_cast<double>(lu);
        V = static_cast<double>(lv);
        W = static_cast<double>(lw);
    }
    if ((U < 0 || V < 0 || W < 0) && (U > 0 || V > 0 || W > 0)) return std::nullopt;
    const double det = U + V + W;
    if (det == 0.0) return std::nullopt;
    const double T = U * (sz * A[kz]) + V * (sz * B[kz]) + W * (sz * C[kz]);
    const double t = T / det;
    if (!(t > t_min && t < t_max)) return std::nullopt;
    Hit h;
    h.t = t;
    h.triangle = f;
    h.b1 = V / det;
    h.b2 = W / det;
    h.point = (U / det) * mesh.vertices[tri[0]] + h.b1 * mesh.vertices[tri[1]] + h.b2 * mesh.vertices[tri[2]];
    return h;
}

Bvh::Bvh(const TriMesh& mesh, int leaf_size) {
    const int F = static_cast<int>(mesh.triangles.size());
    if (F == 0) return;
    std::vector<Box3> boxes(static_cast<std::size_t>(F));
    std::vector<Vec3> centroids(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) {
        Box3 b = Box3::empty();
        for (int i : mesh.triangles[static_cast<std::size_t>(f)]) b.expand(mesh.vertices[static_cast<std::size_t>(i)]);
        boxes[static_cast<std::size_t>(f)] = b;
        centroids[static_cast<std::size_t>(f)] = b.center();
    }
    order_.resize(static_cast<std::size_t>(F));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(static_cast<std::size_t>(2 * F));
    build(mesh, boxes, centroids, 0, F, std::max(1, leaf_size));
}

int Bvh::build(const TriMesh& mesh, const std::vector<Box3>& boxes, const std::vector<Vec3>& centroids, int begin,
               int end, int leaf_size) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Box3 box = Box3::empty(), cbox = Box3::empty();
    for (int i = begin; i < end; ++i) {
        const auto f = static_cast<std::size_t>(order_[static_cast<std::size_t>(i)]);
        box.expand(boxes[f].lo);
        box.expand(boxes[f].hi);
        cbox.expand(centroids[f]);
    }
    nodes_[static_cast<std::size_t>(id)].box = box;
    if (end - begin <= leaf_size) {
        nodes_[static_cast<std::size_t>(id)].start = begin;
        nodes_[static_cast<std::size_t>(id)].count = end - begin;
        return id;
    }
    int axis = 0;
    cbox.extent().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double ca = centroids[static_cast<std::size_t>(a)][axis], cb = centroids[static_cast<std::size_t>(b)][axis];
        return ca < cb || (ca == cb && a < b);
    });
    const int left = build(mesh, boxes, centroids, begin, mid, leaf_size);
    const int right = build(mesh, boxes, centroids, mid, end, leaf_size);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

std::optional<Hit> Bvh::intersect(const TriMesh& mesh, const Vec3& o, const Vec3& d, double t_min,
                                  double t_max) const {
    if (nodes_.empty()) return std::nullopt;
    std::optional<Hit> best;
    double t_best = t_max;
    int stack[128];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[static_cast<std::size_t>(stack[--sp])];
        double a = t_min, b = t_best;
        if (!n.box.intersect(o, d, a, b)) continue;
        if (n.left < 0) {
            for (int i = n.start; i < n.start + n.count; ++i) {
                auto h = intersect_triangle(mesh, order_[static_cast<std::size_t>(i)], o, d, t_min, t_best);
                if (h && (!best || h->t < t_best || (h->t == t_best && h->triangle < best->triangle))) {
                    t_best = h->t;
                    best = h;
                }
            }
            continue;
        }
        stack[sp++] = n.right;
        stack[sp++] = n.left;
    }
    return best;
}

bool Bvh::occluded(const TriMesh& mesh, const Vec3& o, const Vec3& d, double t_min, double t_max) const {
    if (nodes_.empty()) return false;
    int stack[128];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[static_cast<std::size_t>(stack[--sp])];
        double a = t_min, b = t_max;
        if (!n.box.intersect(o, d, a, b)) continue;
        if (n.left < 0) {
            for (int i = n.start; i < n.start + n.count; ++i)
                if (intersect_triangle(mesh, order_[static_cast<std::size_t>(i)], o, d, t_min, t_max)) return true;
            continue;
        }
        stack[sp++] = n.right;
        stack[sp++] = n.left;
    }
    return false;
}

std::optional<Hit> ray_cast(const Bvh& bvh, const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min) {
    if (!is_unit(dir, 1e-6)) throw ArgumentError("ray_cast: direction must be unit length");
    return bvh.intersect(mesh, origin, dir, t_min);
}

std::optional<Hit> ray_cast_brute_force(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min) {
    std::optional<Hit> best;
    for (int f = 0; f < static_cast<int>(mesh.triangles.size()); ++f) {
        auto h = intersect_triangle(mesh, f, origin, dir, t_min, best ? best->t : kInf);
        if (h) best = h;
    }
    return best;
}

// ---------------------------------------------------------------------------

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    std::vector<std::size_t> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, idx.size(), 0);
}

int KdTree::build(std::vector<std::size_t>& idx, std::size_t b, std::size_t e, int depth) {
    if (b >= e) return -1;
    const int axis = depth % 3;
    const std::size_t mid = (b + e) / 2;
    std::nth_element(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx.begin() + static_cast<std::ptrdiff_t>(e),
                     [&](std::size_t a, std::size_t c) { return points_[a][axis] < points_[c][axis]; });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({axis, -1, -1, idx[mid]});
    const int l = build(idx, b, mid, depth + 1);
    const int r = build(idx, mid + 1, e, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
}

void KdTree::search(int node, const Vec3& q, std::size_t& best, double& best_d2) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    const Vec3& p = points_[n.point];
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2) {
        best_d2 = d2;
        best = n.point;
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0 ? n.left : n.right, far = diff < 0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff < best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
    if (points_.empty()) throw ArgumentError("KdTree::nearest: empty tree");
    std::size_t best = 0;
    double d2 = kInf;
    search(root_, q, best, d2);
    return {best, d2};
}

namespace {

double mean_nearest(const std::vector<Vec3>& from, const KdTree& to, bool squared) {
    constexpr int kChunks = 8;
    std::vector<double> partial(kChunks, 0.0);
    parallel_chunks(from.size(), kChunks, [&](int c, std::size_t b, std::size_t e) {
        double s = 0.0;
        for (std::size_t i = b; i < e; ++i) {
            const double d2 = to.nearest(from[i]).second;
            s += squared ? d2 : std::sqrt(d2);
        }
        partial[static_cast<std::size_t>(c)] = s;
    });
    return std::accumulate(partial.begin(), partial.end(), 0.0) / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b, bool squared) {
    if (a.empty() || b.empty()) throw ArgumentError("chamfer: point sets must be non-empty");
    const KdTree ta(a), tb(b);
    return 0.5 * (mean_nearest(a, tb, squared) + mean_nearest(b, ta, squared));
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, uint64_t seed) {
    if (mesh.empty()) throw ArgumentError("sample_surface: empty mesh");
    std::vector<double> areas(mesh.triangles.size());
    for (std::size_t f = 0; f < areas.size(); ++f) areas[f] = mesh.face_area(f);
    const Distribution1D dist(std::move(areas));
    std::vector<Vec3> pts(count);
    for (std::size_t i = 0; i < count; ++i) {
        Pcg32 rng = make_rng(seed, i);
        const auto& t = mesh.triangles[dist.sample(rng.uniform())];
        const double su = std::sqrt(rng.uniform()), v = rng.uniform();
        pts[i] = (1 - su) * mesh.vertices[t[0]] + su * (1 - v) * mesh.vertices[t[1]] + su * v * mesh.vertices[t[2]];
    }
    return pts;
}

// ---------------------------------------------------------------------------

void write_obj(const std::string& path, const TriMesh& mesh) {
    std::ofstream os(path);
    if (!os) throw LoadError("cannot write " + path);
    os.precision(17);
    const bool colors = mesh.albedo.size() == mesh.vertices.size();
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vec3& p = mesh.vertices[v];
        os << "v " << p.x() << ' ' << p.y() << ' ' << p.z();
        if (colors) os << ' ' << mesh.albedo[v][0] << ' ' << mesh.albedo[v][1] << ' ' << mesh.albedo[v][2];
        os << '\n';
    }
    for (const auto& uv : mesh.uvs) os << "vt " << uv.x() << ' ' << uv.y() << '\n';
    for (const auto& n : mesh.normals) os << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
    const bool nrm = !mesh.normals.empty();
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        os << 'f';
        for (int c = 0; c < 3; ++c) {
            const int v = mesh.triangles[f][c] + 1;
            os << ' ' << v;
            if (mesh.has_uvs() || nrm) os << '/';
            if (mesh.has_uvs()) os << mesh.uv_triangles[f][c] + 1;
            if (nrm) os << '/' << v;
        }
        os << '\n';
    }
}

TriMesh read_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot read " + path);
    TriMesh mesh;
    std::vector<Vec3> vn;
    std::vector<std::pair<int, int>> corner_normals;
    std::string line;
    auto resolve = [](long i, std::size_t n) {
        const long r = i < 0 ? static_cast<long>(n) + i : i - 1;
        if (r < 0 || r >= static_cast<long>(n)) throw LoadError("obj: index out of range");
        return static_cast<int>(r);
    };
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            double x, y, z;
            ls >> x >> y >> z;
            mesh.vertices.emplace_back(x, y, z);
            double r, g, b;
            if (ls >> r >> g >> b) mesh.albedo.emplace_back(r, g, b);
        } else if (tag == "vt") {
            double u, v;
            ls >> u >> v;
            mesh.uvs.emplace_back(u, v);
        } else if (tag == "vn") {
            double x, y, z;
            ls >> x >> y >> z;
            vn.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::vector<std::array<int, 3>> corners;
            std::string tok;
            while (ls >> tok) {
                std::array<int, 3> c{-1, -1, -1};
                std::size_t pos = 0;
                for (int field = 0; field < 3 && pos <= tok.size(); ++field) {
                    const std::size_t slash = tok.find('/', pos);
                    const std::string s = tok.substr(pos, slash == std::string::npos ? std::string::npos : slash - pos);
                    if (!s.empty()) {
                        const std::size_t n = field == 0 ? mesh.vertices.size() : field == 1 ? mesh.uvs.size() : vn.size();
                        c[static_cast<std::size_t>(field)] = resolve(std::stol(s), n);
                    }
                    if (slash == std::string::npos) break;
                    pos = slash + 1;
                }
                corners.push_back(c);
            }
            if (corners.size() < 3) throw LoadError("obj: face with fewer than 3 corners");
            for (std::size_t k = 1; k + 1 < corners.size(); ++k) {
                const std::array<int, 3>* cs[3] = {&corners[0], &corners[k], &corners[k + 1]};
                mesh.triangles.push_back({(*cs[0])[0], (*cs[1])[0], (*cs[2])[0]});
                if ((*cs[0])[1] >= 0 && (*cs[1])[1] >= 0 && (*cs[2])[1] >= 0)
                    mesh.uv_triangles.push_back({(*cs[0])[1], (*cs[1])[1], (*cs[2])[1]});
                for (auto* c : cs)
                    if ((*c)[2] >= 0) corner_normals.emplace_back((*c)[0], (*c)[2]);
            }
        }
    }
    if (!mesh.uv_triangles.empty() && mesh.uv_triangles.size() != mesh.triangles.size())
        throw LoadError("obj: texture coordinates on only some faces");
    if (!vn.empty()) {
        mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
        for (auto [v, n] : corner_normals) mesh.normals[static_cast<std::size_t>(v)] = vn[static_cast<std::size_t>(n)];
    }
    if (!mesh.albedo.empty() && mesh.albedo.size() != mesh.vertices.size()) mesh.albedo.clear();
    return mesh;
}

namespace {

void write_tris(std::ostream& os, const std::vector<Tri>& t) {
    io::write_u64(os, t.size());
    for (const auto& x : t)
        for (int i : x) io::write_u32(os, static_cast<uint32_t>(i));
}
std::vector<Tri> read_tris(std::istream& is) {
    std::vector<Tri> t(io::read_u64(is));
    for (auto& x : t)
        for (int& i : x) i = static_cast<int>(io::read_u32(is));
    return t;
}
template <int N, class V>
void write_vecs(std::ostream& os, const std::vector<V>& v) {
    io::write_u64(os, v.size());
    for (const auto& x : v)
        for (int c = 0; c < N; ++c) io::write_f64(os, x[c]);
}
template <int N, class V>
std::vector<V> read_vecs(std::istream& is) {
    std::vector<V> v(io::read_u64(is));
    for (auto& x : v)
        for (int c = 0; c < N; ++c) x[c] = io::read_f64(is);
    return v;
}

}  // namespace

void save_mesh(const std::string& path, const TriMesh& mesh) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot write " + path);
    io::write_magic(os, "NPBM");
    io::write_u32(os, 1);
    write_vecs<3>(os, mesh.vertices);
    write_tris(os, mesh.triangles);
    write_vecs<3>(os, mesh.normals);
    write_vecs<2>(os, mesh.uvs);
    write_tris(os, mesh.uv_triangles);
    write_vecs<3>(os, mesh.albedo);
    io::write_u64(os, mesh.roughness.size());
    io::write_f64_array(os, mesh.roughness);
}

TriMesh load_mesh(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot read " + path);
    io::expect_magic(is, "NPBM");
    if (io::read_u32(is) != 1) throw LoadError("unsupported mesh version");
    TriMesh mesh;
    mesh.vertices = read_vecs<3, Vec3>(is);
    mesh.triangles = read_tris(is);
    mesh.normals = read_vecs<3, Vec3>(is);
    mesh.uvs = read_vecs<2, Vec2>(is);
    mesh.uv_triangles = read_tris(is);
    mesh.albedo = read_vecs<3, Rgb>(is);
    mesh.roughness.resize(io::read_u64(is));
    io::read_f64_array(is, mesh.roughness);
    try {
        mesh.validate();
    } catch (const ArgumentError& e) {
        throw LoadError(e.what());
    }
    return mesh;
}

TriMesh make_uv_sphere(const Vec3& center, double radius, int stacks, int slices) {
    if (stacks < 2 || slices < 3) throw ArgumentError("make_uv_sphere: need stacks >= 2 and slices >= 3");
    TriMesh m;
    m.vertices.push_back(center + Vec3(0, radius, 0));
    for (int i = 1; i < stacks; ++i) {
        const double th = kPi * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double ph = 2 * kPi * j / slices;
            m.vertices.push_back(center + radius * Vec3(std::sin(th) * std::cos(ph), std::cos(th), std::sin(th) * std::sin(ph)));
        }
    }
    m.vertices.push_back(center - Vec3(0, radius, 0));
    const int south = static_cast<int>(m.vertices.size()) - 1;
    auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
    for (int j = 0; j < slices; ++j) m.triangles.push_back({0, ring(1, j + 1), ring(1, j)});
    for (int i = 1; i + 1 < stacks; ++i)
        for (int j = 0; j < slices; ++j) {
            m.triangles.push_back({ring(i, j), ring(i, j + 1), ring(i + 1, j)});
            m.triangles.push_back({ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)});
        }
    for (int j = 0; j < slices; ++j) m.triangles.push_back({south, ring(stacks - 1, j), ring(stacks - 1, j + 1)});
    m.normals.resize(m.vertices.size());
    for (std::size_t v = 0; v < m.vertices.size(); ++v) m.normals[v] = (m.vertices[v] - center).normalized();
    return m;
}

}  // namespace npbir::geometry
