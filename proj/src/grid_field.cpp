// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/grid_field.hpp"

#include "npbir/binary_io.hpp"
#include "npbir/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace npbir::grid {

VoxelGrid::VoxelGrid(std::array<int, 3> resolution, const Box3& bbox, int channels, double fill)
    : res_(resolution), bbox_(bbox), channels_(channels) {
    for (int a = 0; a < 3; ++a) {
        if (res_[a] < 2) throw ArgumentError("VoxelGrid: resolution must be >= 2 on every axis");
    }
    if ((bbox.extent().array() <= 0.0).any())
        throw ArgumentError("VoxelGrid: bbox must have positive extent");
    if (channels < 1) throw ArgumentError("VoxelGrid: channels must be >= 1");
    for (int a = 0; a < 3; ++a) spacing_[a] = bbox.extent()[a] / (res_[a] - 1);
    values_.assign(point_count() * static_cast<std::size_t>(channels), fill);
}

TrilinearStencil stencil(const VoxelGrid& grid, const Vec3& x, bool with_derivative) {
    if (!grid.contains(x)) {
        std::ostringstream msg;
        msg << "grid query outside bbox at (" << x.x() << ", " << x.y() << ", " << x.z() << ")";
        throw OutOfDomainError(msg.str());
    }
    const auto& res = grid.resolution();
    const Vec3 h = grid.spacing();
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const double f = (x[a] - grid.bbox().lo[a]) / h[a];
        int i = static_cast<int>(std::floor(f));
        i = std::clamp(i, 0, res[a] - 2);
        i0[a] = i;
        t[a] = std::clamp(f - i, 0.0, 1.0);
    }
    TrilinearStencil s;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double wx = dx ? t[0] : 1.0 - t[0];
        const double wy = dy ? t[1] : 1.0 - t[1];
        const double wz = dz ? t[2] : 1.0 - t[2];
        s.index[c] = grid.point_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        s.weight[c] = wx * wy * wz;
        if (with_derivative) {
            const double sx = dx ? 1.0 : -1.0, sy = dy ? 1.0 : -1.0, sz = dz ? 1.0 : -1.0;
            s.dweight[c] = Vec3(sx * wy * wz / h[0], wx * sy * wz / h[1], wx * wy * sz / h[2]);
        }
    }
    return s;
}

void interp_into(const VoxelGrid& grid, const Vec3& x, std::span<double> out) {
    const auto s = stencil(grid, x);
    const int C = grid.channels();
    const auto& v = grid.values();
    for (int ch = 0; ch < C; ++ch) out[ch] = 0.0;
    for (int c = 0; c < 8; ++c) {
        const double* src = v.data() + s.index[c] * C;
        for (int ch = 0; ch < C; ++ch) out[ch] += s.weight[c] * src[ch];
    }
}

std::vector<double> interp(const VoxelGrid& grid, const Vec3& x) {
    std::vector<double> out(static_cast<std::size_t>(grid.channels()));
    interp_into(grid, x, out);
    return out;
}

double interp_scalar(const VoxelGrid& grid, const Vec3& x) {
    const auto s = stencil(grid, x);
    const int C = grid.channels();
    double r = 0.0;
    for (int c = 0; c < 8; ++c) r += s.weight[c] * grid.values()[s.index[c] * C];
    return r;
}

Vec3 sdf_gradient(const VoxelGrid& grid, const Vec3& x) {
    const auto s = stencil(grid, x, true);
    const int C = grid.channels();
    Vec3 g = Vec3::Zero();
    for (int c = 0; c < 8; ++c) g += grid.values()[s.index[c] * C] * s.dweight[c];
    return g;
}

VoxelGrid resample(const VoxelGrid& grid, std::array<int, 3> resolution) {
    VoxelGrid out(resolution, grid.bbox(), grid.channels());
    const int C = grid.channels();
    std::vector<double> tmp(static_cast<std::size_t>(C));
    for (int k = 0; k < resolution[2]; ++k)
        for (int j = 0; j < resolution[1]; ++j)
            for (int i = 0; i < resolution[0]; ++i) {
                Vec3 p = out.point_position(i, j, k);
                // Pin the far faces exactly to the box so rounding never leaves the domain.
                if (i == resolution[0] - 1) p.x() = grid.bbox().hi.x();
                if (j == resolution[1] - 1) p.y() = grid.bbox().hi.y();
                if (k == resolution[2] - 1) p.z() = grid.bbox().hi.z();
                interp_into(grid, p, tmp);
                for (int c = 0; c < C; ++c) out.at(i, j, k, c) = tmp[c];
            }
    return out;
}

VoxelGrid upscale(const VoxelGrid& grid, int factor) {
    if (factor != 2) throw ArgumentError("upscale: only factor 2 is supported");
    const auto& r = grid.resolution();
    VoxelGrid out({2 * r[0] - 1, 2 * r[1] - 1, 2 * r[2] - 1}, grid.bbox(), grid.channels());
    const int C = grid.channels();
    // Each new value is the mean of the old gridpoints bracketing it on the
    // odd axes, i.e. the exact trilinear sample at the new gridpoint.
    for (int k = 0; k < out.resolution()[2]; ++k)
        for (int j = 0; j < out.resolution()[1]; ++j)
            for (int i = 0; i < out.resolution()[0]; ++i) {
                const int ix[2] = {i / 2, (i + 1) / 2};
                const int iy[2] = {j / 2, (j + 1) / 2};
                const int iz[2] = {k / 2, (k + 1) / 2};
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n)
                        acc += grid.at(ix[n & 1], iy[(n >> 1) & 1], iz[(n >> 2) & 1], c);
                    out.at(i, j, k, c) = acc / 8.0;
                }
            }
    return out;
}

// --- radiance head -----------------------------------------------------------

RadianceHead::RadianceHead(int feature_width_, int hidden_width_, int encoding_degree_)
    : feature_width(feature_width_), hidden_width(hidden_width_), encoding_degree(encoding_degree_) {
    w1.assign(static_cast<std::size_t>(hidden_width) * input_width(), 0.0);
    b1.assign(static_cast<std::size_t>(hidden_width), 0.0);
    w2.assign(static_cast<std::size_t>(3 * hidden_width), 0.0);
    b2.assign(3, 0.0);
}

void RadianceHead::initialize(uint64_t seed) {
    Pcg32 rng(mix64(seed), 7);
    const double s1 = std::sqrt(6.0 / input_width());
    const double s2 = std::sqrt(6.0 / hidden_width);
    for (auto& w : w1) w = (2.0 * rng.uniform() - 1.0) * s1;
    for (auto& b : b1) b = 0.0;
    for (auto& w : w2) w = (2.0 * rng.uniform() - 1.0) * s2 * 0.1;
    for (auto& b : b2) b = 0.0;
}

std::vector<double> RadianceHead::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    flat.insert(flat.end(), w1.begin(), w1.end());
    flat.insert(flat.end(), b1.begin(), b1.end());
    flat.insert(flat.end(), w2.begin(), w2.end());
    flat.insert(flat.end(), b2.begin(), b2.end());
    return flat;
}

void RadianceHead::unflatten(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ArgumentError("RadianceHead::unflatten: size mismatch");
    auto it = flat.begin();
    for (auto* block : {&w1, &b1, &w2, &b2}) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(block->size()), block->begin());
        it += static_cast<std::ptrdiff_t>(block->size());
    }
}

void encode_view(const Vec3& v, int degree, std::span<double> out) {
    out[0] = v.x();
    out[1] = v.y();
    out[2] = v.z();
    std::size_t o = 3;
    double freq = 1.0;
    for (int k = 0; k < degree; ++k, freq *= 2.0) {
        for (int a = 0; a < 3; ++a) {
            out[o++] = std::sin(freq * v[a]);
            out[o++] = std::cos(freq * v[a]);
        }
    }
}

Rgb head_forward(const RadianceHead& head, std::span<const double> feature, const Vec3& view,
                 HeadActivations* cache) {
    const int in_w = head.input_width();
    const int H = head.hidden_width;
    double input_buf[256];
    std::vector<double> input_heap;
    double* input = input_buf;
    if (in_w > 256) {
        input_heap.resize(static_cast<std::size_t>(in_w));
        input = input_heap.data();
    }
    std::copy(feature.begin(), feature.begin() + head.feature_width, input);
    encode_view(view, head.encoding_degree,
                std::span<double>(input + head.feature_width,
                                  static_cast<std::size_t>(head.view_encoding_width())));

    if (cache) {
        cache->input.assign(input, input + in_w);
        cache->pre_hidden.resize(static_cast<std::size_t>(H));
        cache->hidden.resize(static_cast<std::size_t>(H));
    }
    double out[3] = {head.b2[0], head.b2[1], head.b2[2]};
    for (int h = 0; h < H; ++h) {
        const double* row = head.w1.data() + static_cast<std::size_t>(h) * in_w;
        double z = head.b1[h];
        for (int i = 0; i < in_w; ++i) z += row[i] * input[i];
        const double a = z > 0.0 ? z : 0.0;
        if (cache) {
            cache->pre_hidden[h] = z;
            cache->hidden[h] = a;
        }
        if (a != 0.0) {
            out[0] += head.w2[h] * a;
            out[1] += head.w2[H + h] * a;
            out[2] += head.w2[2 * H + h] * a;
        }
    }
    Rgb rgb(softplus(out[0]), softplus(out[1]), softplus(out[2]));
    if (cache) {
        cache->pre_out = {out[0], out[1], out[2]};
        cache->out = rgb;
    }
    return rgb;
}

void head_backward(const RadianceHead& head, const HeadActivations& cache, const Rgb& d_out,
                   std::span<double> d_params, std::span<double> d_feature) {
    const int in_w = head.input_width();
    const int H = head.hidden_width;
    const std::size_t off_b1 = head.w1.size();
    const std::size_t off_w2 = off_b1 + head.b1.size();
    const std::size_t off_b2 = off_w2 + head.w2.size();

    double d_pre_out[3];
    for (int c = 0; c < 3; ++c) d_pre_out[c] = d_out[c] * sigmoid(cache.pre_out[c]);
    for (int c = 0; c < 3; ++c) d_params[off_b2 + c] += d_pre_out[c];

    for (int h = 0; h < H; ++h) {
        const double a = cache.hidden[h];
        double d_a = 0.0;
        for (int c = 0; c < 3; ++c) {
            const std::size_t wi = static_cast<std::size_t>(c) * H + h;
            d_params[off_w2 + wi] += d_pre_out[c] * a;
            d_a += d_pre_out[c] * head.w2[wi];
        }
        if (cache.pre_hidden[h] <= 0.0 || d_a == 0.0) continue;
        d_params[off_b1 + h] += d_a;
        const std::size_t row = static_cast<std::size_t>(h) * in_w;
        for (int i = 0; i < in_w; ++i) d_params[row + i] += d_a * cache.input[i];
        if (!d_feature.empty())
            for (int i = 0; i < head.feature_width; ++i) d_feature[i] += d_a * head.w1[row + i];
    }
}

// --- scene -----------------------------------------------------------------

Region SdfScene::classify(const Vec3& x) const {
    return fg_bbox().contains(x) ? Region::Foreground : Region::Background;
}

SdfScene make_scene(const SceneOptions& opts) {
    SdfScene scene;
    const Box3 fg = opts.fg_bbox;
    const Box3 bg = fg.scaled(opts.bg_scale);
    scene.fg_sdf = VoxelGrid(opts.fg_resolution, fg, 1);
    scene.bg_sdf = VoxelGrid(opts.bg_resolution, bg, 1);
    scene.fg_feat = VoxelGrid(opts.fg_resolution, fg, opts.feature_width);
    scene.bg_feat = VoxelGrid(opts.bg_resolution, bg, opts.feature_width);

    const Vec3 c = fg.center();
    const double r0 = opts.init_radius_fraction * 0.5 * fg.extent().minCoeff();
    scene.fg_sdf.fill_with([&](const Vec3& p, int) { return (p - c).norm() - r0; });
    const double shell = 0.45 * bg.extent().minCoeff();
    scene.bg_sdf.fill_with([&](const Vec3& p, int) { return shell - (p - c).norm(); });

    Pcg32 rng(mix64(opts.seed), 3);
    for (auto* g : {&scene.fg_feat, &scene.bg_feat})
        for (auto& v : g->values()) v = 0.1 * (rng.uniform() - 0.5);

    scene.head = RadianceHead(opts.feature_width, opts.hidden_width, opts.encoding_degree);
    scene.head.initialize(opts.seed);
    scene.sharpness = opts.sharpness;
    return scene;
}

double query_sdf(const SdfScene& scene, const Vec3& x) {
    if (scene.classify(x) == Region::Foreground) return interp_scalar(scene.fg_sdf, x);
    return interp_scalar(scene.bg_sdf, x);
}

Rgb query_radiance(const SdfScene& scene, const Vec3& x, const Vec3& v) {
    if (!is_unit(v)) throw ArgumentError("query_radiance: view direction must be unit length");
    const auto& feat = scene.classify(x) == Region::Foreground ? scene.fg_feat : scene.bg_feat;
    double buf[256];
    std::span<double> f(buf, static_cast<std::size_t>(feat.channels()));
    interp_into(feat, x, f);
    return head_forward(scene.head, f, v);
}

// --- serialization ------------------------------------------------------------

void write_grid(std::ostream& os, const VoxelGrid& grid) {
    io::write_magic(os, "NPBG");
    io::write_u32(os, 1);
    for (int a = 0; a < 3; ++a) io::write_u32(os, static_cast<uint32_t>(grid.resolution()[a]));
    io::write_u32(os, static_cast<uint32_t>(grid.channels()));
    for (int a = 0; a < 3; ++a) io::write_f64(os, grid.bbox().lo[a]);
    for (int a = 0; a < 3; ++a) io::write_f64(os, grid.bbox().hi[a]);
    io::write_f32_array(os, grid.values());
}

VoxelGrid read_grid(std::istream& is) {
    io::expect_magic(is, "NPBG");
    const uint32_t version = io::read_u32(is);
    if (version != 1) throw LoadError("grid checkpoint: unsupported version");
    std::array<int, 3> res{};
    for (auto& r : res) r = static_cast<int>(io::read_u32(is));
    const int channels = static_cast<int>(io::read_u32(is));
    Box3 box;
    for (int a = 0; a < 3; ++a) box.lo[a] = io::read_f64(is);
    for (int a = 0; a < 3; ++a) box.hi[a] = io::read_f64(is);
    VoxelGrid grid(res, box, channels);
    io::read_f32_array(is, grid.values());
    return grid;
}

void write_head(std::ostream& os, const RadianceHead& head) {
    io::write_magic(os, "NPBH");
    io::write_u32(os, static_cast<uint32_t>(head.feature_width));
    io::write_u32(os, static_cast<uint32_t>(head.hidden_width));
    io::write_u32(os, static_cast<uint32_t>(head.encoding_degree));
    io::write_f32_array(os, head.w1);
    io::write_f32_array(os, head.b1);
    io::write_f32_array(os, head.w2);
    io::write_f32_array(os, head.b2);
}

RadianceHead read_head(std::istream& is) {
    io::expect_magic(is, "NPBH");
    const int fw = static_cast<int>(io::read_u32(is));
    const int hw = static_cast<int>(io::read_u32(is));
    const int deg = static_cast<int>(io::read_u32(is));
    RadianceHead head(fw, hw, deg);
    io::read_f32_array(is, head.w1);
    io::read_f32_array(is, head.b1);
    io::read_f32_array(is, head.w2);
    io::read_f32_array(is, head.b2);
    return head;
}

void save_scene(const std::string& path, const SdfScene& scene) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_scene(os, scene);
}

void write_scene(std::ostream& os, const SdfScene& scene) {
    io::write_magic(os, "NPBS");
    io::write_u32(os, 1);
    io::write_f64(os, scene.sharpness);
    for (int c = 0; c < 3; ++c) io::write_f64(os, scene.background[c]);
    write_grid(os, scene.fg_sdf);
    write_grid(os, scene.fg_feat);
    write_grid(os, scene.bg_sdf);
    write_grid(os, scene.bg_feat);
    write_head(os, scene.head);
}

SdfScene load_scene(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open scene checkpoint " + path);
    io::expect_magic(is, "NPBS");
    if (io::read_u32(is) != 1) throw LoadError("scene checkpoint: unsupported version");
    SdfScene scene;
    scene.sharpness = io::read_f64(is);
    for (int c = 0; c < 3; ++c) scene.background[c] = io::read_f64(is);
    scene.fg_sdf = read_grid(is);
    scene.fg_feat = read_grid(is);
    scene.bg_sdf = read_grid(is);
    scene.bg_feat = read_grid(is);
    scene.head = read_head(is);
    return scene;
}

}  // namespace npbir::grid
