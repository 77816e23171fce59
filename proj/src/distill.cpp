// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/distill.hpp"

#include "npbir/binary_io.hpp"
#include "npbir/io_metrics.hpp"
#include "npbir/sampling.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace npbir::distill {

namespace {

constexpr int kReduceChunks = 8;

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Rgb sign(const Rgb& x) { return {sign(x[0]), sign(x[1]), sign(x[2])}; }

shading::BrdfParams vertex_brdf(const geometry::TriMesh& mesh, int v, const MaterialModel& model) {
    shading::BrdfParams p;
    p.albedo = mesh.albedo[static_cast<std::size_t>(v)];
    p.roughness = mesh.roughness[static_cast<std::size_t>(v)];
    p.f0 = model.f0;
    p.specular = model.specular;
    return p;
}

void check_inputs(const geometry::TriMesh& mesh, const TransportTables& t) {
    if (!mesh.has_materials()) throw ArgumentError("distill: mesh has no per-vertex materials");
    if (mesh.normals.size() != mesh.vertex_count()) throw ArgumentError("distill: mesh has no per-vertex normals");
    if (t.vertices != static_cast<int>(mesh.vertex_count())) throw ArgumentError("distill: table/mesh size mismatch");
}

std::vector<Rgb> sg_at_directions(const shading::SgMixture& sg, const DirectionSet& omega) {
    std::vector<Rgb> out(omega.size());
    for (std::size_t k = 0; k < omega.size(); ++k) out[k] = shading::sg_eval(sg, omega.dirs[k]);
    return out;
}

Vec3 local_to_world(const Vec3& l, const Vec3& n) {
    Vec3 t, b;
    make_frame(n, t, b);
    return (l.x() * t + l.y() * b + l.z() * n).normalized();
}

struct SampleGrad {
    Rgb albedo = Rgb::Zero();
    double roughness = 0.0;
};

}  // namespace

DirectionSet make_direction_set(int n_z, int n_phi, uint64_t jitter_seed) {
    if (n_z < 1 || n_phi < 1) throw ArgumentError("make_direction_set: counts must be positive");
    DirectionSet s;
    const std::size_t n = static_cast<std::size_t>(n_z) * n_phi;
    Pcg32 rng(jitter_seed);
    for (int i = 0; i < n_z; ++i)
        for (int j = 0; j < n_phi; ++j) {
            const Vec2 u = jitter_seed ? rng.uniform2() : Vec2(0.5, 0.5);
            const double z = 1.0 - 2.0 * (i + u.x()) / n_z;
            const double phi = 2.0 * kPi * (j + u.y()) / n_phi;
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            s.dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
            s.weights.push_back(4.0 * kPi / static_cast<double>(n));
        }
    return s;
}

RadianceField scene_field(const grid::SdfScene& scene) {
    std::ostringstream os(std::ios::binary);
    grid::write_scene(os, scene);
    RadianceField f;
    f.query = [&scene](const Vec3& x, const Vec3& v) { return grid::query_radiance(scene, x, v); };
    f.domain = scene.bg_bbox();
    f.fingerprint = io::sha256_hex(os.str());
    return f;
}

double ray_offset(const geometry::TriMesh& mesh) {
    if (mesh.vertices.empty()) return 0.0;
    return 1e-4 * mesh.bounds().diagonal();
}

TransportTables precompute_transport(const geometry::TriMesh& mesh, const geometry::Bvh& bvh,
                                     const RadianceField& field, const DirectionSet& omega) {
    if (mesh.normals.size() != mesh.vertex_count()) throw ArgumentError("precompute_transport: mesh needs normals");
    if (!field.query) throw ArgumentError("precompute_transport: empty radiance field");
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
        if (!field.domain.contains(mesh.vertices[v]))
            throw OutOfDomainError("precompute_transport: vertex " + std::to_string(v) +
                                   " lies outside the radiance field domain");
    TransportTables t;
    t.vertices = static_cast<int>(mesh.vertex_count());
    t.omega = omega;
    const std::size_t nd = omega.size();
    t.vis.assign(mesh.vertex_count() * nd, 1);
    t.l_ind.assign(mesh.vertex_count() * nd * 3, 0.0f);
    const double eps = ray_offset(mesh);
    parallel_chunks(mesh.vertex_count(), kReduceChunks * 4, [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) {
            const Vec3 o = mesh.vertices[v] + eps * mesh.normals[v];
            for (std::size_t k = 0; k < nd; ++k) {
                const Vec3& w = omega.dirs[k];
                const auto hit = mesh.empty() ? std::nullopt : bvh.intersect(mesh, o, w, 0.0);
                if (!hit) continue;
                const std::size_t i = v * nd + k;
                t.vis[i] = 0;
                const Rgb l = field.query(field.domain.contains(hit->point) ? hit->point : o, -w).max(0.0);
                for (int c = 0; c < 3; ++c) t.l_ind[3 * i + c] = static_cast<float>(l[c]);
            }
        }
    });
    return t;
}

std::string transport_cache_key(const geometry::TriMesh& mesh, const RadianceField& field,
                                const DirectionSet& omega) {
    std::ostringstream os(std::ios::binary);
    io::write_magic(os, "NPBT");
    io::write_u64(os, mesh.vertex_count());
    for (const auto& p : mesh.vertices) io::write_f64_array(os, std::span<const double>(p.data(), 3));
    for (const auto& n : mesh.normals) io::write_f64_array(os, std::span<const double>(n.data(), 3));
    io::write_u64(os, mesh.triangle_count());
    for (const auto& f : mesh.triangles)
        for (int i : f) io::write_u32(os, static_cast<uint32_t>(i));
    io::write_u64(os, omega.size());
    for (std::size_t k = 0; k < omega.size(); ++k) {
        io::write_f64_array(os, std::span<const double>(omega.dirs[k].data(), 3));
        io::write_f64(os, omega.weights[k]);
    }
    os << field.fingerprint;
    return io::sha256_hex(os.str());
}

void save_transport(const std::string& path, const TransportTables& t, const std::string& key) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot write " + path);
    io::write_magic(os, "NPBT");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    io::write_u32(os, static_cast<uint32_t>(t.vertices));
    io::write_u32(os, static_cast<uint32_t>(t.omega.size()));
    for (std::size_t k = 0; k < t.omega.size(); ++k) {
        io::write_f64_array(os, std::span<const double>(t.omega.dirs[k].data(), 3));
        io::write_f64(os, t.omega.weights[k]);
    }
    std::vector<uint8_t> bits((t.vis.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < t.vis.size(); ++i)
        if (t.vis[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    os.write(reinterpret_cast<const char*>(t.l_ind.data()), static_cast<std::streamsize>(t.l_ind.size() * sizeof(float)));
    if (!os) throw LoadError("write failed: " + path);
}

TransportTables load_transport(const std::string& path, const std::string& key) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot read " + path);
    io::expect_magic(is, "NPBT");
    if (io::read_u32(is) != 1) throw LoadError("transport cache: unsupported version");
    const uint32_t klen = io::read_u32(is);
    if (klen > 1024) throw LoadError("transport cache: corrupt header");
    std::string stored(klen, '\0');
    is.read(stored.data(), klen);
    if (!is || stored != key) throw LoadError("transport cache: key mismatch in " + path);
    TransportTables t;
    t.vertices = static_cast<int>(io::read_u32(is));
    const uint32_t nd = io::read_u32(is);
    t.omega.dirs.resize(nd);
    t.omega.weights.resize(nd);
    for (uint32_t k = 0; k < nd; ++k) {
        io::read_f64_array(is, std::span<double>(t.omega.dirs[k].data(), 3));
        t.omega.weights[k] = io::read_f64(is);
    }
    const std::size_t n = static_cast<std::size_t>(t.vertices) * nd;
    std::vector<uint8_t> bits((n + 7) / 8);
    is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    t.vis.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.vis[i] = (bits[i / 8] >> (i % 8)) & 1u;
    t.l_ind.resize(3 * n);
    is.read(reinterpret_cast<char*>(t.l_ind.data()), static_cast<std::streamsize>(t.l_ind.size() * sizeof(float)));
    if (!is) throw LoadError("transport cache: truncated " + path);
    return t;
}

TransportTables cached_transport(const std::string& cache_dir, const geometry::TriMesh& mesh,
                                 const geometry::Bvh& bvh, const RadianceField& field,
                                 const DirectionSet& omega, bool* cache_hit) {
    const std::string key = transport_cache_key(mesh, field, omega);
    const std::filesystem::path path = std::filesystem::path(cache_dir) / (key + ".npbt");
    if (std::filesystem::exists(path)) {
        try {
            auto t = load_transport(path.string(), key);
            if (cache_hit) *cache_hit = true;
            return t;
        } catch (const LoadError&) {
        }
    }
    if (cache_hit) *cache_hit = false;
    auto t = precompute_transport(mesh, bvh, field, omega);
    std::filesystem::create_directories(cache_dir);
    save_transport(path.string(), t, key);
    return t;
}

Rgb incident_radiance(const TransportTables& t, const shading::SgMixture& sg, int v, std::size_t k) {
    return t.visible(v, k) ? shading::sg_eval(sg, t.omega.dirs[k]) : t.indirect(v, k);
}

Rgb coarse_render(const geometry::TriMesh& mesh, const TransportTables& t, const shading::SgMixture& sg, int v,
                  const Vec3& wo, const MaterialModel& model) {
    check_inputs(mesh, t);
    const Vec3& n = mesh.normals[static_cast<std::size_t>(v)];
    if (!(n.dot(wo) > 0.0)) throw ArgumentError("coarse_render: outgoing direction below the horizon");
    const auto p = vertex_brdf(mesh, v, model);
    Rgb out = Rgb::Zero();
    for (std::size_t k = 0; k < t.omega.size(); ++k) {
        const Vec3& w = t.omega.dirs[k];
        const double c = n.dot(w);
        if (c <= 0.0) continue;
        out += t.omega.weights[k] * incident_radiance(t, sg, v, k) * shading::brdf_eval(p, n, w, wo) * c;
    }
    return out;
}

DistillLosses distill_losses(const geometry::TriMesh& mesh, const TransportTables& t,
                             const shading::SgMixture& sg, std::span<const TeacherSample> samples,
                             const shading::BackgroundObservation* bg, const DistillWeights& weights,
                             const MaterialModel& model, DistillGradient* grad) {
    check_inputs(mesh, t);
    const std::size_t nd = t.omega.size();
    const std::vector<Rgb> sg_dir = sg_at_directions(sg, t.omega);

    struct Partial {
        double loss = 0.0;
        std::vector<Rgb> d_sg_dir;
    };
    std::vector<Partial> partials(kReduceChunks);
    std::vector<SampleGrad> sample_grads(grad ? samples.size() : 0);
    parallel_chunks(samples.size(), kReduceChunks, [&](int chunk, std::size_t begin, std::size_t end) {
        Partial& part = partials[static_cast<std::size_t>(chunk)];
        if (grad) part.d_sg_dir.assign(nd, Rgb::Zero());
        std::vector<shading::BrdfEval> evals(nd);
        std::vector<Rgb> li(nd);
        for (std::size_t s = begin; s < end; ++s) {
            const TeacherSample& ts = samples[s];
            const int v = ts.vertex;
            if (v < 0 || v >= t.vertices) throw ArgumentError("distill_losses: vertex index out of range");
            const Vec3& n = mesh.normals[static_cast<std::size_t>(v)];
            if (!(n.dot(ts.wo) > 0.0)) throw ArgumentError("distill_losses: sample direction below the horizon");
            const auto p = vertex_brdf(mesh, v, model);
            Rgb c = Rgb::Zero();
            for (std::size_t k = 0; k < nd; ++k) {
                const double cs = n.dot(t.omega.dirs[k]);
                if (cs <= 0.0) continue;
                li[k] = t.visible(v, k) ? sg_dir[k] : t.indirect(v, k);
                evals[k] = shading::brdf_eval_grad(p, n, t.omega.dirs[k], ts.wo);
                c += t.omega.weights[k] * li[k] * evals[k].value * cs;
            }
            const Rgb r = c - ts.target;
            part.loss += r.abs().sum();
            if (!grad) continue;
            const Rgb g = sign(r);
            SampleGrad& sgd = sample_grads[s];
            for (std::size_t k = 0; k < nd; ++k) {
                const double cs = n.dot(t.omega.dirs[k]);
                if (cs <= 0.0) continue;
                const double wc = t.omega.weights[k] * cs;
                sgd.albedo += wc * li[k] * evals[k].d_albedo * g;
                sgd.roughness += wc * (li[k] * g).sum() * evals[k].d_roughness;
                if (t.visible(v, k)) part.d_sg_dir[k] += wc * evals[k].value * g;
            }
        }
    });

    DistillLosses out;
    for (const auto& p : partials) out.distill += p.loss;

    if (grad) {
        grad->albedo.assign(mesh.vertex_count(), Rgb::Zero());
        grad->roughness.assign(mesh.vertex_count(), 0.0);
        grad->sg.assign(sg.size() * shading::kSgParams, 0.0);
        for (std::size_t s = 0; s < samples.size(); ++s) {
            const auto v = static_cast<std::size_t>(samples[s].vertex);
            grad->albedo[v] += sample_grads[s].albedo;
            grad->roughness[v] += sample_grads[s].roughness;
        }
        std::vector<Rgb> d_sg_dir(nd, Rgb::Zero());
        for (const auto& p : partials)
            if (!p.d_sg_dir.empty())
                for (std::size_t k = 0; k < nd; ++k) d_sg_dir[k] += p.d_sg_dir[k];
        for (std::size_t k = 0; k < nd; ++k)
            if ((d_sg_dir[k] != 0.0).any()) shading::sg_eval_backward(sg, t.omega.dirs[k], d_sg_dir[k], grad->sg);
    }

    for (const auto& [a, b] : geometry::mesh_edges(mesh)) {
        const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
        const Rgb da = mesh.albedo[ia] - mesh.albedo[ib];
        const double dr = mesh.roughness[ia] - mesh.roughness[ib];
        out.v_reg += da.abs().sum() + std::abs(dr);
        if (grad) {
            const Rgb ga = weights.w_v_reg * sign(da);
            grad->albedo[ia] += ga;
            grad->albedo[ib] -= ga;
            grad->roughness[ia] += weights.w_v_reg * sign(dr);
            grad->roughness[ib] -= weights.w_v_reg * sign(dr);
        }
    }

    if (bg) {
        const auto& env = bg->env;
        for (int y = 0; y < env.height(); ++y)
            for (int x = 0; x < env.width(); ++x) {
                if (!(bg->coverage.at(x, y) > 0.0)) continue;
                const Vec3 w = env.texel_direction(x, y);
                const Rgb d = shading::sg_eval(sg, w) - env.texel(x, y);
                out.bg += d.abs().sum();
                if (grad) shading::sg_eval_backward(sg, w, weights.w_bg * sign(d), grad->sg);
            }
    }
    out.total = out.distill + weights.w_v_reg * out.v_reg + weights.w_bg * out.bg;
    return out;
}

void init_materials(geometry::TriMesh& mesh, const RadianceField& field, const DirectionSet& omega,
                    double roughness) {
    if (mesh.normals.size() != mesh.vertex_count()) throw ArgumentError("init_materials: mesh needs normals");
    mesh.albedo.assign(mesh.vertex_count(), Rgb::Constant(0.5));
    mesh.roughness.assign(mesh.vertex_count(), roughness);
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
        if (!field.domain.contains(mesh.vertices[v]))
            throw OutOfDomainError("init_materials: vertex " + std::to_string(v) + " outside the field domain");
    parallel_chunks(mesh.vertex_count(), kReduceChunks * 4, [&](int, std::size_t begin, std::size_t end) {
        std::array<std::vector<double>, 3> vals;
        for (std::size_t v = begin; v < end; ++v) {
            for (auto& c : vals) c.clear();
            for (const Vec3& w : omega.dirs) {
                if (!(w.dot(mesh.normals[v]) > 0.0)) continue;
                const Rgb l = field.query(mesh.vertices[v], -w);
                for (int c = 0; c < 3; ++c) vals[static_cast<std::size_t>(c)].push_back(l[c]);
            }
            if (vals[0].empty()) continue;
            for (int c = 0; c < 3; ++c)
                mesh.albedo[v][c] = std::clamp(lower_median(vals[static_cast<std::size_t>(c)]), 0.0, kMaxAlbedo);
        }
    });
}

Rgb initial_sg_amplitude(const geometry::TriMesh& mesh, const RadianceField& teacher,
                         const shading::BackgroundObservation* bg) {
    Rgb sum = Rgb::Zero();
    double n = 0;
    if (bg) {
        for (int y = 0; y < bg->env.height(); ++y)
            for (int x = 0; x < bg->env.width(); ++x)
                if (bg->coverage.at(x, y) > 0.0) {
                    sum += bg->env.texel(x, y);
                    n += 1;
                }
    }
    if (n == 0 && teacher.query) {
        for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
            const Vec3 nv = mesh.normals.size() == mesh.vertex_count() ? mesh.normals[v] : Vec3::UnitY();
            sum += teacher.query(mesh.vertices[v], -nv);
            n += 1;
        }
    }
    return n > 0 ? Rgb(sum / n) : Rgb::Constant(0.5);
}

DistillResult train_distill(const geometry::TriMesh& mesh, const TransportTables& t, const RadianceField& teacher,
                            const shading::BackgroundObservation* bg, const Stage2Config& cfg,
                            shading::SgMixture initial_sg, const Stage2Logger& log) {
    check_inputs(mesh, t);
    if (!teacher.query) throw ArgumentError("train_distill: empty teacher");
    if (cfg.iterations < 0 || !(cfg.lr_vertex > 0) || !(cfg.lr_sg > 0))
        throw ArgumentError("train_distill: invalid configuration");
    DistillResult res{mesh, std::move(initial_sg)};
    if (res.sg.empty()) res.sg = shading::init_sg(cfg.sg_lobes, initial_sg_amplitude(mesh, teacher, bg), cfg.sg_lambda);

    const std::size_t nv = mesh.vertex_count();
    std::vector<double> attrs(4 * nv), attr_grad(4 * nv);
    auto pack = [&] {
        for (std::size_t v = 0; v < nv; ++v) {
            for (int c = 0; c < 3; ++c) attrs[3 * v + c] = res.mesh.albedo[v][c];
            attrs[3 * nv + v] = res.mesh.roughness[v];
        }
    };
    auto unpack = [&] {
        for (std::size_t v = 0; v < nv; ++v) {
            for (int c = 0; c < 3; ++c) {
                attrs[3 * v + c] = std::clamp(attrs[3 * v + c], 0.0, kMaxAlbedo);
                res.mesh.albedo[v][c] = attrs[3 * v + c];
            }
            attrs[3 * nv + v] = shading::clamp_roughness(attrs[3 * nv + v]);
            res.mesh.roughness[v] = attrs[3 * nv + v];
        }
    };
    pack();
    unpack();
    optim::Adam attr_opt(attrs.size(), cfg.adam);
    std::vector<double> sg_params = shading::sg_flatten(res.sg);
    optim::Adam sg_opt(sg_params.size(), cfg.adam);

    const DistillWeights weights{cfg.w_v_reg, cfg.w_bg};
    std::vector<TeacherSample> samples(nv);
    DistillGradient grad;
    for (int it = 0; it <= cfg.iterations; ++it) {
        parallel_chunks(nv, kReduceChunks * 4, [&](int, std::size_t begin, std::size_t end) {
            for (std::size_t v = begin; v < end; ++v) {
                Pcg32 rng = make_rng(cfg.seed, 0x5d15711ULL, static_cast<uint64_t>(it), v);
                const Vec3& n = res.mesh.normals[v];
                Vec3 wo = local_to_world(sample_uniform_hemisphere(rng.uniform2()), n);
                if (!(n.dot(wo) > 1e-6)) wo = n;
                samples[v] = {static_cast<int>(v), wo, teacher.query(res.mesh.vertices[v], -wo)};
            }
        });
        const bool last = it == cfg.iterations;
        const DistillLosses l =
            distill_losses(res.mesh, t, res.sg, samples, bg, weights, cfg.model, last ? nullptr : &grad);
        if (log) log({it, l});
        if (last) break;

        for (std::size_t v = 0; v < nv; ++v) {
            for (int c = 0; c < 3; ++c) attr_grad[3 * v + c] = grad.albedo[v][c];
            attr_grad[3 * nv + v] = grad.roughness[v];
        }
        attr_opt.step(attrs, attr_grad, cfg.lr_vertex);
        unpack();
        sg_opt.step(sg_params, grad.sg, cfg.lr_sg);
        shading::sg_unflatten(res.sg, sg_params);
        shading::sg_project(res.sg);
        sg_params = shading::sg_flatten(res.sg);
    }
    return res;
}

}  // namespace npbir::distill
