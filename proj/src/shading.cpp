// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/shading.hpp"

#include "npbir/geometry.hpp"
#include "npbir/io_metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace npbir::shading {

namespace {

double lambda_term(double alpha, double cos_theta) {
    const double c2 = cos_theta * cos_theta;
    const double t2 = std::max(0.0, 1.0 - c2) / c2;
    return 0.5 * (std::sqrt(1.0 + alpha * alpha * t2) - 1.0);
}

double d_lambda_d_alpha(double alpha, double cos_theta) {
    const double c2 = cos_theta * cos_theta;
    const double t2 = std::max(0.0, 1.0 - c2) / c2;
    return 0.5 * alpha * t2 / std::sqrt(1.0 + alpha * alpha * t2);
}

Vec3 to_local(const Vec3& v, const Vec3& t, const Vec3& b, const Vec3& n) { return {v.dot(t), v.dot(b), v.dot(n)}; }

double specular_pdf(double alpha, const Vec3& n, const Vec3& wo, const Vec3& wi) {
    const Vec3 h = (wi + wo).normalized();
    const double cos_o = n.dot(wo);
    return smith_g1(alpha, cos_o) * ggx_distribution(alpha, n.dot(h)) / (4.0 * cos_o);
}

}  // namespace

double ggx_distribution(double alpha, double cos_h) {
    if (cos_h <= 0.0) return 0.0;
    const double a2 = alpha * alpha;
    const double den = cos_h * cos_h * (a2 - 1.0) + 1.0;
    return a2 / (kPi * den * den);
}

double smith_g1(double alpha, double cos_theta) {
    if (cos_theta <= 0.0) return 0.0;
    return 1.0 / (1.0 + lambda_term(alpha, cos_theta));
}

double ggx_specular(double roughness, double f0, const Vec3& n, const Vec3& wi, const Vec3& wo) {
    const double ci = n.dot(wi), co = n.dot(wo);
    if (ci <= 0.0 || co <= 0.0) return 0.0;
    const double r = clamp_roughness(roughness);
    const double alpha = r * r;
    const Vec3 h = (wi + wo).normalized();
    const double g = 1.0 / (1.0 + lambda_term(alpha, ci) + lambda_term(alpha, co));
    return ggx_distribution(alpha, n.dot(h)) * schlick(f0, h.dot(wo)) * g / (4.0 * ci * co);
}

BrdfEval brdf_eval_grad(const BrdfParams& p, const Vec3& n, const Vec3& wi, const Vec3& wo) {
    BrdfEval out;
    const double ci = n.dot(wi), co = n.dot(wo);
    if (ci <= 0.0 || co <= 0.0) return out;
    const double s = p.specular;
    const double trans = (1.0 - s * schlick(p.f0, ci)) * (1.0 - s * schlick(p.f0, co));
    out.d_albedo = trans * kInvPi;
    out.value = p.albedo * out.d_albedo;
    if (s == 0.0) return out;

    const double r = clamp_roughness(p.roughness);
    const double alpha = r * r;
    const Vec3 h = (wi + wo).normalized();
    const double ch = n.dot(h);
    const double d = ggx_distribution(alpha, ch);
    const double li = lambda_term(alpha, ci), lo = lambda_term(alpha, co);
    const double g = 1.0 / (1.0 + li + lo);
    const double f = schlick(p.f0, h.dot(wo));
    const double k = f / (4.0 * ci * co);
    out.value += s * d * g * k;

    if (p.roughness >= kMinRoughness && p.roughness <= kMaxRoughness && d > 0.0) {
        const double den = ch * ch * (alpha * alpha - 1.0) + 1.0;
        const double dd = d * (2.0 / alpha - 4.0 * alpha * ch * ch / den);
        const double dg = -g * g * (d_lambda_d_alpha(alpha, ci) + d_lambda_d_alpha(alpha, co));
        out.d_roughness = s * k * (dd * g + d * dg) * 2.0 * r;
    }
    return out;
}

double specular_sampling_weight(const BrdfParams& p, const Vec3& n, const Vec3& wo) {
    if (p.specular <= 0.0) return 0.0;
    const double fs = p.specular * schlick(p.f0, n.dot(wo));
    const double kd = luminance(p.albedo) * (1.0 - fs);
    const double w = fs + kd > 0.0 ? fs / (fs + kd) : 1.0;
    return std::clamp(w, 0.1, 0.9);
}

BrdfSample brdf_sample(const BrdfParams& p, const Vec3& n, const Vec3& wo, const Vec2& u, double u_lobe) {
    BrdfSample out;
    if (n.dot(wo) <= 0.0) return out;
    Vec3 t, b;
    make_frame(n, t, b);
    const double p_spec = specular_sampling_weight(p, n, wo);
    if (u_lobe < p_spec) {
        const double r = clamp_roughness(p.roughness);
        const double alpha = r * r;
        const Vec3 o = to_local(wo, t, b, n);
        const Vec3 vh = Vec3(alpha * o.x(), alpha * o.y(), o.z()).normalized();
        const double len2 = vh.x() * vh.x() + vh.y() * vh.y();
        const Vec3 t1 = len2 > 0.0 ? Vec3(-vh.y(), vh.x(), 0.0) / std::sqrt(len2) : Vec3(1.0, 0.0, 0.0);
        const Vec3 t2 = vh.cross(t1);
        const double rr = std::sqrt(u.x());
        const double phi = 2.0 * kPi * u.y();
        const double p1 = rr * std::cos(phi);
        double p2 = rr * std::sin(phi);
        const double sw = 0.5 * (1.0 + vh.z());
        p2 = (1.0 - sw) * std::sqrt(std::max(0.0, 1.0 - p1 * p1)) + sw * p2;
        const Vec3 nh = p1 * t1 + p2 * t2 + std::sqrt(std::max(0.0, 1.0 - p1 * p1 - p2 * p2)) * vh;
        const Vec3 hl = Vec3(alpha * nh.x(), alpha * nh.y(), std::max(0.0, nh.z())).normalized();
        const Vec3 h = hl.x() * t + hl.y() * b + hl.z() * n;
        out.wi = (2.0 * wo.dot(h) * h - wo).normalized();
    } else {
        const Vec3 l = sample_cosine_hemisphere(u);
        out.wi = (l.x() * t + l.y() * b + l.z() * n).normalized();
    }
    if (n.dot(out.wi) <= 0.0) return out;
    out.pdf = brdf_pdf(p, n, wo, out.wi);
    out.valid = out.pdf > 0.0;
    return out;
}

double brdf_pdf(const BrdfParams& p, const Vec3& n, const Vec3& wo, const Vec3& wi) {
    const double ci = n.dot(wi), co = n.dot(wo);
    if (ci <= 0.0 || co <= 0.0) return 0.0;
    const double p_spec = specular_sampling_weight(p, n, wo);
    double pdf = (1.0 - p_spec) * ci * kInvPi;
    if (p_spec > 0.0) {
        const double r = clamp_roughness(p.roughness);
        pdf += p_spec * specular_pdf(r * r, n, wo, wi);
    }
    return pdf;
}

// ---------------------------------------------------------------------------

Rgb sg_eval(const SgMixture& mix, const Vec3& w) {
    Rgb out = Rgb::Zero();
    for (const auto& l : mix) out += l.amplitude * std::exp(l.lambda * (l.axis.dot(w) - 1.0));
    return out;
}

std::vector<double> sg_flatten(const SgMixture& mix) {
    std::vector<double> flat(mix.size() * kSgParams);
    for (std::size_t k = 0; k < mix.size(); ++k) {
        double* q = flat.data() + k * kSgParams;
        for (int i = 0; i < 3; ++i) q[i] = mix[k].axis[i];
        q[3] = mix[k].lambda;
        for (int i = 0; i < 3; ++i) q[4 + i] = mix[k].amplitude[i];
    }
    return flat;
}

void sg_unflatten(SgMixture& mix, std::span<const double> flat) {
    if (flat.size() % kSgParams != 0) throw ArgumentError("sg_unflatten: size is not a multiple of 7");
    mix.resize(flat.size() / kSgParams);
    for (std::size_t k = 0; k < mix.size(); ++k) {
        const double* q = flat.data() + k * kSgParams;
        mix[k].axis = Vec3(q[0], q[1], q[2]);
        mix[k].lambda = q[3];
        mix[k].amplitude = Rgb(q[4], q[5], q[6]);
    }
}

void sg_eval_backward(const SgMixture& mix, const Vec3& w, const Rgb& d_out, std::span<double> grad) {
    if (grad.size() != mix.size() * kSgParams) throw ArgumentError("sg_eval_backward: gradient size mismatch");
    for (std::size_t k = 0; k < mix.size(); ++k) {
        const auto& l = mix[k];
        const double cos = l.axis.dot(w);
        const double e = std::exp(l.lambda * (cos - 1.0));
        const double ad = (l.amplitude * d_out).sum() * e;
        double* g = grad.data() + k * kSgParams;
        for (int i = 0; i < 3; ++i) g[i] += l.lambda * w[i] * ad;
        g[3] += (cos - 1.0) * ad;
        for (int i = 0; i < 3; ++i) g[4 + i] += e * d_out[i];
    }
}

void sg_project(SgMixture& mix) {
    for (auto& l : mix) {
        const double len = l.axis.norm();
        l.axis = len > 1e-12 ? Vec3(l.axis / len) : Vec3(Vec3::UnitY());
        l.lambda = std::max(0.0, l.lambda);
        l.amplitude = l.amplitude.max(0.0);
    }
}

std::vector<Vec3> fibonacci_sphere(int n) {
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * i;
        out.emplace_back(r * std::cos(phi), y, r * std::sin(phi));
    }
    return out;
}

SgMixture init_sg(int lobes, const Rgb& mean, double lambda) {
    if (lobes < 1) throw ArgumentError("init_sg: need at least one lobe");
    SgMixture mix;
    for (const auto& a : fibonacci_sphere(lobes)) mix.push_back({a, lambda, mean});
    return mix;
}

// ---------------------------------------------------------------------------

Vec3 latlong_direction(double phi, double theta) {
    const double st = std::sin(theta);
    return {st * std::cos(phi), std::cos(theta), st * std::sin(phi)};
}

Vec2 latlong_angles(const Vec3& w) {
    double phi = std::atan2(w.z(), w.x());
    if (phi < 0.0) phi += 2.0 * kPi;
    if (phi >= 2.0 * kPi) phi = 0.0;
    return {phi, std::acos(std::clamp(w.y(), -1.0, 1.0))};
}

EnvMap::EnvMap(int w, int h, const Rgb& fill) : image(w, h, 3) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) image.set_rgb(x, y, fill);
}

Vec3 EnvMap::texel_direction(int x, int y) const {
    return latlong_direction(2.0 * kPi * (x + 0.5) / width(), kPi * (y + 0.5) / height());
}

double EnvMap::texel_solid_angle(int y) const {
    const double t0 = kPi * y / height(), t1 = kPi * (y + 1) / height();
    return 2.0 * kPi / width() * (std::cos(t0) - std::cos(t1));
}

EnvStencil env_stencil(int width, int height, const Vec3& w) {
    const Vec2 a = latlong_angles(w);
    const double fx = a.x() / (2.0 * kPi) * width - 0.5;
    const double fy = std::clamp(a.y() / kPi * height - 0.5, 0.0, static_cast<double>(height - 1));
    const double xf = std::floor(fx);
    const double tx = fx - xf;
    int x0 = static_cast<int>(xf) % width;
    if (x0 < 0) x0 += width;
    const int x1 = (x0 + 1) % width;
    const int y0 = std::min(static_cast<int>(fy), height - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double ty = fy - y0;
    auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
    EnvStencil s;
    s.texel = {idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1)};
    s.weight = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    return s;
}

Rgb envmap_lookup(const EnvMap& env, const Vec3& w) {
    const EnvStencil s = env_stencil(env.width(), env.height(), w);
    auto texel = [&](int k) {
        const double* t = env.image.data.data() + s.texel[k] * 3;
        return Rgb(t[0], t[1], t[2]);
    };
    // Interpolation form of the stencil weights: exact on constant maps.
    const double tx = s.weight[1] + s.weight[3], ty = s.weight[2] + s.weight[3];
    const Rgb top = texel(0) + tx * (texel(1) - texel(0));
    const Rgb bottom = texel(2) + tx * (texel(3) - texel(2));
    return top + ty * (bottom - top);
}

EnvMap envmap_from_sg(const SgMixture& mix, int width, int height) {
    if (width < 2 || height < 2) throw ArgumentError("envmap_from_sg: size must be at least 2x2");
    EnvMap env(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) env.image.set_rgb(x, y, sg_eval(mix, env.texel_direction(x, y)));
    return env;
}

void save_envmap(const std::string& path, const EnvMap& env) { io::write_pfm(path, env.image); }

EnvMap load_envmap(const std::string& path) {
    EnvMap env;
    env.image = io::read_pfm(path);
    if (env.image.channels != 3) throw LoadError("environment map must have 3 channels: " + path);
    for (double v : env.image.data)
        if (!(v >= 0.0) || !std::isfinite(v)) throw LoadError("environment map has negative or non-finite texels");
    return env;
}

void save_sg(const std::string& path, const SgMixture& mix) {
    nlohmann::json lobes = nlohmann::json::array();
    for (const auto& l : mix)
        lobes.push_back({{"axis", {l.axis.x(), l.axis.y(), l.axis.z()}},
                         {"lambda", l.lambda},
                         {"amplitude", {l.amplitude[0], l.amplitude[1], l.amplitude[2]}}});
    std::ofstream os(path);
    if (!os) throw LoadError("cannot write " + path);
    os << nlohmann::json{{"lobes", lobes}}.dump(1) << '\n';
    if (!os) throw LoadError("write failed: " + path);
}

SgMixture load_sg(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot read " + path);
    SgMixture mix;
    try {
        const auto j = nlohmann::json::parse(is);
        for (const auto& l : j.at("lobes")) {
            SgLobe lobe;
            const auto& a = l.at("axis");
            const auto& c = l.at("amplitude");
            lobe.axis = Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
            lobe.lambda = l.at("lambda").get<double>();
            lobe.amplitude = Rgb(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
            mix.push_back(lobe);
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
    for (const auto& l : mix)
        if (!l.axis.allFinite() || !std::isfinite(l.lambda) || l.lambda < 0.0 || !l.amplitude.allFinite() ||
            (l.amplitude.array() < 0.0).any() || l.axis.norm() == 0.0)
            throw LoadError(path + ": invalid lobe");
    return mix;
}

// ---------------------------------------------------------------------------

EnvSampler::EnvSampler(const EnvMap& env) : width_(env.width()), height_(env.height()) {
    if (width_ < 1 || height_ < 1) throw ArgumentError("EnvSampler: empty map");
    std::vector<std::vector<double>> w(static_cast<std::size_t>(height_), std::vector<double>(width_));
    double sum = 0.0;
    for (int y = 0; y < height_; ++y) {
        const double st = std::sin(kPi * (y + 0.5) / height_);
        for (int x = 0; x < width_; ++x) {
            const double v = std::max(0.0, luminance(env.texel(x, y))) * st;
            w[y][x] = v;
            sum += v;
        }
    }
    const double floor = sum > 0.0 ? 1e-2 * sum / (static_cast<double>(width_) * height_) : 1.0;
    std::vector<double> row_sums(static_cast<std::size_t>(height_), 0.0);
    cols_.clear();
    for (int y = 0; y < height_; ++y) {
        const double st = std::sin(kPi * (y + 0.5) / height_);
        for (int x = 0; x < width_; ++x) {
            w[y][x] += floor * st;
            row_sums[y] += w[y][x];
        }
        cols_.emplace_back(std::move(w[y]));
    }
    rows_ = Distribution1D(std::move(row_sums));
}

Vec3 EnvSampler::sample(const Vec2& u, double* pdf) const {
    double pr = 0.0, pc = 0.0;
    const std::size_t y = rows_.sample(u.y(), &pr);
    const std::size_t x = cols_[y].sample(u.x(), &pc);
    const double a = std::clamp((u.x() - cols_[y].cdf(x)) / pc, 0.0, 1.0 - 1e-12);
    const double b = std::clamp((u.y() - rows_.cdf(y)) / pr, 0.0, 1.0 - 1e-12);
    const double phi = 2.0 * kPi * (static_cast<double>(x) + a) / width_;
    const double theta = kPi * (static_cast<double>(y) + b) / height_;
    const Vec3 w = latlong_direction(phi, theta);
    if (pdf) {
        const double st = std::sin(theta);
        *pdf = st > 0.0 ? pr * pc * width_ * height_ / (2.0 * kPi * kPi * st) : 0.0;
    }
    return w;
}

double EnvSampler::pdf(const Vec3& w) const {
    const Vec2 a = latlong_angles(w);
    const int x = std::clamp(static_cast<int>(a.x() / (2.0 * kPi) * width_), 0, width_ - 1);
    const int y = std::clamp(static_cast<int>(a.y() / kPi * height_), 0, height_ - 1);
    const double st = std::sin(a.y());
    if (st <= 0.0) return 0.0;
    return rows_.pmf(static_cast<std::size_t>(y)) * cols_[static_cast<std::size_t>(y)].pmf(static_cast<std::size_t>(x)) *
           width_ * height_ / (2.0 * kPi * kPi * st);
}

// ---------------------------------------------------------------------------

BackgroundObservation averaged_background(const PosedDataset& dataset, const geometry::TriMesh& mesh,
                                          const geometry::Bvh& bvh, int width, int height) {
    if (width < 2 || height < 2) throw ArgumentError("averaged_background: size must be at least 2x2");
    std::vector<Rgb> sum(static_cast<std::size_t>(width) * height, Rgb::Zero());
    std::vector<long> count(sum.size(), 0);
    for (const View* v : dataset.split("train")) {
        const Camera& cam = v->camera;
        for (int py = 0; py < cam.height; ++py)
            for (int px = 0; px < cam.width; ++px) {
                Vec3 o, d;
                cam.ray(px + 0.5, py + 0.5, o, d);
                if (!mesh.empty() && bvh.occluded(mesh, o, d, 0.0, kInf)) continue;
                const Vec2 a = latlong_angles(d);
                const int x = std::clamp(static_cast<int>(a.x() / (2.0 * kPi) * width), 0, width - 1);
                const int y = std::clamp(static_cast<int>(a.y() / kPi * height), 0, height - 1);
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                sum[i] += v->image.rgb(px, py);
                ++count[i];
            }
    }
    BackgroundObservation out{EnvMap(width, height), ImageBuffer(width, height, 1)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            if (count[i] == 0) continue;
            out.env.image.set_rgb(x, y, sum[i] / static_cast<double>(count[i]));
            out.coverage.at(x, y) = 1.0;
        }
    return out;
}

}  // namespace npbir::shading
