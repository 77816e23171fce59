// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/pipeline.hpp"

#include "npbir/io_metrics.hpp"
#include "npbir/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace npbir::pipeline {

namespace fs = std::filesystem;

namespace {

std::array<int, 3> int3(const Json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }
Vec3 vec3(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

void merge_into(Json& base, const Json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ArgumentError("config: expected an object at '" + prefix + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ArgumentError("config: unknown key '" + key + "'");
        Json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_into(slot, it.value(), key);
            continue;
        }
        const Json& v = it.value();
        const bool ok = slot.is_null() || (slot.is_number() && v.is_number()) ||
                        (slot.is_boolean() && v.is_boolean()) || (slot.is_string() && v.is_string()) ||
                        (slot.is_array() && v.is_array());
        if (!ok) throw ArgumentError("config: wrong type for '" + key + "': " + v.dump());
        slot = v;
    }
}

void log_line(const RunContext& ctx, const char* fmt, auto... args) {
    if (!ctx.verbose) return;
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

bool every(int iteration, int total, int parts = 20) { return iteration % std::max(1, total / parts) == 0; }

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw ArgumentError(what + ": '" + p.string() + "' not found");
}

// Accepts either an assets directory or a stage directory holding assets/.
std::string assets_dir(const std::string& dir) {
    if (fs::is_regular_file(fs::path(dir) / "assets.json")) return dir;
    if (fs::is_regular_file(fs::path(dir) / "assets" / "assets.json")) return (fs::path(dir) / "assets").string();
    return {};
}

geometry::TriMesh load_any_mesh(const std::string& path) {
    return fs::path(path).extension() == ".obj" ? geometry::read_obj(path) : geometry::load_mesh(path);
}

std::vector<std::string> row_strings(const MetricRow& r) {
    return {r.view, io::format_double(r.psnr), io::format_double(r.ssim), io::format_double(r.mse)};
}

void write_table(const fs::path& path, const std::vector<MetricRow>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows) out.push_back(row_strings(r));
    out.push_back(row_strings(mean_row(rows)));
    io::write_csv(path.string(), {"view", "psnr", "ssim", "mse"}, out);
}

MetricRow compare(const std::string& view, const ImageBuffer& a, const ImageBuffer& b) {
    return {view, io::psnr(a, b), io::ssim(a, b), io::mse(a, b)};
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json summary_of(const std::vector<MetricRow>& rows) {
    const auto m = mean_row(rows);
    return {{"psnr", finite_or_null(m.psnr)}, {"ssim", m.ssim}, {"mse", m.mse}, {"views", rows.size()}};
}

ImageBuffer stack(const std::vector<ImageBuffer>& imgs) {
    ImageBuffer out(imgs.front().width, 0, imgs.front().channels);
    for (const auto& i : imgs) {
        out.height += i.height;
        out.data.insert(out.data.end(), i.data.begin(), i.data.end());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

Json default_config() {
    const volren::Stage1Config s1;
    const distill::Stage2Config s2;
    const pbir::Stage3Schedule s3;
    return {
        {"seed", nullptr},
        {"mask_source", "provided"},
        {"material", {{"f0", 0.04}, {"specular", 1.0}}},
        {"toy", {{"views", 16}, {"width", 64}, {"height", 64}, {"texel_res", 256}, {"mask_supersample", 4}}},
        {"render", {{"spp", 256}, {"max_depth", 8}, {"gi", true}, {"jitter", true}}},
        {"surface",
         {{"iterations", s1.iterations},
          {"batch_rays", s1.batch_rays},
          {"w_lap", s1.w_lap},
          {"w_pp_rgb", s1.w_pp_rgb},
          {"lr_sdf", s1.lr_sdf},
          {"lr_sdf_final", s1.lr_sdf_final},
          {"lr_sdf_decay_iter", s1.lr_sdf_decay_iter},
          {"lr_head", s1.lr_head},
          {"lr_feat", s1.lr_feat},
          {"lr_background", s1.lr_background},
          {"adam_beta1", s1.adam_beta1},
          {"adam_beta2", s1.adam_beta2},
          {"adam_eps", s1.adam_eps},
          {"sharpness_start", s1.sharpness_start},
          {"sharpness_increment", s1.sharpness_increment},
          {"sharpness_cap", s1.sharpness_cap},
          {"upscale_every", s1.upscale_every},
          {"upscale_until", s1.upscale_until},
          {"fg_resolution", s1.fg_resolution},
          {"bg_resolution", s1.bg_resolution},
          {"fg_bbox_min", {s1.fg_bbox.lo.x(), s1.fg_bbox.lo.y(), s1.fg_bbox.lo.z()}},
          {"fg_bbox_max", {s1.fg_bbox.hi.x(), s1.fg_bbox.hi.y(), s1.fg_bbox.hi.z()}},
          {"bg_scale", s1.bg_scale},
          {"feature_width", s1.feature_width},
          {"hidden_width", s1.hidden_width},
          {"encoding_degree", s1.encoding_degree},
          {"init_radius_fraction", s1.init_radius_fraction},
          {"huber_t_init", s1.huber_t_init},
          {"largest_component", true}}},
        {"distill",
         {{"iterations", s2.iterations},
          {"w_v_reg", s2.w_v_reg},
          {"w_bg", s2.w_bg},
          {"lr_vertex", s2.lr_vertex},
          {"lr_sg", s2.lr_sg},
          {"init_roughness", s2.init_roughness},
          {"sg_lobes", s2.sg_lobes},
          {"sg_lambda", s2.sg_lambda},
          {"directions", {16, 16}},
          {"background_resolution", {64, 32}},
          {"texel_res", 256}}},
        {"pbir",
         {{"step1_iterations", s3.step1_iterations},
          {"step2_iterations", s3.step2_iterations},
          {"step3_iterations", s3.step3_iterations},
          {"lr_albedo", s3.lr_albedo},
          {"lr_roughness", s3.lr_roughness},
          {"lr_sg", s3.lr_sg},
          {"lr_env", s3.lr_env},
          {"lr_vertex", s3.lr_vertex},
          {"lambda_env", s3.lambda_env},
          {"lambda_vertex", s3.lambda_vertex},
          {"w_mask", s3.weights.w_mask},
          {"w_reg", s3.weights.w_reg},
          {"env_resolution", {s3.env_width, s3.env_height}},
          {"batch_pixels", s3.batch_pixels},
          {"mask_supersample", s3.mask_supersample},
          {"spp", s3.render.spp},
          {"max_depth", s3.render.max_depth},
          {"gi", s3.render.gi},
          {"texel_res", 256},
          {"const_init_level", 0.5},
          {"const_init_lobes", 256}}},
    };
}

Json merge_config(const Json& base, const Json& patch) {
    Json out = base;
    merge_into(out, patch, "");
    return out;
}

Json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("config: cannot open '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw LoadError("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return merge_config(default_config(), j);
}

void apply_override(Json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const Json::exception&) {
        value = text;
    }
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    Json patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
    cfg = merge_config(cfg, patch);
}

std::string config_hash(const Json& cfg) { return io::sha256_hex(cfg.dump()); }

uint64_t resolve_seed(Json& cfg, bool deterministic) {
    if (!cfg["seed"].is_null()) return cfg["seed"].get<uint64_t>();
    uint64_t seed = 0;
    if (!deterministic) {
        std::random_device rd;
        seed = (static_cast<uint64_t>(rd()) << 32) ^ rd();
    }
    cfg["seed"] = seed;
    return seed;
}

volren::Stage1Config stage1_config(const Json& cfg) {
    const Json& s = cfg.at("surface");
    volren::Stage1Config c;
    c.iterations = s.at("iterations");
    c.batch_rays = s.at("batch_rays");
    c.w_lap = s.at("w_lap");
    c.w_pp_rgb = s.at("w_pp_rgb");
    c.lr_sdf = s.at("lr_sdf");
    c.lr_sdf_final = s.at("lr_sdf_final");
    c.lr_sdf_decay_iter = s.at("lr_sdf_decay_iter");
    c.lr_head = s.at("lr_head");
    c.lr_feat = s.at("lr_feat");
    c.lr_background = s.at("lr_background");
    c.adam_beta1 = s.at("adam_beta1");
    c.adam_beta2 = s.at("adam_beta2");
    c.adam_eps = s.at("adam_eps");
    c.sharpness_start = s.at("sharpness_start");
    c.sharpness_increment = s.at("sharpness_increment");
    c.sharpness_cap = s.at("sharpness_cap");
    c.upscale_every = s.at("upscale_every");
    c.upscale_until = s.at("upscale_until");
    c.fg_resolution = int3(s.at("fg_resolution"));
    c.bg_resolution = int3(s.at("bg_resolution"));
    c.fg_bbox = {vec3(s.at("fg_bbox_min")), vec3(s.at("fg_bbox_max"))};
    c.bg_scale = s.at("bg_scale");
    c.feature_width = s.at("feature_width");
    c.hidden_width = s.at("hidden_width");
    c.encoding_degree = s.at("encoding_degree");
    c.init_radius_fraction = s.at("init_radius_fraction");
    c.huber_t_init = s.at("huber_t_init");
    c.seed = cfg.at("seed").is_null() ? 0 : cfg.at("seed").get<uint64_t>();
    return c;
}

distill::Stage2Config stage2_config(const Json& cfg) {
    const Json& s = cfg.at("distill");
    distill::Stage2Config c;
    c.iterations = s.at("iterations");
    c.w_v_reg = s.at("w_v_reg");
    c.w_bg = s.at("w_bg");
    c.lr_vertex = s.at("lr_vertex");
    c.lr_sg = s.at("lr_sg");
    c.init_roughness = s.at("init_roughness");
    c.sg_lobes = s.at("sg_lobes");
    c.sg_lambda = s.at("sg_lambda");
    c.model.f0 = cfg.at("material").at("f0");
    c.model.specular = cfg.at("material").at("specular");
    c.seed = cfg.at("seed").is_null() ? 0 : cfg.at("seed").get<uint64_t>();
    return c;
}

pbir::Stage3Schedule stage3_schedule(const Json& cfg) {
    const Json& s = cfg.at("pbir");
    pbir::Stage3Schedule c;
    c.step1_iterations = s.at("step1_iterations");
    c.step2_iterations = s.at("step2_iterations");
    c.step3_iterations = s.at("step3_iterations");
    c.lr_albedo = s.at("lr_albedo");
    c.lr_roughness = s.at("lr_roughness");
    c.lr_sg = s.at("lr_sg");
    c.lr_env = s.at("lr_env");
    c.lr_vertex = s.at("lr_vertex");
    c.lambda_env = s.at("lambda_env");
    c.lambda_vertex = s.at("lambda_vertex");
    c.weights.w_mask = s.at("w_mask");
    c.weights.w_reg = s.at("w_reg");
    c.env_width = s.at("env_resolution").at(0);
    c.env_height = s.at("env_resolution").at(1);
    c.batch_pixels = s.at("batch_pixels");
    c.mask_supersample = s.at("mask_supersample");
    c.render.spp = s.at("spp");
    c.render.max_depth = s.at("max_depth");
    c.render.gi = s.at("gi");
    c.seed = cfg.at("seed").is_null() ? 0 : cfg.at("seed").get<uint64_t>();
    c.render.seed = c.seed;
    c.validate();
    return c;
}

pbir::RenderConfig render_config(const Json& cfg) {
    const Json& s = cfg.at("render");
    pbir::RenderConfig c;
    c.spp = s.at("spp");
    c.max_depth = s.at("max_depth");
    c.gi = s.at("gi");
    c.jitter = s.at("jitter");
    c.seed = cfg.at("seed").is_null() ? 0 : cfg.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Manifests

Json hash_files(const FileSet& set) {
    Json out = Json::object();
    auto entry = [](const fs::path& p) {
        const std::string bytes = io::read_file(p.string());
        return Json{{"sha256", io::sha256_hex(bytes)}, {"git_sha1", io::git_blob_sha1(bytes)}, {"bytes", bytes.size()}};
    };
    const fs::path root(set.root);
    if (fs::is_regular_file(root)) {
        out[set.role] = entry(root);
        return out;
    }
    if (!fs::is_directory(root)) throw LoadError("manifest: '" + set.root + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, root).generic_string();
        out[set.role.empty() ? rel : set.role + "/" + rel] = entry(f);
    }
    return out;
}

std::string write_manifest(const std::string& out_dir, const std::string& command, const Json& cfg, uint64_t seed,
                           bool deterministic, const std::vector<FileSet>& inputs) {
    const fs::path manifest = fs::path(out_dir) / "manifest.json";
    fs::remove(manifest);
    Json in = Json::object();
    for (const auto& s : inputs) in.update(hash_files(s));
    Json j{{"tool", "npbir"},
           {"command", command},
           {"config", cfg},
           {"config_hash", config_hash(cfg)},
           {"seed", seed},
           {"deterministic", deterministic},
           {"inputs", in},
           {"outputs", hash_files({"", out_dir})}};
    const std::string hash = io::sha256_hex(j.dump());
    j["manifest_hash"] = hash;
    std::ofstream os(manifest);
    os << j.dump(2) << "\n";
    if (!os) throw LoadError("manifest: cannot write '" + manifest.string() + "'");
    return hash;
}

std::string read_manifest_hash(const std::string& dir) {
    const fs::path p = fs::path(dir) / "manifest.json";
    std::ifstream in(p);
    if (!in) throw LoadError("manifest: '" + p.string() + "' not found");
    try {
        return Json::parse(in).at("manifest_hash").get<std::string>();
    } catch (const Json::exception& e) {
        throw LoadError("manifest: '" + p.string() + "' is malformed: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Helpers

geometry::TriMesh extract_surface(const grid::SdfScene& scene, bool largest_only) {
    auto mesh = geometry::marching_cubes(scene.fg_sdf);
    geometry::weld_and_clean(mesh, 1e-9 * scene.fg_bbox().diagonal());
    if (largest_only) mesh = geometry::largest_component(mesh);
    if (mesh.empty()) throw NumericalError("surface: the foreground SDF has no zero crossing");
    mesh.normals = geometry::vertex_normals_from_sdf(mesh, scene.fg_sdf);
    return mesh;
}

ImageBuffer tonemap(const ImageBuffer& hdr, double exposure) {
    ImageBuffer out = hdr;
    const double k = std::exp2(exposure);
    for (double& v : out.data) v = std::pow(std::clamp(v * k, 0.0, 1.0), 1.0 / 2.2);
    return out;
}

void prepare_masks(PosedDataset& dataset, const geometry::TriMesh& mesh, const std::string& source, int supersample) {
    if (source == "generated") {
        const geometry::Bvh bvh(mesh);
        for (auto& v : dataset.views) v.mask = volren::render_mask(mesh, bvh, v.camera, supersample);
        return;
    }
    if (source != "provided")
        throw ArgumentError("mask_source must be \"provided\" or \"generated\", got \"" + source + "\"");
}

// ---------------------------------------------------------------------------
// Stages

void cmd_make_toy(toy::Kind kind, const std::string& out, RunContext ctx) {
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    const Json& t = ctx.config.at("toy");
    auto gt = toy::make_toy_assets(kind, t.at("texel_res"));
    gt.f0 = ctx.config.at("material").at("f0");
    gt.specular = ctx.config.at("material").at("specular");
    // Render from the stored (f32 texture) assets so that `render` reproduces the images.
    const std::string adir = (fs::path(out) / "assets").string();
    pbir::save_assets(adir, gt);
    gt = pbir::load_assets(adir);
    const auto cams = toy::toy_cameras(kind, t.at("views"), t.at("width"), t.at("height"));
    log_line(ctx, "make-toy: rendering %zu views of %s", cams.size(), toy::kind_name(kind).c_str());
    auto ds = toy::render_dataset(gt, cams, render_config(ctx.config), t.at("mask_supersample"));
    const fs::path data = fs::path(out) / "data";
    fs::create_directories(data);
    io::write_pfm((data / "env.pfm").string(), shading::envmap_from_sg(gt.light.sg, 128, 64).image);
    ds.env_path = (data / "env.pfm").string();
    io::save_dataset(data.string(), ds);
    write_manifest(out, "make-toy " + toy::kind_name(kind), ctx.config, seed, ctx.deterministic, {});
}

void cmd_surface(const std::string& data, const std::string& out, RunContext ctx) {
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    const auto ds = io::load_dataset(data);
    const auto cfg = stage1_config(ctx.config);
    std::vector<std::vector<std::string>> rows;
    const auto scene = volren::train_surface(ds, cfg, [&](const volren::Stage1LogRow& r) {
        rows.push_back({std::to_string(r.iteration), io::format_double(r.photo), io::format_double(r.lap),
                        io::format_double(r.pp_rgb), io::format_double(r.sharpness), io::format_double(r.huber_t)});
        if (every(r.iteration, cfg.iterations)) log_line(ctx, "surface %6d  photo %.5g", r.iteration, r.photo);
    });
    const auto mesh = extract_surface(scene, ctx.config.at("surface").at("largest_component"));
    fs::create_directories(out);
    grid::save_scene((fs::path(out) / "scene.npbg").string(), scene);
    geometry::save_mesh((fs::path(out) / "mesh.npbm").string(), mesh);
    geometry::write_obj((fs::path(out) / "mesh.obj").string(), mesh);
    io::write_csv((fs::path(out) / "log.csv").string(), {"iteration", "photo", "lap", "pp_rgb", "sharpness", "huber_t"},
                  rows);
    write_manifest(out, "surface", ctx.config, seed, ctx.deterministic, {{"data", data}});
}

void cmd_distill(const std::string& data, const std::string& surface_dir, const std::string& out, RunContext ctx) {
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    const fs::path sdir(surface_dir);
    require_file(sdir / "scene.npbg", "distill: stage-1 checkpoint (run `npbir surface` first)");
    require_file(sdir / "mesh.npbm", "distill: stage-1 mesh (run `npbir surface` first)");
    const Json& d = ctx.config.at("distill");
    const auto scene = grid::load_scene((sdir / "scene.npbg").string());
    auto mesh = geometry::load_mesh((sdir / "mesh.npbm").string());
    if (mesh.normals.size() != mesh.vertex_count()) mesh.normals = geometry::vertex_normals_from_sdf(mesh, scene.fg_sdf);
    auto ds = io::load_dataset(data);
    prepare_masks(ds, mesh, ctx.config.at("mask_source"), ctx.config.at("toy").at("mask_supersample"));

    const auto field = distill::scene_field(scene);
    const auto omega = distill::make_direction_set(d.at("directions").at(0), d.at("directions").at(1));
    const geometry::Bvh bvh(mesh);
    log_line(ctx, "distill: transport for %zu vertices x %zu directions", mesh.vertex_count(), omega.size());
    const auto tables = distill::precompute_transport(mesh, bvh, field, omega);
    const auto cfg = stage2_config(ctx.config);
    distill::init_materials(mesh, field, omega, cfg.init_roughness);
    const auto bg = shading::averaged_background(ds, mesh, bvh, d.at("background_resolution").at(0),
                                                 d.at("background_resolution").at(1));
    std::vector<std::vector<std::string>> rows;
    const auto result = distill::train_distill(mesh, tables, field, &bg, cfg, {}, [&](const distill::Stage2LogRow& r) {
        rows.push_back({std::to_string(r.iteration), io::format_double(r.losses.distill),
                        io::format_double(r.losses.v_reg), io::format_double(r.losses.bg),
                        io::format_double(r.losses.total)});
        if (every(r.iteration, cfg.iterations)) log_line(ctx, "distill %6d  total %.5g", r.iteration, r.losses.total);
    });

    fs::create_directories(out);
    geometry::save_mesh((fs::path(out) / "mesh.npbm").string(), result.mesh);
    shading::save_sg((fs::path(out) / "sg.json").string(), result.sg);
    const int res = geometry::atlas_resolution(result.mesh.triangle_count(), d.at("texel_res"));
    const auto assets = pbir::assets_from_vertices(result.mesh, result.sg, res, cfg.model.f0, cfg.model.specular);
    pbir::save_assets((fs::path(out) / "assets").string(), assets);
    io::write_csv((fs::path(out) / "log.csv").string(), {"iteration", "distill", "v_reg", "bg", "total"}, rows);
    write_manifest(out, "distill", ctx.config, seed, ctx.deterministic,
                   {{"data", data}, {"surface/scene.npbg", (sdir / "scene.npbg").string()},
                    {"surface/mesh.npbm", (sdir / "mesh.npbm").string()}});
}

void cmd_pbir(const PbirInputs& in, const std::string& out, RunContext ctx) {
    if (!in.schedule.empty()) {
        std::ifstream is(in.schedule);
        if (!is) throw ArgumentError("pbir: schedule '" + in.schedule + "' not found");
        Json s;
        try {
            s = Json::parse(is);
        } catch (const Json::exception& e) {
            throw LoadError("pbir: schedule '" + in.schedule + "' is not valid JSON: " + e.what());
        }
        ctx.config = merge_config(ctx.config, s.contains("pbir") ? s : Json{{"pbir", s}});
    }
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    const Json& p = ctx.config.at("pbir");
    std::vector<FileSet> inputs{{"data", in.data}};
    if (!in.schedule.empty()) inputs.push_back({"schedule", in.schedule});

    pbir::TexturedAssets init;
    const std::string adir = in.assets.empty() ? std::string() : assets_dir(in.assets);
    if (!in.const_init) {
        if (adir.empty())
            throw ArgumentError("pbir: no distilled assets in '" + in.assets +
                                "' (expected assets.json); run `npbir distill` first or pass --const-init");
        init = pbir::load_assets(adir);
        inputs.push_back({"assets", adir});
    } else {
        std::string mesh_path = in.mesh;
        if (mesh_path.empty() && !in.assets.empty()) {
            for (const auto& c : {fs::path(in.assets) / "mesh.npbm", fs::path(adir.empty() ? in.assets : adir) / "mesh.npbm"})
                if (fs::is_regular_file(c)) mesh_path = c.string();
        }
        if (mesh_path.empty()) throw ArgumentError("pbir: --const-init needs a mesh (--mesh <file> or --assets <dir>)");
        require_file(mesh_path, "pbir: mesh");
        auto mesh = load_any_mesh(mesh_path);
        mesh.albedo.clear();
        mesh.roughness.clear();
        mesh.uvs.clear();
        mesh.uv_triangles.clear();
        init = pbir::constant_assets(mesh, geometry::atlas_resolution(mesh.triangle_count(), p.at("texel_res")),
                                     p.at("const_init_lobes"), p.at("const_init_level"),
                                     ctx.config.at("material").at("f0"), ctx.config.at("material").at("specular"));
        inputs.push_back({"mesh", mesh_path});
    }
    auto ds = io::load_dataset(in.data);
    prepare_masks(ds, init.mesh, ctx.config.at("mask_source"), p.at("mask_supersample"));

    const auto schedule = stage3_schedule(ctx.config);
    fs::create_directories(out);
    std::vector<std::vector<std::string>> rows;
    const auto result = pbir::run_pbir(
        init, ds, schedule,
        [&](const pbir::Stage3LogRow& r) {
            rows.push_back({std::to_string(r.step), std::to_string(r.iteration), std::to_string(r.view),
                            io::format_double(r.losses.img), io::format_double(r.losses.mask),
                            io::format_double(r.losses.reg), io::format_double(r.losses.total)});
            const int total = r.step == 1 ? schedule.step1_iterations
                                          : (r.step == 2 ? schedule.step2_iterations : schedule.step3_iterations);
            if (every(r.iteration, total, 5)) log_line(ctx, "pbir step %d %5d  L_IR %.5g", r.step, r.iteration, r.losses.total);
        },
        [&](int step, const pbir::TexturedAssets& a) {
            pbir::save_assets((fs::path(out) / ("step" + std::to_string(step))).string(), a);
        });
    pbir::save_assets((fs::path(out) / "assets").string(), result);
    io::write_csv((fs::path(out) / "log.csv").string(), {"step", "iteration", "view", "img", "mask", "reg", "total"},
                  rows);
    write_manifest(out, in.const_init ? "pbir --const-init" : "pbir", ctx.config, seed, ctx.deterministic, inputs);
}

void cmd_render(const RenderInputs& in, const std::string& out, RunContext ctx) {
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    const std::string adir = assets_dir(in.assets);
    if (adir.empty()) throw ArgumentError("render: no assets in '" + in.assets + "' (expected assets.json)");
    auto assets = pbir::load_assets(adir);
    std::vector<FileSet> inputs{{"assets", adir}, {"data/cameras.json", (fs::path(in.data) / "cameras.json").string()}};
    if (!in.env.empty()) {
        require_file(in.env, "relight: environment map");
        shading::EnvMap env;
        env.image = io::read_pfm(in.env);
        if (env.image.channels != 3) throw ArgumentError("relight: '" + in.env + "' must have 3 channels");
        assets.light = pbir::Light::from_env(env);
        inputs.push_back({"env", in.env});
    }
    const auto ds = io::load_dataset(in.data);
    const auto base = render_config(ctx.config);
    const fs::path root(out);
    for (const char* sub : {"images", "previews", "albedo", "roughness", "masks"}) fs::create_directories(root / sub);
    std::size_t rendered = 0;
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        const View& v = ds.views[i];
        if (in.split != "all" && v.split != in.split) continue;
        pbir::RenderConfig rc = base;
        rc.seed = hash_combine(seed, i);
        const auto img = pbir::path_trace(assets, v.camera, rc);
        io::write_pfm((root / "images" / (v.name + ".pfm")).string(), img);
        io::write_png((root / "previews" / (v.name + ".png")).string(), tonemap(img, in.exposure));
        const auto aov = pbir::render_aovs(assets, v.camera);
        io::write_pfm((root / "albedo" / (v.name + ".pfm")).string(), aov.albedo);
        io::write_pfm((root / "roughness" / (v.name + ".pfm")).string(), aov.roughness);
        io::write_pfm((root / "masks" / (v.name + ".pfm")).string(), aov.coverage);
        ++rendered;
        log_line(ctx, "render %s", v.name.c_str());
    }
    if (rendered == 0) throw ArgumentError("render: no views with split '" + in.split + "' in '" + in.data + "'");
    geometry::save_mesh((root / "mesh.npbm").string(), assets.mesh);
    write_manifest(out, in.env.empty() ? "render" : "relight", ctx.config, seed, ctx.deterministic, inputs);
}

MetricRow mean_row(const std::vector<MetricRow>& rows) {
    MetricRow m{"mean"};
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.mse += r.mse;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.mse /= n;
    return m;
}

EvalReport cmd_eval(const std::string& pred, const std::string& gt, const std::string& out, RunContext ctx) {
    const fs::path P(pred), G(gt);
    if (!fs::is_directory(G / "images")) throw ArgumentError("eval: '" + gt + "/images' not found");
    if (!fs::is_directory(P / "images")) throw ArgumentError("eval: '" + pred + "/images' not found");
    std::set<std::string> views, missing;
    for (const auto& e : fs::directory_iterator(G / "images"))
        if (e.path().extension() == ".pfm") views.insert(e.path().stem().string());
    if (views.empty()) throw ArgumentError("eval: no .pfm images in '" + gt + "/images'");
    for (const auto& v : views)
        if (!fs::is_regular_file(P / "images" / (v + ".pfm"))) missing.insert(v);
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ArgumentError("eval: prediction is missing views: " + list);
    }
    auto load = [](const fs::path& dir, const std::string& sub, const std::string& v) {
        return io::read_pfm((dir / sub / (v + ".pfm")).string());
    };
    auto has = [&](const std::string& sub) { return fs::is_directory(P / sub) && fs::is_directory(G / sub); };

    EvalReport rep;
    std::vector<ImageBuffer> pa, ga, gm;
    for (const auto& v : views) {
        rep.images.push_back(compare(v, load(P, "images", v), load(G, "images", v)));
        if (has("albedo") && has("masks")) {
            pa.push_back(load(P, "albedo", v));
            ga.push_back(load(G, "albedo", v));
            gm.push_back(load(G, "masks", v));
            rep.albedo_raw.push_back(compare(v, pa.back(), ga.back()));
        }
        if (has("roughness")) rep.roughness.push_back(compare(v, load(P, "roughness", v), load(G, "roughness", v)));
    }
    if (!pa.empty()) {
        rep.albedo_scale = io::albedo_alignment(stack(pa), stack(ga), stack(gm)).scale;
        std::size_t i = 0;
        for (const auto& v : views) {
            rep.albedo.push_back(compare(v, io::apply_scale(pa[i], rep.albedo_scale), ga[i]));
            ++i;
        }
    }
    if (fs::is_regular_file(P / "mesh.npbm") && fs::is_regular_file(G / "mesh.npbm")) {
        const auto a = geometry::load_mesh((P / "mesh.npbm").string());
        const auto b = geometry::load_mesh((G / "mesh.npbm").string());
        rep.chamfer = geometry::chamfer(geometry::sample_surface(a, 20000, 1), geometry::sample_surface(b, 20000, 1));
    }

    const fs::path o(out);
    fs::create_directories(o);
    write_table(o / "report.csv", rep.images);
    if (!rep.albedo.empty()) {
        write_table(o / "albedo.csv", rep.albedo);
        write_table(o / "albedo_raw.csv", rep.albedo_raw);
    }
    if (!rep.roughness.empty()) write_table(o / "roughness.csv", rep.roughness);
    Json s{{"images", summary_of(rep.images)}};
    if (!rep.albedo.empty()) {
        s["albedo"] = summary_of(rep.albedo);
        s["albedo_raw"] = summary_of(rep.albedo_raw);
        s["albedo_scale"] = {rep.albedo_scale[0], rep.albedo_scale[1], rep.albedo_scale[2]};
    }
    if (!rep.roughness.empty()) s["roughness"] = summary_of(rep.roughness);
    s["chamfer"] = rep.chamfer ? Json(*rep.chamfer) : Json(nullptr);
    std::ofstream os(o / "summary.json");
    os << s.dump(2) << "\n";
    os.close();
    const uint64_t seed = resolve_seed(ctx.config, ctx.deterministic);
    write_manifest(out, "eval", ctx.config, seed, ctx.deterministic, {{"pred", pred}, {"gt", gt}});
    log_line(ctx, "eval: %zu views, mean PSNR %.3f", rep.images.size(), mean_row(rep.images).psnr);
    return rep;
}

}  // namespace npbir::pipeline
