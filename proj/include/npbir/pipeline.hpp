// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/distill.hpp"
#include "npbir/geometry.hpp"
#include "npbir/grid_field.hpp"
#include "npbir/pbir.hpp"
#include "npbir/toy.hpp"
#include "npbir/volume_render.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace npbir::pipeline {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
//
// One JSON document with sections "toy", "render", "surface", "distill" and
// "pbir" plus top-level "seed" (null = draw one unless deterministic) and
// "mask_source" ("provided" or "generated"). See default_config() for every
// key; files and overrides may only set keys that exist there.

Json default_config();
// RFC 7386 merge of `patch` onto `base`; throws ArgumentError naming the first
// key of `patch` that `base` does not have.
Json merge_config(const Json& base, const Json& patch);
// Defaults merged with the file's contents.
Json load_config(const std::string& path);
// "a.b.c=value"; value parsed as JSON, else taken as a string.
void apply_override(Json& cfg, const std::string& assignment);
// SHA-256 of the compact serialization (keys sorted).
std::string config_hash(const Json& cfg);

// Seed from the config; when null, 0 under `deterministic`, else drawn from
// std::random_device. The result is written back into the config.
uint64_t resolve_seed(Json& cfg, bool deterministic);

volren::Stage1Config stage1_config(const Json& cfg);
distill::Stage2Config stage2_config(const Json& cfg);
pbir::Stage3Schedule stage3_schedule(const Json& cfg);
pbir::RenderConfig render_config(const Json& cfg);

// ---------------------------------------------------------------------------
// Manifests: <dir>/manifest.json records the command, config, config hash,
// seed, content hashes (SHA-256 and git blob SHA-1) of every input and output
// file, and a hash over all of that. Paths are relative, so identical runs
// in different directories produce identical manifests.

struct FileSet {
    std::string role;  // prefix in the manifest, e.g. "data"
    std::string root;  // a directory (every file below it) or a single file
};

Json hash_files(const FileSet& set);
// Writes the manifest covering every file under `out_dir` except itself and
// returns its manifest hash.
std::string write_manifest(const std::string& out_dir, const std::string& command, const Json& cfg,
                           uint64_t seed, bool deterministic, const std::vector<FileSet>& inputs);
// Throws LoadError when absent or malformed.
std::string read_manifest_hash(const std::string& dir);

// ---------------------------------------------------------------------------
// Helpers

// Zero level set of the foreground SDF, welded; largest component when
// `largest_only`; normals from the SDF gradient.
geometry::TriMesh extract_surface(const grid::SdfScene& scene, bool largest_only = true);

// 2^exposure * v, clamped to [0,1] and encoded with gamma 2.2.
ImageBuffer tonemap(const ImageBuffer& hdr, double exposure);

// Replaces the dataset masks with coverage of `mesh` when `source` is
// "generated"; "provided" keeps the dataset's own masks (views without one
// skip the mask term).
void prepare_masks(PosedDataset& dataset, const geometry::TriMesh& mesh, const std::string& source,
                   int supersample);

// ---------------------------------------------------------------------------
// Stages. Each writes into `out` (created when missing) and ends with a
// manifest; errors are thrown as ArgumentError / LoadError with a message
// that names the missing input.

struct RunContext {
    Json config = default_config();
    bool deterministic = false;
    bool verbose = false;
};

// <out>/data: dataset (PFM images, masks, env.pfm); <out>/assets: ground truth.
void cmd_make_toy(toy::Kind kind, const std::string& out, RunContext ctx);

// <out>/scene.npbg, mesh.npbm, mesh.obj, log.csv.
void cmd_surface(const std::string& data, const std::string& out, RunContext ctx);

// <out>/mesh.npbm (per-vertex materials), sg.json, assets/, log.csv.
// `surface_dir` holds the outputs of cmd_surface().
void cmd_distill(const std::string& data, const std::string& surface_dir, const std::string& out, RunContext ctx);

struct PbirInputs {
    std::string assets;  // distilled assets directory
    std::string data;
    std::string schedule;  // optional JSON file: a "pbir" section or a full config
    bool const_init = false;
    std::string mesh;  // mesh for --const-init (.npbm / .obj); defaults to <assets>/mesh.npbm
};
// <out>/step1..3 checkpoints, <out>/assets (final), log.csv. Refuses to start
// without distilled assets unless const_init is set.
void cmd_pbir(const PbirInputs& in, const std::string& out, RunContext ctx);

struct RenderInputs {
    std::string assets;
    std::string data;  // cameras come from here
    std::string split = "all";
    std::string env;  // optional PFM replacing the light (relighting)
    double exposure = 0.0;
};
// <out>/images/<view>.pfm, previews/<view>.png, albedo/, roughness/, masks/,
// and mesh.npbm. View i renders with seed hash_combine(seed, i), matching
// cmd_make_toy, so re-rendering ground truth reproduces the dataset images.
void cmd_render(const RenderInputs& in, const std::string& out, RunContext ctx);

struct MetricRow {
    std::string view;
    double psnr = 0.0, ssim = 0.0, mse = 0.0;
};
struct EvalReport {
    std::vector<MetricRow> images, albedo, albedo_raw, roughness;
    Rgb albedo_scale = Rgb::Ones();
    std::optional<double> chamfer;
};
// Mean row of a table (arithmetic means of the columns).
MetricRow mean_row(const std::vector<MetricRow>& rows);

// Compares two cmd_render() outputs view by view: images, masked albedo (raw
// and with one global RGB alignment), roughness, Chamfer distance between
// the meshes. Writes report.csv, albedo.csv, albedo_raw.csv, roughness.csv
// (columns view, psnr, ssim, mse, then a "mean" row), summary.json and a manifest.
EvalReport cmd_eval(const std::string& pred, const std::string& gt, const std::string& out, RunContext ctx);

}  // namespace npbir::pipeline
