// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

// npbir: batch driver for the reconstruction pipeline.

#include "npbir/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

using namespace npbir;

int main(int argc, char** argv) {
    CLI::App app{"npbir: surface reconstruction, material distillation and inverse-rendering refinement"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    bool deterministic = false, verbose = false, print_config = false;
    int threads = 0;
    app.add_option("--config", config_path, "JSON config merged onto the defaults")->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "Override a config key: section.key=value (repeatable)");
    app.add_flag("--deterministic", deterministic, "Fixed seed (0 unless the config sets one)");
    app.add_option("--threads", threads, "Worker threads (same as NPBIR_THREADS)")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", verbose, "Progress on stderr");
    app.add_flag("--print-config", print_config, "Print the effective config and exit");

    std::string out;
    auto* toy_cmd = app.add_subcommand("make-toy", "Render a synthetic dataset from ground-truth assets");
    std::string shape;
    toy_cmd->add_option("shape", shape, "sphere | two-spheres | textured-plane")
        ->required()
        ->check(CLI::IsMember({"sphere", "two-spheres", "textured-plane"}));
    toy_cmd->add_option("--out", out, "Output directory")->required();

    std::string data;
    auto* surface_cmd = app.add_subcommand("surface", "Stage 1: SDF grid reconstruction and mesh extraction");
    surface_cmd->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    surface_cmd->add_option("--out", out, "Output directory")->required();

    std::string surface_dir;
    auto* distill_cmd = app.add_subcommand("distill", "Stage 2: per-vertex materials and SG lighting");
    distill_cmd->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    distill_cmd->add_option("--surface", surface_dir, "Output directory of `surface`")->required();
    distill_cmd->add_option("--out", out, "Output directory")->required();

    pipeline::PbirInputs pbir_in;
    auto* pbir_cmd = app.add_subcommand("pbir", "Stage 3: physics-based inverse rendering refinement");
    pbir_cmd->add_option("--assets", pbir_in.assets, "Distilled assets (output of `distill`)");
    pbir_cmd->add_option("--data", pbir_in.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    pbir_cmd->add_option("--schedule", pbir_in.schedule, "JSON schedule (\"pbir\" section)");
    pbir_cmd->add_flag("--const-init", pbir_in.const_init, "Start from T_a = T_r = 0.5 and a gray environment");
    pbir_cmd->add_option("--mesh", pbir_in.mesh, "Mesh for --const-init (.npbm or .obj)");
    pbir_cmd->add_option("--out", out, "Output directory")->required();

    pipeline::RenderInputs render_in;
    auto* render_cmd = app.add_subcommand("render", "Path-trace assets from the dataset cameras");
    auto* relight_cmd = app.add_subcommand("relight", "Render under a different environment map");
    for (auto* cmd : {render_cmd, relight_cmd}) {
        cmd->add_option("--assets", render_in.assets, "Assets directory")->required();
        cmd->add_option("--data", render_in.data, "Dataset directory (cameras)")->required()->check(CLI::ExistingDirectory);
        cmd->add_option("--split", render_in.split, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
        cmd->add_option("--exposure", render_in.exposure, "Preview exposure in stops");
        cmd->add_option("--out", out, "Output directory")->required();
    }
    relight_cmd->add_option("--env", render_in.env, "Lat-long environment map (.pfm)")->required()->check(CLI::ExistingFile);

    std::string pred, gt;
    auto* eval_cmd = app.add_subcommand("eval", "Compare two render outputs; writes CSV reports");
    eval_cmd->add_option("--pred", pred, "Predicted render directory")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--gt", gt, "Ground-truth render directory")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", out, "Report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) setenv("NPBIR_THREADS", std::to_string(threads).c_str(), 1);
        pipeline::RunContext ctx;
        ctx.config = config_path.empty() ? pipeline::default_config() : pipeline::load_config(config_path);
        for (const auto& o : overrides) pipeline::apply_override(ctx.config, o);
        ctx.deterministic = deterministic;
        ctx.verbose = verbose;
        if (print_config) {
            std::cout << ctx.config.dump(2) << "\n";
            return 0;
        }
        if (app.get_subcommands().empty()) {
            std::cout << app.help();
            return 1;
        }

        if (toy_cmd->parsed()) {
            pipeline::cmd_make_toy(toy::parse_kind(shape), out, ctx);
        } else if (surface_cmd->parsed()) {
            pipeline::cmd_surface(data, out, ctx);
        } else if (distill_cmd->parsed()) {
            pipeline::cmd_distill(data, surface_dir, out, ctx);
        } else if (pbir_cmd->parsed()) {
            pipeline::cmd_pbir(pbir_in, out, ctx);
        } else if (render_cmd->parsed() || relight_cmd->parsed()) {
            pipeline::cmd_render(render_in, out, ctx);
        } else if (eval_cmd->parsed()) {
            const auto rep = pipeline::cmd_eval(pred, gt, out, ctx);
            const auto m = pipeline::mean_row(rep.images);
            std::printf("views %zu  psnr %.4f  ssim %.4f  mse %.6g\n", rep.images.size(), m.psnr, m.ssim, m.mse);
            if (!rep.albedo.empty())
                std::printf("albedo (aligned)  psnr %.4f  mse %.6g\n", pipeline::mean_row(rep.albedo).psnr,
                            pipeline::mean_row(rep.albedo).mse);
            if (rep.chamfer) std::printf("chamfer %.6g\n", *rep.chamfer);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "npbir: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
