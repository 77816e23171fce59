// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"
#include "npbir/image.hpp"

#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace npbir::io {

// ---------------------------------------------------------------------------
// Images

// PFM: little-endian, 1 ("Pf") or 3 ("PF") channels, stored bottom row first.
void write_pfm(const std::string& path, const ImageBuffer& img);
ImageBuffer read_pfm(const std::string& path);

// PNG values are mapped to [0,1] without any transfer function. Gray and
// gray+alpha load as 1 channel, RGB/RGBA as 3 (alpha dropped).
void write_png(const std::string& path, const ImageBuffer& img, int bit_depth = 8);
ImageBuffer read_png(const std::string& path);

double srgb_to_linear(double v);
double linear_to_srgb(double v);
ImageBuffer srgb_to_linear(const ImageBuffer& img);
ImageBuffer linear_to_srgb(const ImageBuffer& img);

// By extension: .pfm as stored, .png decoded from sRGB when `srgb` is set.
ImageBuffer load_image(const std::string& path, bool srgb = true);
// .pfm exact; .png sRGB-encoded (when `srgb`) and quantized.
void save_image(const std::string& path, const ImageBuffer& img, bool srgb = true);

// ---------------------------------------------------------------------------
// Datasets: <root>/cameras.json + images/ + optional masks/.
//
// cameras.json = {"frames": [{"name", "image", "mask"?, "split", "width",
// "height", "fx", "fy", "cx", "cy", "c2w": 16 numbers row-major}], "env"?}.
// Paths are relative to root.

PosedDataset load_dataset(const std::string& root);
// Images are written as PFM (bit-exact); masks as 8-bit PNG.
void save_dataset(const std::string& root, const PosedDataset& dataset);

// ---------------------------------------------------------------------------
// Metrics

constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse(const ImageBuffer& a, const ImageBuffer& b);
// 10 log10(peak^2 / MSE); kInfinitePsnr when MSE is 0. Throws on shape mismatch.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);
// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L = 1), mean over
// valid windows and channels. Throws ArgumentError below 11x11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

struct AlbedoScale {
    Rgb scale = Rgb::Ones();
    bool degenerate = false;  // some channel of pred was all zero
};
// Per-channel least-squares scale taking pred toward gt over mask > 0.5.
AlbedoScale albedo_alignment(const ImageBuffer& pred, const ImageBuffer& gt, const ImageBuffer& mask);
ImageBuffer apply_scale(const ImageBuffer& img, const Rgb& scale);

// Minimal CSV writer.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Content hashes (lowercase hex).

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);
// Hash of "blob <size>\0" + bytes, as git computes object ids.
std::string git_blob_sha1(std::string_view bytes);
std::string git_blob_sha1_file(const std::string& path);
std::string read_file(const std::string& path);

}  // namespace npbir::io
