// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/camera.hpp"
#include "npbir/geometry.hpp"
#include "npbir/image.hpp"
#include "npbir/pbir.hpp"
#include "npbir/shading.hpp"

#include <string>
#include <vector>

namespace npbir::toy {

enum class Kind { Sphere, TwoSpheres, TexturedPlane };

// "sphere", "two-spheres" or "textured-plane"; throws ArgumentError otherwise.
Kind parse_kind(const std::string& name);
std::string kind_name(Kind kind);

// Sky dome, warm ground fill and a sun lobe.
shading::SgMixture toy_sky();

// n x n grid of quads spanning origin + [0,1]^2 (u, v); faces point along u x v.
geometry::TriMesh make_quad(const Vec3& origin, const Vec3& u, const Vec3& v, int n);
geometry::TriMesh merge_meshes(const geometry::TriMesh& a, const geometry::TriMesh& b);

// Smoothly varying albedo used on the toy sphere.
Rgb sphere_albedo(const Vec3& x);

// Ground-truth assets with per-vertex materials baked into square textures of
// geometry::atlas_resolution(triangles, texel_res) texels.
// The textured plane stands next to a red wall.
pbir::TexturedAssets make_toy_assets(Kind kind, int texel_res = 256);

// Cameras on a ring (or two rings) around `target`, looking at it, +Y up.
std::vector<Camera> orbit_cameras(int count, int width, int height, double distance, double fov_y_deg,
                                  const Vec3& target = Vec3::Zero(), double min_elevation_deg = 10.0,
                                  double max_elevation_deg = 50.0);
std::vector<Camera> toy_cameras(Kind kind, int count, int width, int height);

// Path-traced images and supersampled coverage masks; every third view is
// marked "test".
PosedDataset render_dataset(const pbir::TexturedAssets& assets, const std::vector<Camera>& cameras,
                            const pbir::RenderConfig& cfg, int mask_supersample = 4);

}  // namespace npbir::toy
