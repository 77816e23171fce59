// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/camera.hpp"
#include "npbir/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace npbir {

// Row-major W x H x C float image, row 0 at the top.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    Rgb rgb(int x, int y) const {
        if (channels == 1) return Rgb::Constant(at(x, y));
        return {at(x, y, 0), at(x, y, 1), at(x, y, 2)};
    }
    void set_rgb(int x, int y, const Rgb& c) {
        if (channels == 1) {
            at(x, y) = c.mean();
            return;
        }
        for (int k = 0; k < 3; ++k) at(x, y, k) = c[k];
    }
    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

// One posed observation.
struct View {
    std::string name;
    Camera camera;
    ImageBuffer image;               // linear radiance
    std::optional<ImageBuffer> mask;  // single channel coverage in [0,1]
    std::string split = "train";
};

struct PosedDataset {
    std::vector<View> views;
    std::optional<std::string> env_path;  // ground-truth environment, when known

    std::size_t size() const { return views.size(); }
    std::vector<const View*> split(const std::string& name) const {
        std::vector<const View*> out;
        for (const auto& v : views)
            if (v.split == name) out.push_back(&v);
        return out;
    }
};

}  // namespace npbir
