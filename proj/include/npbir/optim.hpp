// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"

#include <Eigen/SparseCore>

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace npbir::optim {

// Piecewise-constant learning rate: `base` until the first milestone, then the
// value attached to the latest milestone reached.
struct LrSchedule {
    double base = 1e-3;
    std::vector<std::pair<int, double>> milestones;  // (iteration, lr), ascending

    double at(int iteration) const {
        double lr = base;
        for (const auto& [it, v] : milestones)
            if (iteration >= it) lr = v;
        return lr;
    }
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(std::size_t size, AdamOptions opts) : opts_(opts), m_(size, 0.0), v_(size, 0.0) {}

    // Throws ArgumentError when params/grads sizes differ from the state.
    void step(std::span<double> params, std::span<const double> grads, double lr);
    // Drops moments (used after a parameter block is resized).
    void reset(std::size_t size);

    std::size_t size() const { return m_.size(); }
    long steps() const { return t_; }
    const AdamOptions& options() const { return opts_; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    AdamOptions opts_{};
    std::vector<double> m_, v_;
    long t_ = 0;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

// Uniform graph Laplacian D - A from an undirected edge list over n nodes.
SparseMatrix graph_laplacian(std::size_t n, std::span<const std::pair<int, int>> edges);
// 4-neighbour Laplacian of a width x height image grid; `wrap_x` joins the
// first and last columns (longitude seam of a lat-long map).
SparseMatrix image_laplacian(int width, int height, bool wrap_x);

// Laplacian-preconditioned Adam with one shared second moment per block.
// Parameters are laid out node-major: params[node * components + c].
class UniformLaplacian {
public:
    UniformLaplacian() = default;
    UniformLaplacian(SparseMatrix laplacian, int components, double lambda, AdamOptions opts = {});

    // Solves (I + lambda L) twice on the gradient, updates the moments and applies
    // the step. Throws NumericalError if CG does not converge within 10n iterations.
    void step(std::span<double> params, std::span<const double> grads, double lr);

    // g -> (I + lambda L)^-1 g per component.
    std::vector<double> smooth(std::span<const double> g) const;

    std::size_t nodes() const { return static_cast<std::size_t>(system_.rows()); }
    int components() const { return components_; }
    double lambda() const { return lambda_; }
    long steps() const { return t_; }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    SparseMatrix system_;  // I + lambda L
    int components_ = 1;
    double lambda_ = 0.0;
    AdamOptions opts_{};
    std::vector<double> m_;
    double v_ = 0.0;
    long t_ = 0;
};

}  // namespace npbir::optim
