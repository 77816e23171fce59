// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/optim.hpp"

#include "npbir/binary_io.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <algorithm>

namespace npbir::optim {

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ArgumentError("Adam::step: parameter/gradient size does not match optimizer state");
    ++t_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
}

void Adam::reset(std::size_t size) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
    t_ = 0;
}

void Adam::save(std::ostream& os) const {
    io::write_magic(os, "NPOA");
    io::write_f64(os, opts_.beta1);
    io::write_f64(os, opts_.beta2);
    io::write_f64(os, opts_.eps);
    io::write_u64(os, static_cast<uint64_t>(t_));
    io::write_u64(os, m_.size());
    io::write_f64_array(os, m_);
    io::write_f64_array(os, v_);
}

void Adam::load(std::istream& is) {
    io::expect_magic(is, "NPOA");
    opts_.beta1 = io::read_f64(is);
    opts_.beta2 = io::read_f64(is);
    opts_.eps = io::read_f64(is);
    t_ = static_cast<long>(io::read_u64(is));
    const auto n = io::read_u64(is);
    m_.resize(n);
    v_.resize(n);
    io::read_f64_array(is, m_);
    io::read_f64_array(is, v_);
}

SparseMatrix graph_laplacian(std::size_t n, std::span<const std::pair<int, int>> edges) {
    std::vector<std::pair<int, int>> unique;
    unique.reserve(edges.size());
    for (const auto& [a, b] : edges)
        if (a != b) unique.emplace_back(std::min(a, b), std::max(a, b));
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(unique.size() * 4);
    for (const auto& [a, b] : unique) {
        trip.emplace_back(a, b, -1.0);
        trip.emplace_back(b, a, -1.0);
        trip.emplace_back(a, a, 1.0);
        trip.emplace_back(b, b, 1.0);
    }
    SparseMatrix L(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    L.setFromTriplets(trip.begin(), trip.end());
    return L;
}

SparseMatrix image_laplacian(int width, int height, bool wrap_x) {
    std::vector<std::pair<int, int>> edges;
    auto id = [width](int x, int y) { return y * width + x; };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (x + 1 < width) edges.emplace_back(id(x, y), id(x + 1, y));
            else if (wrap_x && width > 2) edges.emplace_back(id(x, y), id(0, y));
            if (y + 1 < height) edges.emplace_back(id(x, y), id(x, y + 1));
        }
    return graph_laplacian(static_cast<std::size_t>(width) * height, edges);
}

UniformLaplacian::UniformLaplacian(SparseMatrix laplacian, int components, double lambda,
                                   AdamOptions opts)
    : components_(components), lambda_(lambda), opts_(opts) {
    if (laplacian.rows() != laplacian.cols()) throw ArgumentError("UniformLaplacian: Laplacian must be square");
    if (lambda < 0.0) throw ArgumentError("UniformLaplacian: lambda must be >= 0");
    SparseMatrix I(laplacian.rows(), laplacian.cols());
    I.setIdentity();
    system_ = I + lambda * laplacian;
    system_.makeCompressed();
    m_.assign(static_cast<std::size_t>(laplacian.rows()) * components, 0.0);
}

std::vector<double> UniformLaplacian::smooth(std::span<const double> g) const {
    const auto n = system_.rows();
    std::vector<double> out(g.size());
    if (lambda_ == 0.0) {
        std::copy(g.begin(), g.end(), out.begin());
        return out;
    }
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-8);
    cg.setMaxIterations(10 * n);
    cg.compute(system_);
    Eigen::VectorXd rhs(n);
    for (int c = 0; c < components_; ++c) {
        for (Eigen::Index i = 0; i < n; ++i) rhs[i] = g[static_cast<std::size_t>(i) * components_ + c];
        if (rhs.squaredNorm() == 0.0) {
            for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * components_ + c] = 0.0;
            continue;
        }
        const Eigen::VectorXd x = cg.solve(rhs);
        if (cg.info() != Eigen::Success)
            throw NumericalError("UniformLaplacian: conjugate gradient did not converge");
        for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * components_ + c] = x[i];
    }
    return out;
}

void UniformLaplacian::step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ArgumentError("UniformLaplacian::step: size does not match Laplacian dimension");
    ++t_;
    const std::vector<double> gu = smooth(grads);
    double gmax = 0.0;
    for (double g : gu) gmax = std::max(gmax, g * g);
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    v_ = b2 * v_ + (1.0 - b2) * gmax;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double denom = std::sqrt(v_ / c2) + opts_.eps;
    std::vector<double> du(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * gu[i];
        du[i] = -lr * (m_[i] / c1) / denom;
    }
    const std::vector<double> dx = smooth(du);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += dx[i];
}

void UniformLaplacian::save(std::ostream& os) const {
    io::write_magic(os, "NPOU");
    io::write_f64(os, lambda_);
    io::write_u64(os, static_cast<uint64_t>(t_));
    io::write_f64(os, v_);
    io::write_u64(os, m_.size());
    io::write_f64_array(os, m_);
}

void UniformLaplacian::load(std::istream& is) {
    io::expect_magic(is, "NPOU");
    lambda_ = io::read_f64(is);
    t_ = static_cast<long>(io::read_u64(is));
    v_ = io::read_f64(is);
    const auto n = io::read_u64(is);
    if (n != m_.size()) throw LoadError("UniformLaplacian state does not match parameter block");
    io::read_f64_array(is, m_);
}

}  // namespace npbir::optim
