// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace npbir {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rgb = Eigen::Array3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInvPi = 1.0 / kPi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. Callers that only care about "bad input" can catch
// std::invalid_argument; everything else is a std::runtime_error.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct OutOfDomainError : std::out_of_range {
    using std::out_of_range::out_of_range;
};
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Box3 {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Ones();

    Vec3 extent() const { return hi - lo; }
    Vec3 center() const { return 0.5 * (lo + hi); }
    double diagonal() const { return extent().norm(); }

    // Closed-box containment.
    bool contains(const Vec3& p) const {
        return p.x() >= lo.x() && p.y() >= lo.y() && p.z() >= lo.z() && p.x() <= hi.x() &&
               p.y() <= hi.y() && p.z() <= hi.z();
    }
    bool strictly_inside(const Box3& outer) const {
        return (lo.array() > outer.lo.array()).all() && (hi.array() < outer.hi.array()).all();
    }
    void expand(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    static Box3 empty() {
        return {Vec3::Constant(kInf), Vec3::Constant(-kInf)};
    }
    // Concentric box scaled by `factor` along every axis.
    Box3 scaled(double factor) const {
        const Vec3 c = center();
        const Vec3 h = 0.5 * factor * extent();
        return {c - h, c + h};
    }

    // Slab test; returns false when the ray misses. t range is clipped to [t_lo, t_hi].
    bool intersect(const Vec3& o, const Vec3& d, double& t_lo, double& t_hi) const {
        for (int a = 0; a < 3; ++a) {
            const double inv = 1.0 / d[a];
            double t0 = (lo[a] - o[a]) * inv;
            double t1 = (hi[a] - o[a]) * inv;
            if (t0 > t1) std::swap(t0, t1);
            // NaN-safe: comparisons against NaN leave bounds untouched.
            if (t0 > t_lo) t_lo = t0;
            if (t1 < t_hi) t_hi = t1;
            if (t_lo > t_hi) return false;
        }
        return true;
    }
};

inline double luminance(const Rgb& c) { return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]; }

inline bool is_unit(const Vec3& v, double tol = 1e-6) { return std::abs(v.norm() - 1.0) <= tol; }

// Orthonormal basis around n (Duff et al. branchless construction).
inline void make_frame(const Vec3& n, Vec3& t, Vec3& b) {
    const double sign = std::copysign(1.0, n.z());
    const double a = -1.0 / (sign + n.z());
    const double bb = n.x() * n.y() * a;
    t = Vec3(1.0 + sign * n.x() * n.x() * a, sign * bb, -sign * n.x());
    b = Vec3(bb, sign + n.y() * n.y() * a, -n.y());
}

}  // namespace npbir
