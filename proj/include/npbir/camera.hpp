// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"

#include <Eigen/Geometry>

namespace npbir {

// Pinhole camera, OpenCV convention: +x right, +y down, +z forward in camera
// space. `rotation`/`position` form the camera-to-world rigid transform.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
    int width = 1, height = 1;
    Mat3 rotation = Mat3::Identity();
    Vec3 position = Vec3::Zero();

    // Throws ArgumentError for non-positive focal lengths/size or a rotation
    // that is not orthonormal within `tol`.
    void validate(double tol = 1e-6) const;

    // World-space ray through continuous pixel coordinates (pixel centers at +0.5).
    void ray(double px, double py, Vec3& origin, Vec3& dir) const {
        const Vec3 d_cam((px - cx) / fx, (py - cy) / fy, 1.0);
        origin = position;
        dir = (rotation * d_cam).normalized();
    }

    // World point -> continuous pixel coordinates; `depth` is camera-space z.
    Vec2 project(const Vec3& p, double* depth = nullptr) const {
        const Vec3 q = rotation.transpose() * (p - position);
        if (depth) *depth = q.z();
        return {fx * q.x() / q.z() + cx, fy * q.y() / q.z() + cy};
    }

    // d(project)/d(p): 2x3 Jacobian.
    Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p) const {
        const Vec3 q = rotation.transpose() * (p - position);
        Eigen::Matrix<double, 2, 3> dq;
        const double iz = 1.0 / q.z();
        dq << fx * iz, 0.0, -fx * q.x() * iz * iz, 0.0, fy * iz, -fy * q.y() * iz * iz;
        return dq * rotation.transpose();
    }

    // Camera at `eye` looking at `target`; `up` is the approximate world up.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                          int width, int height);
};

inline void Camera::validate(double tol) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ArgumentError("camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw ArgumentError("camera: image size must be positive");
    const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= tol)) throw ArgumentError("camera: rotation is not orthonormal");
}

inline Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                              double fov_y_deg, int width, int height) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * kPi / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    const Vec3 fwd = (target - eye).normalized();
    Vec3 right = fwd.cross(up);
    if (right.norm() < 1e-9) right = fwd.cross(Vec3(1, 0, 0));
    right.normalize();
    const Vec3 down = fwd.cross(right);
    cam.rotation.col(0) = right;
    cam.rotation.col(1) = down;
    cam.rotation.col(2) = fwd;
    cam.position = eye;
    return cam;
}

}  // namespace npbir
