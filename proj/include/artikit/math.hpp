#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace artikit {

inline constexpr double kPi = 3.14159265358979323846;

// Proper rigid motion x -> R*x + t. Kept as an explicit pair instead of a
// 4x4 so composition stays cheap and the rotation block is always exactly
// orthonormal-by-construction where we make them.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  // this ∘ other: apply `other` first, then this.
  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation * other.rotation,
            rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

// Rotation about an axis through a given point rather than the origin.
inline RigidTransform rotation_about_line(const Eigen::Vector3d& point,
                                          const Eigen::Vector3d& unit_axis,
                                          double angle) {
  Eigen::Matrix3d r = Eigen::AngleAxisd(angle, unit_axis).toRotationMatrix();
  return {r, point - r * point};
}

inline Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v) {
  double angle = v.norm();
  if (angle < 1e-14) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

// Canonical axis-angle with |theta| <= pi (Eigen returns theta in [0, pi]).
inline Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

// Wrap an arbitrary axis-angle vector into the canonical |theta| <= pi range.
inline Eigen::Vector3d canonicalize_axis_angle(const Eigen::Vector3d& v) {
  double angle = v.norm();
  if (angle <= kPi) return v;
  return matrix_to_axis_angle(axis_angle_to_matrix(v));
}

}  // namespace artikit
