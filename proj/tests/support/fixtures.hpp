#pragma once

#include <Eigen/Dense>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "artikit/core.hpp"
#include "artikit/rng.hpp"

namespace artikit::testing {

inline std::filesystem::path source_dir() {
  return std::filesystem::path(ARTIKIT_SOURCE_DIR);
}

inline std::filesystem::path data_dir() {
  return source_dir() / "tests" / "data";
}

// Fresh per-test scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("artikit-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Two parts: a static base box and a door hinged at the base's +x edge.
inline ArticulatedObject two_part_door() {
  ArticulatedObject obj;
  obj.category = "cabinet";
  obj.root_id = 0;

  PartNode base;
  base.part_id = 0;
  base.parent_id = kRootParent;
  base.semantic_label = "base";
  base.obb = OrientedBox::make({0, 0, 0}, {0.4, 0.4, 0.4}, {0, 0, 0});
  base.joint = JointSpec::make(JointType::Fixed, {0, 0, 0}, {0, 0, 1},
                               Eigen::Vector4d::Zero());
  obj.parts.push_back(base);

  PartNode door;
  door.part_id = 1;
  door.parent_id = 0;
  door.semantic_label = "door";
  door.obb = OrientedBox::make({0.45, 0.2, 0}, {0.05, 0.2, 0.35}, {0, 0, 0});
  door.joint = JointSpec::make(JointType::Revolute, {0.4, 0.4, 0}, {0, 0, 1},
                               {0.0, 0.5 * kPi, 0.0, 0.0});
  door.state = 0.0;
  obj.parts.push_back(door);
  return obj;
}

// Random valid kinematic tree with n parts; joint types cycle through all
// five, parents drawn uniformly among earlier parts.
inline ArticulatedObject random_tree(int n, std::uint64_t seed) {
  Rng rng(seed);
  ArticulatedObject obj;
  obj.category = "fixture";
  obj.root_id = 0;
  for (int i = 0; i < n; ++i) {
    PartNode part;
    part.part_id = i;
    part.parent_id =
        i == 0 ? kRootParent
               : static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i)));
    part.semantic_label = "part" + std::to_string(i);
    Eigen::Vector3d center(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                           rng.uniform(-0.4, 0.4));
    Eigen::Vector3d half(rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3),
                         rng.uniform(0.05, 0.3));
    Eigen::Vector3d rot(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0));
    part.obb = OrientedBox::make(center, half, rot);
    JointType type =
        i == 0 ? JointType::Fixed
               : static_cast<JointType>(1 + (i - 1) % 4);  // all moving kinds
    Eigen::Vector3d origin(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                           rng.uniform(-0.5, 0.5));
    Eigen::Vector3d dir(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0));
    if (dir.norm() < 1e-3) dir = Eigen::Vector3d::UnitZ();
    Eigen::Vector4d range = Eigen::Vector4d::Zero();
    if (joint_is_rotational(type)) {
      range[0] = rng.uniform(-1.5, 0.0);
      range[1] = rng.uniform(0.0, 1.5);
    } else if (joint_is_translational(type)) {
      range[2] = rng.uniform(-0.3, 0.0);
      range[3] = rng.uniform(0.0, 0.3);
    }
    part.joint = JointSpec::make(type, origin, dir, range, 0.02);
    part.state = rng.uniform();
    obj.parts.push_back(std::move(part));
  }
  return obj;
}

// Axis-aligned unit cube centered at `center` as a mesh.
inline TriMesh unit_cube_mesh(const Eigen::Vector3d& center = {0, 0, 0}) {
  return obb_to_mesh(OrientedBox::make(center, {0.5, 0.5, 0.5}, {0, 0, 0}));
}

}  // namespace artikit::testing
