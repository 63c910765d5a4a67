#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "artikit/error.hpp"

namespace artikit {

struct Aabb {
  Eigen::Vector3d min =
      Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d max =
      Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return !(min.x() <= max.x()); }

  void expand(const Eigen::Vector3d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }

  void merge(const Aabb& other) {
    if (other.empty()) return;
    expand(other.min);
    expand(other.max);
  }

  Eigen::Vector3d center() const { return 0.5 * (min + max); }
  Eigen::Vector3d extent() const { return max - min; }
};

// Indexed triangle soup. Faces store 0-based vertex indices.
struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }

  Aabb bounds() const {
    Aabb box;
    for (const auto& v : vertices) box.expand(v);
    return box;
  }

  double face_area(std::size_t f) const {
    const auto& t = faces[f];
    Eigen::Vector3d e1 = vertices[static_cast<std::size_t>(t[1])] -
                         vertices[static_cast<std::size_t>(t[0])];
    Eigen::Vector3d e2 = vertices[static_cast<std::size_t>(t[2])] -
                         vertices[static_cast<std::size_t>(t[0])];
    return 0.5 * e1.cross(e2).norm();
  }

  double surface_area() const {
    double a = 0.0;
    for (std::size_t f = 0; f < faces.size(); ++f) a += face_area(f);
    return a;
  }
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

// Dense cubic occupancy lattice. Cells are cubes of side cell_size; cell
// (i,j,k) spans origin + cell_size*[i,i+1)x[j,j+1)x[k,k+1). Linear index is
// i + R*(j + R*k).
struct VoxelGrid {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double cell_size = 0.0;
  int resolution = 0;
  std::vector<std::uint8_t> occupancy;
  std::vector<std::string> warnings;  // e.g. non-watertight input

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(resolution) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(resolution) *
                    static_cast<std::size_t>(k));
  }

  Eigen::Vector3d cell_center(int i, int j, int k) const {
    return origin + cell_size * Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5);
  }

  std::size_t occupied_count() const {
    std::size_t n = 0;
    for (auto c : occupancy) n += c != 0;
    return n;
  }

  double occupied_volume() const {
    return static_cast<double>(occupied_count()) * cell_size * cell_size *
           cell_size;
  }
};

}  // namespace artikit
