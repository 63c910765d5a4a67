#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "artikit/core.hpp"
#include "artikit/mesh.hpp"

namespace artikit {

// Area-weighted uniform surface samples. Deterministic for a fixed seed;
// zero total surface area is a geometry error.
PointCloud sample_surface_points(const TriMesh& mesh, int count,
                                 std::uint64_t seed);

// PCA-fitted oriented bounding box: covariance eigenvectors give the axes
// (deterministic sign convention, right-handed), extents from the projected
// min/max. Every input point lies inside the returned box. Empty input is a
// parameter error; degenerate spreads clamp to 1e-6 half extents.
OrientedBox fit_obb(const PointCloud& points);

// Symmetric chamfer distance: mean squared nearest-neighbor distance from p
// to q plus the same from q to p. kd-tree accelerated; bitwise equal to
// chamfer_distance_brute. Empty clouds are a parameter error.
double chamfer_distance(const PointCloud& p, const PointCloud& q);

// Reference O(n*m) implementation kept callable forever; the acceptance
// checks hold the fast path to this one.
double chamfer_distance_brute(const PointCloud& p, const PointCloud& q);

// Voxelize by cell-center point-in-mesh parity tests. `bounds` must strictly
// contain the mesh; the lattice is cubified to the largest bounds extent
// (centered), resolution cells per side. Non-watertight input degrades to a
// best-effort result and is reported in VoxelGrid::warnings. An empty mesh
// yields an all-empty grid.
VoxelGrid voxel_occupancy(const TriMesh& mesh, int resolution,
                          const Aabb& bounds);

// Pairwise part-overlap rate of a posed instance: sum over part pairs of
// intersected voxel volume divided by summed part volume, on a shared grid
// (union AABB padded 5 percent, cubified). Parts use their posed mesh when
// present, otherwise their posed OBB. Instances with no parts or zero total
// occupied volume are a parameter error. Result clamped to [0, 1].
double part_overlap_rate(const PosedInstance& instance, int resolution);

}  // namespace artikit
