#include "artikit/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "artikit/kdtree.hpp"
#include "artikit/rng.hpp"

namespace artikit {

PointCloud sample_surface_points(const TriMesh& mesh, int count,
                                 std::uint64_t seed) {
  if (count <= 0) throw ParameterError("sample count must be positive");
  if (mesh.faces.empty())
    throw GeometryError("cannot sample points: mesh has no faces");

  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cumulative[f] = total;
  }
  if (total <= 0.0)
    throw GeometryError("cannot sample points: total surface area is zero");

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    double pick = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    std::size_t f = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), mesh.faces.size() - 1);
    const auto& tri = mesh.faces[f];
    const Eigen::Vector3d& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
    const Eigen::Vector3d& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
    const Eigen::Vector3d& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
    double u = rng.uniform();
    double v = rng.uniform();
    if (u + v > 1.0) {  // fold back into the triangle
      u = 1.0 - u;
      v = 1.0 - v;
    }
    cloud.points.push_back(a + u * (b - a) + v * (c - a));
  }
  return cloud;
}

OrientedBox fit_obb(const PointCloud& points) {
  if (points.empty()) throw ParameterError("cannot fit a box to an empty cloud");
  const auto& pts = points.points;
  const double n = static_cast<double>(pts.size());

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  cov /= n;

  // Eigen sorts eigenvalues ascending; take descending for the box axes.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Matrix3d axes;
  axes.col(0) = eig.eigenvectors().col(2);
  axes.col(1) = eig.eigenvectors().col(1);

  // Deterministic sign: each of the two leading axes points toward its
  // largest-magnitude component; the third closes a right-handed frame.
  for (int c = 0; c < 2; ++c) {
    int imax;
    axes.col(c).cwiseAbs().maxCoeff(&imax);
    if (axes.col(c)[imax] < 0.0) axes.col(c) = -axes.col(c);
  }
  axes.col(2) = axes.col(0).cross(axes.col(1));

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : pts) {
    Eigen::Vector3d local = axes.transpose() * (p - mean);
    lo = lo.cwiseMin(local);
    hi = hi.cwiseMax(local);
  }
  Eigen::Vector3d center = mean + axes * (0.5 * (lo + hi));
  return OrientedBox::make(center, 0.5 * (hi - lo), matrix_to_axis_angle(axes));
}

namespace {

double chamfer_impl(const PointCloud& p, const PointCloud& q, bool brute) {
  if (p.empty() || q.empty())
    throw ParameterError("chamfer distance of an empty cloud");

  auto one_way = [&](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    if (brute) {
      for (const auto& a : from.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to.points) {
          double d2 = point_dist2(a, b);
          if (d2 < best) best = d2;
        }
        sum += best;
      }
    } else {
      KdTree3 tree(to.points);
      for (const auto& a : from.points) sum += tree.nearest_dist2(a);
    }
    return sum / static_cast<double>(from.size());
  };
  return one_way(p, q) + one_way(q, p);
}

}  // namespace

double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  return chamfer_impl(p, q, false);
}

double chamfer_distance_brute(const PointCloud& p, const PointCloud& q) {
  return chamfer_impl(p, q, true);
}

namespace {

// Möller-Trumbore, counting strictly-forward hits. Degenerate triangles
// never intersect (their determinant vanishes).
bool ray_hits_triangle(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                       const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                       const Eigen::Vector3d& c) {
  Eigen::Vector3d e1 = b - a;
  Eigen::Vector3d e2 = c - a;
  Eigen::Vector3d pvec = dir.cross(e2);
  double det = e1.dot(pvec);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Eigen::Vector3d svec = origin - a;
  double u = svec.dot(pvec) * inv;
  if (u < 0.0 || u > 1.0) return false;
  Eigen::Vector3d qvec = svec.cross(e1);
  double v = dir.dot(qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  return e2.dot(qvec) * inv > 0.0;
}

bool is_edge_manifold(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      auto key = std::make_pair(f[static_cast<std::size_t>(e)],
                                f[static_cast<std::size_t>((e + 1) % 3)]);
      if (++directed[key] > 1) return false;
    }
  }
  for (const auto& [edge, count] : directed) {
    auto rev = directed.find({edge.second, edge.first});
    if (rev == directed.end() || rev->second != count) return false;
  }
  return true;
}

}  // namespace

VoxelGrid voxel_occupancy(const TriMesh& mesh, int resolution,
                          const Aabb& bounds) {
  if (resolution <= 0) throw ParameterError("voxel resolution must be positive");
  if (bounds.empty()) throw ParameterError("voxel bounds are empty");

  const int r = resolution;
  VoxelGrid grid;
  double side = bounds.extent().maxCoeff();
  if (side <= 0.0) throw ParameterError("voxel bounds have zero extent");
  grid.resolution = r;
  grid.cell_size = side / static_cast<double>(r);
  grid.origin = bounds.center() - 0.5 * side * Eigen::Vector3d::Ones();
  grid.occupancy.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(r) *
                            static_cast<std::size_t>(r),
                        0);
  if (mesh.faces.empty()) return grid;

  Aabb mesh_bounds = mesh.bounds();
  if (!(mesh_bounds.min.array() > bounds.min.array()).all() ||
      !(mesh_bounds.max.array() < bounds.max.array()).all())
    throw ParameterError("voxel bounds do not strictly contain the mesh");

  if (!is_edge_manifold(mesh))
    grid.warnings.push_back(
        "mesh is not edge-manifold watertight; parity occupancy is best-effort");

  // Rays run near the +x axis, so triangles can be bucketed by the (y, z)
  // cells their bounding rectangle touches; each cell then only tests its
  // own column's triangles.
  const Eigen::Vector3d dir(1.0, 1e-4, 1e-4);
  const double pad = side * 2e-4 + grid.cell_size * 1e-9;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(r) *
                                        static_cast<std::size_t>(r));
  auto clamp_cell = [&](double coord, int axis) {
    double rel = (coord - grid.origin[axis]) / grid.cell_size;
    return std::clamp(static_cast<int>(std::floor(rel)), 0, r - 1);
  };
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    Aabb tb;
    for (int k = 0; k < 3; ++k)
      tb.expand(mesh.vertices[static_cast<std::size_t>(mesh.faces[f][static_cast<std::size_t>(k)])]);
    int j0 = clamp_cell(tb.min.y() - pad, 1), j1 = clamp_cell(tb.max.y() + pad, 1);
    int k0 = clamp_cell(tb.min.z() - pad, 2), k1 = clamp_cell(tb.max.z() + pad, 2);
    for (int j = j0; j <= j1; ++j)
      for (int k = k0; k <= k1; ++k)
        buckets[static_cast<std::size_t>(j) + static_cast<std::size_t>(r) *
                                                  static_cast<std::size_t>(k)]
            .push_back(static_cast<int>(f));
  }

  for (int k = 0; k < r; ++k) {
    for (int j = 0; j < r; ++j) {
      const auto& bucket = buckets[static_cast<std::size_t>(j) +
                                   static_cast<std::size_t>(r) * static_cast<std::size_t>(k)];
      if (bucket.empty()) continue;
      for (int i = 0; i < r; ++i) {
        Eigen::Vector3d center = grid.cell_center(i, j, k);
        int hits = 0;
        for (int f : bucket) {
          const auto& tri = mesh.faces[static_cast<std::size_t>(f)];
          if (ray_hits_triangle(center, dir,
                                mesh.vertices[static_cast<std::size_t>(tri[0])],
                                mesh.vertices[static_cast<std::size_t>(tri[1])],
                                mesh.vertices[static_cast<std::size_t>(tri[2])]))
            ++hits;
        }
        if (hits % 2 == 1) grid.occupancy[grid.index(i, j, k)] = 1;
      }
    }
  }
  return grid;
}

double part_overlap_rate(const PosedInstance& instance, int resolution) {
  if (instance.parts.empty())
    throw ParameterError("overlap rate of an instance with no parts");

  std::vector<TriMesh> meshes;
  meshes.reserve(instance.parts.size());
  Aabb union_bounds;
  for (const auto& part : instance.parts) {
    TriMesh geom = (part.mesh && !part.mesh->faces.empty())
                       ? *part.mesh
                       : obb_to_mesh(part.obb);
    union_bounds.merge(geom.bounds());
    meshes.push_back(std::move(geom));
  }
  if (union_bounds.empty())
    throw ParameterError("overlap rate of an instance with no geometry");

  double side = 1.05 * union_bounds.extent().maxCoeff();
  if (side <= 0.0) throw ParameterError("overlap bounds have zero extent");
  Aabb shared;
  shared.min = union_bounds.center() - 0.5 * side * Eigen::Vector3d::Ones();
  shared.max = union_bounds.center() + 0.5 * side * Eigen::Vector3d::Ones();

  std::vector<VoxelGrid> grids;
  grids.reserve(meshes.size());
  for (const auto& m : meshes)
    grids.push_back(voxel_occupancy(m, resolution, shared));

  std::size_t total = 0;
  for (const auto& g : grids) total += g.occupied_count();
  if (total == 0)
    throw ParameterError("overlap rate undefined: no occupied voxels");

  std::size_t pair_overlap = 0;
  for (std::size_t a = 0; a < grids.size(); ++a)
    for (std::size_t b = a + 1; b < grids.size(); ++b) {
      const auto& ga = grids[a].occupancy;
      const auto& gb = grids[b].occupancy;
      for (std::size_t c = 0; c < ga.size(); ++c) pair_overlap += (ga[c] & gb[c]);
    }

  return std::min(1.0, static_cast<double>(pair_overlap) / static_cast<double>(total));
}

}  // namespace artikit
