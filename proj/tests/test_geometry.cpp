#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "artikit/geometry.hpp"
#include "artikit/rng.hpp"
#include "support/fixtures.hpp"

using namespace artikit;
using testing::unit_cube_mesh;

namespace {

PointCloud random_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  for (int i = 0; i < n; ++i)
    cloud.points.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1),
                              rng.uniform(-1, 1));
  return cloud;
}

// O(n*m) nearest-neighbor chamfer written independently of the library.
double chamfer_oracle(const PointCloud& p, const PointCloud& q) {
  auto mean_sq = [](const PointCloud& a, const PointCloud& b) {
    double total = 0.0;
    for (const auto& x : a.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : b.points) best = std::min(best, (x - y).squaredNorm());
      total += best;
    }
    return total / static_cast<double>(a.size());
  };
  return mean_sq(p, q) + mean_sq(q, p);
}

}  // namespace

TEST_CASE("surface sampling is area weighted and deterministic") {
  TriMesh cube = unit_cube_mesh();
  PointCloud cloud = sample_surface_points(cube, 50000, 9);
  REQUIRE(cloud.size() == 50000);

  // every sample sits on the surface: one coordinate pinned at +-0.5
  std::array<int, 6> face_counts{};
  for (const auto& p : cloud.points) {
    CHECK(p.cwiseAbs().maxCoeff() == doctest::Approx(0.5).epsilon(1e-12));
    int axis = 0;
    p.cwiseAbs().maxCoeff(&axis);
    face_counts[static_cast<std::size_t>(2 * axis + (p[axis] > 0 ? 1 : 0))]++;
  }
  for (int count : face_counts)
    CHECK(std::abs(count / 50000.0 - 1.0 / 6.0) < 0.01);

  PointCloud again = sample_surface_points(cube, 50000, 9);
  CHECK(cloud.points == again.points);

  TriMesh degenerate;
  degenerate.vertices = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  degenerate.faces = {{0, 1, 2}};
  CHECK_THROWS_AS(sample_surface_points(degenerate, 10, 0), GeometryError);
}

TEST_CASE("box fitting recovers a rotated box") {
  OrientedBox truth = OrientedBox::make({0.3, -0.2, 0.1}, {0.5, 0.3, 0.2},
                                        {0, 0, 0.25 * kPi});
  PointCloud corners;
  for (const auto& c : truth.corners()) corners.points.push_back(c);
  OrientedBox fit = fit_obb(corners);

  CHECK((fit.center - truth.center).norm() < 1e-6);
  // axes match up to permutation and sign
  Eigen::Matrix3d rel =
      truth.rotation_matrix().transpose() * fit.rotation_matrix();
  for (int col = 0; col < 3; ++col) {
    Eigen::Vector3d axis = rel.col(col).cwiseAbs();
    CHECK(axis.maxCoeff() == doctest::Approx(1.0).epsilon(1e-6));
  }
  Eigen::Vector3d sorted_fit = fit.half_extents;
  Eigen::Vector3d sorted_truth = truth.half_extents;
  std::sort(sorted_fit.data(), sorted_fit.data() + 3);
  std::sort(sorted_truth.data(), sorted_truth.data() + 3);
  CHECK((sorted_fit - sorted_truth).norm() < 1e-6);

  SUBCASE("every input point lies inside the fit") {
    PointCloud cloud = random_cloud(500, 4);
    OrientedBox box = fit_obb(cloud);
    Eigen::Matrix3d rt = box.rotation_matrix().transpose();
    for (const auto& p : cloud.points) {
      Eigen::Vector3d local = rt * (p - box.center);
      CHECK((local.cwiseAbs() - box.half_extents).maxCoeff() < 1e-9);
    }
  }
  SUBCASE("right-handed frame") {
    OrientedBox box = fit_obb(random_cloud(100, 5));
    CHECK(box.rotation_matrix().determinant() == doctest::Approx(1.0));
  }
  SUBCASE("degenerate spread clamps instead of collapsing") {
    PointCloud line;
    for (int i = 0; i < 10; ++i) line.points.emplace_back(i * 0.1, 0, 0);
    OrientedBox box = fit_obb(line);
    CHECK(box.half_extents.minCoeff() >= 1e-6);
  }
  CHECK_THROWS_AS(fit_obb(PointCloud{}), ParameterError);
}

TEST_CASE("chamfer distance") {
  PointCloud p;
  p.points = {{0, 0, 0}, {2, 0, 0}};
  PointCloud q;
  q.points = {{0, 0, 0}};
  // forward mean(0, 4) = 2, reverse 0
  CHECK(chamfer_distance(p, q) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(chamfer_distance(q, p) == chamfer_distance(p, q));
  CHECK(chamfer_distance(p, p) == 0.0);

  SUBCASE("accelerated path equals the quadratic reference bitwise") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      PointCloud a = random_cloud(64, seed * 2);
      PointCloud b = random_cloud(48, seed * 2 + 1);
      double fast = chamfer_distance(a, b);
      double brute = chamfer_distance_brute(a, b);
      CHECK(fast == brute);
      CHECK(brute == doctest::Approx(chamfer_oracle(a, b)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(chamfer_distance(PointCloud{}, q), ParameterError);
}

TEST_CASE("voxel occupancy marks interior cells only") {
  TriMesh cube = unit_cube_mesh();
  Aabb bounds;
  bounds.min = {-1, -1, -1};
  bounds.max = {1, 1, 1};
  VoxelGrid grid = voxel_occupancy(cube, 4, bounds);
  REQUIRE(grid.resolution == 4);

  // oracle: enumerate the 64 cell centers against |x|,|y|,|z| < 0.5
  int mismatches = 0;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        Eigen::Vector3d c = grid.cell_center(i, j, k);
        bool inside = c.cwiseAbs().maxCoeff() < 0.5;
        bool occupied = grid.occupancy[grid.index(i, j, k)] != 0;
        if (inside != occupied) ++mismatches;
      }
  CHECK(mismatches == 0);
  CHECK(grid.occupied_count() == 8);  // central 2x2x2 block

  TriMesh empty;
  VoxelGrid none = voxel_occupancy(empty, 4, bounds);
  CHECK(none.occupied_count() == 0);
}

TEST_CASE("part overlap rate on box fixtures") {
  auto make_instance = [](const Eigen::Vector3d& offset) {
    PosedInstance inst;
    for (int i = 0; i < 2; ++i) {
      PosedPart part;
      part.part_id = i;
      part.semantic_label = "box" + std::to_string(i);
      part.obb = OrientedBox::make(i == 0 ? Eigen::Vector3d::Zero() : offset,
                                   {0.5, 0.5, 0.5}, {0, 0, 0});
      part.world = RigidTransform::identity();
      inst.parts.push_back(part);
    }
    inst.states = {0.0, 0.0};
    return inst;
  };

  // voxel oracle: intersection/total = 1/2 for coincident unit cubes
  CHECK(part_overlap_rate(make_instance({0, 0, 0}), 64) ==
        doctest::Approx(0.5).epsilon(0.04));
  // half-overlapping: 0.5 / 2
  CHECK(part_overlap_rate(make_instance({0.5, 0, 0}), 64) ==
        doctest::Approx(0.25).epsilon(0.08));
  // disjoint boxes share no voxel
  CHECK(part_overlap_rate(make_instance({3, 0, 0}), 32) == 0.0);

  CHECK_THROWS_AS(part_overlap_rate(PosedInstance{}, 16), ParameterError);
}
