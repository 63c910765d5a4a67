#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "artikit/core.hpp"

namespace artikit {

// Configuration of the articulation-aware object distance: chamfer over
// whole-object point clouds, minimized over an orientation set and averaged
// over Monte Carlo joint poses.
struct IDConfig {
  int pose_samples = 10;         // M
  int points_per_object = 2048;  // split across parts by surface area
  std::vector<Eigen::Matrix3d> orientation_set{Eigen::Matrix3d::Identity()};
  std::uint64_t seed = 0;
  std::string cache_dir;  // pairwise-matrix disk cache; empty disables

  void validate() const;
};

// The four quarter turns about +z, identity first. Absolute distance values
// are only comparable under an identical orientation set.
std::vector<Eigen::Matrix3d> yaw_quarter_turns();

// Stable hex key of the distance-relevant configuration (cache_dir excluded).
std::string id_config_hash(const IDConfig& cfg);

struct DistanceMatrix {
  Eigen::MatrixXd values;   // generated rows x reference columns
  std::string config_hash;  // id_config_hash of the producing config
};

struct MetricsReport {
  double mmd = 0.0;
  double cov = 0.0;
  double one_nna = 0.0;
  double por_mean = 0.0;  // over rest, full-open and sampled poses
  double por_rest = 0.0;  // rest pose only
  double por_scaled_e2 = 0.0;
  std::string config_hash;
  std::string convention_notes;
};

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
void save_report(const MetricsReport& report, const std::string& path);
MetricsReport load_report(const std::string& path);

// Articulation-aware distance between two objects (both must validate).
// Pose sets of size M are drawn per object with the shared config seed, so
// the self-distance of an object is exactly zero. Parts referencing meshes
// absent from their store are a parameter error; parts without a mesh_ref
// fall back to their OBB geometry.
double instantiation_distance(const ArticulatedObject& o1,
                              const ArticulatedObject& o2, const IDConfig& cfg,
                              const MeshStore* meshes1 = nullptr,
                              const MeshStore* meshes2 = nullptr);

// Entry (i, j) = instantiation_distance(gen[i], ref[j], cfg). When cfg
// names a cache directory the matrix is persisted there keyed by the config
// and both object lists; a failed cache write degrades to a warning. Mesh
// store lists, when given, parallel their object lists.
DistanceMatrix pairwise_distance_matrix(
    const std::vector<ArticulatedObject>& gen,
    const std::vector<ArticulatedObject>& ref, const IDConfig& cfg,
    const std::vector<MeshStore>* gen_meshes = nullptr,
    const std::vector<MeshStore>* ref_meshes = nullptr);

// Mean over reference columns of the column minimum: each ground-truth
// instance matched to its nearest generated object.
double mmd(const DistanceMatrix& matrix);

// Fraction of reference columns that are the row argmin of at least one
// generated row; argmin ties resolve toward the lowest column index.
double coverage(const DistanceMatrix& matrix);

// Leave-one-out 1-NN two-sample classification accuracy over the pooled
// sets; 0.5 means the sets are indistinguishable. Distance ties classify
// toward the opposite set, so exact duplicates score 0.
double one_nna(const DistanceMatrix& gg, const DistanceMatrix& gr,
               const DistanceMatrix& rr);

// Full evaluation: MMD/COV/1-NNA from cached pairwise matrices plus the
// mean part-overlap rate of the generated set over rest, full-open and
// uniformly sampled poses.
MetricsReport evaluate_sets(const std::vector<ArticulatedObject>& gen,
                            const std::vector<ArticulatedObject>& ref,
                            const IDConfig& cfg, int por_resolution = 64,
                            const std::vector<MeshStore>* gen_meshes = nullptr,
                            const std::vector<MeshStore>* ref_meshes = nullptr);

}  // namespace artikit
