#include "artikit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "artikit/digest.hpp"
#include "artikit/geometry.hpp"
#include "artikit/rng.hpp"

namespace artikit {

namespace {

using nlohmann::json;

constexpr const char* kConventionNotes =
    "mmd: mean over reference columns of the column minimum; coverage: row "
    "argmin with ties toward the lowest column; 1-NNA: leave-one-out with "
    "distance ties toward the opposite set; distance: symmetric mean of "
    "per-pose minima, chamfer minimized over the configured orientation set; "
    "por: averaged over rest, full-open and uniform poses of the generated "
    "set";

TriMesh resolve_geometry(const PartNode& part, const MeshStore* meshes) {
  if (part.mesh_ref) {
    if (!meshes)
      throw ParameterError("part " + std::to_string(part.part_id) +
                           " references mesh '" + *part.mesh_ref +
                           "' but no mesh store was provided");
    auto it = meshes->find(*part.mesh_ref);
    if (it == meshes->end())
      throw ParameterError("part " + std::to_string(part.part_id) +
                           " references mesh '" + *part.mesh_ref +
                           "' missing from its store");
    return it->second;
  }
  return obb_to_mesh(part.obb);
}

// Largest-remainder split of `total` across weights; weights must be
// nonnegative with a positive sum.
std::vector<int> proportional_split(const std::vector<double>& weights,
                                    int total) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (!(sum > 0.0)) throw ParameterError("no surface area to sample");
  std::vector<int> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  for (int k = 0; k < total - assigned; ++k)
    counts[remainders[static_cast<std::size_t>(k)].second] += 1;
  return counts;
}

// Point clouds of one object at each of its M sampled poses, plus the rest
// of what the distance needs. Base samples live in the stored (zero joint
// coordinate) frame and get moved by forward kinematics per pose.
struct PosedClouds {
  std::vector<PointCloud> clouds;  // one per pose
};

PosedClouds build_posed_clouds(const ArticulatedObject& obj,
                               const IDConfig& cfg, const MeshStore* meshes) {
  ValidationReport report = validate_object(obj);
  if (!report.ok())
    throw ParameterError("object failed validation: " + report.summary());

  const int n = obj.size();
  std::vector<TriMesh> geometry;
  std::vector<double> areas;
  for (int p = 0; p < n; ++p) {
    geometry.push_back(resolve_geometry(obj.part_by_id(p), meshes));
    areas.push_back(geometry.back().surface_area());
  }
  std::vector<int> counts = proportional_split(areas, cfg.points_per_object);
  std::vector<PointCloud> base(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p)
    if (counts[static_cast<std::size_t>(p)] > 0)
      base[static_cast<std::size_t>(p)] = sample_surface_points(
          geometry[static_cast<std::size_t>(p)],
          counts[static_cast<std::size_t>(p)],
          mix_seed(cfg.seed, static_cast<std::uint64_t>(p)));

  std::vector<StateVector> poses =
      sample_states(obj, cfg.pose_samples, cfg.seed, SampleStrategy::Uniform);
  PosedClouds out;
  for (const StateVector& states : poses) {
    std::vector<RigidTransform> world = forward_kinematics(obj, states);
    PointCloud cloud;
    for (int p = 0; p < n; ++p) {
      const RigidTransform& t = world[static_cast<std::size_t>(p)];
      for (const Eigen::Vector3d& pt : base[static_cast<std::size_t>(p)].points)
        cloud.points.push_back(t.apply(pt));
    }
    if (cloud.points.empty())
      throw ParameterError("object produced an empty point cloud");
    out.clouds.push_back(std::move(cloud));
  }
  return out;
}

PointCloud rotate_cloud(const PointCloud& cloud, const Eigen::Matrix3d& rot) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const Eigen::Vector3d& p : cloud.points) out.points.push_back(rot * p);
  return out;
}

// min over the orientation set of chamfer(rot * a, b)
double oriented_chamfer(const PointCloud& a, const PointCloud& b,
                        const IDConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (const Eigen::Matrix3d& rot : cfg.orientation_set) {
    double d = rot.isIdentity(0.0) ? chamfer_distance(a, b)
                                   : chamfer_distance(rotate_cloud(a, rot), b);
    best = std::min(best, d);
  }
  return best;
}

double clouds_distance(const PosedClouds& a, const PosedClouds& b,
                       const IDConfig& cfg) {
  const std::size_t m = a.clouds.size();
  Eigen::MatrixXd d(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          oriented_chamfer(a.clouds[i], b.clouds[j], cfg);
  double forward = 0.0, backward = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    forward += d.row(static_cast<Eigen::Index>(i)).minCoeff();
    backward += d.col(static_cast<Eigen::Index>(i)).minCoeff();
  }
  return forward / static_cast<double>(m) + backward / static_cast<double>(m);
}

void digest_object(Sha256& h, const ArticulatedObject& obj,
                   const MeshStore* meshes) {
  h.update(obj.category);
  double norm[4] = {obj.norm_scale, obj.norm_offset.x(), obj.norm_offset.y(),
                    obj.norm_offset.z()};
  h.update_doubles(norm, 4);
  for (const PartNode& part : obj.parts) {
    std::int32_t ids[2] = {part.part_id, part.parent_id};
    h.update(ids, sizeof(ids));
    h.update(part.semantic_label);
    h.update(joint_type_name(part.joint.type));
    std::vector<double> scalars;
    for (int k = 0; k < 3; ++k) scalars.push_back(part.obb.center(k));
    for (int k = 0; k < 3; ++k) scalars.push_back(part.obb.half_extents(k));
    for (int k = 0; k < 3; ++k) scalars.push_back(part.obb.rotation(k));
    for (int k = 0; k < 3; ++k) scalars.push_back(part.joint.origin(k));
    for (int k = 0; k < 3; ++k) scalars.push_back(part.joint.direction(k));
    for (int k = 0; k < 4; ++k) scalars.push_back(part.joint.range(k));
    scalars.push_back(part.joint.screw_pitch);
    scalars.push_back(part.state);
    h.update_doubles(scalars.data(), scalars.size());
    if (part.shape_latent)
      h.update_doubles(part.shape_latent->data(),
                       static_cast<std::size_t>(part.shape_latent->size()));
    TriMesh geom = resolve_geometry(part, meshes);
    for (const Eigen::Vector3d& v : geom.vertices) {
      double c[3] = {v.x(), v.y(), v.z()};
      h.update_doubles(c, 3);
    }
    for (const auto& f : geom.faces) {
      std::int32_t idx[3] = {f[0], f[1], f[2]};
      h.update(idx, sizeof(idx));
    }
  }
}

std::string set_digest(const std::vector<ArticulatedObject>& objs,
                       const std::vector<MeshStore>* meshes) {
  Sha256 h;
  for (std::size_t i = 0; i < objs.size(); ++i)
    digest_object(h, objs[i], meshes ? &(*meshes)[i] : nullptr);
  return h.hex();
}

const MeshStore* store_at(const std::vector<MeshStore>* stores,
                          std::size_t i) {
  return stores ? &(*stores)[i] : nullptr;
}

void check_store_list(const std::vector<ArticulatedObject>& objs,
                      const std::vector<MeshStore>* stores, const char* side) {
  if (stores && stores->size() != objs.size())
    throw ParameterError(std::string(side) +
                         " mesh store list does not parallel its object list");
}

}  // namespace

void IDConfig::validate() const {
  if (pose_samples < 1) throw ParameterError("pose sample count must be >= 1");
  if (points_per_object < 1)
    throw ParameterError("points per object must be >= 1");
  if (orientation_set.empty())
    throw ParameterError("orientation set must not be empty");
}

std::vector<Eigen::Matrix3d> yaw_quarter_turns() {
  std::vector<Eigen::Matrix3d> out;
  for (int k = 0; k < 4; ++k) {
    double a = kPi / 2.0 * k;
    Eigen::Matrix3d r;
    r << std::cos(a), -std::sin(a), 0.0,  //
        std::sin(a), std::cos(a), 0.0,    //
        0.0, 0.0, 1.0;
    out.push_back(r);
  }
  return out;
}

std::string id_config_hash(const IDConfig& cfg) {
  cfg.validate();
  json j;
  j["pose_samples"] = cfg.pose_samples;
  j["points_per_object"] = cfg.points_per_object;
  j["seed"] = cfg.seed;
  json rots = json::array();
  for (const Eigen::Matrix3d& r : cfg.orientation_set) {
    json flat = json::array();
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) flat.push_back(r(row, col));
    rots.push_back(flat);
  }
  j["orientations"] = rots;
  return sha256_hex(j.dump());
}

double instantiation_distance(const ArticulatedObject& o1,
                              const ArticulatedObject& o2, const IDConfig& cfg,
                              const MeshStore* meshes1,
                              const MeshStore* meshes2) {
  cfg.validate();
  PosedClouds a = build_posed_clouds(o1, cfg, meshes1);
  PosedClouds b = build_posed_clouds(o2, cfg, meshes2);
  return clouds_distance(a, b, cfg);
}

DistanceMatrix pairwise_distance_matrix(
    const std::vector<ArticulatedObject>& gen,
    const std::vector<ArticulatedObject>& ref, const IDConfig& cfg,
    const std::vector<MeshStore>* gen_meshes,
    const std::vector<MeshStore>* ref_meshes) {
  cfg.validate();
  if (gen.empty() || ref.empty())
    throw ParameterError("both object sets must be nonempty");
  check_store_list(gen, gen_meshes, "generated");
  check_store_list(ref, ref_meshes, "reference");

  DistanceMatrix out;
  out.config_hash = id_config_hash(cfg);

  std::string cache_key;
  std::filesystem::path cache_path;
  if (!cfg.cache_dir.empty()) {
    Sha256 h;
    h.update(out.config_hash);
    h.update(set_digest(gen, gen_meshes));
    h.update(set_digest(ref, ref_meshes));
    cache_key = h.hex();
    cache_path = std::filesystem::path(cfg.cache_dir) /
                 ("idmat-" + cache_key + ".json");
    std::ifstream in(cache_path);
    if (in) {
      json j = json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.value("key", "") == cache_key &&
          j.value("rows", 0) == static_cast<int>(gen.size()) &&
          j.value("cols", 0) == static_cast<int>(ref.size())) {
        out.values.resize(static_cast<Eigen::Index>(gen.size()),
                          static_cast<Eigen::Index>(ref.size()));
        const json& rows = j.at("values");
        for (std::size_t i = 0; i < gen.size(); ++i)
          for (std::size_t k = 0; k < ref.size(); ++k)
            out.values(static_cast<Eigen::Index>(i),
                       static_cast<Eigen::Index>(k)) =
                rows.at(i).at(k).get<double>();
        std::cerr << "distance cache hit: " << cache_path.string() << "\n";
        return out;
      }
      std::cerr << "warning: ignoring unreadable distance cache "
                << cache_path.string() << "\n";
    }
  }

  std::vector<PosedClouds> gen_clouds, ref_clouds;
  for (std::size_t i = 0; i < gen.size(); ++i)
    gen_clouds.push_back(build_posed_clouds(gen[i], cfg, store_at(gen_meshes, i)));
  for (std::size_t i = 0; i < ref.size(); ++i)
    ref_clouds.push_back(build_posed_clouds(ref[i], cfg, store_at(ref_meshes, i)));

  out.values.resize(static_cast<Eigen::Index>(gen.size()),
                    static_cast<Eigen::Index>(ref.size()));
  for (std::size_t i = 0; i < gen.size(); ++i)
    for (std::size_t k = 0; k < ref.size(); ++k)
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          clouds_distance(gen_clouds[i], ref_clouds[k], cfg);

  if (!cache_key.empty()) {
    try {
      json j;
      j["key"] = cache_key;
      j["rows"] = static_cast<int>(gen.size());
      j["cols"] = static_cast<int>(ref.size());
      json rows = json::array();
      for (std::size_t i = 0; i < gen.size(); ++i) {
        json row = json::array();
        for (std::size_t k = 0; k < ref.size(); ++k)
          row.push_back(out.values(static_cast<Eigen::Index>(i),
                                   static_cast<Eigen::Index>(k)));
        rows.push_back(row);
      }
      j["values"] = rows;
      std::filesystem::create_directories(cfg.cache_dir);
      std::filesystem::path tmp = cache_path;
      tmp += ".tmp";
      std::ofstream f(tmp);
      if (!f) throw IoError("cannot open " + tmp.string());
      f << j.dump();
      f.close();
      if (!f.good()) throw IoError("short write to " + tmp.string());
      std::filesystem::rename(tmp, cache_path);
    } catch (const std::exception& e) {
      std::cerr << "warning: distance cache write failed: " << e.what()
                << "\n";
    }
  }
  return out;
}

double mmd(const DistanceMatrix& matrix) {
  if (matrix.values.size() == 0)
    throw ParameterError("distance matrix is empty");
  double sum = 0.0;
  for (Eigen::Index c = 0; c < matrix.values.cols(); ++c)
    sum += matrix.values.col(c).minCoeff();
  return sum / static_cast<double>(matrix.values.cols());
}

double coverage(const DistanceMatrix& matrix) {
  if (matrix.values.size() == 0)
    throw ParameterError("distance matrix is empty");
  std::vector<bool> covered(static_cast<std::size_t>(matrix.values.cols()),
                            false);
  for (Eigen::Index r = 0; r < matrix.values.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < matrix.values.cols(); ++c)
      if (matrix.values(r, c) < matrix.values(r, best)) best = c;
    covered[static_cast<std::size_t>(best)] = true;
  }
  int count = 0;
  for (bool b : covered) count += b ? 1 : 0;
  return static_cast<double>(count) /
         static_cast<double>(matrix.values.cols());
}

double one_nna(const DistanceMatrix& gg, const DistanceMatrix& gr,
               const DistanceMatrix& rr) {
  const Eigen::Index g = gr.values.rows();
  const Eigen::Index r = gr.values.cols();
  if (g == 0 || r == 0) throw ParameterError("distance matrices are empty");
  if (gg.values.rows() != g || gg.values.cols() != g)
    throw ShapeError("generated self-distance matrix must be " +
                     std::to_string(g) + "x" + std::to_string(g));
  if (rr.values.rows() != r || rr.values.cols() != r)
    throw ShapeError("reference self-distance matrix must be " +
                     std::to_string(r) + "x" + std::to_string(r));

  int correct = 0;
  for (Eigen::Index i = 0; i < g; ++i) {
    double best = std::numeric_limits<double>::infinity();
    bool own_set = true;
    for (Eigen::Index j = 0; j < g; ++j)
      if (j != i && gg.values(i, j) < best) {
        best = gg.values(i, j);
        own_set = true;
      }
    for (Eigen::Index j = 0; j < r; ++j)
      if (gr.values(i, j) <= best) {  // ties classify toward the opposite set
        best = gr.values(i, j);
        own_set = false;
      }
    if (own_set) ++correct;
  }
  for (Eigen::Index j = 0; j < r; ++j) {
    double best = std::numeric_limits<double>::infinity();
    bool own_set = true;
    for (Eigen::Index k = 0; k < r; ++k)
      if (k != j && rr.values(j, k) < best) {
        best = rr.values(j, k);
        own_set = true;
      }
    for (Eigen::Index i = 0; i < g; ++i)
      if (gr.values(i, j) <= best) {
        best = gr.values(i, j);
        own_set = false;
      }
    if (own_set) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(g + r);
}

std::string report_to_json(const MetricsReport& report) {
  json j;
  j["mmd"] = report.mmd;
  j["cov"] = report.cov;
  j["one_nna"] = report.one_nna;
  j["por_mean"] = report.por_mean;
  j["por_rest"] = report.por_rest;
  j["por_scaled_e2"] = report.por_scaled_e2;
  j["config_hash"] = report.config_hash;
  j["convention_notes"] = report.convention_notes;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw ParseError("metrics report is not valid JSON");
  MetricsReport report;
  try {
    report.mmd = j.at("mmd").get<double>();
    report.cov = j.at("cov").get<double>();
    report.one_nna = j.at("one_nna").get<double>();
    report.por_mean = j.at("por_mean").get<double>();
    report.por_rest = j.at("por_rest").get<double>();
    report.por_scaled_e2 = j.at("por_scaled_e2").get<double>();
    report.config_hash = j.at("config_hash").get<std::string>();
    report.convention_notes = j.at("convention_notes").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
  return report;
}

void save_report(const MetricsReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report to " + path);
  f << report_to_json(report);
  if (!f.good()) throw IoError("failed while writing report to " + path);
}

MetricsReport load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open report " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return report_from_json(ss.str());
}

MetricsReport evaluate_sets(const std::vector<ArticulatedObject>& gen,
                            const std::vector<ArticulatedObject>& ref,
                            const IDConfig& cfg, int por_resolution,
                            const std::vector<MeshStore>* gen_meshes,
                            const std::vector<MeshStore>* ref_meshes) {
  cfg.validate();
  if (gen.empty() || ref.empty())
    throw ParameterError("both object sets must be nonempty");
  if (por_resolution < 1)
    throw ParameterError("voxel resolution must be positive");
  check_store_list(gen, gen_meshes, "generated");
  check_store_list(ref, ref_meshes, "reference");

  DistanceMatrix gr =
      pairwise_distance_matrix(gen, ref, cfg, gen_meshes, ref_meshes);
  DistanceMatrix gg =
      pairwise_distance_matrix(gen, gen, cfg, gen_meshes, gen_meshes);
  DistanceMatrix rr =
      pairwise_distance_matrix(ref, ref, cfg, ref_meshes, ref_meshes);

  MetricsReport report;
  report.mmd = mmd(gr);
  report.cov = coverage(gr);
  report.one_nna = one_nna(gg, gr, rr);

  const int poses = std::max(2, cfg.pose_samples);
  double sum = 0.0, rest_sum = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    std::vector<StateVector> states =
        sample_states(gen[i], poses, cfg.seed, SampleStrategy::Endpoints);
    for (std::size_t k = 0; k < states.size(); ++k) {
      PosedInstance inst =
          pose_object(gen[i], states[k], store_at(gen_meshes, i));
      double por = part_overlap_rate(inst, por_resolution);
      sum += por;
      if (k == 0) rest_sum += por;
    }
  }
  report.por_mean = sum / static_cast<double>(gen.size() * poses);
  report.por_rest = rest_sum / static_cast<double>(gen.size());
  report.por_scaled_e2 = 100.0 * report.por_mean;
  report.config_hash = gr.config_hash;
  report.convention_notes = kConventionNotes;
  return report;
}

}  // namespace artikit
