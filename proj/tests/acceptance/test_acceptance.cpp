// Acceptance gate: one criterion per line, PASS or FAIL with the first
// failed expectation. Exits with the number of failed criteria.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "artikit/core.hpp"
#include "artikit/diffusion.hpp"
#include "artikit/geometry.hpp"
#include "artikit/graph.hpp"
#include "artikit/io.hpp"
#include "artikit/metrics.hpp"
#include "artikit/rng.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using namespace artikit;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void expect_close(double got, double want, double tol, const std::string& what) {
  expect(std::abs(got - want) <= tol,
         what + ": got " + num(got) + ", want " + num(want) + " +- " + num(tol));
}

double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// ---- independent set-metric oracles -----------------------------------------

double oracle_mmd(const Eigen::MatrixXd& d) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    double best = d(0, j);
    for (Eigen::Index i = 1; i < d.rows(); ++i) best = std::min(best, d(i, j));
    sum += best;
  }
  return sum / static_cast<double>(d.cols());
}

double oracle_coverage(const Eigen::MatrixXd& d) {
  std::vector<bool> covered(static_cast<std::size_t>(d.cols()), false);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < d.cols(); ++j)
      if (d(i, j) < d(i, arg)) arg = j;  // ties keep the lower column
    covered[static_cast<std::size_t>(arg)] = true;
  }
  std::size_t n = 0;
  for (bool c : covered) n += c;
  return static_cast<double>(n) / static_cast<double>(d.cols());
}

double oracle_one_nna(const Eigen::MatrixXd& gg, const Eigen::MatrixXd& gr,
                      const Eigen::MatrixXd& rr) {
  const Eigen::Index n = gg.rows(), m = rr.rows();
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double same = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i) same = std::min(same, gg(i, k));
    double opposite = gr.row(i).minCoeff();
    // a tie on the nearest neighbor classifies toward the opposite set
    if (same < opposite) ++correct;
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    double same = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k)
      if (k != j) same = std::min(same, rr(j, k));
    double opposite = gr.col(j).minCoeff();
    if (same < opposite) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n + m);
}

double inline_chamfer(const PointCloud& p, const PointCloud& q) {
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    for (const auto& a : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to.points) best = std::min(best, (a - b).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return one_way(p, q) + one_way(q, p);
}

void criterion_set_metric_oracles() {
  Rng rng(2024);
  auto grid = [&] { return static_cast<double>(rng.uniform_index(25)) / 8.0; };
  for (int rep = 0; rep < 200; ++rep) {
    Eigen::MatrixXd cross(4, 4), gg(4, 4), rr(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) cross(i, j) = grid();
    gg.setZero();
    rr.setZero();
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        gg(i, j) = gg(j, i) = grid();
        rr(i, j) = rr(j, i) = grid();
      }
    DistanceMatrix dm{cross, "acc"};
    expect(mmd(dm) == oracle_mmd(cross), "mmd mismatch at rep " + std::to_string(rep));
    expect(coverage(dm) == oracle_coverage(cross),
           "coverage mismatch at rep " + std::to_string(rep));
    double got = one_nna({gg, "acc"}, {cross, "acc"}, {rr, "acc"});
    expect(got == oracle_one_nna(gg, cross, rr),
           "one_nna mismatch at rep " + std::to_string(rep) + ": got " + num(got) +
               ", want " + num(oracle_one_nna(gg, cross, rr)));
  }

  for (int rep = 0; rep < 100; ++rep) {
    PointCloud p, q;
    int np = 1 + static_cast<int>(rng.uniform_index(64));
    int nq = 1 + static_cast<int>(rng.uniform_index(64));
    for (int i = 0; i < np; ++i)
      p.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    for (int i = 0; i < nq; ++i)
      q.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    double fast = chamfer_distance(p, q);
    double brute = chamfer_distance_brute(p, q);
    expect(fast == brute, "accelerated chamfer != reference at rep " +
                              std::to_string(rep) + ": " + num(fast) + " vs " +
                              num(brute));
    expect(fast == inline_chamfer(p, q),
           "chamfer != independent oracle at rep " + std::to_string(rep));
  }
}

// ---- instantiation distance ---------------------------------------------------

TriMesh sliver_mesh(const Eigen::Vector3d& anchor) {
  // all surface samples land within ~2e-12 of the anchor point
  TriMesh m;
  m.vertices = {anchor, anchor + Eigen::Vector3d(1e-12, 0, 0),
                anchor + Eigen::Vector3d(0, 1e-12, 0)};
  m.faces = {{0, 1, 2}};
  return m;
}

ArticulatedObject point_object(const Eigen::Vector3d& anchor) {
  ArticulatedObject obj;
  obj.category = "fixture";
  PartNode part;
  part.part_id = 0;
  part.parent_id = kRootParent;
  part.semantic_label = "blob";
  part.obb = OrientedBox::make(anchor, {0.1, 0.1, 0.1}, {0, 0, 0});
  part.mesh_ref = "blob.obj";
  obj.parts.push_back(part);
  return obj;
}

void criterion_instantiation_distance() {
  IDConfig cfg;
  cfg.pose_samples = 4;
  cfg.points_per_object = 512;
  cfg.seed = 202;

  std::vector<ArticulatedObject> fixtures;
  for (int i = 0; i < 20; ++i)
    fixtures.push_back(testing::random_tree(2 + i % 5, 1000 + 17 * i));

  for (int i = 0; i < 20; ++i) {
    double self = instantiation_distance(fixtures[i], fixtures[i], cfg);
    expect(self <= 1e-9,
           "self distance " + num(self) + " on fixture " + std::to_string(i));
  }
  for (int i = 0; i + 1 < 20; i += 2) {
    double ab = instantiation_distance(fixtures[i], fixtures[i + 1], cfg);
    double ba = instantiation_distance(fixtures[i + 1], fixtures[i], cfg);
    expect(std::abs(ab - ba) <= 1e-9, "asymmetry " + num(std::abs(ab - ba)) +
                                          " on pair " + std::to_string(i));
  }

  // two point-like static objects 0.6 apart: every cloud collapses to the
  // anchor, so all four averaged terms (two chamfer directions, forward and
  // backward pose matching) equal 0.6^2 and the distance is 4 * 0.36
  ArticulatedObject a = point_object({0, 0, 0});
  ArticulatedObject b = point_object({0.6, 0, 0});
  MeshStore ma{{"blob.obj", sliver_mesh({0, 0, 0})}};
  MeshStore mb{{"blob.obj", sliver_mesh({0.6, 0, 0})}};
  double d = instantiation_distance(a, b, cfg, &ma, &mb);
  expect_close(d, 4.0 * 0.36, 1e-9, "static pair distance");
}

// ---- kinematics ----------------------------------------------------------------

double transform_diff(const RigidTransform& x, const RigidTransform& y) {
  return std::max((x.rotation - y.rotation).cwiseAbs().maxCoeff(),
                  (x.translation - y.translation).cwiseAbs().maxCoeff());
}

void criterion_kinematic_invariants() {
  for (int rep = 0; rep < 100; ++rep) {
    int n = 2 + rep % 5;
    ArticulatedObject obj = testing::random_tree(n, 3000 + rep);
    StateVector states =
        sample_states(obj, 1, 4000 + rep, SampleStrategy::Uniform)[0];
    std::vector<RigidTransform> fk = forward_kinematics(obj, states);

    std::vector<int> perm = Rng(5000 + rep).permutation(n);
    ArticulatedObject shuffled = apply_part_permutation(obj, perm);
    StateVector pstates(states.size());
    for (int k = 0; k < n; ++k)
      pstates[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] =
          states[static_cast<std::size_t>(k)];
    std::vector<RigidTransform> pfk = forward_kinematics(shuffled, pstates);
    for (int k = 0; k < n; ++k) {
      double diff = transform_diff(
          pfk[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])],
          fk[static_cast<std::size_t>(k)]);
      expect(diff <= 1e-12, "permutation equivariance off by " + num(diff) +
                                " at rep " + std::to_string(rep));
    }

    for (const PartNode& part : obj.parts) {
      if (part.parent_id == kRootParent) continue;
      const RigidTransform& child = fk[static_cast<std::size_t>(part.part_id)];
      const RigidTransform& parent = fk[static_cast<std::size_t>(part.parent_id)];

      if (joint_is_rotational(part.joint.type)) {
        for (double lambda : {0.0, 0.37}) {
          Eigen::Vector3d on_axis =
              part.joint.origin + lambda * part.joint.direction;
          double drift = (child.apply(on_axis) - parent.apply(on_axis)).norm();
          expect(drift <= 1e-12, "axis point drifted " + num(drift) + " at rep " +
                                     std::to_string(rep));
        }
      }

      RigidTransform recovered = parent.inverse() * child;
      RigidTransform local = joint_transform(
          part.joint, states[static_cast<std::size_t>(part.part_id)]);
      double diff = transform_diff(recovered, local);
      expect(diff <= 1e-12, "inverse composition off by " + num(diff) +
                                " at rep " + std::to_string(rep));
    }
  }
}

// ---- part overlap ----------------------------------------------------------------

ArticulatedObject cube_pair(const Eigen::Vector3d& second_center) {
  ArticulatedObject obj;
  obj.category = "fixture";
  PartNode base;
  base.part_id = 0;
  base.parent_id = kRootParent;
  base.semantic_label = "a";
  base.obb = OrientedBox::make({0, 0, 0}, {0.5, 0.5, 0.5}, {0, 0, 0});
  obj.parts.push_back(base);
  PartNode other;
  other.part_id = 1;
  other.parent_id = 0;
  other.semantic_label = "b";
  other.obb = OrientedBox::make(second_center, {0.5, 0.5, 0.5}, {0, 0, 0});
  obj.parts.push_back(other);
  return obj;
}

void criterion_part_overlap() {
  auto rate = [](const Eigen::Vector3d& c) {
    ArticulatedObject obj = cube_pair(c);
    return part_overlap_rate(pose_object(obj, {0.0, 0.0}), 64);
  };
  double disjoint = rate({2.5, 0.0, 0.0});
  expect(disjoint == 0.0, "disjoint cubes overlap " + num(disjoint));
  expect_close(rate({0.0, 0.0, 0.0}), 0.5, 0.02, "coincident cubes");
  expect_close(rate({0.5, 0.0, 0.0}), 0.25, 0.02, "half-overlapping cubes");
}

// ---- denoiser gradients -------------------------------------------------------

void scramble(Denoiser& model, std::uint64_t seed) {
  // residual branches are zero at init; fill them so every path mixes
  std::uint64_t lane = 0;
  for (const std::string& name : model.param_names()) {
    bool branch = name.find("/Wo") != std::string::npos ||
                  name.find("/W2") != std::string::npos || name == "temb/W";
    ++lane;
    if (!branch) continue;
    Eigen::MatrixXd w = model.param(name);
    Rng rng(mix_seed(seed, lane));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = 0.2 * rng.normal();
    model.set_param(name, w);
  }
}

LossItem item_from_object(const ArticulatedObject& obj, const DenoiserConfig& dc) {
  LossItem item;
  item.attrs0.resize(obj.size(), dc.attr_dim());
  for (int i = 0; i < obj.size(); ++i)
    item.attrs0.row(i) =
        attributes_to_vector(obj.parts[static_cast<std::size_t>(i)])
            .head(dc.attr_dim())
            .transpose();
  ConnectivityGraph g = graph_from_object(obj);
  item.routing = encode_routing_embeddings(g, dc.routing_seed);
  item.part_mask =
      adjacency_to_attention_mask(to_adjacency_matrix(g), true, dc.mask_hops);
  return item;
}

void criterion_gradient_check() {
  DenoiserConfig dc;
  dc.d_model = 8;
  dc.n_heads = 2;
  dc.n_layers = 1;
  dc.n_experts = 4;
  dc.top_k = 2;
  dc.expert_hidden = 8;
  dc.cond_dim = 4;
  dc.seed = 3;
  dc.routing_seed = 9;

  Denoiser model(dc);
  scramble(model, 77);

  fs::path data = testing::source_dir() / "data" / "synthetic";
  std::vector<LossItem> items = {
      item_from_object(load_object((data / "object5.akj").string()), dc),
      item_from_object(load_object((data / "object6.akj").string()), dc)};
  Rng rng(31);
  items[0].cond.resize(2, dc.cond_dim);
  for (Eigen::Index i = 0; i < items[0].cond.size(); ++i)
    items[0].cond.data()[i] = rng.normal();

  NoiseSchedule sched = make_noise_schedule();
  double worst = grad_check(model, items, sched, 5, 200, 1e-5, 1);
  expect(worst < 1e-4, "max relative gradient error " + num(worst));
}

// ---- expert gating ---------------------------------------------------------------

void criterion_expert_gating() {
  Eigen::RowVectorXd two(2);
  two << 2.0, 1.0;
  Eigen::RowVectorXd w = gate_weights_from_logits(two, 2);
  expect_close(w(0), 0.73106, 1e-5, "softmax(2,1) first weight");
  expect_close(w(1), 0.26894, 1e-5, "softmax(2,1) second weight");
  expect_close(w(0), 0.7310585786300049, 1e-12, "softmax(2,1) exact value");

  Rng rng(66);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::RowVectorXd logits(6);
    for (int i = 0; i < 6; ++i) logits(i) = rng.normal();
    Eigen::RowVectorXd gates = gate_weights_from_logits(logits, 3);
    int nonzero = 0;
    for (int i = 0; i < 6; ++i) nonzero += gates(i) != 0.0;
    expect(nonzero == 3, "expected 3 selected experts, saw " +
                             std::to_string(nonzero));
    expect_close(gates.sum(), 1.0, 1e-9, "selected weights sum");

    int argmax = 0;
    for (int i = 1; i < 6; ++i)
      if (logits(i) > logits(argmax)) argmax = i;
    std::vector<int> top1 = select_top_k(logits, 1);
    expect(top1.size() == 1 && top1[0] == argmax, "k=1 is not argmax routing");
    Eigen::RowVectorXd g1 = gate_weights_from_logits(logits, 1);
    expect_close(g1(argmax), 1.0, 1e-12, "k=1 gate weight");
    expect_close(g1.sum(), 1.0, 1e-12, "k=1 gate row sum");
  }

  // the same contract through the model pathway
  DenoiserConfig dc;
  dc.d_model = 8;
  dc.n_heads = 2;
  dc.n_layers = 1;
  dc.n_experts = 4;
  dc.top_k = 2;
  dc.expert_hidden = 8;
  dc.cond_dim = 0;
  Denoiser model(dc);
  LossItem item = item_from_object(
      load_object((testing::source_dir() / "data" / "synthetic" / "object5.akj")
                      .string()),
      dc);
  TokenBatch batch =
      model.make_batch(item.attrs0, item.routing, item.part_mask, 500.0);
  Eigen::MatrixXd gates = model.moe_gate_weights(batch, item.routing);
  for (Eigen::Index r = 0; r < gates.rows(); ++r) {
    int nonzero = 0;
    for (Eigen::Index c = 0; c < gates.cols(); ++c)
      nonzero += gates(r, c) != 0.0;
    expect(nonzero == dc.top_k, "model gate row selects " +
                                    std::to_string(nonzero) + " experts");
    expect_close(gates.row(r).sum(), 1.0, 1e-9, "model gate row sum");
  }
}

// ---- toy training ------------------------------------------------------------------

void criterion_toy_training() {
  fs::path data = testing::source_dir() / "data" / "synthetic";
  std::vector<ArticulatedObject> objs;
  for (int i = 0; i < 8; ++i)
    objs.push_back(load_object((data / ("object" + std::to_string(i) + ".akj"))
                                   .string()));

  NoiseSchedule sched = make_noise_schedule();
  DenoiserConfig dc;
  TrainConfig tc;
  tc.steps = 2000;
  tc.learning_rate = 0.1;
  tc.clip_norm = 1.0;
  tc.noise_draws = 4;
  tc.seed = 0;

  TrainResult conv = train_toy(objs, {}, dc, tc, sched);
  double smoothed = smoothed_loss(conv.trace);
  expect(smoothed < 0.05, "smoothed loss " + num(smoothed));

  int valid = 0;
  for (int k = 0; k < 100; ++k) {
    ConnectivityGraph g = graph_from_object(objs[static_cast<std::size_t>(k % 8)]);
    ArticulatedObject sampled = sample_object(conv.model, g, sched, 1000 + k);
    if (validate_object(sampled).ok()) ++valid;
  }
  expect(valid == 100,
         std::to_string(valid) + "/100 sampled objects pass validation");

  TrainConfig oc = tc;
  oc.steps = 16000;
  oc.resample_states = false;
  oc.shuffle_parts = false;
  TrainResult over = train_toy({objs[6]}, {}, dc, oc, sched);
  ConnectivityGraph g6 = graph_from_object(objs[6]);
  for (int seed : {100, 101, 102}) {
    ArticulatedObject sampled = sample_object(over.model, g6, sched, seed);
    double worst = 0.0;
    for (int p = 0; p < sampled.size(); ++p)
      worst = std::max(worst, (attributes_to_vector(sampled.part_by_id(p)) -
                               attributes_to_vector(objs[6].part_by_id(p)))
                                  .cwiseAbs()
                                  .maxCoeff());
    expect(worst < 0.1, "overfit error " + num(worst) + " at sampler seed " +
                            std::to_string(seed));
  }
}

// ---- noise schedule ---------------------------------------------------------------

void criterion_schedule_sanity() {
  NoiseSchedule sched = make_noise_schedule();
  expect(sched.timesteps == 1000, "unexpected step count");
  expect(sched.alpha_bar(0) == 1.0, "alpha_bar(0) must be 1");
  for (int t = 1; t <= 1000; ++t)
    expect(sched.alpha_bar(t) < sched.alpha_bar(t - 1),
           "alpha_bar not strictly decreasing at t=" + std::to_string(t));

  long double product = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t - 1) / 999.0;
    expect_close(sched.beta(t), beta, 1e-15, "beta(" + std::to_string(t) + ")");
    product *= 1.0L - static_cast<long double>(beta);
  }
  expect_close(sched.alpha_bar(1000), static_cast<double>(product), 1e-12,
               "terminal alpha_bar vs independent product");
  expect_close(sched.alpha_bar(1000), 4.04e-5, 1e-6, "terminal alpha_bar");

  // second moments of the noising map: zero input isolates the noise term,
  // a constant input adds the signal term back in
  for (int t : {1, 500, 1000}) {
    double abar = sched.alpha_bar(t);
    for (double x0 : {0.0, 2.0}) {
      Eigen::MatrixXd base = Eigen::MatrixXd::Constant(40, 21, x0);
      double sum_sq = 0.0;
      std::size_t count = 0;
      for (int draw = 0; draw < 50; ++draw) {
        Rng rng(mix_seed(4242, static_cast<std::uint64_t>(t) * 1000 +
                                   static_cast<std::uint64_t>(draw) * 2 +
                                   (x0 > 0 ? 1 : 0)));
        Eigen::MatrixXd eps(40, 21);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
        Eigen::MatrixXd xt = forward_noise(base, t, eps, sched);
        sum_sq += xt.squaredNorm();
        count += static_cast<std::size_t>(xt.size());
      }
      double moment = sum_sq / static_cast<double>(count);
      double want = abar * x0 * x0 + (1.0 - abar);
      expect(std::abs(moment / want - 1.0) <= 0.05,
             "second moment at t=" + std::to_string(t) + ", x0=" + num(x0) +
                 ": got " + num(moment) + ", want " + num(want));
    }
  }
}

// ---- io round trips ----------------------------------------------------------------

void object_attrs_equal(const ArticulatedObject& a, const ArticulatedObject& b,
                        double tol, const std::string& what) {
  expect(a.size() == b.size(), what + ": part count");
  expect(a.category == b.category, what + ": category");
  expect(a.root_id == b.root_id, what + ": root");
  for (int i = 0; i < a.size(); ++i) {
    const PartNode& pa = a.parts[static_cast<std::size_t>(i)];
    const PartNode& pb = b.parts[static_cast<std::size_t>(i)];
    expect(pa.joint.type == pb.joint.type, what + ": joint type");
    expect(pa.semantic_label == pb.semantic_label, what + ": label");
    expect(pa.parent_id == pb.parent_id, what + ": parent");
    double diff = (attributes_to_vector(pa) - attributes_to_vector(pb))
                      .cwiseAbs()
                      .maxCoeff();
    expect(diff <= tol, what + ": part " + std::to_string(i) +
                            " attributes differ by " + num(diff));
  }
}

void criterion_io_round_trips() {
  auto dir = testing::scratch_dir("acceptance-io");

  ArticulatedObject door = testing::two_part_door();
  door.norm_scale = 0.5;
  door.norm_offset = {0.125, -0.25, 0.0625};
  door.parts[1].state = 0.375;
  door.parts[1].shape_latent = Eigen::Vector2d(0.1 + 0.2, -5e-324);
  for (const ArticulatedObject& obj : {door, testing::random_tree(5, 77)}) {
    std::string path = (dir / ("rt-" + obj.category + ".akj")).string();
    save_object(obj, path);
    ArticulatedObject loaded = load_object(path);
    object_attrs_equal(obj, loaded, 0.0, "save/load " + obj.category);
    expect(loaded.norm_scale == obj.norm_scale, "norm scale survives");
    expect((loaded.norm_offset - obj.norm_offset).cwiseAbs().maxCoeff() == 0.0,
           "norm offset survives");
  }

  ArticulatedObject bundled = load_object(
      (testing::source_dir() / "data" / "synthetic" / "object2.akj").string());
  for (const ArticulatedObject& obj :
       {testing::two_part_door(), bundled}) {
    fs::path exp = dir / ("export-" + obj.category);
    fs::create_directories(exp);
    export_urdf(obj, {}, (exp / "mobility.urdf").string());
    ObjectBundle back = parse_mobility_urdf(exp.string());
    object_attrs_equal(obj, back.object, 1e-9, "export/ingest " + obj.category);
    expect(validate_object(back.object).ok(), "re-ingested object validates");
  }

  TriMesh cube = load_obj((testing::data_dir() / "cube.obj").string());
  expect(cube.vertices.size() == 8, "cube vertex count");
  expect(cube.faces.size() == 12, "cube face count");

  std::ofstream plain(dir / "plain.urdf");
  plain << R"(<robot name="gadget">
  <link name="base"/>
  <link name="slider"/>
  <joint name="slide" type="prismatic">
    <origin xyz="0 1 0"/>
    <parent link="base"/>
    <child link="slider"/>
    <axis xyz="0 1 0"/>
    <limit lower="-0.2" upper="0.3"/>
  </joint>
</robot>
)";
  plain.close();
  ObjectBundle ingested = parse_mobility_urdf((dir / "plain.urdf").string());
  expect(validate_object(ingested.object).ok(), "plain ingest validates");
}

// ---- cli ----------------------------------------------------------------------------

std::string shell_quote(const std::string& s) {
  std::string quoted = "'";
  for (char c : s) quoted += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return quoted + "'";
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream cmd;
  cmd << shell_quote(ARTIKIT_CLI_PATH);
  for (const auto& a : args) cmd << ' ' << shell_quote(a);
  cmd << " > /dev/null 2> /dev/null";
  int status = std::system(cmd.str().c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  expect(in.good(), "missing expected output " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void expect_same_bytes(const fs::path& a, const fs::path& b,
                       const std::string& what) {
  expect(slurp(a) == slurp(b), what + " outputs differ between reruns");
}

void criterion_cli_determinism() {
  auto dir = testing::scratch_dir("acceptance-cli");
  fs::path data = testing::source_dir() / "data" / "synthetic";

  {
    std::ofstream urdf(dir / "cart.urdf");
    urdf << R"(<robot name="cart">
  <link name="body" artikit_obb="0 0 0.3 0.5 0.4 0.3 0 0 0"/>
  <link name="tray" artikit_obb="0.7 0 0.3 0.2 0.1 0.08 0 0 0"/>
  <joint name="slide" type="prismatic">
    <origin xyz="0.5 0 0.3"/>
    <parent link="body"/>
    <child link="tray"/>
    <axis xyz="1 0 0"/>
    <limit lower="0" upper="0.4"/>
  </joint>
</robot>
)";
  }
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({
  "metrics": {"pose_samples": 2, "points_per_object": 96, "seed": 3,
              "por_resolution": 16},
  "denoiser": {"d_model": 16, "n_heads": 2, "n_layers": 1, "n_experts": 2,
               "top_k": 1, "expert_hidden": 8, "cond_dim": 0, "seed": 5},
  "train": {"noise_draws": 1, "clip_norm": 1.0}
})";
  }
  std::string config = (dir / "config.json").string();

  for (const char* run : {"a", "b"})
    expect(run_cli({"ingest", "--in", (dir / "cart.urdf").string(), "--out",
                    (dir / run / "cart.akj").string()}) == 0,
           "ingest exit code");
  expect_same_bytes(dir / "a" / "cart.akj", dir / "b" / "cart.akj", "ingest");

  for (const char* run : {"a", "b"})
    expect(run_cli({"sample-states", "--obj", (data / "object6.akj").string(),
                    "--m", "2", "--seed", "3", "--out",
                    (dir / run / "poses").string()}) == 0,
           "sample-states exit code");
  expect_same_bytes(dir / "a" / "poses" / "manifest.json",
                    dir / "b" / "poses" / "manifest.json", "sample-states");
  expect_same_bytes(dir / "a" / "poses" / "instance1.akj",
                    dir / "b" / "poses" / "instance1.akj", "sample-states");

  fs::create_directories(dir / "gen");
  fs::create_directories(dir / "ref");
  for (int i : {0, 1})
    fs::copy_file(data / ("object" + std::to_string(i) + ".akj"),
                  dir / "gen" / ("object" + std::to_string(i) + ".akj"));
  for (int i : {2, 3})
    fs::copy_file(data / ("object" + std::to_string(i) + ".akj"),
                  dir / "ref" / ("object" + std::to_string(i) + ".akj"));
  for (const char* run : {"a", "b"})
    expect(run_cli({"evaluate", "--gen", (dir / "gen").string(), "--ref",
                    (dir / "ref").string(), "--config", config, "--out",
                    (dir / run / "report.json").string()}) == 0,
           "evaluate exit code");
  expect_same_bytes(dir / "a" / "report.json", dir / "b" / "report.json",
                    "evaluate");

  fs::create_directories(dir / "train-data");
  fs::copy_file(data / "object6.akj", dir / "train-data" / "object6.akj");
  for (const char* run : {"a", "b"})
    expect(run_cli({"train-toy", "--data", (dir / "train-data").string(),
                    "--config", config, "--steps", "3", "--seed", "11",
                    "--out", (dir / run / "ckpt.bin").string(), "--trace",
                    (dir / run / "trace.csv").string()}) == 0,
           "train-toy exit code");
  expect_same_bytes(dir / "a" / "ckpt.bin", dir / "b" / "ckpt.bin", "train-toy");
  expect_same_bytes(dir / "a" / "trace.csv", dir / "b" / "trace.csv",
                    "train-toy trace");

  fs::path graph = testing::data_dir() / "graphs" / "two_part_door.json";
  for (const char* run : {"a", "b"})
    expect(run_cli({"generate", "--ckpt", (dir / "a" / "ckpt.bin").string(),
                    "--graph", graph.string(), "--seed", "5", "--out",
                    (dir / run / "gen.akj").string()}) == 0,
           "generate exit code");
  expect_same_bytes(dir / "a" / "gen.akj", dir / "b" / "gen.akj", "generate");

  std::string fixture =
      (testing::data_dir() / "provider" / "cabinet_mock.json").string();
  std::string prompts = (testing::source_dir() / "prompts").string();
  for (const char* run : {"a", "b"})
    expect(run_cli({"infer-graph", "--condition", "a cabinet", "--prompts",
                    prompts, "--mock", fixture, "--out",
                    (dir / run / "graph.json").string()}) == 0,
           "infer-graph exit code");
  expect_same_bytes(dir / "a" / "graph.json", dir / "b" / "graph.json",
                    "infer-graph");

  // exit-code vocabulary: 2 validation, 3 io, 4 provider
  int validation = run_cli({"sample-states", "--obj",
                            (data / "object6.akj").string(), "--m", "0",
                            "--out", (dir / "x").string()});
  expect(validation == 2, "validation failure exited " +
                              std::to_string(validation) + ", want 2");
  int io = run_cli({"generate", "--ckpt", (dir / "ghost.bin").string(),
                    "--graph", graph.string(), "--out",
                    (dir / "x.akj").string()});
  expect(io == 3, "io failure exited " + std::to_string(io) + ", want 3");
  unsetenv("ARTIKIT_VLM_TOKEN");
  int provider = run_cli({"infer-graph", "--condition", "x", "--prompts",
                          prompts, "--endpoint", "http://127.0.0.1:9/v1/chat",
                          "--out", (dir / "g.json").string()});
  expect(provider == 4, "provider failure exited " + std::to_string(provider) +
                            ", want 4");
  int usage = run_cli({"frobnicate"});
  expect(usage == 2, "usage failure exited " + std::to_string(usage) +
                         ", want 2");
}

// ---- runner ------------------------------------------------------------------------

struct Criterion {
  const char* name;
  double budget_seconds;  // 0 disables the runtime gate
  std::function<void()> body;
};

}  // namespace

int main() {
  std::vector<Criterion> criteria = {
      {"set-metric oracle equivalence", 10.0, criterion_set_metric_oracles},
      {"instantiation distance properties", 60.0, criterion_instantiation_distance},
      {"kinematic invariants", 5.0, criterion_kinematic_invariants},
      {"part overlap fixtures", 30.0, criterion_part_overlap},
      {"denoiser gradient check", 60.0, criterion_gradient_check},
      {"expert gating contracts", 0.0, criterion_expert_gating},
      {"toy training convergence", 600.0, criterion_toy_training},
      {"noise schedule sanity", 0.0, criterion_schedule_sanity},
      {"io round trips", 5.0, criterion_io_round_trips},
      {"cli determinism", 0.0, criterion_cli_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      c.body();
    } catch (const std::exception& e) {
      failure = e.what();
    }
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (failure.empty() && c.budget_seconds > 0.0 &&
        elapsed > c.budget_seconds) {
      std::ostringstream msg;
      msg << "runtime " << elapsed << " s exceeds " << c.budget_seconds << " s";
      failure = msg.str();
    }
    if (failure.empty()) {
      std::printf("[PASS] %s (%.1f s)\n", c.name, elapsed);
    } else {
      std::printf("[FAIL] %s: %s (%.1f s)\n", c.name, failure.c_str(), elapsed);
      ++failures;
    }
    std::fflush(stdout);
  }
  return failures;
}
