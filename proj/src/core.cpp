#include "artikit/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "artikit/rng.hpp"

namespace artikit {

const char* joint_type_name(JointType t) {
  switch (t) {
    case JointType::Fixed: return "fixed";
    case JointType::Revolute: return "revolute";
    case JointType::Continuous: return "continuous";
    case JointType::Prismatic: return "prismatic";
    case JointType::Screw: return "screw";
  }
  throw ParameterError("unknown joint type enum value");
}

JointType joint_type_from_name(const std::string& name) {
  if (name == "fixed") return JointType::Fixed;
  if (name == "revolute") return JointType::Revolute;
  if (name == "continuous") return JointType::Continuous;
  if (name == "prismatic") return JointType::Prismatic;
  if (name == "screw") return JointType::Screw;
  throw ParseError("unknown joint type '" + name + "'");
}

OrientedBox OrientedBox::make(const Eigen::Vector3d& center,
                              const Eigen::Vector3d& half_extents,
                              const Eigen::Vector3d& rotation) {
  OrientedBox box;
  box.center = center;
  box.half_extents = half_extents.cwiseAbs().cwiseMax(1e-6);
  box.rotation = canonicalize_axis_angle(rotation);
  return box;
}

std::array<Eigen::Vector3d, 8> OrientedBox::corners() const {
  Eigen::Matrix3d r = rotation_matrix();
  std::array<Eigen::Vector3d, 8> out;
  int n = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) {
        Eigen::Vector3d local(sx * half_extents.x(), sy * half_extents.y(),
                              sz * half_extents.z());
        out[static_cast<std::size_t>(n++)] = center + r * local;
      }
  return out;
}

OrientedBox transformed(const OrientedBox& box, const RigidTransform& t) {
  OrientedBox out;
  out.center = t.apply(box.center);
  out.half_extents = box.half_extents;
  out.rotation = matrix_to_axis_angle(t.rotation * box.rotation_matrix());
  return out;
}

JointSpec JointSpec::make(JointType type, const Eigen::Vector3d& origin,
                          const Eigen::Vector3d& direction,
                          const Eigen::Vector4d& range, double screw_pitch) {
  double n = direction.norm();
  if (n < 1e-6) {
    throw ParameterError("joint axis direction norm " + std::to_string(n) +
                         " is below 1e-6");
  }
  JointSpec j;
  j.type = type;
  j.origin = origin;
  j.direction = direction / n;
  j.screw_pitch = screw_pitch;
  j.range = Eigen::Vector4d::Zero();
  if (joint_is_rotational(type)) {
    j.range[0] = std::min(range[0], range[1]);
    j.range[1] = std::max(range[0], range[1]);
  } else if (joint_is_translational(type)) {
    j.range[2] = std::min(range[2], range[3]);
    j.range[3] = std::max(range[2], range[3]);
  }
  return j;
}

const PartNode& ArticulatedObject::part_by_id(int id) const {
  for (const auto& p : parts)
    if (p.part_id == id) return p;
  throw LookupError("no part with id " + std::to_string(id));
}

PartNode& ArticulatedObject::part_by_id(int id) {
  for (auto& p : parts)
    if (p.part_id == id) return p;
  throw LookupError("no part with id " + std::to_string(id));
}

bool ValidationReport::has(const std::string& code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& v : violations) os << "[" << v.code << "] " << v.message << "\n";
  return os.str();
}

// ---- kinematics ------------------------------------------------------------

double denormalize_state(const JointSpec& joint, double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ParameterError("normalized state " + std::to_string(s) +
                         " outside [0, 1]");
  }
  switch (joint.type) {
    case JointType::Fixed:
      return 0.0;
    case JointType::Revolute:
    case JointType::Continuous:
      return joint.rot_min() + s * (joint.rot_max() - joint.rot_min());
    case JointType::Prismatic:
    case JointType::Screw:
      return joint.trans_min() + s * (joint.trans_max() - joint.trans_min());
  }
  throw ParameterError("unknown joint type enum value");
}

RigidTransform joint_transform(const JointSpec& joint, double s) {
  double q = denormalize_state(joint, s);
  switch (joint.type) {
    case JointType::Fixed:
      return RigidTransform::identity();
    case JointType::Revolute:
    case JointType::Continuous:
      return rotation_about_line(joint.origin, joint.direction, q);
    case JointType::Prismatic: {
      RigidTransform t;
      t.translation = q * joint.direction;
      return t;
    }
    case JointType::Screw: {
      if (joint.screw_pitch == 0.0)
        throw ParameterError("screw joint with zero pitch");
      RigidTransform t =
          rotation_about_line(joint.origin, joint.direction, q / joint.screw_pitch);
      t.translation += q * joint.direction;
      return t;
    }
  }
  throw ParameterError("unknown joint type enum value");
}

namespace {

// id -> index into parts, shared across fk/validate. Throws on non-dense ids.
std::vector<int> id_index_map(const ArticulatedObject& obj) {
  const int n = obj.size();
  std::vector<int> index(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    int id = obj.parts[static_cast<std::size_t>(i)].part_id;
    if (id < 0 || id >= n)
      throw StructuralError("part id " + std::to_string(id) +
                            " outside dense range [0, " + std::to_string(n) + ")");
    if (index[static_cast<std::size_t>(id)] != -1)
      throw StructuralError("duplicate part id " + std::to_string(id));
    index[static_cast<std::size_t>(id)] = i;
  }
  return index;
}

}  // namespace

std::vector<RigidTransform> forward_kinematics(const ArticulatedObject& obj,
                                               const StateVector& states) {
  const int n = obj.size();
  if (n == 0) throw ParameterError("forward kinematics on an empty object");
  if (static_cast<int>(states.size()) != n) {
    throw ShapeError("state vector length " + std::to_string(states.size()) +
                     " != part count " + std::to_string(n));
  }
  std::vector<int> index = id_index_map(obj);
  if (obj.root_id < 0 || obj.root_id >= n)
    throw StructuralError("root id " + std::to_string(obj.root_id) +
                          " is not a part");

  std::vector<RigidTransform> world(static_cast<std::size_t>(n));
  // 0 = unvisited, 1 = in progress (cycle sentinel), 2 = done
  std::vector<int> mark(static_cast<std::size_t>(n), 0);

  // Iterative resolve so deep chains cannot overflow the stack.
  for (int id = 0; id < n; ++id) {
    if (mark[static_cast<std::size_t>(id)] == 2) continue;
    std::vector<int> chain;
    int cur = id;
    while (true) {
      if (mark[static_cast<std::size_t>(cur)] == 2) break;
      if (mark[static_cast<std::size_t>(cur)] == 1) {
        std::ostringstream os;
        os << "cyclic parent structure through part " << cur;
        throw StructuralError(os.str());
      }
      mark[static_cast<std::size_t>(cur)] = 1;
      chain.push_back(cur);
      const PartNode& p = obj.parts[static_cast<std::size_t>(index[static_cast<std::size_t>(cur)])];
      if (cur == obj.root_id || p.parent_id == kRootParent) break;
      if (p.parent_id < 0 || p.parent_id >= n)
        throw StructuralError("part " + std::to_string(cur) +
                              " references missing parent " +
                              std::to_string(p.parent_id));
      if (p.parent_id == cur)
        throw StructuralError("part " + std::to_string(cur) + " is its own parent");
      cur = p.parent_id;
    }
    // Unwind root-first.
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      int pid = *it;
      const PartNode& p = obj.parts[static_cast<std::size_t>(index[static_cast<std::size_t>(pid)])];
      if (pid == obj.root_id || p.parent_id == kRootParent) {
        world[static_cast<std::size_t>(pid)] = RigidTransform::identity();
      } else {
        world[static_cast<std::size_t>(pid)] =
            world[static_cast<std::size_t>(p.parent_id)] *
            joint_transform(p.joint, states[static_cast<std::size_t>(pid)]);
      }
      mark[static_cast<std::size_t>(pid)] = 2;
    }
  }
  return world;
}

PosedInstance pose_object(const ArticulatedObject& obj,
                          const StateVector& states, const MeshStore* meshes) {
  std::vector<RigidTransform> world = forward_kinematics(obj, states);
  PosedInstance out;
  out.states = states;
  out.parts.resize(static_cast<std::size_t>(obj.size()));
  for (const auto& p : obj.parts) {
    const RigidTransform& t = world[static_cast<std::size_t>(p.part_id)];
    PosedPart posed;
    posed.part_id = p.part_id;
    posed.semantic_label = p.semantic_label;
    posed.world = t;
    posed.obb = transformed(p.obb, t);
    if (meshes && p.mesh_ref) {
      auto it = meshes->find(*p.mesh_ref);
      if (it == meshes->end())
        throw LookupError("mesh_ref '" + *p.mesh_ref + "' of part " +
                          std::to_string(p.part_id) + " not in mesh store");
      TriMesh m = it->second;
      for (auto& v : m.vertices) v = t.apply(v);
      posed.mesh = std::move(m);
    }
    out.parts[static_cast<std::size_t>(p.part_id)] = std::move(posed);
  }
  return out;
}

// ---- validation -------------------------------------------------------------

namespace {

bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.allFinite();
}

}  // namespace

ValidationReport validate_object(const ArticulatedObject& obj) {
  ValidationReport report;
  auto add = [&](const std::string& code, const std::string& msg, int id = -1) {
    report.violations.push_back({code, msg, id});
  };

  const int n = obj.size();
  if (n == 0) {
    add("root-missing", "object has no parts");
    return report;
  }

  // id density and duplicates
  std::vector<int> index(static_cast<std::size_t>(n), -1);
  bool ids_ok = true;
  for (int i = 0; i < n; ++i) {
    const PartNode& p = obj.parts[static_cast<std::size_t>(i)];
    if (p.part_id < 0 || p.part_id >= n) {
      add("id-range", "part id " + std::to_string(p.part_id) +
                          " outside dense range [0, " + std::to_string(n) + ")",
          p.part_id);
      ids_ok = false;
      continue;
    }
    if (index[static_cast<std::size_t>(p.part_id)] != -1) {
      add("duplicate-id", "part id " + std::to_string(p.part_id) + " appears twice",
          p.part_id);
      ids_ok = false;
      continue;
    }
    index[static_cast<std::size_t>(p.part_id)] = i;
  }

  if (obj.root_id < 0 || obj.root_id >= n ||
      (ids_ok && index[static_cast<std::size_t>(obj.root_id)] == -1)) {
    add("root-missing", "root id " + std::to_string(obj.root_id) + " is not a part");
  } else if (ids_ok) {
    const PartNode& root = obj.parts[static_cast<std::size_t>(
        index[static_cast<std::size_t>(obj.root_id)])];
    if (root.parent_id != kRootParent)
      add("root-parent", "root part must have the root parent marker", root.part_id);
    if (root.joint.type != JointType::Fixed)
      add("root-joint", "root part must use a fixed joint", root.part_id);
  }

  // parent references and tree shape (only meaningful with sane ids)
  if (ids_ok) {
    for (const auto& p : obj.parts) {
      if (p.part_id == obj.root_id) continue;
      if (p.parent_id == kRootParent) {
        add("root-parent", "non-root part " + std::to_string(p.part_id) +
                               " carries the root marker",
            p.part_id);
        continue;
      }
      if (p.parent_id < 0 || p.parent_id >= n) {
        add("parent-missing", "part " + std::to_string(p.part_id) +
                                  " references missing parent " +
                                  std::to_string(p.parent_id),
            p.part_id);
      } else if (p.parent_id == p.part_id) {
        add("self-parent", "part " + std::to_string(p.part_id) + " is its own parent",
            p.part_id);
      }
    }

    // cycle / reachability via parent walk with step budget
    for (const auto& p : obj.parts) {
      int cur = p.part_id;
      int steps = 0;
      bool reached_root = false;
      while (steps++ <= n) {
        if (cur == obj.root_id) {
          reached_root = true;
          break;
        }
        const PartNode& node = obj.parts[static_cast<std::size_t>(
            index[static_cast<std::size_t>(cur)])];
        if (node.parent_id < 0 || node.parent_id >= n) break;  // reported above
        cur = node.parent_id;
      }
      if (steps > n + 1) {
        add("cycle", "parent walk from part " + std::to_string(p.part_id) +
                         " never terminates",
            p.part_id);
      } else if (!reached_root && !report.has("parent-missing") &&
                 !report.has("root-parent")) {
        add("disconnected", "part " + std::to_string(p.part_id) +
                                " cannot reach the root",
            p.part_id);
      }
    }
  }

  // per-part numeric checks
  for (const auto& p : obj.parts) {
    const JointSpec& j = p.joint;
    Eigen::VectorXd nums(20);
    nums << p.obb.center, p.obb.half_extents, p.obb.rotation, j.origin,
        j.direction, j.range, p.state;
    if (!all_finite(nums) || !std::isfinite(j.screw_pitch) ||
        (p.shape_latent && !all_finite(*p.shape_latent))) {
      add("non-finite", "part " + std::to_string(p.part_id) +
                            " contains non-finite values",
          p.part_id);
      continue;  // further numeric checks would be noise
    }
    if (std::abs(j.direction.norm() - 1.0) > 1e-9)
      add("axis-norm", "part " + std::to_string(p.part_id) +
                           " joint direction is not unit length",
          p.part_id);
    if (j.rot_min() > j.rot_max() || j.trans_min() > j.trans_max())
      add("range-order", "part " + std::to_string(p.part_id) +
                             " joint range pair out of order",
          p.part_id);
    bool rot_used = joint_is_rotational(j.type);
    bool trans_used = joint_is_translational(j.type);
    if ((!rot_used && (j.rot_min() != 0.0 || j.rot_max() != 0.0)) ||
        (!trans_used && (j.trans_min() != 0.0 || j.trans_max() != 0.0)))
      add("range-unused", "part " + std::to_string(p.part_id) +
                              " has nonzero values in the unused range pair",
          p.part_id);
    if (j.type == JointType::Screw && j.screw_pitch == 0.0)
      add("screw-pitch", "part " + std::to_string(p.part_id) +
                             " screw joint has zero pitch",
          p.part_id);
    if (p.state < 0.0 || p.state > 1.0)
      add("state-range", "part " + std::to_string(p.part_id) + " state " +
                             std::to_string(p.state) + " outside [0, 1]",
          p.part_id);
    if ((p.obb.half_extents.array() <= 0.0).any())
      add("extent-positive", "part " + std::to_string(p.part_id) +
                                 " half extents must be positive",
          p.part_id);
    else if ((p.obb.half_extents.array() < 1e-6).any())
      report.warnings.push_back("part " + std::to_string(p.part_id) +
                                " half extents below the 1e-6 clamp floor");
    if (p.obb.rotation.norm() > kPi + 1e-9)
      add("rotation-canonical", "part " + std::to_string(p.part_id) +
                                    " box rotation exceeds the |theta| <= pi form",
          p.part_id);
  }
  return report;
}

// ---- attribute vectors -------------------------------------------------------

Eigen::VectorXd attributes_to_vector(const PartNode& part) {
  const int f = part.shape_latent ? static_cast<int>(part.shape_latent->size()) : 0;
  Eigen::VectorXd v(kAttrBase + f);
  v.segment<3>(kAttrCenter) = part.obb.center;
  v.segment<3>(kAttrHalfExtents) = part.obb.half_extents;
  v.segment<3>(kAttrRotation) = part.obb.rotation;
  v.segment<3>(kAttrAxisOrigin) = part.joint.origin;
  v.segment<3>(kAttrAxisDirection) = part.joint.direction;
  v.segment<4>(kAttrRange) = part.joint.range;
  v[kAttrState] = part.state;
  if (f > 0) v.tail(f) = *part.shape_latent;
  return v;
}

PartNode vector_to_attributes(const Eigen::VectorXd& v, JointType type,
                              const std::string& semantic_label,
                              double screw_pitch) {
  if (v.size() < kAttrBase) {
    throw ShapeError("attribute vector length " + std::to_string(v.size()) +
                     " is shorter than the " + std::to_string(kAttrBase) +
                     " base attributes");
  }
  PartNode part;
  part.semantic_label = semantic_label;
  part.obb = OrientedBox::make(v.segment<3>(kAttrCenter),
                               v.segment<3>(kAttrHalfExtents),
                               v.segment<3>(kAttrRotation));
  Eigen::Vector3d dir = v.segment<3>(kAttrAxisDirection);
  if (dir.norm() < 1e-6) dir = Eigen::Vector3d::UnitZ();
  part.joint = JointSpec::make(type, v.segment<3>(kAttrAxisOrigin), dir,
                               v.segment<4>(kAttrRange), screw_pitch);
  part.state = std::clamp(v[kAttrState], 0.0, 1.0);
  const int f = static_cast<int>(v.size()) - kAttrBase;
  if (f > 0) part.shape_latent = v.tail(f);
  return part;
}

// ---- sampling and part order --------------------------------------------------

std::vector<StateVector> sample_states(const ArticulatedObject& obj, int count,
                                       std::uint64_t seed,
                                       SampleStrategy strategy) {
  if (count <= 0) throw ParameterError("sample count must be positive");
  const int n = obj.size();
  if (n == 0) throw ParameterError("cannot sample states for an empty object");

  Rng rng(seed);
  std::vector<StateVector> out(static_cast<std::size_t>(count),
                               StateVector(static_cast<std::size_t>(n), 0.0));
  switch (strategy) {
    case SampleStrategy::Uniform:
      for (auto& sv : out)
        for (auto& s : sv) s = rng.uniform();
      break;
    case SampleStrategy::Stratified:
      // Sample m lives in stratum [m/M, (m+1)/M) for every joint.
      for (int m = 0; m < count; ++m)
        for (auto& s : out[static_cast<std::size_t>(m)])
          s = (static_cast<double>(m) + rng.uniform()) / static_cast<double>(count);
      break;
    case SampleStrategy::Endpoints:
      for (int m = 0; m < count; ++m) {
        if (m == 0) continue;  // already all zeros
        if (m == 1) {
          std::fill(out[1].begin(), out[1].end(), 1.0);
          continue;
        }
        for (auto& s : out[static_cast<std::size_t>(m)]) s = rng.uniform();
      }
      break;
  }
  return out;
}

ArticulatedObject apply_part_permutation(const ArticulatedObject& obj,
                                         const std::vector<int>& perm) {
  const int n = obj.size();
  if (static_cast<int>(perm.size()) != n)
    throw ParameterError("permutation length " + std::to_string(perm.size()) +
                         " != part count " + std::to_string(n));
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (int v : perm) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]++)
      throw ParameterError("permutation is not a bijection on [0, N)");
  }

  ArticulatedObject out;
  out.category = obj.category;
  out.norm_scale = obj.norm_scale;
  out.norm_offset = obj.norm_offset;
  out.root_id = perm[static_cast<std::size_t>(obj.root_id)];
  out.parts.resize(static_cast<std::size_t>(n));
  for (const auto& p : obj.parts) {
    PartNode moved = p;
    moved.part_id = perm[static_cast<std::size_t>(p.part_id)];
    if (p.parent_id != kRootParent)
      moved.parent_id = perm[static_cast<std::size_t>(p.parent_id)];
    out.parts[static_cast<std::size_t>(moved.part_id)] = std::move(moved);
  }
  return out;
}

ArticulatedObject shuffle_parts(const ArticulatedObject& obj, std::uint64_t seed) {
  Rng rng(seed);
  return apply_part_permutation(obj, rng.permutation(obj.size()));
}

TriMesh obb_to_mesh(const OrientedBox& box) {
  TriMesh mesh;
  auto c = box.corners();
  mesh.vertices.assign(c.begin(), c.end());
  // corners() orders by (sx, sy, sz) bits: index = 4*(sx>0) + 2*(sy>0) + (sz>0).
  // Outward-wound faces of the unit cube in that indexing:
  mesh.faces = {
      {0, 1, 3}, {0, 3, 2},  // -x
      {4, 6, 7}, {4, 7, 5},  // +x
      {0, 4, 5}, {0, 5, 1},  // -y
      {2, 3, 7}, {2, 7, 6},  // +y
      {0, 2, 6}, {0, 6, 4},  // -z
      {1, 5, 7}, {1, 7, 3},  // +z
  };
  return mesh;
}

}  // namespace artikit
