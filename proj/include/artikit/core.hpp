#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "artikit/error.hpp"
#include "artikit/math.hpp"
#include "artikit/mesh.hpp"

namespace artikit {

enum class JointType { Fixed, Revolute, Continuous, Prismatic, Screw };

const char* joint_type_name(JointType t);
JointType joint_type_from_name(const std::string& name);

inline bool joint_is_rotational(JointType t) {
  return t == JointType::Revolute || t == JointType::Continuous;
}
inline bool joint_is_translational(JointType t) {
  return t == JointType::Prismatic || t == JointType::Screw;
}

// Box pose in the object frame: center, half extents, orientation as a
// canonical axis-angle vector (|theta| <= pi).
struct OrientedBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Constant(1e-6);
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();

  // Canonicalizing constructor: |half_extents| clamped to >= 1e-6,
  // rotation wrapped into |theta| <= pi.
  static OrientedBox make(const Eigen::Vector3d& center,
                          const Eigen::Vector3d& half_extents,
                          const Eigen::Vector3d& rotation);

  Eigen::Matrix3d rotation_matrix() const {
    return axis_angle_to_matrix(rotation);
  }

  std::array<Eigen::Vector3d, 8> corners() const;
  double volume() const {
    return 8.0 * half_extents.x() * half_extents.y() * half_extents.z();
  }
};

// Transform the box as a rigid body (pose composition, extents unchanged).
OrientedBox transformed(const OrientedBox& box, const RigidTransform& t);

// Axis-line through `origin` with unit `direction`, both in the object
// frame, plus the motion limits. `range` packs [rot_min, rot_max,
// trans_min, trans_max]; the pair a joint type does not use stays (0, 0).
struct JointSpec {
  JointType type = JointType::Fixed;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  Eigen::Vector4d range = Eigen::Vector4d::Zero();
  double screw_pitch = 0.02;  // metres of travel per radian

  // Canonicalizing constructor: renormalizes the direction (parameter error
  // below 1e-6 norm), orders each range pair, zeroes the unused pair.
  static JointSpec make(JointType type, const Eigen::Vector3d& origin,
                        const Eigen::Vector3d& direction,
                        const Eigen::Vector4d& range, double screw_pitch = 0.02);

  double rot_min() const { return range[0]; }
  double rot_max() const { return range[1]; }
  double trans_min() const { return range[2]; }
  double trans_max() const { return range[3]; }
};

inline constexpr int kRootParent = -1;

// One rigid part of an articulated object. `state` is the normalized joint
// coordinate in [0,1]; `mesh_ref` optionally names a mesh in a MeshStore.
struct PartNode {
  int part_id = 0;
  int parent_id = kRootParent;
  std::string semantic_label;
  OrientedBox obb;
  JointSpec joint;
  double state = 0.0;
  std::optional<Eigen::VectorXd> shape_latent;
  std::optional<std::string> mesh_ref;
};

struct ArticulatedObject {
  std::string category;
  int root_id = 0;
  std::vector<PartNode> parts;
  // Recorded when the object was produced by unit-cube normalization:
  // canonical = scale * (raw + offset).
  double norm_scale = 1.0;
  Eigen::Vector3d norm_offset = Eigen::Vector3d::Zero();

  int size() const { return static_cast<int>(parts.size()); }
  const PartNode& part_by_id(int id) const;
  PartNode& part_by_id(int id);
};

using StateVector = std::vector<double>;
using MeshStore = std::map<std::string, TriMesh>;

struct Violation {
  std::string code;     // stable machine-readable tag, e.g. "state-range"
  std::string message;  // human readable, names the offending part
  int part_id = -1;     // -1 when object-level
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
  bool has(const std::string& code) const;
  std::string summary() const;
};

// ---- kinematics ----------------------------------------------------------

// Map s in [0,1] onto the joint's physical coordinate: radians over
// [rot_min, rot_max] for revolute/continuous, metres over
// [trans_min, trans_max] for prismatic/screw, always 0 for fixed.
// s outside [0,1] is a parameter error.
double denormalize_state(const JointSpec& joint, double s);

// Rigid motion of the part relative to its parent at normalized state s.
// Rotations act about the joint's axis line (through `origin`); prismatic
// motion translates along the direction; screw couples translation d with
// rotation d / screw_pitch about the same line.
RigidTransform joint_transform(const JointSpec& joint, double s);

// World transform per part, indexed by part_id (ids are dense in [0,N)).
// The root's transform is the identity; every other part composes its
// parent's transform with its own joint transform. Cycles or missing
// parents raise a structural error; states.size() must equal part count.
std::vector<RigidTransform> forward_kinematics(const ArticulatedObject& obj,
                                               const StateVector& states);

struct PosedPart {
  int part_id = 0;
  std::string semantic_label;
  OrientedBox obb;                // posed into the world frame
  std::optional<TriMesh> mesh;    // posed copy, when a mesh was resolved
  RigidTransform world;
};

struct PosedInstance {
  std::vector<PosedPart> parts;  // ordered by part_id
  StateVector states;
};

// Instantiate the object at a state vector: runs forward kinematics and
// poses every OBB (and mesh when `meshes` is non-null). A part whose
// mesh_ref is missing from a provided store is a lookup error.
PosedInstance pose_object(const ArticulatedObject& obj,
                          const StateVector& states,
                          const MeshStore* meshes = nullptr);

// Structural and numeric health check; never throws, reports everything it
// finds. Codes: duplicate-id, id-range, root-missing, root-parent,
// root-joint, parent-missing, self-parent, cycle, disconnected,
// axis-norm, range-order, range-unused, state-range, extent-positive,
// rotation-canonical, screw-pitch, non-finite.
ValidationReport validate_object(const ArticulatedObject& obj);

// ---- attribute vectors ----------------------------------------------------

// Flat layout: obb(9) | axis origin(3) | axis direction(3) | range(4) |
// state(1) | shape latent(F). Length 20 + F.
inline constexpr int kAttrBase = 20;
inline constexpr int kAttrCenter = 0;
inline constexpr int kAttrHalfExtents = 3;
inline constexpr int kAttrRotation = 6;
inline constexpr int kAttrAxisOrigin = 9;
inline constexpr int kAttrAxisDirection = 12;
inline constexpr int kAttrRange = 15;
inline constexpr int kAttrState = 19;

Eigen::VectorXd attributes_to_vector(const PartNode& part);

// Inverse of attributes_to_vector for the continuous payload; joint type and
// label travel out of band. Applies the same canonicalization as the type
// constructors so noisy vectors decode into a usable part: direction
// renormalized (unit Z fallback below 1e-6), range pairs ordered and the
// unused pair zeroed, state clamped to [0,1], half extents made positive,
// box rotation wrapped to |theta| <= pi. part_id/parent_id are left at
// defaults for the caller to assign.
PartNode vector_to_attributes(const Eigen::VectorXd& v, JointType type,
                              const std::string& semantic_label,
                              double screw_pitch = 0.02);

// ---- state sampling and part order ----------------------------------------

enum class SampleStrategy { Uniform, Stratified, Endpoints };

// M state vectors of length N. uniform: iid per joint. stratified: sample m
// draws joint values inside stratum [m/M, (m+1)/M). endpoints: first vector
// all 0, second all 1 (when M >= 2), remainder uniform. M == 0 is a
// parameter error. Fixed joints draw like any other part so the vector
// shape never depends on joint types.
std::vector<StateVector> sample_states(const ArticulatedObject& obj, int count,
                                       std::uint64_t seed,
                                       SampleStrategy strategy);

// Relabel part ids through a permutation (new_id = perm[old_id]) and reorder
// the part list so position == id again. perm must be a bijection on [0,N).
ArticulatedObject apply_part_permutation(const ArticulatedObject& obj,
                                         const std::vector<int>& perm);

// Seeded random relabeling; the result is the same tree up to part renaming.
ArticulatedObject shuffle_parts(const ArticulatedObject& obj,
                                std::uint64_t seed);

// Axis-aligned box as a 12-triangle watertight mesh (outward winding).
TriMesh obb_to_mesh(const OrientedBox& box);

}  // namespace artikit
