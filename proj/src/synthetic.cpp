#include "artikit/synthetic.hpp"

#include <string>

#include "artikit/error.hpp"
#include "artikit/math.hpp"
#include "artikit/rng.hpp"

namespace artikit {
namespace {

Eigen::Vector3d jitter(Rng& rng, double scale) {
  return {rng.uniform(-scale, scale), rng.uniform(-scale, scale),
          rng.uniform(-scale, scale)};
}

struct ChildRecipe {
  const char* label;
  JointType type;
};

constexpr ChildRecipe kRecipes[] = {
    {"door", JointType::Revolute},   {"drawer", JointType::Prismatic},
    {"wheel", JointType::Continuous}, {"cap", JointType::Screw},
    {"panel", JointType::Fixed},
};

constexpr const char* kCategories[] = {"cabinet", "table", "lamp", "clock"};

}  // namespace

ArticulatedObject make_synthetic_object(int index, std::uint64_t seed) {
  if (index < 0) throw ParameterError("synthetic object index must be >= 0");
  Rng rng(mix_seed(seed, 0x5E17ULL + static_cast<std::uint64_t>(index)));

  ArticulatedObject obj;
  obj.category = kCategories[index % 4];
  obj.root_id = 0;

  const int n_parts = 2 + index % 3;

  PartNode base;
  base.part_id = 0;
  base.parent_id = kRootParent;
  base.semantic_label = "base";
  base.obb = OrientedBox::make(
      Eigen::Vector3d(0.0, 0.0, -0.15) + jitter(rng, 0.05),
      Eigen::Vector3d(0.30, 0.25, 0.12) + jitter(rng, 0.04),
      Eigen::Vector3d(0.0, 0.0, rng.uniform(-0.3, 0.3)));
  base.joint = JointSpec::make(JointType::Fixed, Eigen::Vector3d::Zero(),
                               Eigen::Vector3d::UnitZ(),
                               Eigen::Vector4d::Zero());
  base.state = 0.0;
  obj.parts.push_back(base);

  for (int k = 1; k < n_parts; ++k) {
    const ChildRecipe& recipe =
        kRecipes[(index + k - 1) % (sizeof(kRecipes) / sizeof(kRecipes[0]))];
    PartNode part;
    part.part_id = k;
    // chains and stars both appear across the corpus
    part.parent_id = (index % 2 == 0) ? 0 : k - 1;
    part.semantic_label = recipe.label;
    part.obb = OrientedBox::make(
        Eigen::Vector3d(0.20 * k - 0.2, 0.15, 0.10) + jitter(rng, 0.06),
        Eigen::Vector3d(0.10, 0.12, 0.08) + jitter(rng, 0.03),
        jitter(rng, 0.25));

    Eigen::Vector3d origin = part.obb.center + jitter(rng, 0.08);
    Eigen::Vector3d direction;
    Eigen::Vector4d range = Eigen::Vector4d::Zero();
    double pitch = 0.02;
    switch (recipe.type) {
      case JointType::Revolute:
        direction = Eigen::Vector3d::UnitZ() + jitter(rng, 0.1);
        range[0] = 0.0;
        range[1] = rng.uniform(0.5 * kPi, 0.75 * kPi);
        break;
      case JointType::Continuous:
        direction = Eigen::Vector3d::UnitY() + jitter(rng, 0.1);
        range[0] = -kPi;
        range[1] = kPi;
        break;
      case JointType::Prismatic:
        direction = Eigen::Vector3d::UnitX() + jitter(rng, 0.1);
        range[2] = 0.0;
        range[3] = rng.uniform(0.2, 0.35);
        break;
      case JointType::Screw:
        direction = Eigen::Vector3d::UnitZ() + jitter(rng, 0.1);
        range[2] = 0.0;
        range[3] = rng.uniform(0.05, 0.12);
        pitch = rng.uniform(0.015, 0.03);
        break;
      case JointType::Fixed:
        direction = Eigen::Vector3d::UnitZ();
        break;
    }
    part.joint = JointSpec::make(recipe.type, origin, direction, range, pitch);
    part.state = rng.uniform();
    obj.parts.push_back(std::move(part));
  }
  return obj;
}

std::vector<ArticulatedObject> make_synthetic_dataset(int count,
                                                      std::uint64_t seed) {
  if (count < 0) throw ParameterError("synthetic dataset count must be >= 0");
  std::vector<ArticulatedObject> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_synthetic_object(i, seed));
  return out;
}

}  // namespace artikit
