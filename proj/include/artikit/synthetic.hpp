#pragma once

#include <cstdint>
#include <vector>

#include "artikit/core.hpp"

namespace artikit {

// Small deterministic training corpus: boxy multi-part objects covering all
// five joint types, with attributes inside the canonical unit cube. Equal
// (index, seed) pairs reproduce the same object bitwise.
ArticulatedObject make_synthetic_object(int index, std::uint64_t seed = 0);
std::vector<ArticulatedObject> make_synthetic_dataset(int count = 8,
                                                      std::uint64_t seed = 0);

}  // namespace artikit
