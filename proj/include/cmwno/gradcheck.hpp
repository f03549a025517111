#pragma once

// Finite-difference verification of every differentiable op and of the full
// coupled forward pass.

#include <cstdint>
#include <string>
#include <vector>

namespace cmwno::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t directions = 0;
};

/// Central differences along random directions (step 1e-6) compared with
/// reverse-mode directional derivatives, per op and per parameter tensor.
std::vector<CheckResult> run_suite(std::uint64_t seed);

}  // namespace cmwno::gradcheck
