#pragma once

#include <span>
#include <vector>

namespace tflow {

struct ModeChoice {
    double cost;                  // +inf when no mode is reachable
    std::vector<double> weights;  // one per mode; empty when infeasible
};

/// Combines per-mode OD costs into T-bar. gamma = 0: hard minimum, demand split evenly over exact
/// ties. gamma > 0: softmin -gamma * ln sum exp(-T_k / gamma) with logit weights.
ModeChoice min_cost_over_modes(std::span<const double> mode_costs, double gamma);

/// Allocation-free form used by the solvers; `weights` must have the same size as `mode_costs`
/// and is zero-filled when every mode is unreachable.
double min_cost_over_modes(std::span<const double> mode_costs, double gamma, std::span<double> weights);

}  // namespace tflow
