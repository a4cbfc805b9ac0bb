#include "tflow/mode_choice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tflow {

double min_cost_over_modes(std::span<const double> mode_costs, double gamma, std::span<double> weights) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    double best = inf;
    for (double c : mode_costs) best = std::min(best, c);
    std::fill(weights.begin(), weights.end(), 0.0);
    if (!std::isfinite(best)) return inf;

    if (gamma <= 0.0) {
        int ties = 0;
        for (double c : mode_costs) ties += (c == best);
        for (std::size_t k = 0; k < mode_costs.size(); ++k)
            if (mode_costs[k] == best) weights[k] = 1.0 / ties;
        return best;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < mode_costs.size(); ++k) {
        if (!std::isfinite(mode_costs[k])) continue;
        weights[k] = std::exp(-(mode_costs[k] - best) / gamma);
        sum += weights[k];
    }
    for (double& w : weights) w /= sum;
    return best - gamma * std::log(sum);
}

ModeChoice min_cost_over_modes(std::span<const double> mode_costs, double gamma) {
    ModeChoice out{0.0, std::vector<double>(mode_costs.size(), 0.0)};
    out.cost = min_cost_over_modes(mode_costs, gamma, out.weights);
    if (!std::isfinite(out.cost)) out.weights.clear();
    return out;
}

}  // namespace tflow
