#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "tflow/demand.hpp"
#include "tflow/loading.hpp"

namespace tflow {

/// Edge flows per vehicle type with their network aggregates and an origin-based decomposition.
struct FlowState {
    std::vector<std::vector<double>> vehicle;              // f_e^k: [k][e]
    std::vector<double> network;                           // f_{e,b} per DualLayout entry
    std::vector<std::vector<std::vector<double>>> origin;  // [k][origin index][e]
    std::vector<std::vector<double>> mode_demand;          // [t][p * |Z(t)| + m]

    static FlowState from_loading(const Loading& loading);
};

/// Per-iteration log entry; `inner_residual` is 0 for plain assignment.
struct IterationRecord {
    int iteration = 0;
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    double inner_residual = 0.0;
    double wall_ms = 0.0;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

enum class SolveStatus { Converged, BudgetExhausted, Diverged };

const char* to_string(SolveStatus status);

struct StopCriteria {
    int max_iters = 10000;
    double target_gap = 1e-6;  // relative to |primal|
    double time_limit_s = std::numeric_limits<double>::infinity();
    int patience = 0;  // iterations without a new best gap before giving up; 0 disables
};

struct EquilibriumResult {
    FlowState flows;
    std::vector<double> dual_times;                  // t_{e,b} per DualLayout entry
    std::vector<std::vector<double>> vehicle_times;  // t_e^k: [k][e], inf where unusable
    std::vector<std::vector<double>> od_cost;        // T-bar^t at vehicle_times: [t][p]
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    double relative_gap = 0.0;
    double capacity_violation = 0.0;  // max relative excess over stable-dynamics capacities
    int iterations = 0;
    double wall_ms = 0.0;
    SolveStatus status = SolveStatus::BudgetExhausted;
    std::vector<IterationRecord> log;
};

struct SupergradientValue {
    double value;
    std::vector<double> supergradient;  // per DualLayout entry
};

/// Psi(f): sum of sigma over network aggregates plus surcharge terms (plus the mode-choice
/// entropy term when the loader smooths modes). +inf when a stable-dynamics capacity is exceeded.
double beckmann_objective(const NetworkLoader& loader, const FlowState& flows);

/// Dual objective at times t (one per DualLayout entry, each >= its free-flow time).
SupergradientValue dual_objective(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                  std::span<const double> times);

/// Primal baseline for BPR-type costs with hard-min mode choice.
EquilibriumResult solve_frank_wolfe(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                    const StopCriteria& stop, const IterationCallback& on_iteration = {});

struct UgmOptions {
    /// Inexactness level of the universal method as a multiple of the current certified gap.
    double gap_factor = 10.0;
    /// The estimate sequence and the flow average restart once the running average's gap falls
    /// to this fraction of the gap at the previous restart.
    double restart_ratio = 0.5;
};

/// Dual solver: universal accelerated gradient ascent on the times with primal flows recovered as
/// the weighted average of the all-or-nothing loadings at the gradient points. The reported primal
/// is the best average over restart epochs, the reported dual the best value seen at any point.
EquilibriumResult solve_dual_ugm(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                 const StopCriteria& stop, const IterationCallback& on_iteration = {},
                                 const UgmOptions& options = {});

/// Max over loaded (user type, pair) of (experienced cost - T-bar) / T-bar at result.vehicle_times.
double wardrop_violation(const NetworkLoader& loader, const EquilibriumResult& result);

/// Equilibrium edge times of a flow: tau(f) on BPR-type entries, the given dual time on
/// stable-dynamics entries.
std::vector<double> equilibrium_times(const NetworkLoader& loader, std::span<const double> aggregate_flow,
                                      std::span<const double> dual_times);

/// Fills vehicle_times, od_cost and capacity_violation of `result` from its flows and dual times.
void finalize_times(const NetworkLoader& loader, EquilibriumResult& result);

}  // namespace tflow
