#pragma once

#include <span>
#include <string>
#include <vector>

#include "tflow/assignment.hpp"
#include "tflow/demand.hpp"
#include "tflow/distribution.hpp"
#include "tflow/loading.hpp"

namespace tflow {

enum class BetaReducibility { Reducible, NotReducible };

const char* to_string(BetaReducibility r);

/// The combined problem collapses to one saddle point only when every layer shares beta
/// (relative tolerance 1e-12).
BetaReducibility check_beta_reducibility(std::span<const double> beta);

inline constexpr const char* kEquilibriumLabel = "equilibrium certificate";
inline constexpr const char* kHeuristicLabel = "heuristic fixed point";

/// Outcome of either two-stage solver.
struct TwoStageState {
    CorrespondenceMatrix d;
    SinkhornPotentials potentials;
    /// Flows, dual times, skims at the final point; its primal/dual/gap fields describe the
    /// assignment stage alone.
    EquilibriumResult assignment;
    double primal = 0.0;  // Psi(f) + sum d ln d / beta; NaN when beta is not shared
    double dual = 0.0;    // combined dual value; NaN when beta is not shared
    double gap = 0.0;
    double relative_gap = 0.0;
    double marginal_residual = 0.0;  // L1 rows + columns of d, divided by the total mass
    double d_change = 0.0;           // last L1 change of d per unit mass (alternation)
    int iterations = 0;
    double wall_ms = 0.0;
    SolveStatus status = SolveStatus::BudgetExhausted;
    std::string label;
    std::vector<IterationRecord> log;
};

struct CombinedDualValue {
    double value = 0.0;
    std::vector<double> supergradient;  // per DualLayout entry
    CorrespondenceMatrix d;             // inner minimizer
    SinkhornPotentials potentials;
    double inner_residual = 0.0;  // per unit mass
    bool inner_converged = true;
};

/// min over d in (l, w) of [sum d T-bar(t) + sum d ln d / beta] - sum sigma*(t), the inner
/// minimum taken from Sinkhorn's potentials. Requires a shared beta. An inner solve that runs out
/// of sweeps is reported through inner_converged instead of throwing.
CombinedDualValue combined_dual_objective(const NetworkLoader& loader, const Marginals& marginals,
                                          std::span<const double> beta, std::span<const double> times,
                                          const SinkhornOptions& inner = {}, const SinkhornPotentials* warm = nullptr);

struct TwoStageOptions {
    std::vector<double> beta;  // per layer
    SinkhornOptions sinkhorn;  // tolerance is the tightest inner tolerance used

    // Saddle solver.
    StopCriteria stop;                     // max_iters counts outer iterations of the universal method
    double inner_tolerance_start = 1e-6;   // loosest inner tolerance
    double marginal_target = 1e-8;         // required marginal residual of the averaged d
    UgmOptions ugm;

    // Alternation.
    int max_outer = 200;
    double change_tolerance = 1e-9;  // on the L1 change of d per unit mass
    int oscillation_patience = 8;    // outer rounds without a new smallest change
    double relaxation = 1.0;         // d <- (1 - w) d + w sinkhorn(T-bar)
    StopCriteria assignment_stop;
};

/// Block alternation: assignment at fixed d, then Sinkhorn at the resulting OD costs, until d
/// stops changing. Works for any beta; the result is labelled a heuristic fixed point unless the
/// betas are shared, in which case the combined certificate is evaluated as well.
TwoStageState alternation_solve(const NetworkLoader& loader, const Marginals& marginals,
                                const TwoStageOptions& options, const IterationCallback& on_iteration = {});

/// Universal accelerated ascent on the combined dual with Sinkhorn inner solves. Throws
/// ConfigError when the betas differ.
TwoStageState saddle_solve(const NetworkLoader& loader, const Marginals& marginals, const TwoStageOptions& options,
                           const IterationCallback& on_iteration = {});

struct TwoStageGap {
    double absolute = 0.0;
    double relative = 0.0;
    double capacity_excess = 0.0;  // largest relative excess of the flows over stable-dynamics capacities
};

/// Primal (Psi at the state's flows, capacities clipped, plus the entropy term) minus the state's dual.
TwoStageGap two_stage_gap(const NetworkLoader& loader, const TwoStageState& state, std::span<const double> beta);

}  // namespace tflow
