#include "tflow/twostage.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "solver_support.hpp"
#include "tflow/error.hpp"
#include "tflow/universal_method.hpp"

namespace tflow {

using namespace detail;

namespace {

double marginal_mass(const Marginals& marginals) {
    double s = 0.0;
    for (double w : marginals.columns) s += w;
    return s;
}

double shared_beta(std::span<const double> beta) {
    if (beta.empty()) throw ConfigError("one beta per demand layer is required");
    if (check_beta_reducibility(beta) != BetaReducibility::Reducible)
        throw ConfigError("the saddle-point formulation needs equal beta in every layer; use alternation");
    return beta[0];
}

double entropy_term(const CorrespondenceMatrix& d, double beta) {
    double s = 0.0;
    for (const auto& row : d.values)
        for (double v : row)
            if (v > 0.0) s += v * std::log(v);
    return s / beta;
}

double l1_change(const CorrespondenceMatrix& a, const CorrespondenceMatrix& b) {
    double s = 0.0;
    for (std::size_t t = 0; t < a.values.size(); ++t)
        for (std::size_t p = 0; p < a.values[t].size(); ++p) s += std::abs(a.values[t][p] - b.values[t][p]);
    return s;
}

// Psi with stable-dynamics aggregates clipped to their capacity.
double clipped_potential(const NetworkLoader& loader, const FlowState& flows) {
    FlowState clipped = flows;
    const auto& layout = loader.layout();
    for (int i = 0; i < layout.size(); ++i)
        if (const auto* sd = std::get_if<StableDynamics>(&layout.model(i))) {
            auto& f = clipped.network[static_cast<std::size_t>(i)];
            f = std::min(f, sd->capacity);
        }
    return potential(loader, clipped, false);
}

class DemandAverage {
public:
    void add(const CorrespondenceMatrix& d, double w) {
        if (weight_ == 0.0) {
            sum_ = d;
            for (auto& row : sum_.values)
                for (double& v : row) v *= w;
        } else {
            for (std::size_t t = 0; t < sum_.values.size(); ++t)
                for (std::size_t p = 0; p < sum_.values[t].size(); ++p) sum_.values[t][p] += w * d.values[t][p];
        }
        weight_ += w;
    }
    CorrespondenceMatrix average() const {
        CorrespondenceMatrix out = sum_;
        for (auto& row : out.values)
            for (double& v : row) v /= weight_;
        return out;
    }

private:
    CorrespondenceMatrix sum_;
    double weight_ = 0.0;
};

// Combined dual value at `times`; with `loading` set, also the inner d's all-or-nothing loading
// and the supergradient.
CombinedDualValue evaluate_combined(const NetworkLoader& loader, const Marginals& marginals,
                                    std::span<const double> beta, std::span<const double> times,
                                    const SinkhornOptions& inner, const SinkhornPotentials* warm, Loading* loading) {
    const double b = shared_beta(beta);
    const auto& layout = loader.layout();
    Skim skim;
    loader.skim(times, skim);
    SinkhornOptions relaxed = inner;
    relaxed.strict = false;
    auto s = sinkhorn(loader.od(), marginals, loader.schema(), skim.od_cost, beta, relaxed, warm);

    CombinedDualValue out;
    out.value = s.value / b - conjugate_sum(layout, times);
    if (loading) {
        loader.load(skim, s.d, *loading);
        out.supergradient = loading->dual_flow;
        for (int i = 0; i < layout.size(); ++i)
            out.supergradient[static_cast<std::size_t>(i)] -=
                sigma_conjugate(layout.model(i), times[static_cast<std::size_t>(i)]).derivative;
    }
    const double mass = marginal_mass(marginals);
    out.inner_residual = mass > 0.0 ? s.residual / mass : s.residual;
    out.inner_converged = s.converged;
    out.d = std::move(s.d);
    out.potentials = std::move(s.potentials);
    return out;
}

}  // namespace

const char* to_string(BetaReducibility r) {
    return r == BetaReducibility::Reducible ? "reducible" : "not_reducible";
}

BetaReducibility check_beta_reducibility(std::span<const double> beta) {
    for (double b : beta)
        if (std::abs(b - beta[0]) > 1e-12 * std::max(std::abs(b), std::abs(beta[0])))
            return BetaReducibility::NotReducible;
    return BetaReducibility::Reducible;
}

CombinedDualValue combined_dual_objective(const NetworkLoader& loader, const Marginals& marginals,
                                          std::span<const double> beta, std::span<const double> times,
                                          const SinkhornOptions& inner, const SinkhornPotentials* warm) {
    Loading loading;
    return evaluate_combined(loader, marginals, beta, times, inner, warm, &loading);
}

TwoStageGap two_stage_gap(const NetworkLoader& loader, const TwoStageState& state, std::span<const double> beta) {
    const double b = shared_beta(beta);
    TwoStageGap out;
    const double primal = clipped_potential(loader, state.assignment.flows) + entropy_term(state.d, b);
    out.absolute = primal - state.dual;
    out.relative = relative(out.absolute, primal);
    out.capacity_excess = std::max(0.0, capacity_violation(loader.layout(), state.assignment.flows.network));
    return out;
}

TwoStageState saddle_solve(const NetworkLoader& loader, const Marginals& marginals, const TwoStageOptions& options,
                           const IterationCallback& on_iteration) {
    const double b = shared_beta(options.beta);
    const auto& layout = loader.layout();
    const auto& stop = options.stop;
    if (!(options.ugm.gap_factor > 0.0) || !(options.ugm.restart_ratio > 0.0 && options.ugm.restart_ratio < 1.0))
        throw ConfigError("universal method options: gap_factor must be positive and restart_ratio in (0, 1)");
    if (!(options.marginal_target > 0.0) || !(options.inner_tolerance_start > 0.0))
        throw ConfigError("inner tolerances must be positive");
    const auto start = Clock::now();
    const std::vector<double> floor = layout.free_flow_times();
    const double mass = marginal_mass(marginals);

    // The inner tolerance follows the outer gap and reaches the marginal target together with the
    // gap target.
    const double tighten = std::min(0.1, 0.1 * options.marginal_target / std::max(stop.target_gap, 1e-300));
    SinkhornOptions inner = options.sinkhorn;
    auto inner_tolerance = [&](double rel_gap) {
        return std::max(options.sinkhorn.tolerance, std::min(options.inner_tolerance_start, tighten * rel_gap));
    };
    inner.tolerance = options.inner_tolerance_start;

    SinkhornPotentials warm;
    bool have_warm = false;
    CombinedDualValue last;
    double worst_inner = 0.0;
    double probe_dual = -kInf;
    std::vector<double> probe_times;
    Loading loading;
    CorrespondenceMatrix sample_d;
    auto solve_inner = [&](std::span<const double> t, Loading* out) {
        last = evaluate_combined(loader, marginals, options.beta, t, inner, have_warm ? &warm : nullptr, out);
        warm = last.potentials;
        have_warm = true;
        worst_inner = std::max(worst_inner, last.inner_residual);
    };

    UniversalGradientAscent::Oracle oracle;
    oracle.evaluate = [&](std::span<const double> y, std::vector<double>& g) {
        solve_inner(y, &loading);
        const double h = conjugate_sum(layout, y);
        g = loading.dual_flow;
        sample_d = last.d;
        if (last.value > probe_dual) {
            probe_dual = last.value;
            probe_times.assign(y.begin(), y.end());
        }
        return last.value + h;
    };
    oracle.value = [&](std::span<const double> x) {
        solve_inner(x, nullptr);
        return last.value + conjugate_sum(layout, x);
    };
    oracle.composite = [&](std::span<const double> x) { return conjugate_sum(layout, x); };
    oracle.prox = [&](std::span<const double> point, double step, std::span<double> out) {
        for (int i = 0; i < layout.size(); ++i)
            out[static_cast<std::size_t>(i)] = conjugate_prox(layout.model(i), point[static_cast<std::size_t>(i)], step);
    };

    std::vector<double> scratch;
    oracle.evaluate(floor, scratch);
    const double initial_primal = clipped_potential(loader, FlowState::from_loading(loading)) + entropy_term(last.d, b);
    const double initial_violation = std::max(0.0, capacity_violation(layout, loading.dual_flow));
    EpochSchedule schedule(options.ugm.gap_factor, options.ugm.restart_ratio, layout.has_stable_dynamics());
    auto inexactness = [&](double primal, double dual, double violation) {
        const double distance = std::max(primal - dual, violation * std::abs(primal));
        return std::max(schedule.factor() * distance, 1e-2 * stop.target_gap * std::abs(primal)) + 1e-300;
    };
    // Marginal residuals count against a candidate in gap units.
    const double residual_weight = stop.target_gap / options.marginal_target;
    double scale = 0.0;
    for (double t : floor) scale = std::max(scale, t);
    UniversalGradientAscent method(oracle, floor, 1.0 / (scale * scale),
                                   inexactness(initial_primal, probe_dual, initial_violation));

    TwoStageState state;
    FlowAverage flow_average;
    DemandAverage demand_average;
    double best_dual = -kInf, best_primal = kInf, best_residual = kInf, violation = 0.0;
    std::vector<double> best_times = floor;
    FlowState best_flows;
    CorrespondenceMatrix best_d;
    Patience patience(stop.patience);
    auto candidate_merit = [&](double primal, double v, double residual) {
        return std::max(merit(primal, best_dual, v), residual_weight * residual);
    };
    for (;;) {
        worst_inner = 0.0;
        const auto step = method.step();
        flow_average.add(loading, step.weight);
        demand_average.add(sample_d, step.weight);
        if (probe_dual > best_dual) {
            best_dual = probe_dual;
            best_times = probe_times;
        }
        if (step.objective > best_dual) {
            best_dual = step.objective;
            best_times = method.x();
        }
        FlowState epoch_flows = flow_average.average();
        CorrespondenceMatrix epoch_d = demand_average.average();
        // Dual value at the link times the averaged flows induce.
        const auto induced = equilibrium_times(loader, epoch_flows.network, best_times);
        const double induced_dual =
            evaluate_combined(loader, marginals, options.beta, induced, inner, have_warm ? &warm : nullptr, nullptr).value;
        if (induced_dual > best_dual) {
            best_dual = induced_dual;
            best_times = induced;
        }
        const double epoch_primal = clipped_potential(loader, epoch_flows) + entropy_term(epoch_d, b);
        const double epoch_residual = marginal_residual(epoch_d, loader.od(), marginals) / mass;
        const double epoch_violation = std::max(0.0, capacity_violation(layout, epoch_flows.network));
        const double epoch_merit = candidate_merit(epoch_primal, epoch_violation, epoch_residual);
        if (epoch_merit <= candidate_merit(best_primal, violation, best_residual)) {
            best_primal = epoch_primal;
            best_flows = std::move(epoch_flows);
            best_d = std::move(epoch_d);
            best_residual = epoch_residual;
            violation = epoch_violation;
        }
        const double gap = best_primal - best_dual;
        const double rel_gap = relative(gap, best_primal);
        const IterationRecord rec{step.iteration, best_primal, best_dual, gap, worst_inner, elapsed_ms(start)};
        state.log.push_back(rec);
        if (on_iteration) on_iteration(rec);
        state.iterations = step.iteration;
        state.primal = best_primal;
        state.dual = best_dual;
        state.gap = gap;
        state.relative_gap = rel_gap;
        state.marginal_residual = best_residual;

        if (schedule.end_epoch(step.iteration, epoch_merit, gap)) {
            method.restart();
            flow_average = FlowAverage{};
            demand_average = DemandAverage{};
        }
        method.set_epsilon(inexactness(best_primal, best_dual, violation));
        inner.tolerance = inner_tolerance(rel_gap);
        if (rel_gap <= stop.target_gap && best_residual <= options.marginal_target && violation <= stop.target_gap) {
            state.status = SolveStatus::Converged;
            break;
        }
        if (patience.exhausted(rel_gap)) {
            state.status = SolveStatus::Diverged;
            break;
        }
        if (step.iteration >= stop.max_iters || rec.wall_ms / 1000.0 >= stop.time_limit_s) {
            state.status = SolveStatus::BudgetExhausted;
            break;
        }
    }

    state.d = std::move(best_d);
    // Potentials at the best dual point, for reporting and warm starts.
    SinkhornOptions final_inner = options.sinkhorn;
    final_inner.strict = false;
    state.potentials = evaluate_combined(loader, marginals, options.beta, best_times, final_inner, &warm, nullptr).potentials;
    auto& a = state.assignment;
    a.flows = std::move(best_flows);
    a.dual_times = best_times;
    a.primal = clipped_potential(loader, a.flows);
    a.status = state.status;
    a.iterations = state.iterations;
    finalize_times(loader, a);
    state.label = kEquilibriumLabel;
    state.wall_ms = elapsed_ms(start);
    a.wall_ms = state.wall_ms;
    return state;
}

TwoStageState alternation_solve(const NetworkLoader& loader, const Marginals& marginals,
                                const TwoStageOptions& options, const IterationCallback& on_iteration) {
    const auto& layout = loader.layout();
    const auto& schema = loader.schema();
    if (static_cast<int>(options.beta.size()) != schema.layer_count())
        throw ConfigError("one beta per demand layer is required");
    if (!(options.relaxation > 0.0 && options.relaxation <= 1.0)) throw ConfigError("relaxation must lie in (0, 1]");
    const bool reducible = check_beta_reducibility(options.beta) == BetaReducibility::Reducible;
    const auto start = Clock::now();
    const double mass = marginal_mass(marginals);

    // Start from the distribution at free-flow costs.
    Skim skim;
    loader.skim(layout.free_flow_times(), skim);
    auto s = sinkhorn(loader.od(), marginals, schema, skim.od_cost, options.beta, options.sinkhorn);
    TwoStageState state;
    state.d = std::move(s.d);
    state.potentials = std::move(s.potentials);

    double best_change = kInf;
    int stale = 0;
    std::vector<double> history;
    for (int round = 1;; ++round) {
        EquilibriumResult eq = layout.has_stable_dynamics() || loader.gamma() > 0.0
                                   ? solve_dual_ugm(loader, state.d, options.assignment_stop, {}, options.ugm)
                                   : solve_frank_wolfe(loader, state.d, options.assignment_stop);
        s = sinkhorn(loader.od(), marginals, schema, eq.od_cost, options.beta, options.sinkhorn, &state.potentials);
        CorrespondenceMatrix next = std::move(s.d);
        if (options.relaxation < 1.0)
            for (std::size_t t = 0; t < next.values.size(); ++t)
                for (std::size_t p = 0; p < next.values[t].size(); ++p)
                    next.values[t][p] = (1.0 - options.relaxation) * state.d.values[t][p] + options.relaxation * next.values[t][p];
        const double change = l1_change(next, state.d) / mass;
        history.push_back(change);
        state.d = std::move(next);
        state.potentials = std::move(s.potentials);
        state.assignment = std::move(eq);
        state.d_change = change;
        state.iterations = round;

        const IterationRecord rec{round, state.assignment.primal, state.assignment.dual, state.assignment.gap, change,
                                  elapsed_ms(start)};
        state.log.push_back(rec);
        if (on_iteration) on_iteration(rec);

        if (change <= options.change_tolerance) {
            state.status = SolveStatus::Converged;
            break;
        }
        if (change < best_change) {
            best_change = change;
            stale = 0;
        } else if (++stale >= options.oscillation_patience) {
            std::ostringstream msg;
            msg << "alternation is not settling: change of d per unit mass over the last rounds";
            const std::size_t from = history.size() > 10 ? history.size() - 10 : 0;
            for (std::size_t i = from; i < history.size(); ++i) msg << (i == from ? " " : ", ") << history[i];
            msg << "; try a smaller relaxation or a different start";
            throw ConvergenceError(msg.str());
        }
        if (round >= options.max_outer) {
            state.status = SolveStatus::BudgetExhausted;
            break;
        }
    }

    // The flows were computed for the previous d; reload them for the final one so the
    // certificates refer to a consistent state.
    EquilibriumResult eq = layout.has_stable_dynamics() || loader.gamma() > 0.0
                               ? solve_dual_ugm(loader, state.d, options.assignment_stop, {}, options.ugm)
                               : solve_frank_wolfe(loader, state.d, options.assignment_stop);
    state.assignment = std::move(eq);
    state.marginal_residual = marginal_residual(state.d, loader.od(), marginals) / mass;
    if (reducible) {
        const double b = options.beta[0];
        SinkhornOptions inner = options.sinkhorn;
        inner.strict = false;
        const auto dual = evaluate_combined(loader, marginals, options.beta, state.assignment.dual_times, inner,
                                            &state.potentials, nullptr);
        state.dual = dual.value;
        state.primal = clipped_potential(loader, state.assignment.flows) + entropy_term(state.d, b);
        state.gap = state.primal - state.dual;
        state.relative_gap = relative(state.gap, state.primal);
        state.label = kEquilibriumLabel;
    } else {
        state.primal = state.dual = state.gap = state.relative_gap = std::nan("");
        state.label = kHeuristicLabel;
    }
    state.wall_ms = elapsed_ms(start);
    return state;
}

}  // namespace tflow
