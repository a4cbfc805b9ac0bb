#include "tflow/assignment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include "solver_support.hpp"
#include "tflow/error.hpp"
#include "tflow/universal_method.hpp"

namespace tflow {

using namespace detail;

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Converged:
            return "converged";
        case SolveStatus::BudgetExhausted:
            return "budget_exhausted";
        case SolveStatus::Diverged:
            return "diverged";
    }
    return "unknown";
}

FlowState FlowState::from_loading(const Loading& loading) {
    return {loading.vehicle_flow, loading.dual_flow, loading.origin_flow, loading.mode_demand};
}

double beckmann_objective(const NetworkLoader& loader, const FlowState& flows) {
    return potential(loader, flows, false);
}

SupergradientValue dual_objective(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                  std::span<const double> times) {
    const auto& layout = loader.layout();
    Skim skim;
    Loading loading;
    loader.skim(times, skim);
    loader.load(skim, demand, loading);
    SupergradientValue out{loading.transport_cost - conjugate_sum(layout, times), loading.dual_flow};
    for (int i = 0; i < layout.size(); ++i)
        out.supergradient[static_cast<std::size_t>(i)] -=
            sigma_conjugate(layout.model(i), times[static_cast<std::size_t>(i)]).derivative;
    return out;
}

std::vector<double> equilibrium_times(const NetworkLoader& loader, std::span<const double> aggregate_flow,
                                      std::span<const double> dual_times) {
    const auto& layout = loader.layout();
    std::vector<double> t(static_cast<std::size_t>(layout.size()));
    for (int i = 0; i < layout.size(); ++i) {
        const auto ii = static_cast<std::size_t>(i);
        if (std::holds_alternative<StableDynamics>(layout.model(i)))
            t[ii] = dual_times[ii];
        else
            t[ii] = link_time(layout.model(i), std::max(0.0, aggregate_flow[ii]));
    }
    return t;
}

void finalize_times(const NetworkLoader& loader, EquilibriumResult& result) {
    const auto times = equilibrium_times(loader, result.flows.network, result.dual_times);
    result.vehicle_times = loader.vehicle_times(times);
    Skim skim;
    loader.skim(times, skim);
    result.od_cost = skim.od_cost;
    result.capacity_violation = std::max(0.0, capacity_violation(loader.layout(), result.flows.network));
}

EquilibriumResult solve_frank_wolfe(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                    const StopCriteria& stop, const IterationCallback& on_iteration) {
    const auto& layout = loader.layout();
    if (layout.has_stable_dynamics())
        throw UnsupportedModelError(
            "Frank-Wolfe needs finite link costs for all flows; stable dynamics requires the dual solver (ugm)");
    if (loader.gamma() > 0.0)
        throw UnsupportedModelError("Frank-Wolfe supports hard-min mode choice only; use the dual solver (ugm)");

    const auto start = Clock::now();
    EquilibriumResult result;
    Skim skim;
    Loading aon;
    std::vector<double> times = layout.free_flow_times();
    loader.skim(times, skim);
    loader.load(skim, demand, aon);
    FlowState f = FlowState::from_loading(aon);

    double best_dual = -kInf;
    Patience patience(stop.patience);
    const int n = layout.size();
    const int nk = loader.schema().vehicle_type_count();
    for (int it = 1;; ++it) {
        for (int i = 0; i < n; ++i)
            times[static_cast<std::size_t>(i)] = link_time(layout.model(i), std::max(0.0, f.network[static_cast<std::size_t>(i)]));
        loader.skim(times, skim);
        loader.load(skim, demand, aon);
        best_dual = std::max(best_dual, aon.transport_cost - conjugate_sum(layout, times));
        const double primal = beckmann_objective(loader, f);
        const double gap = primal - best_dual;
        const IterationRecord rec{it, primal, best_dual, gap, 0.0, elapsed_ms(start)};
        result.log.push_back(rec);
        if (on_iteration) on_iteration(rec);
        result.iterations = it;
        result.primal = primal;
        result.dual = best_dual;
        result.gap = gap;
        result.relative_gap = relative(gap, primal);
        if (result.relative_gap <= stop.target_gap) {
            result.status = SolveStatus::Converged;
            break;
        }
        if (patience.exhausted(result.relative_gap)) {
            result.status = SolveStatus::Diverged;
            break;
        }
        if (it >= stop.max_iters || rec.wall_ms / 1000.0 >= stop.time_limit_s) {
            result.status = SolveStatus::BudgetExhausted;
            break;
        }

        // Exact line search: d/da Psi(f + a (y - f)) is increasing in a.
        std::vector<double> delta(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            delta[static_cast<std::size_t>(i)] = aon.dual_flow[static_cast<std::size_t>(i)] - f.network[static_cast<std::size_t>(i)];
        double surcharge_slope = 0.0;
        for (int k = 0; k < nk; ++k)
            for (int e = 0; e < loader.network().edge_count(); ++e) {
                const double c = loader.schema().surcharge(k, e).value;
                if (c != 0.0)
                    surcharge_slope += c * (aon.vehicle_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)] -
                                            f.vehicle[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)]);
            }
        auto slope = [&](double a) {
            double s = surcharge_slope;
            for (int i = 0; i < n; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                if (delta[ii] == 0.0) continue;
                s += link_time(layout.model(i), std::max(0.0, f.network[ii] + a * delta[ii])) * delta[ii];
            }
            return s;
        };
        double step = 1.0;
        if (slope(1.0) > 0.0) {
            double lo = 0.0, hi = 1.0;
            for (int b = 0; b < 100 && hi - lo > 1e-16; ++b) {
                const double mid = 0.5 * (lo + hi);
                (slope(mid) > 0.0 ? hi : lo) = mid;
            }
            step = 0.5 * (lo + hi);
        }
        auto mix = [step](std::vector<double>& x, const std::vector<double>& y) {
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * (y[i] - x[i]);
        };
        for (int k = 0; k < nk; ++k) {
            mix(f.vehicle[static_cast<std::size_t>(k)], aon.vehicle_flow[static_cast<std::size_t>(k)]);
            for (std::size_t o = 0; o < f.origin[static_cast<std::size_t>(k)].size(); ++o)
                mix(f.origin[static_cast<std::size_t>(k)][o], aon.origin_flow[static_cast<std::size_t>(k)][o]);
        }
        mix(f.network, aon.dual_flow);
        for (std::size_t t = 0; t < f.mode_demand.size(); ++t) mix(f.mode_demand[t], aon.mode_demand[t]);
    }

    result.flows = std::move(f);
    result.dual_times = equilibrium_times(loader, result.flows.network, times);
    finalize_times(loader, result);
    result.wall_ms = elapsed_ms(start);
    return result;
}

EquilibriumResult solve_dual_ugm(const NetworkLoader& loader, const CorrespondenceMatrix& demand,
                                 const StopCriteria& stop, const IterationCallback& on_iteration,
                                 const UgmOptions& options) {
    const auto& layout = loader.layout();
    const auto start = Clock::now();
    const std::vector<double> floor = layout.free_flow_times();

    Skim skim;
    Loading last;
    double probe_dual = -kInf;
    std::vector<double> probe_times;
    auto transport_value = [&](std::span<const double> t) {
        loader.skim(t, skim);
        double s = 0.0;
        for (std::size_t tt = 0; tt < demand.values.size(); ++tt)
            for (std::size_t p = 0; p < demand.values[tt].size(); ++p) {
                const double d = demand.values[tt][p];
                if (d == 0.0) continue;
                const double c = skim.od_cost[tt][p];
                if (!std::isfinite(c)) throw InfeasibleError("positive demand on a pair without a usable path");
                s += d * c;
            }
        return s;
    };

    UniversalGradientAscent::Oracle oracle;
    oracle.evaluate = [&](std::span<const double> y, std::vector<double>& g) {
        loader.skim(y, skim);
        loader.load(skim, demand, last);
        g = last.dual_flow;
        const double value = last.transport_cost - conjugate_sum(layout, y);
        if (value > probe_dual) {
            probe_dual = value;
            probe_times.assign(y.begin(), y.end());
        }
        return last.transport_cost;
    };
    oracle.value = transport_value;
    oracle.composite = [&](std::span<const double> x) { return conjugate_sum(layout, x); };
    oracle.prox = [&](std::span<const double> point, double step, std::span<double> out) {
        for (int i = 0; i < layout.size(); ++i)
            out[static_cast<std::size_t>(i)] = conjugate_prox(layout.model(i), point[static_cast<std::size_t>(i)], step);
    };

    if (!(options.gap_factor > 0.0) || !(options.restart_ratio > 0.0 && options.restart_ratio < 1.0))
        throw ConfigError("universal method options: gap_factor must be positive and restart_ratio in (0, 1)");
    // The free-flow loading and the dual at free flow bound the starting gap.
    std::vector<double> scratch;
    oracle.evaluate(floor, scratch);
    const double initial_primal = potential(loader, FlowState::from_loading(last), true);
    const double initial_violation = std::max(0.0, capacity_violation(layout, last.dual_flow));
    double scale = 0.0;
    for (double t : floor) scale = std::max(scale, t);
    EpochSchedule schedule(options.gap_factor, options.restart_ratio, layout.has_stable_dynamics());
    // The certified distance from optimality (gap, or capacity excess priced at the objective
    // scale). Early primals of steep costs can be astronomically large; the dual's magnitude caps
    // the scale so the first steps cannot throw the times far out.
    auto inexactness = [&](double primal, double dual, double violation) {
        const double magnitude = std::isfinite(dual) ? std::min(std::abs(primal), std::abs(dual)) : std::abs(primal);
        const double distance = std::min(std::max(primal - dual, violation * magnitude), magnitude);
        return std::max(schedule.factor() * distance, 1e-2 * stop.target_gap * magnitude) + 1e-300;
    };
    UniversalGradientAscent method(oracle, floor, 1.0 / (scale * scale),
                                   inexactness(initial_primal, probe_dual, initial_violation));

    EquilibriumResult result;
    FlowAverage average;
    double best_dual = -kInf, best_primal = kInf;
    std::vector<double> best_times = floor;
    Patience patience(stop.patience);
    FlowState current;
    std::vector<double> induced;
    double violation = 0.0;
    for (;;) {
        const auto step = method.step();
        average.add(last, step.weight);
        if (step.objective > best_dual) {
            best_dual = step.objective;
            best_times = method.x();
        }
        if (probe_dual > best_dual) {
            best_dual = probe_dual;
            best_times = probe_times;
        }
        // An epoch average is judged like the stopping rule: relative gap and capacity excess together.
        FlowState epoch = average.average();
        // The link times the average induces are a dual point whose value trails Psi(average) by its
        // Frank-Wolfe gap, which closes much faster than the iterates approach the kinked optimum.
        induced = equilibrium_times(loader, epoch.network, best_times);
        const double induced_dual = transport_value(induced) - conjugate_sum(layout, induced);
        if (induced_dual > best_dual) {
            best_dual = induced_dual;
            best_times = induced;
        }
        const double epoch_primal = potential(loader, epoch, true);
        const double epoch_violation = std::max(0.0, capacity_violation(layout, epoch.network));
        const double epoch_merit = merit(epoch_primal, best_dual, epoch_violation);
        if (epoch_merit <= merit(best_primal, best_dual, violation)) {
            best_primal = epoch_primal;
            violation = epoch_violation;
            current = std::move(epoch);
        }
        const double gap = best_primal - best_dual;
        const IterationRecord rec{step.iteration, best_primal, best_dual, gap, 0.0, elapsed_ms(start)};
        result.log.push_back(rec);
        if (on_iteration) on_iteration(rec);
        result.iterations = step.iteration;
        result.primal = best_primal;
        result.dual = best_dual;
        result.gap = gap;
        result.relative_gap = relative(gap, best_primal);
        if (schedule.end_epoch(step.iteration, epoch_merit, gap)) {
            method.restart();
            average = FlowAverage{};
        }
        method.set_epsilon(inexactness(best_primal, best_dual, violation));
        if (result.relative_gap <= stop.target_gap && violation <= stop.target_gap) {
            result.status = SolveStatus::Converged;
            break;
        }
        if (patience.exhausted(result.relative_gap)) {
            result.status = SolveStatus::Diverged;
            break;
        }
        if (step.iteration >= stop.max_iters || rec.wall_ms / 1000.0 >= stop.time_limit_s) {
            result.status = SolveStatus::BudgetExhausted;
            break;
        }
    }
    result.flows = std::move(current);
    result.dual_times = best_times;
    finalize_times(loader, result);
    result.wall_ms = elapsed_ms(start);
    return result;
}

double wardrop_violation(const NetworkLoader& loader, const EquilibriumResult& result) {
    const auto& net = loader.network();
    const auto& schema = loader.schema();
    const auto& od = loader.od();
    const int nk = schema.vehicle_type_count();
    const int no = static_cast<int>(od.origins().size());
    const auto nn = static_cast<std::size_t>(net.node_count());
    if (result.flows.origin.empty() || result.flows.mode_demand.empty()) return 0.0;

    // Flow-weighted average arrival cost per (k, pair) from the origin-based flows.
    std::vector<std::vector<double>> experienced(static_cast<std::size_t>(nk),
                                                 std::vector<double>(static_cast<std::size_t>(od.size()), kInf));
    for (int k = 0; k < nk; ++k) {
        const auto& times = result.vehicle_times[static_cast<std::size_t>(k)];
        for (int o = 0; o < no; ++o) {
            const auto& f = result.flows.origin[static_cast<std::size_t>(k)][static_cast<std::size_t>(o)];
            double scale = 0.0;
            for (double v : f) scale = std::max(scale, v);
            if (scale == 0.0) continue;
            const double tiny = 1e-15 * scale;
            const int origin = od.origins()[static_cast<std::size_t>(o)];
            std::vector<double> inflow(nn, 0.0), acc(nn, 0.0), label(nn, kInf);
            std::vector<int> indegree(nn, 0);
            for (int e = 0; e < net.edge_count(); ++e) {
                if (f[static_cast<std::size_t>(e)] <= tiny) continue;
                inflow[static_cast<std::size_t>(net.edge(e).head)] += f[static_cast<std::size_t>(e)];
                ++indegree[static_cast<std::size_t>(net.edge(e).head)];
            }
            label[static_cast<std::size_t>(origin)] = 0.0;
            std::deque<int> queue{origin};
            std::size_t processed = 0;
            std::vector<char> done(nn, 0);
            while (!queue.empty()) {
                const int u = queue.front();
                queue.pop_front();
                done[static_cast<std::size_t>(u)] = 1;
                ++processed;
                for (int e : net.out_edges(u)) {
                    const double fe = f[static_cast<std::size_t>(e)];
                    if (fe <= tiny) continue;
                    const auto v = static_cast<std::size_t>(net.edge(e).head);
                    acc[v] += fe * (label[static_cast<std::size_t>(u)] + times[static_cast<std::size_t>(e)]);
                    if (--indegree[v] == 0 && v != static_cast<std::size_t>(origin)) {
                        label[v] = acc[v] / inflow[v];
                        queue.push_back(static_cast<int>(v));
                    }
                }
            }
            bool cyclic = false;
            for (std::size_t v = 0; v < nn; ++v) cyclic |= (inflow[v] > 0.0 && !done[v] && v != static_cast<std::size_t>(origin));
            if (cyclic) {
                // Fixed-point iteration on the label equations (cycles in the averaged flow).
                for (std::size_t v = 0; v < nn; ++v)
                    if (!done[v] && inflow[v] > 0.0) label[v] = 0.0;
                for (int sweep = 0; sweep < 100000; ++sweep) {
                    double change = 0.0;
                    std::vector<double> next(nn, 0.0);
                    for (int e = 0; e < net.edge_count(); ++e) {
                        const double fe = f[static_cast<std::size_t>(e)];
                        if (fe <= tiny) continue;
                        next[static_cast<std::size_t>(net.edge(e).head)] +=
                            fe * (label[static_cast<std::size_t>(net.edge(e).tail)] + times[static_cast<std::size_t>(e)]);
                    }
                    for (std::size_t v = 0; v < nn; ++v) {
                        if (v == static_cast<std::size_t>(origin) || inflow[v] <= 0.0) continue;
                        const double nv = next[v] / inflow[v];
                        change = std::max(change, std::abs(nv - label[v]) / std::max(1.0, std::abs(nv)));
                        label[v] = nv;
                    }
                    if (change < 1e-14) break;
                }
            }
            const auto [first, last] = od.pair_range(o);
            for (int p = first; p < last; ++p)
                experienced[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] =
                    label[static_cast<std::size_t>(od.pairs()[static_cast<std::size_t>(p)].destination)];
        }
    }

    Skim skim;
    const auto eq = equilibrium_times(loader, result.flows.network, result.dual_times);
    loader.skim(eq, skim);

    double worst = 0.0;
    for (int t = 0; t < schema.user_type_count(); ++t) {
        const auto& modes = schema.user_types[static_cast<std::size_t>(t)].modes;
        const std::size_t z = modes.size();
        const auto& x = result.flows.mode_demand[static_cast<std::size_t>(t)];
        for (int p = 0; p < od.size(); ++p) {
            double d = 0.0, cost = 0.0, expected_min = 0.0;
            for (std::size_t m = 0; m < z; ++m) {
                const double xm = x[static_cast<std::size_t>(p) * z + m];
                if (xm <= 0.0) continue;
                d += xm;
                cost += xm * experienced[static_cast<std::size_t>(modes[m])][static_cast<std::size_t>(p)];
                expected_min += xm * skim.mode_cost[static_cast<std::size_t>(modes[m])][static_cast<std::size_t>(p)];
            }
            if (d <= 0.0) continue;
            const double reference =
                loader.gamma() > 0.0 ? expected_min / d : skim.od_cost[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            worst = std::max(worst, (cost / d - reference) / reference);
        }
    }
    return worst;
}

}  // namespace tflow
