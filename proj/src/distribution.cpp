#include "tflow/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "tflow/error.hpp"
#include "tflow/parallel.hpp"

namespace tflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log sum exp over a sequence produced by `each(sink)`; -inf for an empty or all -inf sequence.
template <class Each>
double log_sum_exp(Each&& each) {
    double top = -kInf;
    each([&](double v) { top = std::max(top, v); });
    if (top == -kInf) return -kInf;
    double s = 0.0;
    each([&](double v) { s += std::exp(v - top); });
    return top + std::log(s);
}

struct Problem {
    const OdSet& od;
    const Marginals& marginals;
    std::vector<int> block_of_type;
    std::vector<std::vector<double>> kernel;  // -beta T-bar, -inf when excluded: [t][p]
    std::vector<std::vector<int>> column_pairs;

    Problem(const OdSet& od_, const Marginals& marginals_, const DemandSchema& schema, const OdCosts& costs,
            std::span<const double> beta)
        : od(od_), marginals(marginals_) {
        const int nt = schema.user_type_count();
        if (static_cast<int>(beta.size()) != schema.layer_count())
            throw ConfigError("one beta per demand layer is required");
        for (double b : beta)
            if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("beta must be positive and finite");
        if (static_cast<int>(costs.size()) != nt) throw DataError("cost table does not match the user types");
        block_of_type.assign(static_cast<std::size_t>(nt), -1);
        for (std::size_t b = 0; b < marginals.rows.size(); ++b)
            for (int t : marginals.rows[b].user_types) block_of_type[static_cast<std::size_t>(t)] = static_cast<int>(b);

        kernel.assign(static_cast<std::size_t>(nt), std::vector<double>(static_cast<std::size_t>(od.size()), -kInf));
        for (int t = 0; t < nt; ++t) {
            const auto& row = costs[static_cast<std::size_t>(t)];
            if (static_cast<int>(row.size()) != od.size()) throw DataError("cost table does not match the OD pairs");
            if (block_of_type[static_cast<std::size_t>(t)] < 0) continue;
            const double b = beta[static_cast<std::size_t>(schema.user_types[static_cast<std::size_t>(t)].layer)];
            for (int p = 0; p < od.size(); ++p) {
                const double c = row[static_cast<std::size_t>(p)];
                if (std::isnan(c)) throw DataError("NaN in the OD cost table");
                if (c < kInf) kernel[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] = -b * c;
            }
        }
        column_pairs.assign(od.destinations().size(), {});
        for (int p = 0; p < od.size(); ++p) column_pairs[static_cast<std::size_t>(od.destination_index(p))].push_back(p);
    }

    template <class Sink>
    void row_entries(std::size_t b, int o, const std::vector<double>& column, Sink&& sink) const {
        const auto [first, last] = od.pair_range(o);
        for (int t : marginals.rows[b].user_types)
            for (int p = first; p < last; ++p)
                sink(kernel[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] +
                     column[static_cast<std::size_t>(od.destination_index(p))]);
    }

    template <class Sink>
    void column_entries(std::size_t j, const std::vector<std::vector<double>>& row, Sink&& sink) const {
        for (std::size_t t = 0; t < kernel.size(); ++t) {
            const int b = block_of_type[t];
            if (b < 0) continue;
            for (int p : column_pairs[j])
                sink(kernel[t][static_cast<std::size_t>(p)] +
                     row[static_cast<std::size_t>(b)][static_cast<std::size_t>(od.origin_index(p))]);
        }
    }
};

std::string node_label(int node) { return std::to_string(node + 1); }

// Transport feasibility on the reachable support: max flow from the row masses to the column
// masses (Dinic). Returns a row (block * origins + origin) of a deficient set, or -1 when the
// marginals can be met.
int deficient_row(const Problem& problem, std::size_t no, std::size_t nj, double mass) {
    struct Arc {
        int to;
        double capacity;
    };
    const std::size_t nb = problem.marginals.rows.size();
    const int rows = static_cast<int>(nb * no);
    const int source = 0, sink = rows + static_cast<int>(nj) + 1;
    std::vector<Arc> arcs;
    std::vector<std::vector<int>> out(static_cast<std::size_t>(sink) + 1);
    auto add = [&](int a, int b, double c) {
        out[static_cast<std::size_t>(a)].push_back(static_cast<int>(arcs.size()));
        arcs.push_back({b, c});
        out[static_cast<std::size_t>(b)].push_back(static_cast<int>(arcs.size()));
        arcs.push_back({a, 0.0});
    };
    for (std::size_t b = 0; b < nb; ++b) {
        const auto& block = problem.marginals.rows[b];
        for (std::size_t o = 0; o < no; ++o) {
            if (block.mass[o] == 0.0) continue;
            const int node = 1 + static_cast<int>(b * no + o);
            add(source, node, block.mass[o]);
            const auto [first, last] = problem.od.pair_range(static_cast<int>(o));
            std::vector<char> linked(nj, 0);
            for (int t : block.user_types)
                for (int p = first; p < last; ++p)
                    if (problem.kernel[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] != -kInf)
                        linked[static_cast<std::size_t>(problem.od.destination_index(p))] = 1;
            for (std::size_t j = 0; j < nj; ++j)
                if (linked[j]) add(node, rows + 1 + static_cast<int>(j), 2.0 * mass);
        }
    }
    for (std::size_t j = 0; j < nj; ++j)
        if (problem.marginals.columns[j] > 0.0) add(rows + 1 + static_cast<int>(j), sink, problem.marginals.columns[j]);

    const double eps = 1e-14 * mass;
    std::vector<int> level, next;
    auto layer = [&] {
        level.assign(out.size(), -1);
        std::vector<int> queue{source};
        level[source] = 0;
        for (std::size_t q = 0; q < queue.size(); ++q)
            for (int a : out[static_cast<std::size_t>(queue[q])]) {
                const Arc& arc = arcs[static_cast<std::size_t>(a)];
                if (arc.capacity > eps && level[static_cast<std::size_t>(arc.to)] < 0) {
                    level[static_cast<std::size_t>(arc.to)] = level[static_cast<std::size_t>(queue[q])] + 1;
                    queue.push_back(arc.to);
                }
            }
        return level[static_cast<std::size_t>(sink)] >= 0;
    };
    auto push = [&](auto&& self, int v, double limit) -> double {
        if (v == sink) return limit;
        auto& i = next[static_cast<std::size_t>(v)];
        for (; i < static_cast<int>(out[static_cast<std::size_t>(v)].size()); ++i) {
            const int a = out[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
            Arc& arc = arcs[static_cast<std::size_t>(a)];
            if (arc.capacity <= eps || level[static_cast<std::size_t>(arc.to)] != level[static_cast<std::size_t>(v)] + 1)
                continue;
            const double sent = self(self, arc.to, std::min(limit, arc.capacity));
            if (sent > 0.0) {
                arc.capacity -= sent;
                arcs[static_cast<std::size_t>(a ^ 1)].capacity += sent;
                return sent;
            }
        }
        return 0.0;
    };
    double flow = 0.0;
    while (layer()) {
        next.assign(out.size(), 0);
        while (const double sent = push(push, source, kInf)) flow += sent;
    }
    if (flow >= mass * (1.0 - 1e-9)) return -1;
    // rows still reachable from the source form a set whose reachable columns are too small
    for (int v = 1; v <= rows; ++v)
        if (level[static_cast<std::size_t>(v)] >= 0) return v - 1;
    return -1;
}

}  // namespace

SinkhornResult sinkhorn(const OdSet& od, const Marginals& marginals, const DemandSchema& schema,
                        const OdCosts& costs, std::span<const double> beta, const SinkhornOptions& options,
                        const SinkhornPotentials* warm) {
    if (!(options.tolerance > 0.0)) throw ConfigError("Sinkhorn tolerance must be positive");
    const Problem problem(od, marginals, schema, costs, beta);
    const std::size_t nb = marginals.rows.size();
    const std::size_t no = od.origins().size();
    const std::size_t nj = od.destinations().size();
    if (marginals.columns.size() != nj) throw DataError("column marginals do not match the destinations");

    double row_total = 0.0, column_total = 0.0;
    for (const auto& block : marginals.rows) {
        if (block.mass.size() != no) throw DataError("row marginals do not match the origins");
        for (double m : block.mass) {
            if (!(m >= 0.0)) throw DataError("row marginals must be non-negative");
            row_total += m;
        }
    }
    for (double w : marginals.columns) {
        if (!(w >= 0.0)) throw DataError("column marginals must be non-negative");
        column_total += w;
    }
    if (std::abs(row_total - column_total) > 1e-9 * std::max(row_total, column_total))
        throw DataError("row and column marginals carry different total mass");

    SinkhornResult out;
    auto& row = out.potentials.row;
    auto& column = out.potentials.column;
    if (warm && warm->row.size() == nb && warm->column.size() == nj) {
        row = warm->row;
        column = warm->column;
    } else {
        row.assign(nb, std::vector<double>(no, 0.0));
        column.assign(nj, 0.0);
    }
    for (std::size_t j = 0; j < nj; ++j) {
        if (marginals.columns[j] == 0.0) column[j] = -kInf;
        else if (!std::isfinite(column[j])) column[j] = 0.0;
    }

    // Support checks on the reduced (reachable) support.
    std::vector<double> reachable(nj, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
        const auto& block = marginals.rows[b];
        const std::string layer = schema.layers[static_cast<std::size_t>(block.layer)].name;
        for (std::size_t o = 0; o < no; ++o) {
            if (block.mass[o] == 0.0) continue;
            bool any = false;
            const auto [first, last] = od.pair_range(static_cast<int>(o));
            for (int t : block.user_types)
                for (int p = first; p < last; ++p) {
                    if (problem.kernel[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] == -kInf) continue;
                    const auto j = static_cast<std::size_t>(od.destination_index(p));
                    if (marginals.columns[j] > 0.0) any = true;
                    reachable[j] = 1.0;
                }
            if (!any)
                throw InfeasibleError("row marginal of layer '" + layer + "' at origin node " +
                                      node_label(od.origins()[o]) + " has no reachable destination with demand");
        }
    }
    for (std::size_t j = 0; j < nj; ++j)
        if (marginals.columns[j] > 0.0 && reachable[j] == 0.0)
            throw InfeasibleError("column marginal at destination node " + node_label(od.destinations()[j]) +
                                  " has no reachable origin with demand");

    const double mass = column_total;
    if (mass > 0.0) {
        if (const int r = deficient_row(problem, no, nj, mass); r >= 0) {
            const auto b = static_cast<std::size_t>(r) / no, o = static_cast<std::size_t>(r) % no;
            const std::string layer = schema.layers[static_cast<std::size_t>(marginals.rows[b].layer)].name;
            throw InfeasibleError("row marginal of layer '" + layer + "' at origin node " + node_label(od.origins()[o]) +
                                  " cannot be met: its group of origins needs more than the column marginals of "
                                  "the destinations it reaches");
        }
    }
    std::vector<double> row_mass(nb * no, 0.0), column_mass(nj, 0.0);
    for (int sweep = 1;; ++sweep) {
        parallel_for(static_cast<int>(nb * no), options.threads, [&](int i) {
            const auto b = static_cast<std::size_t>(i) / no;
            const auto o = static_cast<std::size_t>(i) % no;
            const double m = marginals.rows[b].mass[o];
            if (m == 0.0) {
                row[b][o] = -kInf;
                return;
            }
            const double lse = log_sum_exp([&](auto&& sink) { problem.row_entries(b, static_cast<int>(o), column, sink); });
            row[b][o] = std::log(m) - lse;
        });
        parallel_for(static_cast<int>(nj), options.threads, [&](int i) {
            const auto j = static_cast<std::size_t>(i);
            if (marginals.columns[j] == 0.0) return;
            const double lse = log_sum_exp([&](auto&& sink) { problem.column_entries(j, row, sink); });
            column[j] = std::log(marginals.columns[j]) - lse;
        });

        // Residual of the iterate after the column update.
        std::fill(column_mass.begin(), column_mass.end(), 0.0);
        double residual = 0.0;
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t o = 0; o < no; ++o) {
                double s = 0.0;
                problem.row_entries(b, static_cast<int>(o), column, [&](double v) { s += std::exp(v + row[b][o]); });
                row_mass[b * no + o] = s;
                residual += std::abs(s - marginals.rows[b].mass[o]);
            }
        for (std::size_t j = 0; j < nj; ++j) {
            double s = 0.0;
            problem.column_entries(j, row, [&](double v) { s += std::exp(v + column[j]); });
            residual += std::abs(s - marginals.columns[j]);
        }
        out.residual = residual;
        out.sweeps = sweep;
        if (residual <= options.tolerance * std::max(mass, std::numeric_limits<double>::min())) {
            out.converged = true;
            break;
        }
        if (!std::isfinite(residual)) throw ConvergenceError("Sinkhorn scalings overflowed");
        if (sweep >= options.max_sweeps) {
            if (!options.strict) break;
            double rows = 0.0;
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t o = 0; o < no; ++o) rows += std::abs(row_mass[b * no + o] - marginals.rows[b].mass[o]);
            std::ostringstream msg;
            msg << "Sinkhorn did not converge in " << sweep << " sweeps: row residual " << rows
                << ", column residual " << residual - rows;
            throw ConvergenceError(msg.str());
        }
    }

    out.d = CorrespondenceMatrix::zeros(schema.user_type_count(), od.size());
    double total = 0.0;
    for (std::size_t t = 0; t < problem.kernel.size(); ++t) {
        const int b = problem.block_of_type[t];
        if (b < 0) continue;
        for (int p = 0; p < od.size(); ++p) {
            const double v = std::exp(problem.kernel[t][static_cast<std::size_t>(p)] +
                                      row[static_cast<std::size_t>(b)][static_cast<std::size_t>(od.origin_index(p))] +
                                      column[static_cast<std::size_t>(od.destination_index(p))]);
            out.d.values[t][static_cast<std::size_t>(p)] = v;
            total += v;
        }
    }
    double value = mass - total;
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < no; ++o)
            if (marginals.rows[b].mass[o] > 0.0) value += marginals.rows[b].mass[o] * row[b][o];
    for (std::size_t j = 0; j < nj; ++j)
        if (marginals.columns[j] > 0.0) value += marginals.columns[j] * column[j];
    out.value = value;
    return out;
}

double entropy_objective(const CorrespondenceMatrix& d, const OdCosts& costs, const DemandSchema& schema,
                         std::span<const double> beta) {
    double value = 0.0;
    for (std::size_t t = 0; t < d.values.size(); ++t) {
        const double b = beta[static_cast<std::size_t>(schema.user_types[t].layer)];
        for (std::size_t p = 0; p < d.values[t].size(); ++p) {
            const double v = d.values[t][p];
            if (v <= 0.0) continue;
            value += b * v * costs[t][p] + v * std::log(v);
        }
    }
    return value;
}

std::vector<double> mean_cost(const CorrespondenceMatrix& d, const OdCosts& costs, const DemandSchema& schema) {
    std::vector<double> weighted(static_cast<std::size_t>(schema.layer_count()), 0.0), mass(weighted.size(), 0.0);
    for (std::size_t t = 0; t < d.values.size(); ++t) {
        const auto r = static_cast<std::size_t>(schema.user_types[t].layer);
        for (std::size_t p = 0; p < d.values[t].size(); ++p) {
            const double v = d.values[t][p];
            if (v <= 0.0) continue;
            weighted[r] += v * costs[t][p];
            mass[r] += v;
        }
    }
    for (std::size_t r = 0; r < mass.size(); ++r) {
        if (mass[r] == 0.0) throw DataError("layer '" + schema.layers[r].name + "' carries no demand");
        weighted[r] /= mass[r];
    }
    return weighted;
}

CalibrationResult calibrate_beta(const OdSet& od, const Marginals& marginals, const DemandSchema& schema,
                                 const OdCosts& costs, std::span<const std::optional<double>> targets,
                                 std::span<const double> initial_beta, const CalibrationOptions& options) {
    const auto nr = static_cast<std::size_t>(schema.layer_count());
    if (targets.size() != nr || initial_beta.size() != nr)
        throw ConfigError("calibration needs one target slot and one initial beta per layer");
    if (!(options.lower > 0.0) || !(options.upper > options.lower))
        throw ConfigError("calibration bracket must satisfy 0 < lower < upper");
    if (!(options.tolerance > 0.0)) throw ConfigError("calibration tolerance must be positive");

    CalibrationResult result;
    result.beta.assign(initial_beta.begin(), initial_beta.end());
    for (std::size_t r = 0; r < nr; ++r)
        if (targets[r]) result.beta[r] = std::clamp(result.beta[r], options.lower, options.upper);

    SinkhornPotentials warm;
    bool have_warm = false;
    auto mean_at = [&](const std::vector<double>& beta) {
        auto s = sinkhorn(od, marginals, schema, costs, beta, options.sinkhorn, have_warm ? &warm : nullptr);
        warm = std::move(s.potentials);
        have_warm = true;
        return mean_cost(s.d, costs, schema);
    };

    auto within = [&](const std::vector<double>& means) {
        bool ok = true;
        for (std::size_t r = 0; r < nr; ++r)
            if (targets[r] && !(std::abs(means[r] - *targets[r]) <= options.tolerance)) ok = false;
        return ok;
    };

    std::vector<double> means = mean_at(result.beta);
    while (!within(means) && result.rounds < options.max_rounds) {
        ++result.rounds;
        for (std::size_t r = 0; r < nr; ++r) {
            if (!targets[r]) continue;
            const double target = *targets[r];
            const std::string name = schema.layers[r].name;
            std::vector<double> beta = result.beta;
            auto cost_at = [&](double b) {
                beta[r] = b;
                return mean_at(beta)[r];
            };
            double lo = options.lower, hi = options.upper;
            double c_lo = cost_at(lo), c_hi = cost_at(hi);
            if (c_lo < c_hi - options.tolerance) {
                std::ostringstream msg;
                msg << "layer '" << name << "': mean cost increases with beta (" << c_lo << " at " << lo << ", "
                    << c_hi << " at " << hi << ")";
                throw ConvergenceError(msg.str());
            }
            double chosen;
            if (std::abs(c_hi - target) <= options.tolerance) {
                chosen = hi;
            } else if (std::abs(c_lo - target) <= options.tolerance) {
                chosen = lo;
            } else if (target > c_lo || target < c_hi) {
                std::ostringstream msg;
                msg << "layer '" << name << "': target mean cost " << target << " outside the achievable range ["
                    << c_hi << ", " << c_lo << "] for beta in [" << lo << ", " << hi << "]";
                throw RangeError(msg.str());
            } else {
                chosen = std::sqrt(lo * hi);
                for (int it = 0; it < options.max_bisections; ++it) {
                    chosen = std::sqrt(lo * hi);
                    const double c = cost_at(chosen);
                    const double slack = options.tolerance + 1e-9 * std::abs(c);
                    if (c > c_lo + slack || c < c_hi - slack) {
                        std::ostringstream msg;
                        msg << "layer '" << name << "': mean cost not monotone in beta: " << c_lo << " at " << lo
                            << ", " << c << " at " << chosen << ", " << c_hi << " at " << hi;
                        throw ConvergenceError(msg.str());
                    }
                    if (std::abs(c - target) <= options.tolerance || hi / lo - 1.0 < 1e-15) break;
                    if (c > target) {
                        lo = chosen;
                        c_lo = c;
                    } else {
                        hi = chosen;
                        c_hi = c;
                    }
                }
            }
            result.beta[r] = chosen;
        }
        means = mean_at(result.beta);
    }
    result.mean_cost = means;
    result.residual.assign(nr, 0.0);
    for (std::size_t r = 0; r < nr; ++r)
        if (targets[r]) result.residual[r] = means[r] - *targets[r];
    result.converged = within(means);
    return result;
}

}  // namespace tflow
