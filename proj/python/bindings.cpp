#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tflow/assignment.hpp"
#include "tflow/costs.hpp"
#include "tflow/demand.hpp"
#include "tflow/distribution.hpp"
#include "tflow/error.hpp"
#include "tflow/network.hpp"
#include "tflow/tntp.hpp"
#include "tflow/twostage.hpp"

namespace py = pybind11;
using namespace tflow;

namespace {

using Trips = std::map<std::pair<int, int>, double>;

CostModelKind kind_from(const std::string& model) {
    if (model == "bpr") return CostModelKind::Bpr;
    if (model == "bpr_outer") return CostModelKind::BprOuterExponent;
    if (model == "stable_dynamics") return CostModelKind::StableDynamics;
    throw ConfigError("model must be bpr, bpr_outer or stable_dynamics");
}

// Python trips use the file's 1-based node ids.
RawDemand to_raw(const Trips& trips) {
    RawDemand raw;
    for (const auto& [key, v] : trips) raw[{key.first - 1, key.second - 1}] = v;
    return raw;
}

StopCriteria stop_from(int max_iters, double target_gap, double time_limit_s) {
    StopCriteria s;
    s.max_iters = max_iters;
    s.target_gap = target_gap;
    s.time_limit_s = time_limit_s;
    return s;
}

py::dict od_table(const OdSet& od, const std::vector<double>& values, double scale) {
    py::dict out;
    for (int p = 0; p < od.size(); ++p) {
        const auto& pair = od.pairs()[static_cast<std::size_t>(p)];
        out[py::make_tuple(pair.origin + 1, pair.destination + 1)] = scale * values[static_cast<std::size_t>(p)];
    }
    return out;
}

py::dict equilibrium_dict(const NetworkLoader& loader, const EquilibriumResult& r, double scale) {
    py::dict out;
    out["flows"] = [&] {
        std::vector<double> f(r.flows.network.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = scale * r.flows.network[i];
        return f;
    }();
    out["times"] = equilibrium_times(loader, r.flows.network, r.dual_times);
    out["dual_times"] = r.dual_times;
    out["od_cost"] = od_table(loader.od(), r.od_cost[0], 1.0);
    out["primal"] = r.primal;
    out["dual"] = r.dual;
    out["gap"] = r.gap;
    out["relative_gap"] = r.relative_gap;
    out["iterations"] = r.iterations;
    out["status"] = std::string(to_string(r.status));
    out["wall_ms"] = r.wall_ms;
    out["wardrop_violation"] = wardrop_violation(loader, r);
    out["capacity_violation"] = r.capacity_violation;
    return out;
}

// Dense single-class distribution problem: rows are origins 0..m-1, columns destinations m..m+n-1.
struct DenseProblem {
    DemandSchema schema = DemandSchema::single_class();
    OdSet od;
    Marginals marginals;
    OdCosts costs;
    std::size_t m = 0, n = 0;

    DenseProblem(const std::vector<std::vector<double>>& cost, const std::vector<double>& rows,
                 const std::vector<double>& columns) {
        m = rows.size();
        n = columns.size();
        if (cost.size() != m) throw DataError("cost matrix needs one row per row marginal");
        std::vector<OdPair> pairs;
        for (std::size_t i = 0; i < m; ++i) {
            if (cost[i].size() != n) throw DataError("cost matrix needs one column per column marginal");
            for (std::size_t j = 0; j < n; ++j) pairs.push_back({static_cast<int>(i), static_cast<int>(m + j)});
        }
        od = OdSet(pairs);
        marginals.rows.push_back({0, {0}, rows});
        marginals.columns = columns;
        costs.assign(1, std::vector<double>(m * n));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) costs[0][i * n + j] = cost[i][j];
    }

    std::vector<std::vector<double>> dense(const CorrespondenceMatrix& d) const {
        std::vector<std::vector<double>> out(m, std::vector<double>(n));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i][j] = d.values[0][i * n + j];
        return out;
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multistage traffic equilibrium solvers";

    static py::exception<Error> base(m, "TflowError");
    static py::exception<InfeasibleError> infeasible(m, "InfeasibleError", base.ptr());
    static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
    static py::exception<ConvergenceError> convergence(m, "ConvergenceError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const InfeasibleError& e) {
            infeasible(e.what());
        } catch (const ConfigError& e) {
            config(e.what());
        } catch (const ConvergenceError& e) {
            convergence(e.what());
        } catch (const Error& e) {
            base(e.what());
        }
    });

    py::class_<Network>(m, "Network")
        .def(py::init([](int node_count, const std::vector<std::map<std::string, double>>& links, int first_thru_node) {
                 std::vector<Edge> edges;
                 for (const auto& l : links) {
                     auto get = [&](const char* key, std::optional<double> fallback = std::nullopt) {
                         const auto it = l.find(key);
                         if (it != l.end()) return it->second;
                         if (!fallback) throw DataError(std::string("link is missing '") + key + "'");
                         return *fallback;
                     };
                     Edge e;
                     e.tail = static_cast<int>(get("tail")) - 1;
                     e.head = static_cast<int>(get("head")) - 1;
                     e.free_flow_time = get("free_flow_time");
                     e.capacity = get("capacity");
                     e.zeta = get("b", 0.15);
                     e.mu = 1.0 / get("power", 4.0);
                     e.length = get("length", 0.0);
                     e.speed = get("speed", 0.0);
                     edges.push_back(e);
                 }
                 return Network(node_count, std::move(edges), first_thru_node - 1 < 0 ? 0 : first_thru_node - 1);
             }),
             py::arg("node_count"), py::arg("links"), py::arg("first_thru_node") = 1,
             "Links are dicts with 1-based tail/head, free_flow_time, capacity and optional b, power, "
             "length, speed.")
        .def_property_readonly("node_count", &Network::node_count)
        .def_property_readonly("edge_count", &Network::edge_count)
        .def("link", [](const Network& net, int e) {
            const Edge& x = net.edge(e);
            py::dict d;
            d["tail"] = x.tail + 1;
            d["head"] = x.head + 1;
            d["free_flow_time"] = x.free_flow_time;
            d["capacity"] = x.capacity;
            d["b"] = x.zeta;
            d["power"] = 1.0 / x.mu;
            return d;
        });

    m.def("read_network", [](const std::string& path) { return parse_tntp_network(read_text_file(path)); },
          py::arg("path"), "Parse a TNTP _net file.");
    m.def(
        "read_trips",
        [](const std::string& path) {
            const auto t = parse_tntp_trips(read_text_file(path));
            Trips out;
            for (const auto& [key, v] : t.entries) out[{key.first + 1, key.second + 1}] = v;
            return out;
        },
        py::arg("path"), "Parse a TNTP _trips file into {(origin, destination): demand} with 1-based ids.");

    m.def(
        "bpr_time",
        [](double free_flow_time, double capacity, double zeta, double mu, double flow) {
            return link_time(Bpr{free_flow_time, capacity, zeta, mu}, flow);
        },
        py::arg("free_flow_time"), py::arg("capacity"), py::arg("zeta"), py::arg("mu"), py::arg("flow"));
    m.def(
        "bpr_sigma",
        [](double free_flow_time, double capacity, double zeta, double mu, double flow) {
            return sigma(Bpr{free_flow_time, capacity, zeta, mu}, flow);
        },
        py::arg("free_flow_time"), py::arg("capacity"), py::arg("zeta"), py::arg("mu"), py::arg("flow"));
    m.def(
        "bpr_sigma_conjugate",
        [](double free_flow_time, double capacity, double zeta, double mu, double time) {
            const auto c = sigma_conjugate(Bpr{free_flow_time, capacity, zeta, mu}, time);
            return py::make_tuple(c.value, c.derivative);
        },
        py::arg("free_flow_time"), py::arg("capacity"), py::arg("zeta"), py::arg("mu"), py::arg("time"),
        "(value, derivative) of the conjugate at a link time.");

    m.def(
        "assign",
        [](const Network& net, const Trips& trips, const std::string& solver, const std::string& model,
           double target_gap, int max_iters, double time_limit_s, int threads) {
            const auto schema = DemandSchema::single_class(kind_from(model));
            const Demand demand = build_demand(to_raw(trips), schema, OdSupport::Observed);
            const NetworkLoader loader(net, schema, demand.od, 0.0, threads);
            const StopCriteria stop = stop_from(max_iters, target_gap, time_limit_s);
            EquilibriumResult r;
            {
                py::gil_scoped_release release;
                r = solver == "frank_wolfe" ? solve_frank_wolfe(loader, demand.fixed, stop)
                    : solver == "ugm"       ? solve_dual_ugm(loader, demand.fixed, stop)
                                            : throw ConfigError("solver must be ugm or frank_wolfe");
            }
            return equilibrium_dict(loader, r, 1.0);
        },
        py::arg("network"), py::arg("trips"), py::arg("solver") = "ugm", py::arg("model") = "bpr",
        py::arg("target_gap") = 1e-6, py::arg("max_iters") = 200000, py::arg("time_limit_s") = 600.0,
        py::arg("threads") = 1, "Single-class fixed-demand assignment.");

    m.def(
        "sinkhorn",
        [](const std::vector<std::vector<double>>& cost, const std::vector<double>& rows,
           const std::vector<double>& columns, double beta, double tolerance) {
            const DenseProblem problem(cost, rows, columns);
            SinkhornOptions options;
            options.tolerance = tolerance;
            const std::vector<double> b{beta};
            const auto s = sinkhorn(problem.od, problem.marginals, problem.schema, problem.costs, b, options);
            py::dict out;
            out["d"] = problem.dense(s.d);
            out["row_potential"] = s.potentials.row[0];
            out["column_potential"] = s.potentials.column;
            out["value"] = s.value;
            out["objective"] = entropy_objective(s.d, problem.costs, problem.schema, b);
            out["mean_cost"] = mean_cost(s.d, problem.costs, problem.schema)[0];
            out["residual"] = s.residual;
            out["sweeps"] = s.sweeps;
            return out;
        },
        py::arg("cost"), py::arg("rows"), py::arg("columns"), py::arg("beta") = 1.0, py::arg("tolerance") = 1e-10,
        "Entropy-regularized transport on a dense cost matrix (inf marks a forbidden cell).");

    m.def(
        "calibrate_beta",
        [](const std::vector<std::vector<double>>& cost, const std::vector<double>& rows,
           const std::vector<double>& columns, double target, double lower, double upper, double tolerance) {
            const DenseProblem problem(cost, rows, columns);
            CalibrationOptions options;
            options.lower = lower;
            options.upper = upper;
            options.tolerance = tolerance;
            const std::vector<std::optional<double>> targets{target};
            const std::vector<double> initial{std::sqrt(lower * upper)};
            const auto r = calibrate_beta(problem.od, problem.marginals, problem.schema, problem.costs, targets,
                                          initial, options);
            return py::make_tuple(r.beta[0], r.mean_cost[0]);
        },
        py::arg("cost"), py::arg("rows"), py::arg("columns"), py::arg("target"), py::arg("lower") = 1e-6,
        py::arg("upper") = 1e3, py::arg("tolerance") = 1e-8, "(beta, achieved mean cost) for a target mean cost.");

    m.def(
        "twostage",
        [](const Network& net, const Trips& trips, double beta, const std::string& solver, double target_gap,
           int max_iters, int threads) {
            const auto schema = DemandSchema::single_class();
            const Demand demand = normalize_demand(to_raw(trips), schema, OdSupport::All);
            const Network scaled = net.with_capacity_scale(1.0 / demand.total);
            const NetworkLoader loader(scaled, schema, demand.od, 0.0, threads);
            TwoStageOptions options;
            options.beta = {beta};
            options.stop = stop_from(max_iters, target_gap, 600.0);
            options.sinkhorn.threads = threads;
            TwoStageState s;
            {
                py::gil_scoped_release release;
                s = solver == "saddle"        ? saddle_solve(loader, demand.marginals, options)
                    : solver == "alternation" ? alternation_solve(loader, demand.marginals, options)
                                              : throw ConfigError("solver must be saddle or alternation");
            }
            py::dict out = equilibrium_dict(loader, s.assignment, demand.total);
            out["demand"] = od_table(demand.od, s.d.values[0], demand.total);
            out["primal"] = s.primal;
            out["dual"] = s.dual;
            out["gap"] = s.gap;
            out["relative_gap"] = s.relative_gap;
            out["marginal_residual"] = s.marginal_residual;
            out["iterations"] = s.iterations;
            out["status"] = std::string(to_string(s.status));
            out["label"] = s.label;
            return out;
        },
        py::arg("network"), py::arg("trips"), py::arg("beta") = 1.0, py::arg("solver") = "saddle",
        py::arg("target_gap") = 1e-6, py::arg("max_iters") = 1000000, py::arg("threads") = 1,
        "Single-class combined distribution and assignment; trips provide the marginals.");
}
