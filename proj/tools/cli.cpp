#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "config.hpp"
#include "tflow/error.hpp"
#include "tflow/loading.hpp"
#include "tflow/tntp.hpp"

namespace tflow::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string node_id(int node) { return std::to_string(node + 1); }

// Files written by a job; removed again unless the job completes.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;

    ~OutputSet() {
        if (kept_) return;
        streams_.clear();
        std::error_code ec;
        for (const auto& p : created_) fs::remove(p, ec);
    }

    std::ofstream& open(const std::string& name) {
        const fs::path path = dir_ / name;
        auto stream = std::make_unique<std::ofstream>(path, std::ios::trunc);
        if (!*stream) throw DataError("cannot write " + path.string());
        created_.push_back(path);
        streams_.push_back(std::move(stream));
        return *streams_.back();
    }

    void keep() {
        for (auto& s : streams_) {
            s->flush();
            if (!*s) throw DataError("writing outputs to " + dir_.string() + " failed");
        }
        kept_ = true;
    }

private:
    fs::path dir_;
    std::vector<fs::path> created_;
    std::vector<std::unique_ptr<std::ofstream>> streams_;
    bool kept_ = false;
};

class ConvergenceLog {
public:
    explicit ConvergenceLog(std::ofstream& out) : out_(out) {
        out_ << "iteration,primal,dual,gap,relative_gap,inner_residual,wall_ms\n";
        out_.flush();
    }
    void operator()(const IterationRecord& r) const {
        const double rel = r.gap == 0.0 ? 0.0 : r.gap / std::abs(r.primal);
        out_ << r.iteration << ',' << num(r.primal) << ',' << num(r.dual) << ',' << num(r.gap) << ',' << num(rel)
             << ',' << num(r.inner_residual) << ',' << num(r.wall_ms) << '\n';
        out_.flush();
    }

private:
    std::ofstream& out_;
};

struct Inputs {
    std::optional<Network> net;
    TripTable trips;
};

Inputs read_inputs(RunConfig& config, bool network_required, std::ostream& err) {
    Inputs in;
    if (config.trips.empty()) throw ConfigError("config.trips: a trips file is required");
    in.trips = parse_tntp_trips(read_text_file(config.trips));
    for (const auto& w : in.trips.warnings) err << "warning: " << config.trips.string() << ": " << w << '\n';
    if (!config.network.empty()) {
        in.net = parse_tntp_network(read_text_file(config.network), {config.epsilon_time});
        bind_schema(config, in.net->edge_count());
    } else if (network_required) {
        throw ConfigError("config.network: a network file is required for this job");
    } else {
        bind_schema(config, 0);
    }
    return in;
}

void write_flows(std::ofstream& out, const NetworkLoader& loader, const EquilibriumResult& result, double scale) {
    const auto& net = loader.network();
    const auto& schema = loader.schema();
    const auto& layout = loader.layout();
    const auto times = equilibrium_times(loader, result.flows.network, result.dual_times);
    out << "edge,tail,head";
    for (const auto& k : schema.vehicle_types) out << ",flow_" << k.name;
    for (const auto& b : schema.networks) out << ",flow_" << b.name << ",time_" << b.name;
    out << '\n';
    for (int e = 0; e < net.edge_count(); ++e) {
        out << e + 1 << ',' << node_id(net.edge(e).tail) << ',' << node_id(net.edge(e).head);
        for (int k = 0; k < schema.vehicle_type_count(); ++k)
            out << ',' << num(scale * result.flows.vehicle[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)]);
        for (int b = 0; b < schema.network_count(); ++b) {
            const int i = layout.index(b, e);
            if (i < 0) {
                out << ",,";
                continue;
            }
            out << ',' << num(scale * result.flows.network[static_cast<std::size_t>(i)]) << ','
                << num(times[static_cast<std::size_t>(i)]);
        }
        out << '\n';
    }
}

void write_od_costs(std::ofstream& out, const DemandSchema& schema, const OdSet& od, const OdCosts& cost) {
    out << "layer,user_type,origin,destination,cost\n";
    for (int t = 0; t < schema.user_type_count(); ++t) {
        const auto& ut = schema.user_types[static_cast<std::size_t>(t)];
        const auto& layer = schema.layers[static_cast<std::size_t>(ut.layer)];
        for (int p = 0; p < od.size(); ++p) {
            const auto& pair = od.pairs()[static_cast<std::size_t>(p)];
            out << layer.name << ',' << ut.name << ',' << node_id(pair.origin) << ',' << node_id(pair.destination)
                << ',' << num(cost[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]) << '\n';
        }
    }
}

void write_correspondences(std::ofstream& out, const DemandSchema& schema, const OdSet& od,
                           const CorrespondenceMatrix& d, double scale) {
    out << "layer,user_type,origin,destination,demand\n";
    for (int t = 0; t < schema.user_type_count(); ++t) {
        const auto& ut = schema.user_types[static_cast<std::size_t>(t)];
        const auto& layer = schema.layers[static_cast<std::size_t>(ut.layer)];
        for (int p = 0; p < od.size(); ++p) {
            const auto& pair = od.pairs()[static_cast<std::size_t>(p)];
            out << layer.name << ',' << ut.name << ',' << node_id(pair.origin) << ',' << node_id(pair.destination)
                << ',' << num(scale * d.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]) << '\n';
        }
    }
}

// OD cost table in the od_costs.csv layout; pairs absent from the file are unreachable.
OdCosts read_od_costs(const fs::path& path, const DemandSchema& schema, const OdSet& od) {
    std::map<std::string, int> type_ids;
    for (int t = 0; t < schema.user_type_count(); ++t) type_ids[schema.user_types[static_cast<std::size_t>(t)].name] = t;
    OdCosts cost(static_cast<std::size_t>(schema.user_type_count()),
                 std::vector<double>(static_cast<std::size_t>(od.size()), std::numeric_limits<double>::infinity()));
    std::istringstream text(read_text_file(path));
    std::string line;
    int line_no = 0;
    while (std::getline(text, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line_no == 1) continue;
        std::vector<std::string> fields;
        std::stringstream row(line);
        for (std::string f; std::getline(row, f, ',');) fields.push_back(f);
        if (fields.size() != 5) throw ParseError(path.string() + ": expected layer,user_type,origin,destination,cost", line_no);
        const auto type = type_ids.find(fields[1]);
        if (type == type_ids.end()) throw ParseError(path.string() + ": unknown user type '" + fields[1] + "'", line_no);
        try {
            const int p = od.find({std::stoi(fields[2]) - 1, std::stoi(fields[3]) - 1});
            if (p >= 0) cost[static_cast<std::size_t>(type->second)][static_cast<std::size_t>(p)] = std::stod(fields[4]);
        } catch (const std::logic_error&) {
            throw ParseError(path.string() + ": malformed number", line_no);
        }
    }
    return cost;
}

json per_layer(const DemandSchema& schema, const std::vector<double>& values) {
    json out = json::object();
    for (std::size_t r = 0; r < values.size(); ++r) out[schema.layers[r].name] = values[r];
    return out;
}

void write_summary(std::ofstream& out, const json& summary) { out << summary.dump(2) << '\n'; }

OdSupport support_for(const RunConfig& config, OdSupport fallback) { return config.od_support.value_or(fallback); }

int status_code(SolveStatus s) { return s == SolveStatus::Converged ? kSuccess : kBudgetExhausted; }

int run_assign(RunConfig& config, const fs::path& dir, int threads, std::ostream& err) {
    Inputs in = read_inputs(config, true, err);
    const Demand demand = build_demand(in.trips.entries, config.schema, support_for(config, OdSupport::Observed));
    const NetworkLoader loader(*in.net, config.schema, demand.od, config.gamma, threads);

    OutputSet outputs(dir);
    ConvergenceLog log(outputs.open("convergence.csv"));
    const EquilibriumResult result =
        config.assign_solver == AssignSolver::FrankWolfe
            ? solve_frank_wolfe(loader, demand.fixed, config.assign_stop, std::cref(log))
            : solve_dual_ugm(loader, demand.fixed, config.assign_stop, std::cref(log), config.ugm);
    write_flows(outputs.open("flows.csv"), loader, result, 1.0);
    write_od_costs(outputs.open("od_costs.csv"), config.schema, demand.od, result.od_cost);
    json summary = {
        {"job", "assign"},
        {"solver", config.assign_solver == AssignSolver::FrankWolfe ? "frank_wolfe" : "ugm"},
        {"status", to_string(result.status)},
        {"primal", result.primal},
        {"dual", result.dual},
        {"gap", result.gap},
        {"relative_gap", result.relative_gap},
        {"wardrop_violation", wardrop_violation(loader, result)},
        {"capacity_violation", result.capacity_violation},
        {"iterations", result.iterations},
        {"wall_ms", result.wall_ms},
        {"demand_total", demand.total},
    };
    write_summary(outputs.open("summary.json"), summary);
    outputs.keep();
    if (result.status != SolveStatus::Converged)
        err << "assign: stopped before the target gap (" << to_string(result.status) << ", relative gap "
            << num(result.relative_gap) << ")\n";
    return status_code(result.status);
}

OdCosts distribution_costs(const RunConfig& config, const Inputs& in, const Demand& demand, int threads) {
    if (!config.od_costs.empty()) return read_od_costs(config.od_costs, config.schema, demand.od);
    if (!in.net) throw ConfigError("distribute/calibrate need either config.od_costs or config.network");
    const NetworkLoader loader(*in.net, config.schema, demand.od, config.gamma, threads);
    Skim skim;
    loader.skim(loader.layout().free_flow_times(), skim);
    return skim.od_cost;
}

int run_distribute(RunConfig& config, const fs::path& dir, int threads, bool calibrate, std::ostream& err) {
    Inputs in = read_inputs(config, false, err);
    const Demand demand = normalize_demand(in.trips.entries, config.schema, support_for(config, OdSupport::All));
    const OdCosts costs = distribution_costs(config, in, demand, threads);
    SinkhornOptions inner = config.sinkhorn;
    inner.threads = threads;

    std::vector<double> beta = config.beta;
    json summary = {{"job", calibrate ? "calibrate" : "distribute"}};
    int code = kSuccess;
    if (calibrate) {
        bool any = false;
        for (const auto& t : config.target) any |= t.has_value();
        if (!any) throw ConfigError("calibrate: no layer sets target_mean_cost");
        CalibrationOptions options = config.calibration;
        options.sinkhorn = inner;
        const auto cal = calibrate_beta(demand.od, demand.marginals, config.schema, costs, config.target, beta, options);
        beta = cal.beta;
        json targets = json::object(), residuals = json::object();
        for (std::size_t r = 0; r < beta.size(); ++r) {
            if (!config.target[r]) continue;
            targets[config.schema.layers[r].name] = *config.target[r];
            residuals[config.schema.layers[r].name] = cal.residual[r];
        }
        summary["targets"] = targets;
        summary["calibration_residual"] = residuals;
        summary["calibration_rounds"] = cal.rounds;
        summary["calibration_converged"] = cal.converged;
        if (!cal.converged) {
            err << "calibrate: layer-wise rounds ended before every target was met\n";
            code = kBudgetExhausted;
        }
    }
    const auto s = sinkhorn(demand.od, demand.marginals, config.schema, costs, beta, inner);

    OutputSet outputs(dir);
    write_correspondences(outputs.open("correspondences.csv"), config.schema, demand.od, s.d, demand.total);
    summary["beta"] = per_layer(config.schema, beta);
    summary["mean_cost"] = per_layer(config.schema, mean_cost(s.d, costs, config.schema));
    summary["objective"] = entropy_objective(s.d, costs, config.schema, beta);
    summary["dual"] = s.value;
    summary["marginal_residual"] = s.residual;
    summary["sweeps"] = s.sweeps;
    summary["demand_total"] = demand.total;
    write_summary(outputs.open("summary.json"), summary);
    outputs.keep();
    return code;
}

int run_twostage(RunConfig& config, const fs::path& dir, int threads, std::ostream& err) {
    const bool reducible = check_beta_reducibility(config.beta) == BetaReducibility::Reducible;
    if (config.twostage_solver == TwoStageSolver::Saddle && !reducible)
        throw ConfigError("twostage: the saddle solver needs equal beta in every layer; set twostage.solver to "
                          "alternation for a heuristic fixed point");
    Inputs in = read_inputs(config, true, err);
    const Demand demand = normalize_demand(in.trips.entries, config.schema, support_for(config, OdSupport::All));
    // Unit-mass demand runs on capacities measured in the same unit.
    const Network scaled = in.net->with_capacity_scale(1.0 / demand.total);
    const NetworkLoader loader(scaled, config.schema, demand.od, config.gamma, threads);
    TwoStageOptions options = config.twostage;
    options.sinkhorn.threads = threads;

    OutputSet outputs(dir);
    ConvergenceLog log(outputs.open("convergence.csv"));
    const bool saddle = config.twostage_solver == TwoStageSolver::Saddle;
    const TwoStageState state = saddle ? saddle_solve(loader, demand.marginals, options, std::cref(log))
                                       : alternation_solve(loader, demand.marginals, options, std::cref(log));
    write_flows(outputs.open("flows.csv"), loader, state.assignment, demand.total);
    write_od_costs(outputs.open("od_costs.csv"), config.schema, demand.od, state.assignment.od_cost);
    write_correspondences(outputs.open("correspondences.csv"), config.schema, demand.od, state.d, demand.total);
    const std::string mode = saddle ? "saddle" : reducible ? "alternation" : "alternation-heuristic";
    json summary = {
        {"job", "twostage"},
        {"mode", mode},
        {"label", state.label},
        {"status", to_string(state.status)},
        {"primal", state.primal},
        {"dual", state.dual},
        {"gap", state.gap},
        {"relative_gap", state.relative_gap},
        {"marginal_residual", state.marginal_residual},
        {"wardrop_violation", wardrop_violation(loader, state.assignment)},
        {"assignment_relative_gap", state.assignment.relative_gap},
        {"d_change", state.d_change},
        {"iterations", state.iterations},
        {"wall_ms", state.wall_ms},
        {"beta", per_layer(config.schema, config.beta)},
        {"demand_total", demand.total},
    };
    write_summary(outputs.open("summary.json"), summary);
    outputs.keep();
    if (!reducible) err << "twostage: layers have different beta; the result is a heuristic fixed point\n";
    return status_code(state.status);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multistage traffic equilibrium: assignment, trip distribution and their combination", "tflow"};
    app.require_subcommand(0, 1);
    std::string config_path;
    std::string out_dir = "tflow-out";
    int threads = 1;
    bool print_config = false;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads")->check(CLI::Range(1, 1024))->capture_default_str();
    app.add_flag("--print-config", print_config, "Print the effective configuration with all defaults and exit");
    auto* assign = app.add_subcommand("assign", "Fixed-demand traffic assignment");
    auto* distribute = app.add_subcommand("distribute", "Entropy trip distribution at given costs");
    auto* calibrate = app.add_subcommand("calibrate", "Fit beta per layer to target mean costs, then distribute");
    auto* twostage = app.add_subcommand("twostage", "Combined distribution and assignment equilibrium");
    for (auto* sub : {assign, distribute, calibrate, twostage}) sub->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kUsageError;
    }

    try {
        const json user = config_path.empty() ? json::object() : load_config_file(config_path);
        const json merged = merged_config(user);
        if (print_config) {
            out << merged.dump(2) << '\n';
            return kSuccess;
        }
        if (app.get_subcommands().empty()) {
            err << "tflow: choose one of assign, distribute, calibrate, twostage (see --help)\n";
            return kUsageError;
        }
        const fs::path base = config_path.empty() ? fs::current_path() : fs::absolute(config_path).parent_path();
        RunConfig config = parse_config(merged, base);
        const fs::path dir(out_dir);
        if (assign->parsed()) return run_assign(config, dir, threads, err);
        if (distribute->parsed()) return run_distribute(config, dir, threads, false, err);
        if (calibrate->parsed()) return run_distribute(config, dir, threads, true, err);
        return run_twostage(config, dir, threads, err);
    } catch (const InfeasibleError& e) {
        err << "tflow: infeasible model: " << e.what() << '\n';
        return kInfeasible;
    } catch (const RangeError& e) {
        err << "tflow: infeasible target: " << e.what() << '\n';
        return kInfeasible;
    } catch (const ConvergenceError& e) {
        err << "tflow: solver failed: " << e.what() << '\n';
        return kBudgetExhausted;
    } catch (const std::exception& e) {
        err << "tflow: " << e.what() << '\n';
        return kUsageError;
    }
}

}  // namespace tflow::cli
