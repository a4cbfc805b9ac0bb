#include "config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tflow/error.hpp"

namespace tflow::cli {

using nlohmann::json;

namespace {

// Typed access to one JSON object that rejects unknown keys on finish().
class Section {
public:
    Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
        if (!node_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return node_.contains(key) && !node_.at(key).is_null();
    }

    const json& raw(const std::string& key) {
        if (!has(key)) throw ConfigError(where_ + ": missing '" + key + "'");
        return node_.at(key);
    }

    double number(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) throw ConfigError(where_ + "." + key + ": expected a number");
        return v.get<double>();
    }
    double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

    double positive(const std::string& key) {
        const double v = number(key);
        if (!(v > 0.0)) throw ConfigError(where_ + "." + key + ": must be positive");
        return v;
    }

    int integer(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number_integer()) throw ConfigError(where_ + "." + key + ": expected an integer");
        return v.get<int>();
    }

    std::string text(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_string()) throw ConfigError(where_ + "." + key + ": expected a string");
        return v.get<std::string>();
    }
    std::string text(const std::string& key, const std::string& fallback) { return has(key) ? text(key) : fallback; }

    Section child(const std::string& key) { return Section(raw(key), where_ + "." + key); }

    const std::string& where() const { return where_; }

    void finish() const {
        for (const auto& [key, _] : node_.items())
            if (!used_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }

private:
    const json& node_;
    std::string where_;
    std::set<std::string> used_;
};

double time_limit(Section& s) {
    const double v = s.number("time_limit_s");
    if (!(v > 0.0)) throw ConfigError(s.where() + ".time_limit_s: must be positive");
    return v;
}

CostModelKind model_kind(const std::string& name, const std::string& where) {
    if (name == "bpr") return CostModelKind::Bpr;
    if (name == "bpr_outer") return CostModelKind::BprOuterExponent;
    if (name == "stable_dynamics") return CostModelKind::StableDynamics;
    throw ConfigError(where + ": model must be bpr, bpr_outer or stable_dynamics, got '" + name + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& path) {
    if (path.empty()) return {};
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base / p;
}

void parse_schema(Section schema, RunConfig& config) {
    DemandSchema& out = config.schema;
    std::map<std::string, int> network_ids, vehicle_ids;

    const json& networks = schema.raw("networks");
    if (!networks.is_array() || networks.empty()) throw ConfigError("schema.networks: expected a non-empty array");
    for (std::size_t b = 0; b < networks.size(); ++b) {
        Section n(networks[b], "schema.networks[" + std::to_string(b) + "]");
        TransportNetwork net;
        net.name = n.text("name");
        net.model = model_kind(n.text("model", "bpr"), n.where());
        if (n.has("mu")) net.mu = n.positive("mu");
        if (n.has("zeta")) net.zeta = n.positive("zeta");
        std::optional<std::vector<int>> links;
        if (n.has("links")) {
            const json& v = n.raw("links");
            if (v.is_string() && v.get<std::string>() == "all") {
            } else if (v.is_array()) {
                links.emplace();
                for (const auto& id : v) {
                    if (!id.is_number_integer()) throw ConfigError(n.where() + ".links: expected link numbers");
                    links->push_back(id.get<int>());
                }
            } else {
                throw ConfigError(n.where() + ".links: expected \"all\" or an array of 1-based link numbers");
            }
        }
        n.finish();
        if (!network_ids.emplace(net.name, static_cast<int>(b)).second)
            throw ConfigError("schema.networks: duplicate name '" + net.name + "'");
        out.networks.push_back(std::move(net));
        config.network_links.push_back(std::move(links));
    }

    const json& vehicles = schema.raw("vehicle_types");
    if (!vehicles.is_array() || vehicles.empty()) throw ConfigError("schema.vehicle_types: expected a non-empty array");
    for (std::size_t k = 0; k < vehicles.size(); ++k) {
        Section v(vehicles[k], "schema.vehicle_types[" + std::to_string(k) + "]");
        VehicleType vt;
        vt.name = v.text("name");
        const std::string network = v.text("network");
        const auto it = network_ids.find(network);
        if (it == network_ids.end()) throw ConfigError(v.where() + ": unknown network '" + network + "'");
        vt.network = it->second;
        std::vector<std::pair<int, ConstantSurcharge>> surcharges;
        if (v.has("surcharges")) {
            const json& list = v.raw("surcharges");
            if (!list.is_array()) throw ConfigError(v.where() + ".surcharges: expected an array");
            for (std::size_t i = 0; i < list.size(); ++i) {
                Section c(list[i], v.where() + ".surcharges[" + std::to_string(i) + "]");
                ConstantSurcharge s;
                const int link = c.integer("link");
                if (c.has("forbidden")) {
                    if (!c.raw("forbidden").is_boolean()) throw ConfigError(c.where() + ".forbidden: expected a boolean");
                    s.forbidden = c.raw("forbidden").get<bool>();
                }
                s.value = c.number("value", 0.0);
                c.finish();
                surcharges.emplace_back(link, s);
            }
        }
        v.finish();
        if (!vehicle_ids.emplace(vt.name, static_cast<int>(k)).second)
            throw ConfigError("schema.vehicle_types: duplicate name '" + vt.name + "'");
        out.vehicle_types.push_back(std::move(vt));
        config.surcharge_links.push_back(std::move(surcharges));
    }

    const json& layers = schema.raw("layers");
    if (!layers.is_array() || layers.empty()) throw ConfigError("schema.layers: expected a non-empty array");
    for (std::size_t r = 0; r < layers.size(); ++r) {
        Section l(layers[r], "schema.layers[" + std::to_string(r) + "]");
        DemandLayer layer;
        layer.name = l.text("name");
        layer.share = l.number("share", 1.0);
        config.beta.push_back(l.number("beta", 1.0));
        if (!(config.beta.back() > 0.0)) throw ConfigError(l.where() + ".beta: must be positive");
        config.target.push_back(l.has("target_mean_cost") ? std::optional<double>(l.number("target_mean_cost"))
                                                          : std::nullopt);
        const json& types = l.raw("user_types");
        if (!types.is_array() || types.empty()) throw ConfigError(l.where() + ".user_types: expected a non-empty array");
        for (std::size_t i = 0; i < types.size(); ++i) {
            Section u(types[i], l.where() + ".user_types[" + std::to_string(i) + "]");
            UserType ut;
            ut.name = u.text("name");
            ut.layer = static_cast<int>(r);
            if (u.has("share")) ut.share = u.number("share");
            const json& modes = u.raw("modes");
            if (!modes.is_array()) throw ConfigError(u.where() + ".modes: expected an array of vehicle type names");
            for (const auto& m : modes) {
                if (!m.is_string()) throw ConfigError(u.where() + ".modes: expected vehicle type names");
                const auto it = vehicle_ids.find(m.get<std::string>());
                if (it == vehicle_ids.end())
                    throw ConfigError(u.where() + ": unknown vehicle type '" + m.get<std::string>() + "'");
                ut.modes.push_back(it->second);
            }
            u.finish();
            layer.user_types.push_back(out.user_type_count());
            out.user_types.push_back(std::move(ut));
        }
        l.finish();
        out.layers.push_back(std::move(layer));
    }
    schema.finish();
}

}  // namespace

json default_config() {
    return json::parse(R"({
  "network": null,
  "trips": null,
  "od_costs": null,
  "epsilon_time": 1e-6,
  "od_support": "auto",
  "mode_choice": {"gamma": 0.0},
  "schema": {
    "networks": [{"name": "road", "model": "bpr", "links": "all"}],
    "vehicle_types": [{"name": "car", "network": "road"}],
    "layers": [{"name": "all", "share": 1.0, "beta": 1.0, "user_types": [{"name": "all", "modes": ["car"]}]}]
  },
  "assignment": {
    "solver": "ugm",
    "max_iters": 200000,
    "target_gap": 1e-6,
    "time_limit_s": 600.0,
    "patience": 0,
    "gap_factor": 10.0,
    "restart_ratio": 0.5
  },
  "distribution": {
    "tolerance": 1e-10,
    "max_sweeps": 100000,
    "calibration": {"lower": 1e-6, "upper": 1000.0, "tolerance": 1e-8, "max_bisections": 200, "max_rounds": 50}
  },
  "twostage": {
    "solver": "saddle",
    "max_iters": 1000000,
    "target_gap": 1e-6,
    "time_limit_s": 600.0,
    "patience": 0,
    "marginal_target": 1e-8,
    "inner_tolerance_start": 1e-6,
    "max_outer": 200,
    "change_tolerance": 1e-9,
    "relaxation": 1.0,
    "oscillation_patience": 8
  }
})");
}

json merged_config(const json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be an object");
    json merged = default_config();
    merged.merge_patch(user);
    // merge_patch drops keys set to null; keep them visible as unset.
    for (const char* key : {"network", "trips", "od_costs"})
        if (!merged.contains(key)) merged[key] = nullptr;
    return merged;
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return json::parse(buffer.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

RunConfig parse_config(const json& merged, const std::filesystem::path& base) {
    RunConfig config;
    Section top(merged, "config");
    if (top.has("network")) config.network = resolve(base, top.text("network"));
    if (top.has("trips")) config.trips = resolve(base, top.text("trips"));
    if (top.has("od_costs")) config.od_costs = resolve(base, top.text("od_costs"));
    config.epsilon_time = top.positive("epsilon_time");
    const std::string support = top.text("od_support");
    if (support == "observed") config.od_support = OdSupport::Observed;
    else if (support == "all") config.od_support = OdSupport::All;
    else if (support != "auto") throw ConfigError("config.od_support: must be auto, observed or all");

    {
        Section m = top.child("mode_choice");
        config.gamma = m.number("gamma");
        if (!(config.gamma >= 0.0)) throw ConfigError("config.mode_choice.gamma: must be non-negative");
        m.finish();
    }
    parse_schema(top.child("schema"), config);

    {
        Section a = top.child("assignment");
        const std::string solver = a.text("solver");
        if (solver == "ugm") config.assign_solver = AssignSolver::Ugm;
        else if (solver == "frank_wolfe") config.assign_solver = AssignSolver::FrankWolfe;
        else throw ConfigError("config.assignment.solver: must be ugm or frank_wolfe");
        config.assign_stop.max_iters = a.integer("max_iters");
        config.assign_stop.target_gap = a.positive("target_gap");
        config.assign_stop.time_limit_s = time_limit(a);
        config.assign_stop.patience = a.integer("patience");
        config.ugm.gap_factor = a.positive("gap_factor");
        config.ugm.restart_ratio = a.positive("restart_ratio");
        if (config.ugm.restart_ratio >= 1.0) throw ConfigError("config.assignment.restart_ratio: must be below 1");
        if (config.assign_stop.max_iters <= 0) throw ConfigError("config.assignment.max_iters: must be positive");
        a.finish();
    }
    {
        Section d = top.child("distribution");
        config.sinkhorn.tolerance = d.positive("tolerance");
        config.sinkhorn.max_sweeps = d.integer("max_sweeps");
        if (config.sinkhorn.max_sweeps <= 0) throw ConfigError("config.distribution.max_sweeps: must be positive");
        Section c = d.child("calibration");
        config.calibration.lower = c.positive("lower");
        config.calibration.upper = c.positive("upper");
        config.calibration.tolerance = c.positive("tolerance");
        config.calibration.max_bisections = c.integer("max_bisections");
        config.calibration.max_rounds = c.integer("max_rounds");
        c.finish();
        d.finish();
        if (!(config.calibration.upper > config.calibration.lower))
            throw ConfigError("config.distribution.calibration: upper must exceed lower");
    }
    {
        Section t = top.child("twostage");
        const std::string solver = t.text("solver");
        if (solver == "saddle") config.twostage_solver = TwoStageSolver::Saddle;
        else if (solver == "alternation") config.twostage_solver = TwoStageSolver::Alternation;
        else throw ConfigError("config.twostage.solver: must be saddle or alternation");
        auto& o = config.twostage;
        o.stop.max_iters = t.integer("max_iters");
        o.stop.target_gap = t.positive("target_gap");
        o.stop.time_limit_s = time_limit(t);
        o.stop.patience = t.integer("patience");
        o.marginal_target = t.positive("marginal_target");
        o.inner_tolerance_start = t.positive("inner_tolerance_start");
        o.max_outer = t.integer("max_outer");
        o.change_tolerance = t.positive("change_tolerance");
        o.relaxation = t.positive("relaxation");
        o.oscillation_patience = t.integer("oscillation_patience");
        if (o.relaxation > 1.0) throw ConfigError("config.twostage.relaxation: must lie in (0, 1]");
        t.finish();
    }
    top.finish();

    config.calibration.sinkhorn = config.sinkhorn;
    config.twostage.beta = config.beta;
    config.twostage.sinkhorn = config.sinkhorn;
    config.twostage.ugm = config.ugm;
    config.twostage.assignment_stop = config.assign_stop;
    return config;
}

void bind_schema(RunConfig& config, int edge_count) {
    auto check = [&](int link, const std::string& where) {
        if (link < 1 || link > edge_count)
            throw ConfigError(where + ": link " + std::to_string(link) + " outside 1.." + std::to_string(edge_count));
        return static_cast<std::size_t>(link - 1);
    };
    auto& schema = config.schema;
    for (std::size_t b = 0; b < schema.networks.size(); ++b) {
        auto& mask = schema.networks[b].edge_mask;
        mask.clear();
        if (!config.network_links[b]) continue;
        mask.assign(static_cast<std::size_t>(edge_count), 0);
        for (int link : *config.network_links[b]) mask[check(link, "network '" + schema.networks[b].name + "'")] = 1;
    }
    for (std::size_t k = 0; k < schema.vehicle_types.size(); ++k) {
        auto& s = schema.vehicle_types[k].surcharge;
        s.clear();
        if (config.surcharge_links[k].empty()) continue;
        s.assign(static_cast<std::size_t>(edge_count), ConstantSurcharge{});
        for (const auto& [link, value] : config.surcharge_links[k])
            s[check(link, "vehicle type '" + schema.vehicle_types[k].name + "' surcharge")] = value;
    }
    schema.validate(edge_count);
}

}  // namespace tflow::cli
