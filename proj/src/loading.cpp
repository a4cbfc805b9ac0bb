#include "tflow/loading.hpp"

#include <cmath>
#include <limits>

#include "tflow/error.hpp"
#include "tflow/mode_choice.hpp"
#include "tflow/parallel.hpp"

namespace tflow {

DualLayout::DualLayout(const Network& net, const DemandSchema& schema) {
    index_.assign(static_cast<std::size_t>(schema.network_count()),
                  std::vector<int>(static_cast<std::size_t>(net.edge_count()), -1));
    for (int b = 0; b < schema.network_count(); ++b) {
        for (int e = 0; e < net.edge_count(); ++e) {
            if (!schema.networks[static_cast<std::size_t>(b)].contains(e)) continue;
            index_[static_cast<std::size_t>(b)][static_cast<std::size_t>(e)] = size();
            network_.push_back(b);
            edge_.push_back(e);
            models_.push_back(schema.edge_model(net, b, e));
        }
    }
}

std::vector<double> DualLayout::free_flow_times() const {
    std::vector<double> t;
    t.reserve(models_.size());
    for (const auto& m : models_) t.push_back(dual_floor(m));
    return t;
}

bool DualLayout::has_stable_dynamics() const {
    for (const auto& m : models_)
        if (std::holds_alternative<StableDynamics>(m)) return true;
    return false;
}

NetworkLoader::NetworkLoader(const Network& net, const DemandSchema& schema, const OdSet& od, double gamma,
                             int threads)
    : net_(&net), schema_(&schema), od_(&od), gamma_(gamma), threads_(threads), layout_(net, schema) {
    schema.validate(net.edge_count());
    if (gamma < 0.0) throw ConfigError("mode-choice smoothing must be >= 0");
    const int nk = schema.vehicle_type_count();
    usable_.resize(static_cast<std::size_t>(nk));
    mode_users_.resize(static_cast<std::size_t>(nk));
    for (int k = 0; k < nk; ++k) {
        auto& mask = usable_[static_cast<std::size_t>(k)];
        mask.resize(static_cast<std::size_t>(net.edge_count()));
        for (int e = 0; e < net.edge_count(); ++e) mask[static_cast<std::size_t>(e)] = schema.usable(k, e);
    }
    for (int t = 0; t < schema.user_type_count(); ++t) {
        const auto& modes = schema.user_types[static_cast<std::size_t>(t)].modes;
        for (std::size_t m = 0; m < modes.size(); ++m)
            mode_users_[static_cast<std::size_t>(modes[m])].emplace_back(t, static_cast<int>(m));
    }
}

std::vector<std::vector<double>> NetworkLoader::vehicle_times(std::span<const double> dual_times) const {
    const int nk = schema_->vehicle_type_count();
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(nk));
    for (int k = 0; k < nk; ++k) {
        const int b = schema_->vehicle_types[static_cast<std::size_t>(k)].network;
        auto& times = out[static_cast<std::size_t>(k)];
        times.assign(static_cast<std::size_t>(net_->edge_count()), inf);
        for (int e = 0; e < net_->edge_count(); ++e) {
            if (!usable_[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)]) continue;
            times[static_cast<std::size_t>(e)] =
                dual_times[static_cast<std::size_t>(layout_.index(b, e))] + schema_->surcharge(k, e).value;
        }
    }
    return out;
}

void NetworkLoader::skim(std::span<const double> dual_times, Skim& out) const {
    const int nk = schema_->vehicle_type_count();
    const int no = static_cast<int>(od_->origins().size());
    const auto times = vehicle_times(dual_times);

    out.trees.resize(static_cast<std::size_t>(nk));
    for (auto& t : out.trees) t.resize(static_cast<std::size_t>(no));
    parallel_for(nk * no, threads_, [&](int job) {
        const int k = job / no;
        const int o = job % no;
        shortest_paths(*net_, times[static_cast<std::size_t>(k)], usable_[static_cast<std::size_t>(k)],
                       od_->origins()[static_cast<std::size_t>(o)],
                       out.trees[static_cast<std::size_t>(k)][static_cast<std::size_t>(o)]);
    });

    const int np = od_->size();
    out.mode_cost.assign(static_cast<std::size_t>(nk), std::vector<double>(static_cast<std::size_t>(np)));
    for (int k = 0; k < nk; ++k)
        for (int p = 0; p < np; ++p) {
            const auto& tree = out.trees[static_cast<std::size_t>(k)][static_cast<std::size_t>(od_->origin_index(p))];
            out.mode_cost[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] =
                tree.distance[static_cast<std::size_t>(od_->pairs()[static_cast<std::size_t>(p)].destination)];
        }

    const int nt = schema_->user_type_count();
    out.od_cost.assign(static_cast<std::size_t>(nt), std::vector<double>(static_cast<std::size_t>(np)));
    out.mode_weight.resize(static_cast<std::size_t>(nt));
    std::vector<double> costs;
    for (int t = 0; t < nt; ++t) {
        const auto& modes = schema_->user_types[static_cast<std::size_t>(t)].modes;
        const std::size_t z = modes.size();
        auto& weights = out.mode_weight[static_cast<std::size_t>(t)];
        weights.assign(z * static_cast<std::size_t>(np), 0.0);
        costs.resize(z);
        for (int p = 0; p < np; ++p) {
            for (std::size_t m = 0; m < z; ++m)
                costs[m] = out.mode_cost[static_cast<std::size_t>(modes[m])][static_cast<std::size_t>(p)];
            out.od_cost[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] = min_cost_over_modes(
                costs, gamma_, std::span<double>(weights).subspan(static_cast<std::size_t>(p) * z, z));
        }
    }
}

void NetworkLoader::load(const Skim& skim, const CorrespondenceMatrix& demand, Loading& out) const {
    const int nk = schema_->vehicle_type_count();
    const int nt = schema_->user_type_count();
    const int no = static_cast<int>(od_->origins().size());
    const int np = od_->size();
    const auto ne = static_cast<std::size_t>(net_->edge_count());

    out.transport_cost = 0.0;
    out.mode_demand.resize(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        const auto& d = demand.values[static_cast<std::size_t>(t)];
        const auto& w = skim.mode_weight[static_cast<std::size_t>(t)];
        const std::size_t z = schema_->user_types[static_cast<std::size_t>(t)].modes.size();
        auto& x = out.mode_demand[static_cast<std::size_t>(t)];
        x.assign(w.size(), 0.0);
        for (int p = 0; p < np; ++p) {
            const double dp = d[static_cast<std::size_t>(p)];
            if (dp == 0.0) continue;
            const double cost = skim.od_cost[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            if (!std::isfinite(cost)) {
                const auto& pair = od_->pairs()[static_cast<std::size_t>(p)];
                throw InfeasibleError("user type '" + schema_->user_types[static_cast<std::size_t>(t)].name +
                                      "' has demand from node " + std::to_string(pair.origin + 1) + " to node " +
                                      std::to_string(pair.destination + 1) + " but no usable mode reaches it");
            }
            out.transport_cost += dp * cost;
            for (std::size_t m = 0; m < z; ++m)
                x[static_cast<std::size_t>(p) * z + m] = dp * w[static_cast<std::size_t>(p) * z + m];
        }
    }

    out.origin_flow.resize(static_cast<std::size_t>(nk));
    for (auto& per_k : out.origin_flow) per_k.resize(static_cast<std::size_t>(no));
    parallel_for(nk * no, threads_, [&](int job) {
        const int k = job / no;
        const int o = job % no;
        auto& flow = out.origin_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(o)];
        flow.assign(ne, 0.0);
        std::vector<double> node_demand(static_cast<std::size_t>(net_->node_count()), 0.0);
        bool any = false;
        const auto [first, last] = od_->pair_range(o);
        for (int p = first; p < last; ++p) {
            double v = 0.0;
            for (const auto& [t, m] : mode_users_[static_cast<std::size_t>(k)]) {
                const std::size_t z = schema_->user_types[static_cast<std::size_t>(t)].modes.size();
                v += out.mode_demand[static_cast<std::size_t>(t)][static_cast<std::size_t>(p) * z + static_cast<std::size_t>(m)];
            }
            if (v != 0.0) {
                node_demand[static_cast<std::size_t>(od_->pairs()[static_cast<std::size_t>(p)].destination)] += v;
                any = true;
            }
        }
        if (!any) return;
        try {
            assign_tree_flows(*net_, skim.trees[static_cast<std::size_t>(k)][static_cast<std::size_t>(o)], node_demand,
                              flow);
        } catch (const InfeasibleError& err) {
            const auto& vt = schema_->vehicle_types[static_cast<std::size_t>(k)];
            throw InfeasibleError(std::string(err.what()) + " on network '" +
                                  schema_->networks[static_cast<std::size_t>(vt.network)].name + "' (vehicle type '" +
                                  vt.name + "')");
        }
    });

    out.vehicle_flow.assign(static_cast<std::size_t>(nk), std::vector<double>(ne, 0.0));
    for (int k = 0; k < nk; ++k) {
        auto& total = out.vehicle_flow[static_cast<std::size_t>(k)];
        for (int o = 0; o < no; ++o) {
            const auto& f = out.origin_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(o)];
            for (std::size_t e = 0; e < ne; ++e) total[e] += f[e];
        }
    }
    out.dual_flow.assign(static_cast<std::size_t>(layout_.size()), 0.0);
    for (int k = 0; k < nk; ++k) {
        const int b = schema_->vehicle_types[static_cast<std::size_t>(k)].network;
        for (std::size_t e = 0; e < ne; ++e) {
            const double f = out.vehicle_flow[static_cast<std::size_t>(k)][e];
            if (f != 0.0) out.dual_flow[static_cast<std::size_t>(layout_.index(b, static_cast<int>(e)))] += f;
        }
    }
}

double NetworkLoader::surcharge_cost(const std::vector<std::vector<double>>& vehicle_flow) const {
    double s = 0.0;
    for (int k = 0; k < schema_->vehicle_type_count(); ++k)
        for (int e = 0; e < net_->edge_count(); ++e) {
            const double f = vehicle_flow[static_cast<std::size_t>(k)][static_cast<std::size_t>(e)];
            if (f != 0.0) s += schema_->surcharge(k, e).value * f;
        }
    return s;
}

}  // namespace tflow
