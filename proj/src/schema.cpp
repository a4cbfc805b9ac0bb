#include "tflow/schema.hpp"

#include <cmath>
#include <set>

#include "tflow/error.hpp"

namespace tflow {
namespace {

bool near_one(double s) { return std::abs(s - 1.0) <= 1e-9; }

}  // namespace

DemandSchema DemandSchema::single_class(CostModelKind model) {
    DemandSchema s;
    s.networks.push_back({"road", model, {}, std::nullopt, std::nullopt});
    s.vehicle_types.push_back({"car", 0, {}});
    s.user_types.push_back({"all", 0, {0}, std::nullopt});
    s.layers.push_back({"all", 1.0, {0}});
    return s;
}

void DemandSchema::validate(int edge_count) const {
    if (layers.empty()) throw ConfigError("schema has no demand layers");
    if (networks.empty()) throw ConfigError("schema has no networks");
    for (const auto& b : networks) {
        if (!b.edge_mask.empty() && static_cast<int>(b.edge_mask.size()) != edge_count)
            throw ConfigError("network '" + b.name + "' edge mask size does not match the graph");
        if (b.mu && !(*b.mu > 0.0)) throw ConfigError("network '" + b.name + "': mu must be positive");
        if (b.zeta && !(*b.zeta > 0.0)) throw ConfigError("network '" + b.name + "': zeta must be positive");
    }
    for (const auto& k : vehicle_types) {
        if (k.network < 0 || k.network >= network_count())
            throw ConfigError("vehicle type '" + k.name + "' refers to an unknown network");
        if (!k.surcharge.empty() && static_cast<int>(k.surcharge.size()) != edge_count)
            throw ConfigError("vehicle type '" + k.name + "' surcharge size does not match the graph");
        for (const auto& c : k.surcharge) tflow::validate(LinkCostModel{c});
    }
    for (std::size_t t = 0; t < user_types.size(); ++t) {
        const auto& ut = user_types[t];
        if (ut.modes.empty()) throw ConfigError("user type '" + ut.name + "' has no modes");
        std::set<int> seen;
        for (int k : ut.modes) {
            if (k < 0 || k >= vehicle_type_count())
                throw ConfigError("user type '" + ut.name + "' refers to an unknown vehicle type");
            if (!seen.insert(k).second) throw ConfigError("user type '" + ut.name + "' lists a mode twice");
        }
        if (ut.layer < 0 || ut.layer >= layer_count())
            throw ConfigError("user type '" + ut.name + "' refers to an unknown layer");
    }
    double layer_total = 0.0;
    std::vector<int> owner(user_types.size(), -1);
    for (std::size_t r = 0; r < layers.size(); ++r) {
        const auto& layer = layers[r];
        if (layer.user_types.empty()) throw ConfigError("layer '" + layer.name + "' has no user types");
        if (!(layer.share >= 0.0)) throw ConfigError("layer '" + layer.name + "' has a negative share");
        layer_total += layer.share;
        int with_share = 0;
        double type_total = 0.0;
        for (int t : layer.user_types) {
            if (t < 0 || t >= user_type_count())
                throw ConfigError("layer '" + layer.name + "' refers to an unknown user type");
            const auto& ut = user_types[static_cast<std::size_t>(t)];
            if (ut.layer != static_cast<int>(r) || owner[static_cast<std::size_t>(t)] != -1)
                throw ConfigError("user type '" + ut.name + "' must belong to exactly one layer");
            owner[static_cast<std::size_t>(t)] = static_cast<int>(r);
            if (ut.share) {
                if (!(*ut.share >= 0.0)) throw ConfigError("user type '" + ut.name + "' has a negative share");
                ++with_share;
                type_total += *ut.share;
            }
        }
        if (with_share != 0 && with_share != static_cast<int>(layer.user_types.size()))
            throw ConfigError("layer '" + layer.name + "': either every user type has a share or none does");
        if (with_share != 0 && !near_one(type_total))
            throw ConfigError("layer '" + layer.name + "': user type shares sum to " + std::to_string(type_total) +
                              ", expected 1");
    }
    for (std::size_t t = 0; t < owner.size(); ++t)
        if (owner[t] == -1) throw ConfigError("user type '" + user_types[t].name + "' is not listed by its layer");
    if (!near_one(layer_total))
        throw ConfigError("layer shares sum to " + std::to_string(layer_total) + ", expected 1");
}

bool DemandSchema::layer_has_fixed_type_shares(int layer) const {
    for (int t : layers[static_cast<std::size_t>(layer)].user_types)
        if (!user_types[static_cast<std::size_t>(t)].share) return false;
    return true;
}

LinkCostModel DemandSchema::edge_model(const Network& net, int b, int e) const {
    const auto& nb = networks[static_cast<std::size_t>(b)];
    const Edge& ed = net.edge(e);
    const double mu = nb.mu.value_or(ed.mu);
    const double zeta = nb.zeta.value_or(ed.zeta);
    switch (nb.model) {
        case CostModelKind::Bpr:
            return Bpr{ed.free_flow_time, ed.capacity, zeta, mu};
        case CostModelKind::BprOuterExponent:
            return BprOuterExponent{ed.free_flow_time, ed.capacity, zeta, mu};
        case CostModelKind::StableDynamics:
            return StableDynamics{ed.free_flow_time, ed.capacity};
    }
    return Bpr{ed.free_flow_time, ed.capacity, zeta, mu};
}

}  // namespace tflow
