#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tflow/costs.hpp"
#include "tflow/network.hpp"

namespace tflow {

enum class CostModelKind { Bpr, BprOuterExponent, StableDynamics };

/// A transport network b: the edges its vehicle class may use and how their time reacts to flow.
struct TransportNetwork {
    std::string name;
    CostModelKind model = CostModelKind::Bpr;
    std::vector<char> edge_mask;  // empty: every edge
    std::optional<double> mu;     // overrides the per-edge value
    std::optional<double> zeta;

    bool contains(int edge) const {
        return edge_mask.empty() || edge_mask[static_cast<std::size_t>(edge)] != 0;
    }
};

/// Vehicle type k; `network` is b(k). `surcharge` is c_e^k per edge (empty: zero everywhere).
struct VehicleType {
    std::string name;
    int network = 0;
    std::vector<ConstantSurcharge> surcharge;
};

/// User type t within a layer; `modes` is Z(t). `share` fixes the type's part of its layer's rows.
struct UserType {
    std::string name;
    int layer = 0;
    std::vector<int> modes;
    std::optional<double> share;
};

struct DemandLayer {
    std::string name;
    double share = 1.0;  // part of every origin's production assigned to this layer
    std::vector<int> user_types;
};

/// Index structure of the multistage model: layers r, user types t in M(r),
/// vehicle types k in Z(t), networks b with the partition {K_b} given by VehicleType::network.
class DemandSchema {
public:
    std::vector<DemandLayer> layers;
    std::vector<UserType> user_types;
    std::vector<VehicleType> vehicle_types;
    std::vector<TransportNetwork> networks;

    /// One layer, one user type, one vehicle type on one network over all edges.
    static DemandSchema single_class(CostModelKind model = CostModelKind::Bpr);

    /// Throws ConfigError on any broken invariant.
    void validate(int edge_count) const;

    int layer_count() const noexcept { return static_cast<int>(layers.size()); }
    int user_type_count() const noexcept { return static_cast<int>(user_types.size()); }
    int vehicle_type_count() const noexcept { return static_cast<int>(vehicle_types.size()); }
    int network_count() const noexcept { return static_cast<int>(networks.size()); }

    /// True when every type of `layer` carries a fixed share.
    bool layer_has_fixed_type_shares(int layer) const;

    /// Shared-network cost model of edge `e` on network `b`.
    LinkCostModel edge_model(const Network& net, int b, int e) const;

    ConstantSurcharge surcharge(int vehicle, int e) const {
        const auto& s = vehicle_types[static_cast<std::size_t>(vehicle)].surcharge;
        return s.empty() ? ConstantSurcharge{} : s[static_cast<std::size_t>(e)];
    }

    /// Whether vehicle type `k` may traverse edge `e` at all.
    bool usable(int vehicle, int e) const {
        const auto& vt = vehicle_types[static_cast<std::size_t>(vehicle)];
        return networks[static_cast<std::size_t>(vt.network)].contains(e) && !surcharge(vehicle, e).forbidden;
    }
};

}  // namespace tflow
