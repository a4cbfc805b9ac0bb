#pragma once

#include <span>
#include <vector>

#include "tflow/demand.hpp"
#include "tflow/network.hpp"
#include "tflow/schema.hpp"
#include "tflow/shortest_path.hpp"

namespace tflow {

/// Indexing of the shared-network dual times t_{e,b}: one entry per (network b, edge e in b).
class DualLayout {
public:
    DualLayout() = default;
    DualLayout(const Network& net, const DemandSchema& schema);

    int size() const noexcept { return static_cast<int>(network_.size()); }
    int network(int i) const { return network_[static_cast<std::size_t>(i)]; }
    int edge(int i) const { return edge_[static_cast<std::size_t>(i)]; }
    const LinkCostModel& model(int i) const { return models_[static_cast<std::size_t>(i)]; }
    /// Entry for (b, e), or -1 when e is not part of b.
    int index(int b, int e) const { return index_[static_cast<std::size_t>(b)][static_cast<std::size_t>(e)]; }

    /// t-bar per entry: the lower end of the dual domain.
    std::vector<double> free_flow_times() const;
    bool has_stable_dynamics() const;

private:
    std::vector<int> network_;
    std::vector<int> edge_;
    std::vector<LinkCostModel> models_;
    std::vector<std::vector<int>> index_;
};

/// Shortest-path skim at given dual times.
struct Skim {
    std::vector<std::vector<ShortestPathResult>> trees;  // [k][origin index]
    std::vector<std::vector<double>> mode_cost;          // T^k per pair: [k][p]
    std::vector<std::vector<double>> od_cost;            // T-bar^t per pair: [t][p]
    std::vector<std::vector<double>> mode_weight;        // [t][p * |Z(t)| + m]
};

/// Result of routing a correspondence matrix along a skim.
struct Loading {
    std::vector<std::vector<double>> vehicle_flow;              // f_e^k: [k][e]
    std::vector<double> dual_flow;                              // f_{e,b} per DualLayout entry
    std::vector<std::vector<std::vector<double>>> origin_flow;  // [k][origin index][e]
    std::vector<std::vector<double>> mode_demand;               // d * weight: [t][p * |Z(t)| + m]
    double transport_cost = 0.0;                                // sum d T-bar
};

/// Shortest-path / all-or-nothing oracle shared by the solvers. Immutable after construction;
/// per-origin work runs on `threads` workers and is reduced in fixed origin order.
class NetworkLoader {
public:
    NetworkLoader(const Network& net, const DemandSchema& schema, const OdSet& od, double gamma = 0.0,
                  int threads = 1);

    const Network& network() const noexcept { return *net_; }
    const DemandSchema& schema() const noexcept { return *schema_; }
    const OdSet& od() const noexcept { return *od_; }
    const DualLayout& layout() const noexcept { return layout_; }
    double gamma() const noexcept { return gamma_; }
    int threads() const noexcept { return threads_; }

    /// Total time t_e^k for every vehicle type (inf where k may not travel).
    std::vector<std::vector<double>> vehicle_times(std::span<const double> dual_times) const;

    void skim(std::span<const double> dual_times, Skim& out) const;

    /// Throws InfeasibleError naming the pair when positive demand has no usable mode/path.
    void load(const Skim& skim, const CorrespondenceMatrix& demand, Loading& out) const;

    /// Sum of c_e^k f_e^k over vehicle types.
    double surcharge_cost(const std::vector<std::vector<double>>& vehicle_flow) const;

private:
    const Network* net_;
    const DemandSchema* schema_;
    const OdSet* od_;
    double gamma_;
    int threads_;
    DualLayout layout_;
    std::vector<std::vector<char>> usable_;                     // [k][e]
    std::vector<std::vector<std::pair<int, int>>> mode_users_;  // [k] -> (t, m) with Z(t)[m] == k
};

}  // namespace tflow
