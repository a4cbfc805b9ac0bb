#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tflow/costs.hpp"

namespace tflow {

/// Directed link. Nodes are 0-based; the TNTP parser converts from the 1-based file ids.
struct Edge {
    int tail = 0;
    int head = 0;
    double free_flow_time = 1.0;
    double capacity = 1.0;
    double zeta = 1.0;
    double mu = 0.25;
    double length = 0.0;
    double speed = 0.0;
};

/// Immutable road graph with forward adjacency in edge-id order.
class Network {
public:
    Network() = default;
    /// Nodes below `first_thru_node` are zone centroids that paths may start or end at
    /// but never pass through (TNTP convention). Throws StructuralError/DataError.
    Network(int node_count, std::vector<Edge> edges, int first_thru_node = 0);

    int node_count() const noexcept { return node_count_; }
    int edge_count() const noexcept { return static_cast<int>(edges_.size()); }
    int first_thru_node() const noexcept { return first_thru_node_; }
    const Edge& edge(int e) const { return edges_[static_cast<std::size_t>(e)]; }
    std::span<const Edge> edges() const noexcept { return edges_; }

    /// Edge ids leaving `node`, ascending.
    std::span<const int> out_edges(int node) const;

    /// Copy with every capacity multiplied by `factor` (used to work on unit-mass demand).
    Network with_capacity_scale(double factor) const;

private:
    int node_count_ = 0;
    int first_thru_node_ = 0;
    std::vector<Edge> edges_;
    std::vector<int> offsets_;
    std::vector<int> adjacency_;
};

}  // namespace tflow
