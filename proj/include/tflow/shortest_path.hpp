#pragma once

#include <span>
#include <vector>

#include "tflow/network.hpp"

namespace tflow {

/// One shortest-path tree. `predecessor_edge[v]` is -1 for the origin and unreachable nodes;
/// `settle_order` lists reached nodes by non-decreasing distance.
struct ShortestPathResult {
    int origin = -1;
    std::vector<double> distance;
    std::vector<int> predecessor_edge;
    std::vector<int> settle_order;
};

/// Dijkstra from `origin` over edges with `usable[e] != 0` (empty mask: all) and finite cost.
/// Equal-cost predecessors resolve to the smallest edge id. Costs must be >= 0.
void shortest_paths(const Network& net, std::span<const double> cost, std::span<const char> usable, int origin,
                    ShortestPathResult& out);

ShortestPathResult shortest_paths(const Network& net, std::span<const double> cost, std::span<const char> usable,
                                  int origin);

/// All-or-nothing loading of `node_demand` (per node) from the tree origin; adds into `edge_flow`.
/// Throws InfeasibleError for positive demand at an unreachable node.
void assign_tree_flows(const Network& net, const ShortestPathResult& tree, std::span<const double> node_demand,
                       std::span<double> edge_flow);

}  // namespace tflow
