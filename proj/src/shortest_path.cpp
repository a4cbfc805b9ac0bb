#include "tflow/shortest_path.hpp"

#include <cmath>
#include <limits>
#include <queue>

#include "tflow/error.hpp"

namespace tflow {

void shortest_paths(const Network& net, std::span<const double> cost, std::span<const char> usable, int origin,
                    ShortestPathResult& out) {
    const auto n = static_cast<std::size_t>(net.node_count());
    constexpr double inf = std::numeric_limits<double>::infinity();
    out.origin = origin;
    out.distance.assign(n, inf);
    out.predecessor_edge.assign(n, -1);
    out.settle_order.clear();
    std::vector<char> settled(n, 0);

    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    out.distance[static_cast<std::size_t>(origin)] = 0.0;
    heap.emplace(0.0, origin);
    while (!heap.empty()) {
        const auto [du, u] = heap.top();
        heap.pop();
        const auto uu = static_cast<std::size_t>(u);
        if (settled[uu]) continue;
        settled[uu] = 1;
        out.settle_order.push_back(u);
        // Zone centroids are not passed through.
        if (u != origin && u < net.first_thru_node()) continue;
        for (int e : net.out_edges(u)) {
            const auto ee = static_cast<std::size_t>(e);
            if (!usable.empty() && !usable[ee]) continue;
            const double c = cost[ee];
            if (!std::isfinite(c)) continue;
            const int v = net.edge(e).head;
            const auto vv = static_cast<std::size_t>(v);
            if (settled[vv]) continue;
            const double nd = du + c;
            if (nd < out.distance[vv]) {
                out.distance[vv] = nd;
                out.predecessor_edge[vv] = e;
                heap.emplace(nd, v);
            } else if (nd == out.distance[vv] && e < out.predecessor_edge[vv]) {
                out.predecessor_edge[vv] = e;
            }
        }
    }
}

ShortestPathResult shortest_paths(const Network& net, std::span<const double> cost, std::span<const char> usable,
                                  int origin) {
    ShortestPathResult r;
    shortest_paths(net, cost, usable, origin, r);
    return r;
}

void assign_tree_flows(const Network& net, const ShortestPathResult& tree, std::span<const double> node_demand,
                       std::span<double> edge_flow) {
    std::vector<double> subtree(node_demand.begin(), node_demand.end());
    for (std::size_t v = 0; v < subtree.size(); ++v) {
        if (subtree[v] > 0.0 && !std::isfinite(tree.distance[v]))
            throw InfeasibleError("demand from node " + std::to_string(tree.origin + 1) + " to node " +
                                  std::to_string(v + 1) + " cannot be routed");
    }
    for (auto it = tree.settle_order.rbegin(); it != tree.settle_order.rend(); ++it) {
        const auto v = static_cast<std::size_t>(*it);
        const int e = tree.predecessor_edge[v];
        if (e < 0 || subtree[v] == 0.0) continue;
        edge_flow[static_cast<std::size_t>(e)] += subtree[v];
        subtree[static_cast<std::size_t>(net.edge(e).tail)] += subtree[v];
    }
}

}  // namespace tflow
