#include "tflow/network.hpp"

#include <cmath>

#include "tflow/error.hpp"

namespace tflow {

Network::Network(int node_count, std::vector<Edge> edges, int first_thru_node)
    : node_count_(node_count), first_thru_node_(first_thru_node), edges_(std::move(edges)) {
    if (node_count_ < 0) throw StructuralError("negative node count");
    offsets_.assign(static_cast<std::size_t>(node_count_) + 1, 0);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const Edge& ed = edges_[e];
        if (ed.tail < 0 || ed.tail >= node_count_ || ed.head < 0 || ed.head >= node_count_)
            throw StructuralError("edge " + std::to_string(e + 1) + " references a node outside [1, " +
                                  std::to_string(node_count_) + "]");
        auto positive = [&](double v, const char* what) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw DataError("edge " + std::to_string(e + 1) + " (" + std::to_string(ed.tail + 1) + "->" +
                                std::to_string(ed.head + 1) + "): " + what + " must be positive, got " +
                                std::to_string(v));
        };
        positive(ed.free_flow_time, "free-flow time");
        positive(ed.capacity, "capacity");
        positive(ed.zeta, "zeta");
        positive(ed.mu, "mu");
        ++offsets_[static_cast<std::size_t>(ed.tail) + 1];
    }
    for (std::size_t v = 0; v < static_cast<std::size_t>(node_count_); ++v) offsets_[v + 1] += offsets_[v];
    adjacency_.resize(edges_.size());
    std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t e = 0; e < edges_.size(); ++e)
        adjacency_[static_cast<std::size_t>(fill[static_cast<std::size_t>(edges_[e].tail)]++)] = static_cast<int>(e);
}

std::span<const int> Network::out_edges(int node) const {
    const auto begin = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(node)]);
    const auto end = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(node) + 1]);
    return std::span<const int>(adjacency_).subspan(begin, end - begin);
}

Network Network::with_capacity_scale(double factor) const {
    std::vector<Edge> scaled = edges_;
    for (Edge& e : scaled) e.capacity *= factor;
    return Network(node_count_, std::move(scaled), first_thru_node_);
}

}  // namespace tflow
