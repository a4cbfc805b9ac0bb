#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tflow/network.hpp"

namespace tflow {

struct TntpNetworkOptions {
    /// Replacement free-flow time for rows with time 0 and no usable length/speed.
    double epsilon_time = 1e-6;
};

/// Parses a `_net.tntp` file. Node ids become 0-based; `power` is stored as mu = 1/power.
Network parse_tntp_network(std::string_view text, const TntpNetworkOptions& options = {});

/// Demand read from a `_trips.tntp` file. Keys are 0-based (origin, destination); zeros omitted.
struct TripTable {
    int zone_count = 0;
    double declared_total = 0.0;
    std::map<std::pair<int, int>, double> entries;
    std::vector<std::string> warnings;

    double total() const;
};

TripTable parse_tntp_trips(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace tflow
