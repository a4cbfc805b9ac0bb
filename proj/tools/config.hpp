#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tflow/assignment.hpp"
#include "tflow/demand.hpp"
#include "tflow/distribution.hpp"
#include "tflow/schema.hpp"
#include "tflow/twostage.hpp"

namespace tflow::cli {

enum class AssignSolver { Ugm, FrankWolfe };
enum class TwoStageSolver { Saddle, Alternation };

struct RunConfig {
    std::filesystem::path network;  // empty when not given
    std::filesystem::path trips;
    std::filesystem::path od_costs;  // optional OD cost table for distribute / calibrate
    double epsilon_time = 1e-6;
    std::optional<OdSupport> od_support;  // unset: observed for assign, all otherwise
    double gamma = 0.0;

    DemandSchema schema;  // edge masks and surcharges filled by bind_schema
    std::vector<std::optional<std::vector<int>>> network_links;                   // 1-based links; unset: all
    std::vector<std::vector<std::pair<int, ConstantSurcharge>>> surcharge_links;  // per vehicle type
    std::vector<double> beta;                   // per layer
    std::vector<std::optional<double>> target;  // per layer

    AssignSolver assign_solver = AssignSolver::Ugm;
    StopCriteria assign_stop;
    UgmOptions ugm;

    SinkhornOptions sinkhorn;
    CalibrationOptions calibration;

    TwoStageSolver twostage_solver = TwoStageSolver::Saddle;
    TwoStageOptions twostage;
};

/// Every option with its default value.
nlohmann::json default_config();

/// Defaults overlaid with `user` (objects merged key by key, arrays replaced).
nlohmann::json merged_config(const nlohmann::json& user);

/// Validates a merged document and resolves paths against `base`. The schema is checked
/// against `edge_count` later, once the network is known.
RunConfig parse_config(const nlohmann::json& merged, const std::filesystem::path& base);

/// Reads a JSON config file. Throws ConfigError on syntax errors.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Turns the 1-based link lists into edge masks and surcharge vectors and validates the schema.
void bind_schema(RunConfig& config, int edge_count);

}  // namespace tflow::cli
