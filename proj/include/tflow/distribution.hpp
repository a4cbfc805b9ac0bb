#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tflow/demand.hpp"
#include "tflow/schema.hpp"

namespace tflow {

/// Per-(user type, pair) generalized costs T-bar, laid out like CorrespondenceMatrix::values.
/// +inf marks a pair the type cannot travel.
using OdCosts = std::vector<std::vector<double>>;

struct SinkhornOptions {
    /// Stop when the L1 row + column residual divided by the total mass falls to this level.
    double tolerance = 1e-10;
    int max_sweeps = 100000;
    int threads = 1;
    /// When false, running out of sweeps returns the last iterate with converged = false
    /// instead of throwing.
    bool strict = true;
};

/// Log-domain scalings: d = exp(-beta T-bar + row[block][origin] + column[destination]).
struct SinkhornPotentials {
    std::vector<std::vector<double>> row;
    std::vector<double> column;
};

struct SinkhornResult {
    CorrespondenceMatrix d;
    SinkhornPotentials potentials;
    /// min over d in (l, w) of sum beta d T-bar + sum d ln d, from the potentials.
    double value = 0.0;
    double residual = 0.0;  // L1 rows + columns, absolute
    int sweeps = 0;
    bool converged = false;
};

/// Block Sinkhorn balancing: one row scaling per (row block, origin), one column scaling shared
/// by every layer and user type. `beta` holds one value per layer. Unreachable pairs stay at 0.
/// `warm` (same shapes) seeds the potentials.
SinkhornResult sinkhorn(const OdSet& od, const Marginals& marginals, const DemandSchema& schema,
                        const OdCosts& costs, std::span<const double> beta, const SinkhornOptions& options = {},
                        const SinkhornPotentials* warm = nullptr);

/// sum_t beta^{r(t)} sum_p d T-bar + sum d ln d, with 0 ln 0 = 0.
double entropy_objective(const CorrespondenceMatrix& d, const OdCosts& costs, const DemandSchema& schema,
                         std::span<const double> beta);

/// Demand-weighted mean OD cost of each layer. Throws DataError for a layer without mass.
std::vector<double> mean_cost(const CorrespondenceMatrix& d, const OdCosts& costs, const DemandSchema& schema);

struct CalibrationOptions {
    double lower = 1e-6;   // beta bracket
    double upper = 1e3;
    double tolerance = 1e-8;  // on |C(beta) - target|, in cost units
    int max_bisections = 200;
    int max_rounds = 50;  // layer-wise sweeps towards the joint fixed point
    SinkhornOptions sinkhorn;
};

struct CalibrationResult {
    std::vector<double> beta;
    std::vector<double> mean_cost;
    std::vector<double> residual;  // achieved C(beta) - target per layer, 0 for layers without target
    int rounds = 0;
    bool converged = false;
};

/// Per-layer bisection on beta -> mean cost, repeated layer by layer until every targeted layer
/// is within tolerance. Layers without a target keep their entry of `initial_beta`.
CalibrationResult calibrate_beta(const OdSet& od, const Marginals& marginals, const DemandSchema& schema,
                                 const OdCosts& costs, std::span<const std::optional<double>> targets,
                                 std::span<const double> initial_beta, const CalibrationOptions& options = {});

}  // namespace tflow
