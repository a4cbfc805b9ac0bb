#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "tflow/schema.hpp"

namespace tflow {

struct OdPair {
    int origin;       // node id, 0-based
    int destination;  // node id, 0-based

    friend bool operator==(const OdPair&, const OdPair&) = default;
    friend auto operator<=>(const OdPair&, const OdPair&) = default;
};

/// Sorted set of OD pairs with origin / destination indexing.
class OdSet {
public:
    OdSet() = default;
    explicit OdSet(std::vector<OdPair> pairs);

    std::span<const OdPair> pairs() const noexcept { return pairs_; }
    int size() const noexcept { return static_cast<int>(pairs_.size()); }
    std::span<const int> origins() const noexcept { return origins_; }
    std::span<const int> destinations() const noexcept { return destinations_; }

    /// Index into origins() / destinations() of pair p.
    int origin_index(int p) const { return pair_origin_[static_cast<std::size_t>(p)]; }
    int destination_index(int p) const { return pair_destination_[static_cast<std::size_t>(p)]; }

    /// Pairs [first, last) leaving origins()[o].
    std::pair<int, int> pair_range(int o) const {
        return {origin_offsets_[static_cast<std::size_t>(o)], origin_offsets_[static_cast<std::size_t>(o) + 1]};
    }

    /// Pair index or -1.
    int find(OdPair pair) const;

private:
    std::vector<OdPair> pairs_;
    std::vector<int> origins_;
    std::vector<int> destinations_;
    std::vector<int> pair_origin_;
    std::vector<int> pair_destination_;
    std::vector<int> origin_offsets_;
};

/// d_ij^{rt}: values[t][p] for user type t and pair p.
struct CorrespondenceMatrix {
    std::vector<std::vector<double>> values;

    static CorrespondenceMatrix zeros(int user_types, int pairs) {
        return {std::vector<std::vector<double>>(static_cast<std::size_t>(user_types),
                                                 std::vector<double>(static_cast<std::size_t>(pairs), 0.0))};
    }
    double total() const;
};

/// Row marginal block: the user types whose demand from each origin sums to `mass`.
struct RowBlock {
    int layer = 0;
    std::vector<int> user_types;
    std::vector<double> mass;  // per OdSet origin index
};

/// Marginals d in (l, w): row blocks and the shared column masses w_j (per destination index).
struct Marginals {
    std::vector<RowBlock> rows;
    std::vector<double> columns;
};

enum class OdSupport {
    Observed,  // pairs with positive demand in the trip table
    All,       // every origin x destination pair with distinct nodes
};

/// Demand in the model's index structure. `total` is the physical total (1 after normalization
/// rescaling is undone by multiplying with it).
struct Demand {
    OdSet od;
    CorrespondenceMatrix fixed;  // d per user type; types without shares split their layer evenly
    Marginals marginals;
    double total = 0.0;
};

using RawDemand = std::map<std::pair<int, int>, double>;

/// Physical-unit demand (no normalization); zero total is allowed.
Demand build_demand(const RawDemand& raw, const DemandSchema& schema, OdSupport support = OdSupport::All);

/// As build_demand, scaled to total mass 1. Throws DataError on zero total.
Demand normalize_demand(const RawDemand& raw, const DemandSchema& schema, OdSupport support = OdSupport::All);

/// L1 residual of d against the marginals: rows + columns.
double marginal_residual(const CorrespondenceMatrix& d, const OdSet& od, const Marginals& marginals);

}  // namespace tflow
