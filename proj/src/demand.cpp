#include "tflow/demand.hpp"

#include <algorithm>
#include <cmath>

#include "tflow/error.hpp"

namespace tflow {

OdSet::OdSet(std::vector<OdPair> pairs) : pairs_(std::move(pairs)) {
    std::sort(pairs_.begin(), pairs_.end());
    pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());
    for (const auto& p : pairs_) {
        if (origins_.empty() || origins_.back() != p.origin) origins_.push_back(p.origin);
        destinations_.push_back(p.destination);
    }
    std::sort(destinations_.begin(), destinations_.end());
    destinations_.erase(std::unique(destinations_.begin(), destinations_.end()), destinations_.end());
    origin_offsets_.push_back(0);
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
        if (p + 1 == pairs_.size() || pairs_[p + 1].origin != pairs_[p].origin)
            origin_offsets_.push_back(static_cast<int>(p) + 1);
        const auto it = std::lower_bound(destinations_.begin(), destinations_.end(), pairs_[p].destination);
        pair_destination_.push_back(static_cast<int>(it - destinations_.begin()));
    }
    pair_origin_.assign(pairs_.size(), 0);
    for (std::size_t o = 0; o + 1 < origin_offsets_.size(); ++o)
        for (int p = origin_offsets_[o]; p < origin_offsets_[o + 1]; ++p)
            pair_origin_[static_cast<std::size_t>(p)] = static_cast<int>(o);
}

int OdSet::find(OdPair pair) const {
    const auto it = std::lower_bound(pairs_.begin(), pairs_.end(), pair);
    if (it == pairs_.end() || *it != pair) return -1;
    return static_cast<int>(it - pairs_.begin());
}

double CorrespondenceMatrix::total() const {
    double s = 0.0;
    for (const auto& row : values)
        for (double v : row) s += v;
    return s;
}

Demand build_demand(const RawDemand& raw, const DemandSchema& schema, OdSupport support) {
    std::map<int, double> row_sum, col_sum;
    double total = 0.0;
    for (const auto& [key, v] : raw) {
        if (v < 0.0) throw DataError("negative demand");
        if (v == 0.0) continue;
        row_sum[key.first] += v;
        col_sum[key.second] += v;
        total += v;
    }

    std::vector<OdPair> pairs;
    if (support == OdSupport::Observed) {
        for (const auto& [key, v] : raw)
            if (v > 0.0) pairs.push_back({key.first, key.second});
    } else {
        for (const auto& [i, _] : row_sum)
            for (const auto& [j, __] : col_sum)
                if (i != j || raw.count({i, j})) pairs.push_back({i, j});
    }

    Demand out;
    out.od = OdSet(std::move(pairs));
    out.total = total;
    const int n_types = schema.user_type_count();
    out.fixed = CorrespondenceMatrix::zeros(n_types, out.od.size());

    auto type_share = [&](int t) {
        const auto& ut = schema.user_types[static_cast<std::size_t>(t)];
        const auto& layer = schema.layers[static_cast<std::size_t>(ut.layer)];
        return layer.share * ut.share.value_or(1.0 / static_cast<double>(layer.user_types.size()));
    };
    for (const auto& [key, v] : raw) {
        const int p = out.od.find({key.first, key.second});
        if (p < 0 || v == 0.0) continue;
        for (int t = 0; t < n_types; ++t) out.fixed.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] = v * type_share(t);
    }

    const auto origins = out.od.origins();
    for (int r = 0; r < schema.layer_count(); ++r) {
        const auto& layer = schema.layers[static_cast<std::size_t>(r)];
        auto block_for = [&](std::vector<int> types, double share) {
            RowBlock b;
            b.layer = r;
            b.user_types = std::move(types);
            for (int i : origins) b.mass.push_back(row_sum[i] * share);
            out.marginals.rows.push_back(std::move(b));
        };
        if (schema.layer_has_fixed_type_shares(r)) {
            for (int t : layer.user_types)
                block_for({t}, layer.share * *schema.user_types[static_cast<std::size_t>(t)].share);
        } else {
            block_for(layer.user_types, layer.share);
        }
    }
    for (int j : out.od.destinations()) out.marginals.columns.push_back(col_sum[j]);
    return out;
}

Demand normalize_demand(const RawDemand& raw, const DemandSchema& schema, OdSupport support) {
    Demand d = build_demand(raw, schema, support);
    if (!(d.total > 0.0)) throw DataError("total demand is zero; nothing to normalize");
    const double inv = 1.0 / d.total;
    for (auto& row : d.fixed.values)
        for (double& v : row) v *= inv;
    for (auto& b : d.marginals.rows)
        for (double& v : b.mass) v *= inv;
    for (double& v : d.marginals.columns) v *= inv;
    return d;
}

double marginal_residual(const CorrespondenceMatrix& d, const OdSet& od, const Marginals& marginals) {
    double residual = 0.0;
    std::vector<double> col(marginals.columns.size(), 0.0);
    for (const auto& block : marginals.rows) {
        for (std::size_t o = 0; o < block.mass.size(); ++o) {
            const auto [first, last] = od.pair_range(static_cast<int>(o));
            double s = 0.0;
            for (int t : block.user_types)
                for (int p = first; p < last; ++p) s += d.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            residual += std::abs(s - block.mass[o]);
        }
    }
    for (std::size_t t = 0; t < d.values.size(); ++t)
        for (int p = 0; p < od.size(); ++p) col[static_cast<std::size_t>(od.destination_index(p))] += d.values[t][static_cast<std::size_t>(p)];
    for (std::size_t j = 0; j < col.size(); ++j) residual += std::abs(col[j] - marginals.columns[j]);
    return residual;
}

}  // namespace tflow
