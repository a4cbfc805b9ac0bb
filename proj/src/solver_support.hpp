#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tflow/assignment.hpp"
#include "tflow/costs.hpp"
#include "tflow/loading.hpp"

// Pieces shared by the assignment and two-stage solvers.
namespace tflow::detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

inline double relative(double gap, double primal) {
    if (gap == 0.0) return 0.0;
    if (primal == 0.0) return kInf;
    return gap / std::abs(primal);
}

// Progress measure of a primal candidate: the larger of its relative gap and its capacity excess.
inline double merit(double primal, double dual, double violation) {
    if (!std::isfinite(primal)) return kInf;
    return std::max(relative(primal - dual, primal), violation);
}

// gamma * sum x ln(x / d) over mode splits; zero for hard-min mode choice.
inline double mode_entropy(const NetworkLoader& loader, const std::vector<std::vector<double>>& mode_demand) {
    if (loader.gamma() <= 0.0) return 0.0;
    double s = 0.0;
    const auto& schema = loader.schema();
    for (int t = 0; t < schema.user_type_count(); ++t) {
        const std::size_t z = schema.user_types[static_cast<std::size_t>(t)].modes.size();
        const auto& x = mode_demand[static_cast<std::size_t>(t)];
        for (std::size_t p = 0; p * z < x.size(); ++p) {
            double d = 0.0;
            for (std::size_t m = 0; m < z; ++m) d += x[p * z + m];
            if (d <= 0.0) continue;
            for (std::size_t m = 0; m < z; ++m) {
                const double v = x[p * z + m];
                if (v > 0.0) s += v * std::log(v / d);
            }
        }
    }
    return loader.gamma() * s;
}

// Psi; stable dynamics above capacity is +inf unless `relaxed`, where the linear part t0 f is used.
inline double potential(const NetworkLoader& loader, const FlowState& flows, bool relaxed) {
    const auto& layout = loader.layout();
    double s = 0.0;
    for (int i = 0; i < layout.size(); ++i) {
        const double f = std::max(0.0, flows.network[static_cast<std::size_t>(i)]);
        const auto& model = layout.model(i);
        if (const auto* sd = std::get_if<StableDynamics>(&model)) {
            if (f > sd->capacity * (1.0 + 1e-12) && !relaxed) return kInf;
            s += sd->free_flow_time * f;
        } else {
            s += sigma(model, f);
        }
    }
    return s + loader.surcharge_cost(flows.vehicle) + mode_entropy(loader, flows.mode_demand);
}

inline double conjugate_sum(const DualLayout& layout, std::span<const double> times) {
    double s = 0.0;
    for (int i = 0; i < layout.size(); ++i) s += sigma_conjugate(layout.model(i), times[static_cast<std::size_t>(i)]).value;
    return s;
}

inline double capacity_violation(const DualLayout& layout, std::span<const double> flow) {
    double v = 0.0;
    for (int i = 0; i < layout.size(); ++i)
        if (const auto* sd = std::get_if<StableDynamics>(&layout.model(i)))
            v = std::max(v, (flow[static_cast<std::size_t>(i)] - sd->capacity) / sd->capacity);
    return v;
}

// Weighted running sum of loadings; average() divides by the accumulated weight.
class FlowAverage {
public:
    void add(const Loading& l, double w) {
        if (weight_ == 0.0) {
            sum_ = FlowState::from_loading(l);
            scale(sum_, w);
        } else {
            axpy(sum_.vehicle, l.vehicle_flow, w);
            axpy(sum_.network, l.dual_flow, w);
            for (std::size_t k = 0; k < sum_.origin.size(); ++k) axpy(sum_.origin[k], l.origin_flow[k], w);
            axpy(sum_.mode_demand, l.mode_demand, w);
        }
        weight_ += w;
    }

    FlowState average() const {
        FlowState out = sum_;
        scale(out, 1.0 / weight_);
        return out;
    }

private:
    static void axpy(std::vector<double>& y, const std::vector<double>& x, double w) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += w * x[i];
    }
    static void axpy(std::vector<std::vector<double>>& y, const std::vector<std::vector<double>>& x, double w) {
        for (std::size_t i = 0; i < y.size(); ++i) axpy(y[i], x[i], w);
    }
    static void scale(std::vector<double>& y, double w) {
        for (double& v : y) v *= w;
    }
    static void scale(FlowState& s, double w) {
        for (auto& v : s.vehicle) scale(v, w);
        scale(s.network, w);
        for (auto& per_k : s.origin)
            for (auto& v : per_k) scale(v, w);
        for (auto& v : s.mode_demand) scale(v, w);
    }

    FlowState sum_;
    double weight_ = 0.0;
};

// Best-gap stagnation tracker for the divergence guard.
class Patience {
public:
    explicit Patience(int limit) : limit_(limit) {}
    bool exhausted(double gap) {
        if (limit_ <= 0) return false;
        if (gap < best_) {
            best_ = gap;
            stale_ = 0;
            return false;
        }
        return ++stale_ >= limit_;
    }

private:
    int limit_;
    int stale_ = 0;
    double best_ = kInf;
};

// Restart bookkeeping for the universal method. An epoch ends with a restart once its merit falls
// to restart_ratio of the reference. A fixed inexactness only buys accuracy of its own order, and
// with stable-dynamics links the dual is polyhedral and the method can circle a kink at that
// accuracy indefinitely. With `adaptive` set, a certified gap that has not moved at all over a
// window (at least four times the last successful epoch, doubling with every stall) also restarts
// the method, with the factor halved down to a tenth of the certified distance; successful epochs
// let it grow back. On smooth duals a frozen gap usually just means a long exploratory epoch, and
// shrinking the steps there only slows the method down.
class EpochSchedule {
public:
    EpochSchedule(double max_factor, double restart_ratio, bool adaptive)
        : max_factor_(max_factor), factor_(max_factor), ratio_(restart_ratio), adaptive_(adaptive) {}

    double factor() const noexcept { return factor_; }

    /// True when the caller should restart the method and its averages.
    bool end_epoch(int iteration, double epoch_merit, double gap) {
        if (reference_ == kInf) reference_ = epoch_merit;
        if (window_gap_ == kInf) window_gap_ = gap;
        if (epoch_merit <= ratio_ * reference_) {
            reference_ = epoch_merit;
            factor_ = std::min(max_factor_, 2.0 * factor_);
            window_ = std::max(kMinimumWindow, 4 * (iteration - start_));
            start_ = window_start_ = iteration;
            window_gap_ = gap;
            return true;
        }
        if (!adaptive_ || iteration - window_start_ < window_) return false;
        const bool stalled = gap >= window_gap_;
        window_start_ = iteration;
        window_gap_ = gap;
        if (!stalled || factor_ <= kMinimumFactor) return false;
        factor_ = std::max(kMinimumFactor, 0.5 * factor_);
        window_ *= 2;
        start_ = iteration;
        return true;
    }

private:
    static constexpr int kMinimumWindow = 50;
    static constexpr double kMinimumFactor = 0.1;
    double max_factor_, factor_, ratio_;
    bool adaptive_;
    double reference_ = kInf, window_gap_ = kInf;
    int start_ = 0, window_start_ = 0, window_ = kMinimumWindow;
};

}  // namespace tflow::detail
