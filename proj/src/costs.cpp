#include "tflow/costs.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tflow/error.hpp"

namespace tflow {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_nonnegative(double flow) {
    if (!(flow >= 0.0)) throw DomainError("negative flow " + std::to_string(flow));
}

void require_within_capacity(const StableDynamics& m, double flow) {
    if (flow > m.capacity)
        throw DomainError("flow " + std::to_string(flow) + " exceeds stable-dynamics capacity " +
                          std::to_string(m.capacity));
}

// Root of the increasing function g on [lo, hi] with g(lo) <= 0 <= g(hi).
template <class F>
double bisect(F&& g, double lo, double hi) {
    for (int it = 0; it < 200 && hi - lo > 4 * std::numeric_limits<double>::epsilon() * std::abs(hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

double link_time(const LinkCostModel& model, double flow) {
    require_nonnegative(flow);
    return std::visit(
        Overloaded{
            [&](const Bpr& m) {
                return m.free_flow_time * (1.0 + m.zeta * std::pow(flow / m.capacity, 1.0 / m.mu));
            },
            [&](const BprOuterExponent& m) {
                return m.free_flow_time * std::pow(1.0 + m.zeta * flow / m.capacity, 1.0 / m.mu);
            },
            [&](const StableDynamics& m) {
                require_within_capacity(m, flow);
                return m.free_flow_time;
            },
            [&](const ConstantSurcharge& m) { return m.forbidden ? kInf : m.value; },
        },
        model);
}

double sigma(const LinkCostModel& model, double flow) {
    require_nonnegative(flow);
    return std::visit(
        Overloaded{
            [&](const Bpr& m) {
                const double p = 1.0 / m.mu + 1.0;
                return m.free_flow_time * flow +
                       m.free_flow_time * m.zeta * m.capacity / p * std::pow(flow / m.capacity, p);
            },
            [&](const BprOuterExponent& m) {
                const double p = 1.0 / m.mu + 1.0;
                const double x = m.zeta * flow / m.capacity;
                return m.free_flow_time * m.capacity / (m.zeta * p) * std::expm1(p * std::log1p(x));
            },
            [&](const StableDynamics& m) {
                require_within_capacity(m, flow);
                return m.free_flow_time * flow;
            },
            [&](const ConstantSurcharge& m) {
                if (m.forbidden) return flow > 0.0 ? kInf : 0.0;
                return m.value * flow;
            },
        },
        model);
}

ConjugateValue sigma_conjugate(const LinkCostModel& model, double time) {
    return std::visit(
        Overloaded{
            [&](const Bpr& m) -> ConjugateValue {
                if (time <= m.free_flow_time) return {0.0, 0.0};
                const double s = (time - m.free_flow_time) / (m.free_flow_time * m.zeta);
                const double sm = std::pow(s, m.mu);
                return {m.capacity * m.free_flow_time * m.zeta / (m.mu + 1.0) * sm * s, m.capacity * sm};
            },
            [&](const BprOuterExponent& m) -> ConjugateValue {
                if (time <= m.free_flow_time) return {0.0, 0.0};
                const double f = m.capacity / m.zeta * std::expm1(m.mu * std::log(time / m.free_flow_time));
                return {time * f - sigma(m, f), f};
            },
            [&](const StableDynamics& m) -> ConjugateValue {
                if (time <= m.free_flow_time) return {0.0, 0.0};
                return {m.capacity * (time - m.free_flow_time), m.capacity};
            },
            [&](const ConstantSurcharge& m) -> ConjugateValue {
                if (m.forbidden || time <= m.value) return {0.0, 0.0};
                return {kInf, kInf};
            },
        },
        model);
}

double dual_floor(const LinkCostModel& model) {
    return std::visit(Overloaded{
                          [](const Bpr& m) { return m.free_flow_time; },
                          [](const BprOuterExponent& m) { return m.free_flow_time; },
                          [](const StableDynamics& m) { return m.free_flow_time; },
                          [](const ConstantSurcharge&) { return 0.0; },
                      },
                      model);
}

double conjugate_prox(const LinkCostModel& model, double point, double step) {
    const double floor = dual_floor(model);
    if (point <= floor) return floor;
    return std::visit(
        Overloaded{
            [&](const StableDynamics& m) { return std::max(floor, point - step * m.capacity); },
            [&](const ConstantSurcharge&) -> double {
                throw UnsupportedModelError("surcharges carry no dual variable");
            },
            [&](const auto& m) {
                // u + step * sigma*'(u) = point is increasing in u and u <= point.
                auto g = [&](double u) { return u + step * sigma_conjugate(m, u).derivative - point; };
                return bisect(g, floor, point);
            },
        },
        model);
}

void validate(const LinkCostModel& model) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw DataError(std::string(name) + " must be positive and finite, got " + std::to_string(v));
    };
    std::visit(Overloaded{
                   [&](const StableDynamics& m) {
                       positive(m.free_flow_time, "free_flow_time");
                       positive(m.capacity, "capacity");
                   },
                   [&](const ConstantSurcharge& m) {
                       if (!m.forbidden && !(m.value >= 0.0 && std::isfinite(m.value)))
                           throw DataError("surcharge must be finite and >= 0");
                   },
                   [&](const auto& m) {
                       positive(m.free_flow_time, "free_flow_time");
                       positive(m.capacity, "capacity");
                       positive(m.zeta, "zeta");
                       positive(m.mu, "mu");
                   },
               },
               model);
}

}  // namespace tflow
