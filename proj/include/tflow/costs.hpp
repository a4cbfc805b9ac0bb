#pragma once

#include <variant>

namespace tflow {

// Link cost models. Flows and times are dimensionless here; the CLI owns units.

/// tau(f) = t0 * (1 + zeta * (f / cap)^(1/mu)), the standard BPR reading.
struct Bpr {
    double free_flow_time;
    double capacity;
    double zeta;
    double mu;
};

/// tau(f) = t0 * (1 + zeta * f / cap)^(1/mu), the exponent applied to the whole bracket.
struct BprOuterExponent {
    double free_flow_time;
    double capacity;
    double zeta;
    double mu;
};

/// mu -> 0+ limit of BPR: tau = t0 on [0, cap], flows above capacity are infeasible.
struct StableDynamics {
    double free_flow_time;
    double capacity;
};

/// Flow-independent per-(edge, vehicle type) surcharge; `forbidden` bars the edge.
struct ConstantSurcharge {
    double value = 0.0;
    bool forbidden = false;
};

using LinkCostModel = std::variant<Bpr, BprOuterExponent, StableDynamics, ConstantSurcharge>;

struct ConjugateValue {
    double value;
    double derivative;
};

/// Throws DomainError for f < 0 and for stable dynamics above capacity.
double link_time(const LinkCostModel& model, double flow);

/// Integral of link_time from 0 to `flow`.
double sigma(const LinkCostModel& model, double flow);

/// sigma*(t) = max_{f >= 0} t f - sigma(f) and its derivative, the flow inducing time t.
/// At the stable-dynamics kink t = t0 the reported derivative is 0.
ConjugateValue sigma_conjugate(const LinkCostModel& model, double time);

/// Lower end of the dual domain: the free-flow time (the conjugate vanishes below it).
/// Surcharges have no dual variable and return 0.
double dual_floor(const LinkCostModel& model);

/// argmin_{u >= dual_floor} 0.5 (u - point)^2 + step * sigma*(u).
double conjugate_prox(const LinkCostModel& model, double point, double step);

/// Checks the parameter invariants (positive t0, capacity, zeta, mu; surcharge >= 0).
void validate(const LinkCostModel& model);

}  // namespace tflow
