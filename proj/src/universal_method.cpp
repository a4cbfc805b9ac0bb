#include "tflow/universal_method.hpp"

#include <cmath>

#include "tflow/error.hpp"

namespace tflow {

UniversalGradientAscent::UniversalGradientAscent(Oracle oracle, std::vector<double> start, double initial_smoothness,
                                                 double epsilon)
    : oracle_(std::move(oracle)), x_(start), u_(std::move(start)), smoothness_(initial_smoothness), epsilon_(epsilon) {}

UniversalGradientAscent::Step UniversalGradientAscent::step() {
    const std::size_t n = x_.size();
    std::vector<double> y(n), g, v(n), u_new(n), x_new(n);
    double L = smoothness_ / 2.0;
    for (int backtracks = 0; std::isfinite(L); ++backtracks) {
        const double a = (1.0 + std::sqrt(1.0 + 4.0 * total_weight_ * L)) / (2.0 * L);
        const double A_new = total_weight_ + a;
        for (std::size_t i = 0; i < n; ++i) y[i] = (a * u_[i] + total_weight_ * x_[i]) / A_new;
        const double fy = oracle_.evaluate(y, g);
        for (std::size_t i = 0; i < n; ++i) v[i] = u_[i] + a * g[i];
        oracle_.prox(v, a, u_new);
        for (std::size_t i = 0; i < n; ++i) x_new[i] = (a * u_new[i] + total_weight_ * x_[i]) / A_new;
        const double fx = oracle_.value(x_new);

        double lin = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x_new[i] - y[i];
            lin += g[i] * d;
            sq += d * d;
        }
        if (fx >= fy + lin - 0.5 * L * sq - 0.5 * epsilon_ * a / A_new) {
            total_weight_ = A_new;
            x_.swap(x_new);
            u_.swap(u_new);
            smoothness_ = L;
            ++iteration_;
            return {iteration_, a, total_weight_, L, fx - oracle_.composite(x_), backtracks};
        }
        L *= 2.0;
    }
    throw ConvergenceError("universal method: smoothness backtracking did not terminate");
}

}  // namespace tflow
