#pragma once

#include <functional>
#include <span>
#include <vector>

namespace tflow {

/// Universal similar-triangles method maximizing F(x) - h(x), F concave with an inexact
/// supergradient oracle (no smoothness constant supplied), h convex and prox-friendly.
/// Backtracking doubles the local smoothness estimate until the inexact descent test holds
/// and halves it at the start of every iteration.
class UniversalGradientAscent {
public:
    struct Oracle {
        /// F(y); writes a supergradient. The last call before a step is accepted is the one
        /// whose point enters the primal average with the step weight.
        std::function<double(std::span<const double> y, std::vector<double>& supergradient)> evaluate;
        /// F(x) only.
        std::function<double(std::span<const double> x)> value;
        /// h(x).
        std::function<double(std::span<const double> x)> composite;
        /// out = argmin_u 0.5 |u - point|^2 + step h(u).
        std::function<void(std::span<const double> point, double step, std::span<double> out)> prox;
    };

    struct Step {
        int iteration = 0;
        double weight = 0.0;        // a_k
        double total_weight = 0.0;  // A_k
        double smoothness = 0.0;    // accepted L_k
        double objective = 0.0;     // F(x_k) - h(x_k)
        int backtracks = 0;
    };

    UniversalGradientAscent(Oracle oracle, std::vector<double> start, double initial_smoothness, double epsilon);

    /// One accepted iteration.
    Step step();

    const std::vector<double>& x() const noexcept { return x_; }
    double epsilon() const noexcept { return epsilon_; }
    void set_epsilon(double epsilon) { epsilon_ = epsilon; }
    /// Restarts the estimate sequence at the current point, keeping the smoothness estimate.
    void restart() {
        u_ = x_;
        total_weight_ = 0.0;
    }

private:
    Oracle oracle_;
    std::vector<double> x_, u_;
    double total_weight_ = 0.0;
    double smoothness_;
    double epsilon_;
    int iteration_ = 0;
};

}  // namespace tflow
