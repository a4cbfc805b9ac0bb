#include <cmath>
#include <vector>

#include "doctest.h"
#include "tflow/costs.hpp"
#include "tflow/error.hpp"

using namespace tflow;

namespace {

// Composite 5-point Gauss-Legendre rule; independent of the closed forms under test.
double quadrature(const LinkCostModel& m, double upper, int panels = 4000) {
    static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640, 0.9061798459386640};
    static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891,
                                0.2369268850561891};
    const double h = upper / panels;
    double sum = 0.0;
    for (int i = 0; i < panels; ++i) {
        const double mid = (i + 0.5) * h;
        for (int k = 0; k < 5; ++k) sum += w[k] * link_time(m, mid + 0.5 * h * x[k]);
    }
    return 0.5 * h * sum;
}

// max_{0 <= f <= cap} t f - sigma(f) by golden-section search on the concave objective.
double brute_force_conjugate(const LinkCostModel& m, double t, double upper) {
    auto obj = [&](double f) { return t * f - sigma(m, f); };
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = 0.0, b = upper;
    double c = b - g * (b - a), d = a + g * (b - a);
    for (int i = 0; i < 200; ++i) {
        if (obj(c) > obj(d)) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    return std::max(obj(0.0), obj(0.5 * (a + b)));
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("link_time") {
    const Bpr bpr{10, 100, 1, 0.25};
    CHECK(link_time(bpr, 0.0) == 10.0);
    CHECK(link_time(bpr, 100.0) == doctest::Approx(20.0).epsilon(1e-15));
    CHECK(link_time(StableDynamics{10, 100}, 50.0) == 10.0);
    CHECK(link_time(ConstantSurcharge{2.5, false}, 1e9) == 2.5);
    CHECK(link_time(BprOuterExponent{10, 100, 1, 0.25}, 100.0) == doctest::Approx(160.0));
    CHECK_THROWS_AS(link_time(bpr, -1.0), DomainError);
    CHECK_THROWS_AS(link_time(StableDynamics{10, 100}, 100.5), DomainError);
}

TEST_CASE("sigma") {
    CHECK(sigma(Bpr{10, 100, 1, 0.25}, 0.0) == 0.0);
    CHECK(sigma(StableDynamics{10, 100}, 0.0) == 0.0);
    CHECK(sigma(StableDynamics{10, 100}, 3.0) == 30.0);
    CHECK(sigma(Bpr{10, 100, 1, 0.25}, 100.0) == doctest::Approx(1200.0).epsilon(1e-14));
    CHECK(sigma(ConstantSurcharge{2.0, false}, 4.0) == 8.0);
}

TEST_CASE("sigma closed forms match quadrature of link_time") {
    for (double mu : {1.0, 0.5, 0.4, 0.25, 0.1}) {
        for (double zeta : {0.15, 1.0, 3.0}) {
            const Bpr bpr{7.0, 40.0, zeta, mu};
            const BprOuterExponent outer{7.0, 40.0, zeta, mu};
            for (double f : {0.5, 13.0, 40.0, 95.0}) {
                CHECK(rel(sigma(bpr, f), quadrature(bpr, f)) <= 1e-8);
                CHECK(rel(sigma(outer, f), quadrature(outer, f)) <= 1e-8);
            }
        }
    }
    const StableDynamics sd{3.0, 20.0};
    CHECK(rel(sigma(sd, 17.0), quadrature(sd, 17.0)) <= 1e-12);
}

TEST_CASE("sigma_conjugate") {
    const Bpr bpr{10, 100, 1, 0.25};
    auto at_floor = sigma_conjugate(bpr, 10.0);
    CHECK(at_floor.value == 0.0);
    CHECK(at_floor.derivative == 0.0);
    auto at20 = sigma_conjugate(bpr, 20.0);
    CHECK(at20.derivative == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(at20.value == doctest::Approx(800.0).epsilon(1e-14));
    CHECK(20.0 * 100.0 - sigma(bpr, 100.0) == doctest::Approx(at20.value));

    auto sd = sigma_conjugate(StableDynamics{10, 100}, 13.0);
    CHECK(sd.value == doctest::Approx(300.0));
    CHECK(sd.derivative == 100.0);
    CHECK(sigma_conjugate(StableDynamics{10, 100}, 10.0).derivative == 0.0);
    CHECK(sigma_conjugate(StableDynamics{10, 100}, 7.0).value == 0.0);
    CHECK(sigma_conjugate(bpr, 3.0).value == 0.0);
    CHECK(dual_floor(bpr) == 10.0);
}

TEST_CASE("sigma_conjugate matches brute-force maximization") {
    for (double mu : {1.0, 0.5, 0.25, 0.1}) {
        const Bpr bpr{4.0, 10.0, 0.8, mu};
        const BprOuterExponent outer{4.0, 10.0, 0.8, mu};
        for (double t : {4.5, 6.0, 9.0, 15.0}) {
            // the maximizer is the flow with link_time = t; bracket it generously
            CHECK(rel(sigma_conjugate(bpr, t).value, brute_force_conjugate(bpr, t, 60.0)) <= 1e-8);
            CHECK(rel(sigma_conjugate(outer, t).value, brute_force_conjugate(outer, t, 60.0)) <= 1e-8);
        }
    }
    const StableDynamics sd{4.0, 10.0};
    CHECK(rel(sigma_conjugate(sd, 6.0).value, brute_force_conjugate(sd, 6.0, 10.0)) <= 1e-8);
}

TEST_CASE("Fenchel-Young equality and inverse-function identity") {
    for (double mu : {1.0, 0.5, 0.25, 0.1, 0.05}) {
        for (double zeta : {0.15, 1.0, 2.0}) {
            const std::vector<LinkCostModel> models = {Bpr{3.0, 50.0, zeta, mu}, BprOuterExponent{3.0, 50.0, zeta, mu}};
            for (const auto& m : models) {
                for (double f : {0.0, 1.0, 10.0, 50.0, 80.0}) {
                    const double t = link_time(m, f);
                    const double lhs = sigma(m, f) + sigma_conjugate(m, t).value;
                    CHECK(std::abs(lhs - t * f) <= 1e-10 * std::max(1.0, t * f));
                    if (f > 0.0) CHECK(link_time(m, sigma_conjugate(m, t).derivative) == doctest::Approx(t).epsilon(1e-10));
                }
            }
        }
    }
    const StableDynamics sd{3.0, 50.0};
    for (double f : {0.0, 20.0, 50.0}) CHECK(sigma(sd, f) + sigma_conjugate(sd, 3.0).value == doctest::Approx(3.0 * f));
}

TEST_CASE("sigma is convex") {
    for (double mu : {1.0, 0.25, 0.1}) {
        const Bpr bpr{2.0, 5.0, 1.0, mu};
        const double h = 0.05;
        for (int i = 1; i < 200; ++i) {
            const double f = i * h;
            CHECK(sigma(bpr, f + h) - 2.0 * sigma(bpr, f) + sigma(bpr, f - h) >= -1e-12);
        }
    }
}

TEST_CASE("conjugate derivative matches finite differences") {
    for (double mu : {1.0, 0.5, 0.25, 0.1}) {
        const Bpr bpr{2.0, 5.0, 1.0, mu};
        for (double t : {2.2, 3.0, 5.0, 11.0}) {
            const double h = 1e-5 * t;
            const double fd = (sigma_conjugate(bpr, t + h).value - sigma_conjugate(bpr, t - h).value) / (2.0 * h);
            CHECK(fd == doctest::Approx(sigma_conjugate(bpr, t).derivative).epsilon(1e-6));
        }
    }
}

TEST_CASE("BPR conjugate flow tends to capacity as mu shrinks") {
    const double t0 = 10.0, cap = 100.0;
    double previous = 1e300;
    for (double mu : {0.25, 0.1, 0.05, 0.01}) {
        const double f = sigma_conjugate(Bpr{t0, cap, 1.0, mu}, 2.0 * t0).derivative;
        const double dev = std::abs(f - cap);
        CHECK(dev <= previous);
        previous = dev;
    }
    CHECK(previous <= 1e-12);
}

TEST_CASE("conjugate prox") {
    const Bpr bpr{2.0, 5.0, 1.0, 0.25};
    // optimality: u - point + step * f(u) = 0 above the floor
    const double u = conjugate_prox(bpr, 6.0, 0.1);
    CHECK(u >= 2.0);
    CHECK(u - 6.0 + 0.1 * sigma_conjugate(bpr, u).derivative == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(conjugate_prox(bpr, 1.0, 0.1) == 2.0);
    const StableDynamics sd{2.0, 5.0};
    CHECK(conjugate_prox(sd, 6.0, 0.1) == doctest::Approx(5.5));
    CHECK(conjugate_prox(sd, 2.3, 0.1) == doctest::Approx(2.0));
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(validate(Bpr{0.0, 1, 1, 1}), DataError);
    CHECK_THROWS_AS(validate(Bpr{1.0, -1, 1, 1}), DataError);
    CHECK_THROWS_AS(validate(Bpr{1.0, 1, 0, 1}), DataError);
    CHECK_THROWS_AS(validate(BprOuterExponent{1.0, 1, 1, 0}), DataError);
    CHECK_THROWS_AS(validate(ConstantSurcharge{-1.0, false}), DataError);
    CHECK_NOTHROW(validate(StableDynamics{1.0, 1.0}));
    CHECK(sigma_conjugate(ConstantSurcharge{1.0, false}, 0.5).value == 0.0);
    CHECK(std::isinf(sigma_conjugate(ConstantSurcharge{1.0, false}, 1.5).value));
    CHECK_THROWS_AS(conjugate_prox(ConstantSurcharge{1.0, false}, 2.0, 0.1), UnsupportedModelError);
}
