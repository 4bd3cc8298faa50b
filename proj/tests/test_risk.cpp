#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "radpo/numeric.hpp"
#include "radpo/risk.hpp"

using namespace radpo;
using risk::Categorical;
using risk::RiskMeasureSpec;

namespace {

Categorical random_dist(Rng& rng, int n, double value_range = 3.0) {
    Categorical d;
    d.probs.resize(n);
    d.values.resize(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        d.probs[i] = rng.uniform(0.01, 1.0);
        total += d.probs[i];
        d.values[i] = rng.uniform(-value_range, value_range);
    }
    for (double& p : d.probs) p /= total;
    return d;
}

// Independent CVaR path: minimize eta + (1/mu) E[(v - eta)+]. The objective
// is piecewise linear in eta, so the minimum is attained at an atom.
double cvar_min_formula(const Categorical& d, double mu) {
    double best = 1e300;
    for (double eta : d.values) {
        double excess = 0.0;
        for (size_t i = 0; i < d.values.size(); ++i)
            excess += d.probs[i] * std::max(0.0, d.values[i] - eta);
        best = std::min(best, eta + excess / mu);
    }
    return best;
}

double brute_var_threshold(const Categorical& d, double mu) {
    double best = 1e300;
    double best_eta = 0.0;
    std::vector<double> etas = d.values;
    std::sort(etas.begin(), etas.end());
    for (double eta : etas) {
        double excess = 0.0;
        for (size_t i = 0; i < d.values.size(); ++i)
            excess += d.probs[i] * std::max(0.0, d.values[i] - eta);
        double f = eta + excess / mu;
        if (f <= best + 1e-12) {  // keep the largest minimizer
            if (f < best - 1e-12 || eta > best_eta) best_eta = eta;
            best = std::min(best, f);
        }
    }
    return best_eta;
}

}  // namespace

TEST_CASE("point mass aggregates to its value for every measure") {
    Categorical d;
    d.probs = {1.0};
    d.values = {2.5};
    for (auto spec : {RiskMeasureSpec::neutral(), RiskMeasureSpec::cvar(0.3),
                      RiskMeasureSpec::erm(5.0)}) {
        CHECK(risk::penalty_aggregate(spec, d) ==
              doctest::Approx(2.5).epsilon(1e-14));
        CHECK(risk::value_aggregate(spec, d) ==
              doctest::Approx(2.5).epsilon(1e-14));
    }
    CHECK(risk::var_threshold(RiskMeasureSpec::cvar(0.4), d) == 2.5);
}

TEST_CASE("worked two-atom examples") {
    Categorical d;
    d.probs = {0.5, 0.5};
    d.values = {0.0, 1.0};
    CHECK(risk::penalty_aggregate(RiskMeasureSpec::cvar(0.5), d) == 1.0);
    CHECK(risk::value_aggregate(RiskMeasureSpec::cvar(0.5), d) == 0.0);
    CHECK(risk::penalty_aggregate(RiskMeasureSpec::erm(1.0), d) ==
          doctest::Approx(std::log(0.5 * (1.0 + std::exp(1.0))))
              .epsilon(1e-14));
    CHECK(risk::var_threshold(RiskMeasureSpec::cvar(0.5), d) == 1.0);

    Categorical u3;
    u3.probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    u3.values = {1.0, 2.0, 3.0};
    CHECK(risk::var_threshold(RiskMeasureSpec::cvar(1.0 / 3), u3) == 3.0);
}

TEST_CASE("CVaR mu = 1 equals the neutral aggregate exactly") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto d = random_dist(rng, 2 + rng.uniform_int(6));
        CHECK(risk::penalty_aggregate(RiskMeasureSpec::cvar(1.0), d) ==
              risk::penalty_aggregate(RiskMeasureSpec::neutral(), d));
    }
}

TEST_CASE("axioms on random distributions") {
    Rng rng(7);
    const RiskMeasureSpec specs[] = {RiskMeasureSpec::neutral(),
                                     RiskMeasureSpec::cvar(0.95),
                                     RiskMeasureSpec::cvar(0.4),
                                     RiskMeasureSpec::erm(5.0),
                                     RiskMeasureSpec::erm(0.5)};
    for (int trial = 0; trial < 1000; ++trial) {
        auto d = random_dist(rng, 2 + rng.uniform_int(6));
        double mean = risk::penalty_aggregate(RiskMeasureSpec::neutral(), d);
        double c = rng.uniform(-2.0, 2.0);
        Categorical shifted = d, bumped = d;
        for (double& v : shifted.values) v += c;
        for (double& v : bumped.values) v += rng.uniform(0.0, 1.0);
        for (const auto& spec : specs) {
            double base = risk::penalty_aggregate(spec, d);
            // translation invariance
            CHECK(std::abs(risk::penalty_aggregate(spec, shifted) -
                           (base + c)) <= 1e-10);
            // monotonicity
            CHECK(risk::penalty_aggregate(spec, bumped) >= base - 1e-12);
            // dominance over the mean
            CHECK(base >= mean - 1e-12);
        }
        // neutral limits
        CHECK(std::abs(risk::penalty_aggregate(RiskMeasureSpec::erm(1e-6), d) -
                       mean) < 1e-5);
        // parameter monotonicity
        CHECK(risk::penalty_aggregate(RiskMeasureSpec::cvar(0.4), d) >=
              risk::penalty_aggregate(RiskMeasureSpec::cvar(0.95), d) - 1e-12);
        CHECK(risk::penalty_aggregate(RiskMeasureSpec::erm(5.0), d) >=
              risk::penalty_aggregate(RiskMeasureSpec::erm(0.5), d) - 1e-12);
        // positive homogeneity / ERM rescaling
        double scale = rng.uniform(0.1, 3.0);
        Categorical scaled = d;
        for (double& v : scaled.values) v *= scale;
        for (const auto& spec : specs) {
            if (spec.kind == risk::MeasureKind::ERM) {
                double rhs = scale * risk::penalty_aggregate(
                                         RiskMeasureSpec::erm(spec.mu * scale),
                                         d);
                CHECK(std::abs(risk::penalty_aggregate(spec, scaled) - rhs) <=
                      1e-10);
            } else {
                CHECK(std::abs(risk::penalty_aggregate(spec, scaled) -
                               scale * risk::penalty_aggregate(spec, d)) <=
                      1e-10);
            }
        }
    }
}

TEST_CASE("CVaR sorted-tail path agrees with the min-formula path") {
    Rng rng(13);
    for (int trial = 0; trial < 500; ++trial) {
        auto d = random_dist(rng, 2 + rng.uniform_int(6));
        double mu = rng.uniform(0.05, 1.0);
        auto spec = RiskMeasureSpec::cvar(mu);
        CHECK(std::abs(risk::penalty_aggregate(spec, d) -
                       cvar_min_formula(d, mu)) <= 1e-10);
        CHECK(std::abs(risk::var_threshold(spec, d) -
                       brute_var_threshold(d, mu)) <= 1e-12);
    }
}

TEST_CASE("penalty_node value matches penalty_aggregate and differentiates") {
    Rng rng(29);
    for (auto spec : {RiskMeasureSpec::neutral(), RiskMeasureSpec::cvar(0.35),
                      RiskMeasureSpec::erm(3.0)}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto d = random_dist(rng, 4);
            diff::Graph g;
            auto values = g.leaf(d.values);
            auto node = risk::penalty_node(g, spec, d.probs, values);
            CHECK(std::abs(g.scalar(node) - risk::penalty_aggregate(spec, d)) <=
                  1e-12);
            auto build = [&](diff::Graph& gb, std::span<const double> p) {
                return risk::penalty_node(gb, spec, d.probs, gb.leaf(p));
            };
            CHECK(diff::finite_diff_check(build, d.values, 1e-5) < 1e-4);
        }
    }
}

TEST_CASE("validation errors") {
    Categorical d;
    d.probs = {0.5, 0.5};
    d.values = {0.0, 1.0};
    CHECK_THROWS(risk::penalty_aggregate(RiskMeasureSpec::cvar(0.0), d));
    CHECK_THROWS(risk::penalty_aggregate(RiskMeasureSpec::cvar(1.5), d));
    CHECK_THROWS(risk::penalty_aggregate(RiskMeasureSpec::erm(-1.0), d));
    CHECK_THROWS(risk::var_threshold(RiskMeasureSpec::neutral(), d));
    Categorical bad;
    bad.probs = {0.7, 0.7};
    bad.values = {0.0, 1.0};
    CHECK_THROWS(risk::penalty_aggregate(RiskMeasureSpec::neutral(), bad));
    Categorical empty;
    CHECK_THROWS(risk::penalty_aggregate(RiskMeasureSpec::neutral(), empty));
}
