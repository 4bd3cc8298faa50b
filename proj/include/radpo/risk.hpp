#pragma once

#include <span>
#include <vector>

#include "radpo/diff.hpp"

namespace radpo::risk {

enum class MeasureKind { Neutral, CVaR, ERM };

// Which aggregator Phi to apply and its risk parameter. mu = 1 is exactly
// risk-neutral for CVaR; mu -> 0 is risk-neutral for ERM.
struct RiskMeasureSpec {
    MeasureKind kind = MeasureKind::Neutral;
    double mu = 0.0;

    static RiskMeasureSpec neutral() { return {MeasureKind::Neutral, 0.0}; }
    static RiskMeasureSpec cvar(double mu) { return {MeasureKind::CVaR, mu}; }
    static RiskMeasureSpec erm(double mu) { return {MeasureKind::ERM, mu}; }

    void validate() const;
};

// Finite distribution paired with per-outcome values.
struct Categorical {
    std::vector<double> probs;
    std::vector<double> values;

    void validate() const;
};

// Penalty orientation: Neutral is the mean, CVaR(mu) the mean of the worst
// (largest) mu-mass of values, ERM(mu) = (1/mu) log E[exp(mu v)]. All three
// dominate the mean and are translation invariant.
double penalty_aggregate(const RiskMeasureSpec& spec, const Categorical& dist);

// Dual orientation: -penalty(spec, -values). Pessimistic (lower-tail /
// soft-min) aggregation of rewards; identical to the mean for Neutral.
double value_aggregate(const RiskMeasureSpec& spec, const Categorical& dist);

// The CVaR threshold eta*: the value of the last atom swept into the upper
// mu-tail (ties split the remaining mass, so the whole tied group counts).
double var_threshold(const RiskMeasureSpec& spec, const Categorical& dist);

// Differentiable penalty aggregation of a values node under fixed probs.
diff::NodeRef penalty_node(diff::Graph& g, const RiskMeasureSpec& spec,
                           std::span<const double> probs,
                           diff::NodeRef values);

}  // namespace radpo::risk
