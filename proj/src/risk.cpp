#include "radpo/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "radpo/numeric.hpp"

namespace radpo::risk {

void RiskMeasureSpec::validate() const {
    switch (kind) {
        case MeasureKind::Neutral:
            return;
        case MeasureKind::CVaR:
            if (!(mu > 0.0 && mu <= 1.0))
                throw std::invalid_argument("CVaR: mu must be in (0, 1]");
            return;
        case MeasureKind::ERM:
            if (!(mu > 0.0))
                throw std::invalid_argument("ERM: mu must be positive");
            return;
    }
    throw std::invalid_argument("unknown risk measure kind");
}

void Categorical::validate() const {
    if (probs.empty() || probs.size() != values.size())
        throw std::invalid_argument("Categorical: empty or mismatched lengths");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0))
            throw std::invalid_argument("Categorical: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("Categorical: probabilities must sum to 1");
    for (double v : values)
        if (!std::isfinite(v))
            throw std::invalid_argument("Categorical: non-finite value");
}

double penalty_aggregate(const RiskMeasureSpec& spec, const Categorical& dist) {
    spec.validate();
    dist.validate();
    switch (spec.kind) {
        case MeasureKind::Neutral: {
            double s = 0.0;
            for (size_t i = 0; i < dist.probs.size(); ++i)
                s += dist.probs[i] * dist.values[i];
            return s;
        }
        case MeasureKind::CVaR: {
            auto w = diff::cvar_tail_weights(dist.values, dist.probs, spec.mu);
            double s = 0.0;
            for (size_t i = 0; i < w.size(); ++i) s += w[i] * dist.values[i];
            return s;
        }
        case MeasureKind::ERM: {
            std::vector<double> terms;
            terms.reserve(dist.probs.size());
            for (size_t i = 0; i < dist.probs.size(); ++i)
                if (dist.probs[i] > 0.0)
                    terms.push_back(std::log(dist.probs[i]) +
                                    spec.mu * dist.values[i]);
            return logsumexp(terms) / spec.mu;
        }
    }
    throw std::invalid_argument("unknown risk measure kind");
}

double value_aggregate(const RiskMeasureSpec& spec, const Categorical& dist) {
    Categorical negated = dist;
    for (double& v : negated.values) v = -v;
    return -penalty_aggregate(spec, negated);
}

double var_threshold(const RiskMeasureSpec& spec, const Categorical& dist) {
    if (spec.kind != MeasureKind::CVaR)
        throw std::invalid_argument("var_threshold: spec must be CVaR");
    spec.validate();
    dist.validate();
    size_t n = dist.values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return dist.values[i] > dist.values[j];
    });
    double remaining = spec.mu;
    double eta = dist.values[order[0]];
    size_t i = 0;
    while (i < n && remaining > 0.0) {
        size_t j = i;
        double group_mass = 0.0;
        while (j < n && dist.values[order[j]] == dist.values[order[i]]) {
            group_mass += dist.probs[order[j]];
            ++j;
        }
        if (group_mass > 0.0) eta = dist.values[order[i]];
        remaining -= group_mass;
        i = j;
    }
    return eta;
}

diff::NodeRef penalty_node(diff::Graph& g, const RiskMeasureSpec& spec,
                           std::span<const double> probs,
                           diff::NodeRef values) {
    spec.validate();
    if (probs.size() != static_cast<size_t>(values.size))
        throw std::invalid_argument("penalty_node: shape mismatch");
    switch (spec.kind) {
        case MeasureKind::Neutral:
            return g.dot(g.constant(probs), values);
        case MeasureKind::CVaR:
            return g.weighted_tail_mean(values, probs, spec.mu);
        case MeasureKind::ERM: {
            std::vector<double> logp(probs.size());
            for (size_t i = 0; i < probs.size(); ++i) {
                if (!(probs[i] > 0.0))
                    throw std::invalid_argument(
                        "penalty_node: ERM requires strictly positive probs");
                logp[i] = std::log(probs[i]);
            }
            auto shifted = g.add(g.constant(logp), g.scale(values, spec.mu));
            return g.scale(g.logsumexp(shifted), 1.0 / spec.mu);
        }
    }
    throw std::invalid_argument("unknown risk measure kind");
}

}  // namespace radpo::risk
