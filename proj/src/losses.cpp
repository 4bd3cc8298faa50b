#include "radpo/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "radpo/numeric.hpp"

namespace radpo::losses {

void LossConfig::validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("LossConfig: beta must be > 0");
    if (kind == LossKind::TDPO2 || kind == LossKind::RaDPO2) {
        if (!(alpha >= 0.0))
            throw std::invalid_argument("LossConfig: alpha must be >= 0");
    }
    if (kind == LossKind::RaDPO1 || kind == LossKind::RaDPO2)
        measure.validate();
}

risk::RiskMeasureSpec LossConfig::effective_measure() const {
    if (kind == LossKind::RaDPO1 || kind == LossKind::RaDPO2) return measure;
    return risk::RiskMeasureSpec::neutral();
}

diff::NodeRef margin_u(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const PreferencePair& pair, double beta) {
    if (!ref.frozen)
        throw std::invalid_argument("margin_u: reference policy must be frozen");
    auto lw = theta.seq_logprob_node(g, pm, pair.prompt, pair.chosen);
    auto ll = theta.seq_logprob_node(g, pm, pair.prompt, pair.rejected);
    auto lw_ref = g.constant(ref.seq_logprob(pair.prompt, pair.chosen));
    auto ll_ref = g.constant(ref.seq_logprob(pair.prompt, pair.rejected));
    return g.scale(g.sub(g.sub(lw, lw_ref), g.sub(ll, ll_ref)), beta);
}

diff::NodeRef d_seq_rr(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const policy::TokenSeq& prompt,
                       const policy::TokenSeq& response,
                       const risk::RiskMeasureSpec& measure) {
    if (!ref.frozen)
        throw std::invalid_argument("d_seq_rr: reference policy must be frozen");
    if (response.empty())
        throw std::invalid_argument("d_seq_rr: empty response");
    policy::TokenSeq stream = prompt;
    diff::NodeRef total;
    bool first = true;
    for (int tok : response) {
        auto ref_lp = ref.next_logprobs(stream);
        auto theta_lp = theta.next_logprobs_node(g, pm, stream);
        auto values = g.sub(g.constant(ref_lp), theta_lp);
        std::vector<double> probs(ref_lp.size());
        for (size_t i = 0; i < ref_lp.size(); ++i)
            probs[i] = std::exp(ref_lp[i]);
        auto term = risk::penalty_node(g, measure, probs, values);
        total = first ? term : g.add(total, term);
        first = false;
        stream.push_back(tok);
    }
    return total;
}

diff::NodeRef d_seq_kl(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const policy::TokenSeq& prompt,
                       const policy::TokenSeq& response) {
    return d_seq_rr(g, pm, theta, ref, prompt, response,
                    risk::RiskMeasureSpec::neutral());
}

double d_seq_rr_value(const policy::TabularPolicy& theta,
                      const policy::TabularPolicy& ref,
                      const policy::TokenSeq& prompt,
                      const policy::TokenSeq& response,
                      const risk::RiskMeasureSpec& measure) {
    if (response.empty())
        throw std::invalid_argument("d_seq_rr_value: empty response");
    policy::TokenSeq stream = prompt;
    double total = 0.0;
    for (int tok : response) {
        auto ref_lp = ref.next_logprobs(stream);
        auto theta_lp = theta.next_logprobs(stream);
        risk::Categorical dist;
        dist.probs.resize(ref_lp.size());
        dist.values.resize(ref_lp.size());
        for (size_t i = 0; i < ref_lp.size(); ++i) {
            dist.probs[i] = std::exp(ref_lp[i]);
            dist.values[i] = ref_lp[i] - theta_lp[i];
        }
        total += risk::penalty_aggregate(measure, dist);
        stream.push_back(tok);
    }
    return total;
}

PairDiagnostics pair_diagnostics(const policy::TabularPolicy& theta,
                                 const policy::TabularPolicy& ref,
                                 const PreferencePair& pair,
                                 const LossConfig& config) {
    config.validate();
    auto neutral = risk::RiskMeasureSpec::neutral();
    auto measure = config.effective_measure();
    PairDiagnostics d;
    double lw = theta.seq_logprob(pair.prompt, pair.chosen) -
                ref.seq_logprob(pair.prompt, pair.chosen);
    double ll = theta.seq_logprob(pair.prompt, pair.rejected) -
                ref.seq_logprob(pair.prompt, pair.rejected);
    d.u = config.beta * (lw - ll);
    d.seqkl_chosen =
        d_seq_rr_value(theta, ref, pair.prompt, pair.chosen, neutral);
    d.seqkl_rejected =
        d_seq_rr_value(theta, ref, pair.prompt, pair.rejected, neutral);
    d.seqrr_chosen =
        d_seq_rr_value(theta, ref, pair.prompt, pair.chosen, measure);
    d.seqrr_rejected =
        d_seq_rr_value(theta, ref, pair.prompt, pair.rejected, measure);
    double delta = config.beta * (d.seqrr_rejected - d.seqrr_chosen);
    switch (config.kind) {
        case LossKind::DPO:
            d.loss = -log_sigmoid(d.u);
            break;
        case LossKind::TDPO1:
        case LossKind::RaDPO1:
            d.loss = -log_sigmoid(d.u - delta);
            break;
        case LossKind::TDPO2:
        case LossKind::RaDPO2:
            d.loss = -log_sigmoid(d.u - config.alpha * delta);
            break;
    }
    return d;
}

std::pair<diff::NodeRef, PairDiagnostics> pair_loss(
    diff::Graph& g, policy::ParamMap& pm, const policy::TabularPolicy& theta,
    const policy::TabularPolicy& ref, const PreferencePair& pair,
    const LossConfig& config) {
    config.validate();
    if (pair.chosen == pair.rejected)
        throw std::invalid_argument("pair_loss: chosen equals rejected");
    auto u = margin_u(g, pm, theta, ref, pair, config.beta);
    diff::NodeRef arg;
    switch (config.kind) {
        case LossKind::DPO:
            arg = u;
            break;
        case LossKind::TDPO1:
        case LossKind::RaDPO1: {
            auto measure = config.effective_measure();
            auto dw = d_seq_rr(g, pm, theta, ref, pair.prompt, pair.chosen,
                               measure);
            auto dl = d_seq_rr(g, pm, theta, ref, pair.prompt, pair.rejected,
                               measure);
            auto delta = g.scale(g.sub(dl, dw), config.beta);
            arg = g.sub(u, delta);
            break;
        }
        case LossKind::TDPO2:
        case LossKind::RaDPO2: {
            auto measure = config.effective_measure();
            auto dw = d_seq_rr(g, pm, theta, ref, pair.prompt, pair.chosen,
                               measure);
            auto dl = d_seq_rr(g, pm, theta, ref, pair.prompt, pair.rejected,
                               measure);
            auto delta2 = g.sub(g.scale(dl, config.beta),
                                g.stop_gradient(g.scale(dw, config.beta)));
            arg = g.sub(u, g.scale(delta2, config.alpha));
            break;
        }
    }
    auto loss = g.neg(g.log_sigmoid(arg));
    PairDiagnostics d = pair_diagnostics(theta, ref, pair, config);
    d.loss = g.scalar(loss);
    d.u = g.scalar(u);
    return {loss, d};
}

BatchResult batch_loss_and_grad(const policy::TabularPolicy& theta,
                                const policy::TabularPolicy& ref,
                                std::span<const PreferencePair> pairs,
                                const LossConfig& config) {
    if (pairs.empty())
        throw std::invalid_argument("batch_loss_and_grad: empty batch");
    diff::Graph g;
    policy::ParamMap pm(g, theta);
    diff::NodeRef total;
    PairDiagnostics acc;
    bool first = true;
    for (const auto& pair : pairs) {
        auto [node, diag] = pair_loss(g, pm, theta, ref, pair, config);
        total = first ? node : g.add(total, node);
        first = false;
        acc.u += diag.u;
        acc.seqkl_chosen += diag.seqkl_chosen;
        acc.seqkl_rejected += diag.seqkl_rejected;
        acc.seqrr_chosen += diag.seqrr_chosen;
        acc.seqrr_rejected += diag.seqrr_rejected;
        acc.loss += diag.loss;
    }
    double n = static_cast<double>(pairs.size());
    auto mean = g.scale(total, 1.0 / n);
    auto leaf_grad = g.backward(mean);

    BatchResult r;
    r.loss = g.scalar(mean);
    r.grad.assign(theta.logits.size(), 0.0);
    pm.scatter(leaf_grad, r.grad);
    r.mean = {acc.u / n,
              acc.seqkl_chosen / n,
              acc.seqkl_rejected / n,
              acc.seqrr_chosen / n,
              acc.seqrr_rejected / n,
              acc.loss / n};
    return r;
}

}  // namespace radpo::losses
