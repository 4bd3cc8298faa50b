#pragma once

#include <span>
#include <utility>
#include <vector>

#include "radpo/policy.hpp"
#include "radpo/risk.hpp"

namespace radpo::losses {

enum class LossKind { DPO, TDPO1, TDPO2, RaDPO1, RaDPO2 };

struct LossConfig {
    LossKind kind = LossKind::DPO;
    double beta = 0.1;
    double alpha = 0.0;  // TDPO2 / RaDPO2 only
    risk::RiskMeasureSpec measure;  // RaDPO1 / RaDPO2 only

    void validate() const;
    // Neutral for DPO/TDPO*, the configured measure otherwise.
    risk::RiskMeasureSpec effective_measure() const;
};

struct PreferencePair {
    policy::TokenSeq prompt;
    policy::TokenSeq chosen;
    policy::TokenSeq rejected;
};

struct PairDiagnostics {
    double u = 0.0;
    double seqkl_chosen = 0.0;
    double seqkl_rejected = 0.0;
    double seqrr_chosen = 0.0;
    double seqrr_rejected = 0.0;
    double loss = 0.0;
};

// beta * [log pi(y_w|x)/ref(y_w|x) - log pi(y_l|x)/ref(y_l|x)], differentiable
// through theta.
diff::NodeRef margin_u(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const PreferencePair& pair, double beta);

// Sum over response positions of the penalty aggregation, under the reference
// next-token distribution, of log ref/theta. Differentiable w.r.t. theta only.
diff::NodeRef d_seq_rr(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const policy::TokenSeq& prompt,
                       const policy::TokenSeq& response,
                       const risk::RiskMeasureSpec& measure);

// Sequential forward KL: d_seq_rr with the Neutral measure (same code path).
diff::NodeRef d_seq_kl(diff::Graph& g, policy::ParamMap& pm,
                       const policy::TabularPolicy& theta,
                       const policy::TabularPolicy& ref,
                       const policy::TokenSeq& prompt,
                       const policy::TokenSeq& response);

// Detached (non-differentiated) evaluation of the same quantity.
double d_seq_rr_value(const policy::TabularPolicy& theta,
                      const policy::TabularPolicy& ref,
                      const policy::TokenSeq& prompt,
                      const policy::TokenSeq& response,
                      const risk::RiskMeasureSpec& measure);

std::pair<diff::NodeRef, PairDiagnostics> pair_loss(
    diff::Graph& g, policy::ParamMap& pm, const policy::TabularPolicy& theta,
    const policy::TabularPolicy& ref, const PreferencePair& pair,
    const LossConfig& config);

// Detached loss value matching pair_loss (sg is the identity in the forward
// pass, so the value does not depend on it).
PairDiagnostics pair_diagnostics(const policy::TabularPolicy& theta,
                                 const policy::TabularPolicy& ref,
                                 const PreferencePair& pair,
                                 const LossConfig& config);

struct BatchResult {
    double loss = 0.0;
    std::vector<double> grad;  // full logits-table layout
    PairDiagnostics mean;
};

// Mean loss over the batch in dataset order, gradient via one backward pass.
BatchResult batch_loss_and_grad(const policy::TabularPolicy& theta,
                                const policy::TabularPolicy& ref,
                                std::span<const PreferencePair> pairs,
                                const LossConfig& config);

}  // namespace radpo::losses
