#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "radpo/numeric.hpp"
#include "radpo/risk.hpp"

namespace radpo::oracle {

// Deterministic prefix-tree Pb-MDP: states are response prefixes of depth
// 0..horizon, every action appends one token, depth-horizon prefixes are
// terminal. Rewards are per (nonterminal state, action); discounting is in
// absolute trajectory time, so a step at depth d carries weight gamma^d.
struct TreeMdp {
    int vocab = 3;
    int horizon = 3;
    double gamma = 1.0;
    std::vector<int> prompt;
    std::vector<double> step_rewards;  // nonterminal id x vocab
    std::vector<int> offset;           // offset[d] = first state id at depth d

    static TreeMdp random(Rng& rng, int vocab, int horizon, double gamma,
                          double reward_scale = 1.0);

    int num_states() const { return offset[horizon + 1]; }
    int first_terminal() const { return offset[horizon]; }
    int depth_of(int state) const;
    int child(int state, int action) const;
    double reward(int state, int action) const {
        return step_rewards[static_cast<size_t>(state) * vocab + action];
    }
    // Absolute-discounted reward accumulated on the unique path to a state.
    std::vector<double> prefix_rewards() const;
    // Response tokens along the unique path from the root to a state.
    std::vector<int> path_tokens(int state) const;
};

// Per-state action distribution over nonterminal states.
struct TabularDist {
    int vocab = 0;
    std::vector<double> rows;  // nonterminal id x vocab

    static TabularDist uniform(const TreeMdp& mdp);
    static TabularDist random(Rng& rng, const TreeMdp& mdp);

    std::span<const double> row(int state) const {
        return {rows.data() + static_cast<size_t>(state) * vocab,
                static_cast<size_t>(vocab)};
    }
};

enum class ValueMode { Stepwise, Augmented };
enum class BaselineMode { Scalar, ActionRisk };

struct ValueTables {
    ValueMode mode;
    BaselineMode baseline_mode;
    std::vector<double> q;         // nonterminal id x vocab
    std::vector<double> v;         // all states
    std::vector<double> baseline;  // nonterminal states

    double q_at(const TreeMdp& mdp, int state, int action) const {
        return q[static_cast<size_t>(state) * mdp.vocab + action];
    }
};

// Bottom-up value recursion. Stepwise pushes gamma^d-weighted step rewards at
// each transition with terminal value 0; Augmented pushes the whole
// discounted path reward at the leaves. Transitions are deterministic, so the
// nested risk operator only ever sees point masses there; the measure enters
// through the ActionRisk baseline (pessimistic aggregation of Q over the
// action distribution).
ValueTables eval_values(const TreeMdp& mdp, const TabularDist& policy,
                        const risk::RiskMeasureSpec& measure, ValueMode mode,
                        BaselineMode baseline_mode);

double advantage(const TreeMdp& mdp, const ValueTables& tables, int state,
                 int action);

// Per-state softmax tilt of the reference by exp(Q/beta), from the augmented
// tables under the reference policy.
TabularDist closed_form_policy(const TreeMdp& mdp, const TabularDist& ref,
                               const risk::RiskMeasureSpec& measure,
                               double beta);

// Independent per-state maximizer of E_pi[advantage] - beta KL(pi || ref) by
// exponentiated gradient ascent on the simplex.
TabularDist brute_force_policy(const TreeMdp& mdp, const TabularDist& ref,
                               const risk::RiskMeasureSpec& measure,
                               double beta, int iterations = 200);

// Max over states of |augmented value - (stepwise value + prefix reward)|.
double verify_lemma1(const TreeMdp& mdp, const TabularDist& policy,
                     const risk::RiskMeasureSpec& measure);

// Max over leaves of |r(x,y) - V(root) - sum of scalar-baseline advantages|.
double verify_regret_identity(const TreeMdp& mdp, const TabularDist& policy,
                              const risk::RiskMeasureSpec& measure);

struct Theorem1Residuals {
    double b6 = 0.0;     // per-leaf advantage sum vs beta(log ratio + SeqRR)
    double chain = 0.0;  // sigma(regret difference) vs sigma(u - delta)
};

Theorem1Residuals verify_theorem1(const TreeMdp& mdp, const TabularDist& ref,
                                  const risk::RiskMeasureSpec& measure,
                                  double beta);

struct ImprovementReport {
    int requested = 0;
    int filtered = 0;
    int attempts = 0;
    int violations = 0;
    double worst_margin = 0.0;  // min over filtered trials of V' - V at root
};

ImprovementReport search_policy_improvement_counterexamples(
    int n_trials, const risk::RiskMeasureSpec& measure, uint64_t seed);

// Line-oriented report, one `check_name seed residual status` line per check.
// Returns true iff no asserted check failed.
bool run_verification_suite(std::ostream& out, uint64_t seed);

}  // namespace radpo::oracle
