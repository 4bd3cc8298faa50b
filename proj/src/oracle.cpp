#include "radpo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <stdexcept>

namespace radpo::oracle {

namespace {

std::vector<int> make_offsets(int vocab, int horizon) {
    std::vector<int> offset(horizon + 2, 0);
    int width = 1;
    for (int d = 0; d <= horizon; ++d) {
        offset[d + 1] = offset[d] + width;
        width *= vocab;
    }
    return offset;
}

}  // namespace

TreeMdp TreeMdp::random(Rng& rng, int vocab, int horizon, double gamma,
                        double reward_scale) {
    if (vocab < 2 || horizon < 1)
        throw std::invalid_argument("TreeMdp: vocab >= 2 and horizon >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw std::invalid_argument("TreeMdp: gamma must be in (0, 1]");
    TreeMdp mdp;
    mdp.vocab = vocab;
    mdp.horizon = horizon;
    mdp.gamma = gamma;
    mdp.offset = make_offsets(vocab, horizon);
    mdp.step_rewards.resize(static_cast<size_t>(mdp.first_terminal()) * vocab);
    for (double& r : mdp.step_rewards)
        r = rng.uniform(-reward_scale, reward_scale);
    return mdp;
}

int TreeMdp::depth_of(int state) const {
    for (int d = 0; d <= horizon; ++d)
        if (state < offset[d + 1]) return d;
    throw std::out_of_range("TreeMdp: state out of range");
}

int TreeMdp::child(int state, int action) const {
    int d = depth_of(state);
    if (d >= horizon) throw std::out_of_range("TreeMdp: terminal state");
    return offset[d + 1] + (state - offset[d]) * vocab + action;
}

std::vector<double> TreeMdp::prefix_rewards() const {
    std::vector<double> prefix(num_states(), 0.0);
    double discount = 1.0;
    for (int d = 0; d < horizon; ++d) {
        for (int s = offset[d]; s < offset[d + 1]; ++s)
            for (int a = 0; a < vocab; ++a)
                prefix[child(s, a)] = prefix[s] + discount * reward(s, a);
        discount *= gamma;
    }
    return prefix;
}

std::vector<int> TreeMdp::path_tokens(int state) const {
    int d = depth_of(state);
    int idx = state - offset[d];
    std::vector<int> tokens(d);
    for (int i = d - 1; i >= 0; --i) {
        tokens[i] = idx % vocab;
        idx /= vocab;
    }
    return tokens;
}

TabularDist TabularDist::uniform(const TreeMdp& mdp) {
    TabularDist dist;
    dist.vocab = mdp.vocab;
    dist.rows.assign(static_cast<size_t>(mdp.first_terminal()) * mdp.vocab,
                     1.0 / mdp.vocab);
    return dist;
}

TabularDist TabularDist::random(Rng& rng, const TreeMdp& mdp) {
    TabularDist dist;
    dist.vocab = mdp.vocab;
    dist.rows.resize(static_cast<size_t>(mdp.first_terminal()) * mdp.vocab);
    for (int s = 0; s < mdp.first_terminal(); ++s) {
        double total = 0.0;
        for (int a = 0; a < mdp.vocab; ++a) {
            double p = rng.uniform(0.05, 1.0);
            dist.rows[static_cast<size_t>(s) * mdp.vocab + a] = p;
            total += p;
        }
        for (int a = 0; a < mdp.vocab; ++a)
            dist.rows[static_cast<size_t>(s) * mdp.vocab + a] /= total;
    }
    return dist;
}

ValueTables eval_values(const TreeMdp& mdp, const TabularDist& policy,
                        const risk::RiskMeasureSpec& measure, ValueMode mode,
                        BaselineMode baseline_mode) {
    if (policy.vocab != mdp.vocab)
        throw std::invalid_argument("eval_values: vocab mismatch");
    ValueTables t;
    t.mode = mode;
    t.baseline_mode = baseline_mode;
    t.q.assign(static_cast<size_t>(mdp.first_terminal()) * mdp.vocab, 0.0);
    t.v.assign(mdp.num_states(), 0.0);
    t.baseline.assign(mdp.first_terminal(), 0.0);

    if (mode == ValueMode::Augmented) {
        auto prefix = mdp.prefix_rewards();
        for (int s = mdp.first_terminal(); s < mdp.num_states(); ++s)
            t.v[s] = prefix[s];
    }

    for (int d = mdp.horizon - 1; d >= 0; --d) {
        double discount = std::pow(mdp.gamma, d);
        for (int s = mdp.offset[d]; s < mdp.offset[d + 1]; ++s) {
            auto pi = policy.row(s);
            double ev = 0.0;
            for (int a = 0; a < mdp.vocab; ++a) {
                double next = t.v[mdp.child(s, a)];
                double q = mode == ValueMode::Stepwise
                               ? discount * mdp.reward(s, a) + next
                               : next;
                t.q[static_cast<size_t>(s) * mdp.vocab + a] = q;
                ev += pi[a] * q;
            }
            t.v[s] = ev;
            if (baseline_mode == BaselineMode::Scalar) {
                t.baseline[s] = ev;
            } else {
                risk::Categorical dist;
                dist.probs.assign(pi.begin(), pi.end());
                dist.values.assign(
                    t.q.begin() + static_cast<size_t>(s) * mdp.vocab,
                    t.q.begin() + static_cast<size_t>(s + 1) * mdp.vocab);
                t.baseline[s] = risk::value_aggregate(measure, dist);
            }
        }
    }
    return t;
}

double advantage(const TreeMdp& mdp, const ValueTables& tables, int state,
                 int action) {
    if (state >= mdp.first_terminal())
        throw std::out_of_range("advantage: terminal state");
    return tables.q_at(mdp, state, action) - tables.baseline[state];
}

TabularDist closed_form_policy(const TreeMdp& mdp, const TabularDist& ref,
                               const risk::RiskMeasureSpec& measure,
                               double beta) {
    if (!(beta > 0.0))
        throw std::invalid_argument("closed_form_policy: beta must be > 0");
    auto tables =
        eval_values(mdp, ref, measure, ValueMode::Augmented, BaselineMode::Scalar);
    TabularDist out;
    out.vocab = mdp.vocab;
    out.rows.resize(ref.rows.size());
    std::vector<double> logw(mdp.vocab);
    for (int s = 0; s < mdp.first_terminal(); ++s) {
        auto p = ref.row(s);
        for (int a = 0; a < mdp.vocab; ++a) {
            if (p[a] > 0.0)
                logw[a] = std::log(p[a]) + tables.q_at(mdp, s, a) / beta;
            else
                logw[a] = -1e300;
        }
        auto lp = log_softmax(logw);
        for (int a = 0; a < mdp.vocab; ++a)
            out.rows[static_cast<size_t>(s) * mdp.vocab + a] =
                p[a] > 0.0 ? std::exp(lp[a]) : 0.0;
    }
    return out;
}

TabularDist brute_force_policy(const TreeMdp& mdp, const TabularDist& ref,
                               const risk::RiskMeasureSpec& measure,
                               double beta, int iterations) {
    auto tables =
        eval_values(mdp, ref, measure, ValueMode::Augmented, BaselineMode::Scalar);
    TabularDist out = ref;
    std::vector<double> g(mdp.vocab), next(mdp.vocab);
    double step = 0.5 / beta;
    for (int s = 0; s < mdp.first_terminal(); ++s) {
        auto p = ref.row(s);
        double* pi = out.rows.data() + static_cast<size_t>(s) * mdp.vocab;
        for (int it = 0; it < iterations; ++it) {
            for (int a = 0; a < mdp.vocab; ++a) {
                double adv = advantage(mdp, tables, s, a);
                double lr = p[a] > 0.0 ? std::log(p[a]) : -1e300;
                double lpi = pi[a] > 0.0 ? std::log(pi[a]) : -1e300;
                g[a] = adv + beta * lr - beta * lpi - beta;
            }
            double m = g[0] * step;
            for (int a = 0; a < mdp.vocab; ++a) m = std::max(m, g[a] * step);
            double total = 0.0;
            for (int a = 0; a < mdp.vocab; ++a) {
                next[a] = pi[a] * std::exp(g[a] * step - m);
                total += next[a];
            }
            for (int a = 0; a < mdp.vocab; ++a) pi[a] = next[a] / total;
        }
    }
    return out;
}

double verify_lemma1(const TreeMdp& mdp, const TabularDist& policy,
                     const risk::RiskMeasureSpec& measure) {
    auto step = eval_values(mdp, policy, measure, ValueMode::Stepwise,
                            BaselineMode::Scalar);
    auto aug = eval_values(mdp, policy, measure, ValueMode::Augmented,
                           BaselineMode::Scalar);
    auto prefix = mdp.prefix_rewards();
    double worst = 0.0;
    for (int s = 0; s < mdp.num_states(); ++s)
        worst = std::max(worst, std::abs(aug.v[s] - (step.v[s] + prefix[s])));
    return worst;
}

double verify_regret_identity(const TreeMdp& mdp, const TabularDist& policy,
                              const risk::RiskMeasureSpec& measure) {
    auto tables = eval_values(mdp, policy, measure, ValueMode::Augmented,
                              BaselineMode::Scalar);
    auto prefix = mdp.prefix_rewards();
    double worst = 0.0;
    for (int leaf = mdp.first_terminal(); leaf < mdp.num_states(); ++leaf) {
        auto tokens = mdp.path_tokens(leaf);
        double sum_adv = 0.0;
        int s = 0;
        for (int tok : tokens) {
            sum_adv += advantage(mdp, tables, s, tok);
            s = mdp.child(s, tok);
        }
        worst = std::max(worst,
                         std::abs(prefix[leaf] - tables.v[0] - sum_adv));
    }
    return worst;
}

Theorem1Residuals verify_theorem1(const TreeMdp& mdp, const TabularDist& ref,
                                  const risk::RiskMeasureSpec& measure,
                                  double beta) {
    if (mdp.gamma != 1.0)
        throw std::invalid_argument("verify_theorem1: requires gamma = 1");
    auto tables = eval_values(mdp, ref, measure, ValueMode::Augmented,
                              BaselineMode::ActionRisk);
    auto pi_star = closed_form_policy(mdp, ref, measure, beta);
    auto prefix = mdp.prefix_rewards();

    int n_leaves = mdp.num_states() - mdp.first_terminal();
    std::vector<double> adv_sum(n_leaves), rhs(n_leaves), ret(n_leaves);

    Theorem1Residuals res;
    for (int leaf = mdp.first_terminal(); leaf < mdp.num_states(); ++leaf) {
        auto tokens = mdp.path_tokens(leaf);
        double sum_adv = 0.0, log_ratio = 0.0, seqrr = 0.0;
        int s = 0;
        for (int tok : tokens) {
            sum_adv += advantage(mdp, tables, s, tok);
            auto p_ref = ref.row(s);
            auto p_star = pi_star.row(s);
            log_ratio += std::log(p_star[tok]) - std::log(p_ref[tok]);
            risk::Categorical dist;
            dist.probs.assign(p_ref.begin(), p_ref.end());
            dist.values.resize(mdp.vocab);
            for (int a = 0; a < mdp.vocab; ++a)
                dist.values[a] =
                    p_ref[a] > 0.0
                        ? std::log(p_ref[a]) - std::log(p_star[a])
                        : 0.0;
            seqrr += risk::penalty_aggregate(measure, dist);
            s = mdp.child(s, tok);
        }
        int i = leaf - mdp.first_terminal();
        adv_sum[i] = sum_adv;
        rhs[i] = beta * (log_ratio + seqrr);
        ret[i] = prefix[leaf];
        res.b6 = std::max(res.b6, std::abs(sum_adv - rhs[i]));
    }
    for (int i = 0; i < n_leaves; ++i)
        for (int j = 0; j < n_leaves; ++j)
            res.chain = std::max(res.chain,
                                 std::abs(sigmoid(ret[i] - ret[j]) -
                                          sigmoid(rhs[i] - rhs[j])));
    return res;
}

ImprovementReport search_policy_improvement_counterexamples(
    int n_trials, const risk::RiskMeasureSpec& measure, uint64_t seed) {
    Rng rng(seed);
    ImprovementReport report;
    report.requested = n_trials;
    report.worst_margin = 1e300;
    int max_attempts = 50 * n_trials;
    while (report.filtered < n_trials && report.attempts < max_attempts) {
        int variant = report.attempts % 4;
        ++report.attempts;
        auto mdp = TreeMdp::random(rng, 3, 3, 1.0);
        auto pi = TabularDist::random(rng, mdp);
        auto tables = eval_values(mdp, pi, measure, ValueMode::Augmented,
                                  BaselineMode::ActionRisk);
        TabularDist pi2 = pi;
        switch (variant) {
            case 0:
                break;  // pi' = pi
            case 1: {   // exponential tilt toward the advantage
                double c = rng.uniform(0.0, 5.0);
                for (int s = 0; s < mdp.first_terminal(); ++s) {
                    double total = 0.0;
                    double* row =
                        pi2.rows.data() + static_cast<size_t>(s) * mdp.vocab;
                    for (int a = 0; a < mdp.vocab; ++a) {
                        row[a] *= std::exp(c * advantage(mdp, tables, s, a));
                        total += row[a];
                    }
                    for (int a = 0; a < mdp.vocab; ++a) row[a] /= total;
                }
                break;
            }
            case 2: {  // greedy on the advantage
                for (int s = 0; s < mdp.first_terminal(); ++s) {
                    int best = 0;
                    for (int a = 1; a < mdp.vocab; ++a)
                        if (advantage(mdp, tables, s, a) >
                            advantage(mdp, tables, s, best))
                            best = a;
                    double* row =
                        pi2.rows.data() + static_cast<size_t>(s) * mdp.vocab;
                    for (int a = 0; a < mdp.vocab; ++a)
                        row[a] = a == best ? 1.0 : 0.0;
                }
                break;
            }
            case 3:
                pi2 = TabularDist::random(rng, mdp);
                break;
        }
        bool condition = true;
        for (int s = 0; s < mdp.first_terminal() && condition; ++s) {
            double expected = 0.0;
            auto row = pi2.row(s);
            for (int a = 0; a < mdp.vocab; ++a)
                expected += row[a] * advantage(mdp, tables, s, a);
            if (expected < -1e-12) condition = false;
        }
        if (!condition) continue;
        ++report.filtered;
        auto t2 = eval_values(mdp, pi2, measure, ValueMode::Augmented,
                              BaselineMode::Scalar);
        double margin = t2.v[0] - tables.v[0];
        report.worst_margin = std::min(report.worst_margin, margin);
        if (margin < -1e-10) ++report.violations;
    }
    return report;
}

namespace {

double total_variation(const TabularDist& a, const TabularDist& b) {
    double worst = 0.0;
    size_t n_states = a.rows.size() / a.vocab;
    for (size_t s = 0; s < n_states; ++s) {
        double tv = 0.0;
        for (int k = 0; k < a.vocab; ++k)
            tv += std::abs(a.rows[s * a.vocab + k] - b.rows[s * a.vocab + k]);
        worst = std::max(worst, 0.5 * tv);
    }
    return worst;
}

struct SuiteMeasure {
    const char* name;
    risk::RiskMeasureSpec spec;
};

}  // namespace

bool run_verification_suite(std::ostream& out, uint64_t seed) {
    const SuiteMeasure measures[] = {
        {"neutral", risk::RiskMeasureSpec::neutral()},
        {"cvar0.95", risk::RiskMeasureSpec::cvar(0.95)},
        {"erm5", risk::RiskMeasureSpec::erm(5.0)},
    };
    bool ok = true;
    out << std::setprecision(6) << std::scientific;
    auto emit = [&](const std::string& name, uint64_t s, double residual,
                    bool asserted, bool pass) {
        out << name << " " << s << " " << residual << " "
            << (asserted ? (pass ? "pass" : "fail") : "report") << "\n";
        if (asserted && !pass) ok = false;
    };

    // Lemma 1: stepwise vs augmented recursions.
    for (double gamma : {1.0, 0.9}) {
        for (const auto& m : measures) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(gamma * 10) +
                                       (&m - measures)));
            double worst = 0.0;
            for (int trial = 0; trial < 100; ++trial) {
                auto mdp = TreeMdp::random(rng, 3, 3, gamma);
                auto pi = TabularDist::random(rng, mdp);
                worst = std::max(worst, verify_lemma1(mdp, pi, m.spec));
            }
            std::string name = std::string("lemma1_") + m.name + "_gamma" +
                               (gamma == 1.0 ? "1.0" : "0.9");
            emit(name, seed, worst, true, worst <= 1e-10);
        }
    }

    // Lemma 3 / Eq. 9: closed form vs ascent-based maximizer.
    for (double beta : {0.1, 1.0}) {
        for (const auto& m : measures) {
            Rng rng(mix_seed(seed, 100 + static_cast<uint64_t>(beta * 10) +
                                       (&m - measures)));
            double worst = 0.0;
            for (int trial = 0; trial < 20; ++trial) {
                auto mdp = TreeMdp::random(rng, 3, 3, 1.0);
                auto ref = TabularDist::random(rng, mdp);
                auto closed = closed_form_policy(mdp, ref, m.spec, beta);
                auto brute = brute_force_policy(mdp, ref, m.spec, beta);
                worst = std::max(worst, total_variation(closed, brute));
            }
            std::string name = std::string("eq9_closed_form_") + m.name +
                               "_beta" + (beta == 0.1 ? "0.1" : "1.0");
            emit(name, seed, worst, true, worst <= 1e-6);
        }
    }

    // Lemma 4 / B.2 telescoping regret identity.
    for (double gamma : {1.0, 0.9}) {
        for (const auto& m : measures) {
            Rng rng(mix_seed(seed, 200 + static_cast<uint64_t>(gamma * 10) +
                                       (&m - measures)));
            double worst = 0.0;
            for (int trial = 0; trial < 100; ++trial) {
                auto mdp = TreeMdp::random(rng, 3, 3, gamma);
                auto pi = TabularDist::random(rng, mdp);
                worst = std::max(worst, verify_regret_identity(mdp, pi, m.spec));
            }
            std::string name = std::string("regret_identity_") + m.name +
                               "_gamma" + (gamma == 1.0 ? "1.0" : "0.9");
            emit(name, seed, worst, true, worst <= 1e-10);
        }
    }

    // Theorem 1 / B.6 identity and the full sigma(u - delta) chain.
    struct Th1 {
        const char* name;
        risk::RiskMeasureSpec spec;
        double beta;
        bool assert_chain;
    };
    const Th1 th1[] = {
        {"neutral", risk::RiskMeasureSpec::neutral(), 0.1, true},
        {"cvar0.95", risk::RiskMeasureSpec::cvar(0.95), 0.1, false},
        {"erm5", risk::RiskMeasureSpec::erm(5.0), 1.0, false},
    };
    for (const auto& c : th1) {
        Rng rng(mix_seed(seed, 300 + (&c - th1)));
        double worst_b6 = 0.0, worst_chain = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            auto mdp = TreeMdp::random(rng, 3, 3, 1.0);
            auto ref = TabularDist::random(rng, mdp);
            auto res = verify_theorem1(mdp, ref, c.spec, c.beta);
            worst_b6 = std::max(worst_b6, res.b6);
            worst_chain = std::max(worst_chain, res.chain);
        }
        emit(std::string("theorem1_b6_") + c.name, seed, worst_b6, true,
             worst_b6 <= 1e-8);
        emit(std::string("theorem1_chain_") + c.name, seed, worst_chain,
             c.assert_chain, worst_chain <= 1e-8);
    }

    // Lemma 2 policy-improvement search.
    for (const auto& m : measures) {
        auto report = search_policy_improvement_counterexamples(
            1000, m.spec, mix_seed(seed, 400 + (&m - measures)));
        bool neutral = m.spec.kind == risk::MeasureKind::Neutral;
        emit(std::string("lemma2_improvement_") + m.name, seed,
             static_cast<double>(report.violations), neutral,
             report.violations == 0 && report.filtered == report.requested);
    }
    return ok;
}

}  // namespace radpo::oracle
