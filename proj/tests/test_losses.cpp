#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "radpo/losses.hpp"
#include "radpo/numeric.hpp"

using namespace radpo;
using losses::LossConfig;
using losses::LossKind;
using losses::PreferencePair;
using policy::TabularPolicy;
using policy::TokenSeq;
using policy::VocabSpec;
using risk::RiskMeasureSpec;

namespace {

VocabSpec small_vocab(int size = 5) {
    VocabSpec v;
    v.size = size;
    return v;
}

PreferencePair random_pair(Rng& rng, const TabularPolicy& ref, int prompt_len,
                           int max_len) {
    PreferencePair pair;
    for (int i = 0; i < prompt_len; ++i)
        pair.prompt.push_back(2 + rng.uniform_int(ref.vocab.size - 2));
    do {
        pair.chosen = ref.sample_response(rng, pair.prompt, max_len);
        pair.rejected = ref.sample_response(rng, pair.prompt, max_len);
    } while (pair.chosen == pair.rejected);
    return pair;
}

std::vector<PreferencePair> random_batch(Rng& rng, const TabularPolicy& ref,
                                         int n) {
    std::vector<PreferencePair> batch;
    for (int i = 0; i < n; ++i) batch.push_back(random_pair(rng, ref, 2, 6));
    return batch;
}

LossConfig config_of(LossKind kind, RiskMeasureSpec measure,
                     double alpha = 0.5) {
    LossConfig c;
    c.kind = kind;
    c.alpha = alpha;
    c.measure = measure;
    return c;
}

}  // namespace

TEST_CASE("theta = ref gives zero margin, zero divergences, ln 2 loss") {
    Rng rng(1);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = ref.clone_trainable();
    auto batch = random_batch(rng, ref, 6);
    const RiskMeasureSpec measures[] = {RiskMeasureSpec::neutral(),
                                        RiskMeasureSpec::cvar(0.6),
                                        RiskMeasureSpec::erm(4.0)};
    const LossKind kinds[] = {LossKind::DPO, LossKind::TDPO1, LossKind::TDPO2,
                              LossKind::RaDPO1, LossKind::RaDPO2};
    for (const auto& pair : batch) {
        for (auto kind : kinds) {
            for (const auto& m : measures) {
                auto d = losses::pair_diagnostics(theta, ref, pair,
                                                  config_of(kind, m));
                CHECK(d.u == 0.0);
                CHECK(std::abs(d.seqkl_chosen) <= 1e-12);
                CHECK(std::abs(d.seqrr_chosen) <= 1e-12);
                CHECK(std::abs(d.seqrr_rejected) <= 1e-12);
                CHECK(std::abs(d.loss - std::log(2.0)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("margin is linear in beta and matches seq_logprob recomputation") {
    Rng rng(2);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 2.0);
    auto pair = random_pair(rng, ref, 2, 6);
    auto margin = [&](double beta) {
        diff::Graph g;
        policy::ParamMap pm(g, theta);
        return g.scalar(losses::margin_u(g, pm, theta, ref, pair, beta));
    };
    double expected = (theta.seq_logprob(pair.prompt, pair.chosen) -
                       ref.seq_logprob(pair.prompt, pair.chosen)) -
                      (theta.seq_logprob(pair.prompt, pair.rejected) -
                       ref.seq_logprob(pair.prompt, pair.rejected));
    CHECK(std::abs(margin(0.1) - 0.1 * expected) <= 1e-12);
    CHECK(std::abs(margin(0.2) - 2.0 * margin(0.1)) <= 1e-12);
}

TEST_CASE("neutral d_seq_rr equals an independent sequential KL") {
    Rng rng(3);
    auto ref = TabularPolicy::random(rng, small_vocab(6), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(6), 2, 2.0);
    auto pair = random_pair(rng, ref, 2, 6);
    double expected = 0.0;
    TokenSeq stream = pair.prompt;
    for (int tok : pair.chosen) {
        auto rp = ref.next_logprobs(stream);
        auto tp = theta.next_logprobs(stream);
        for (size_t i = 0; i < rp.size(); ++i)
            expected += std::exp(rp[i]) * (rp[i] - tp[i]);
        stream.push_back(tok);
    }
    double got = losses::d_seq_rr_value(theta, ref, pair.prompt, pair.chosen,
                                        RiskMeasureSpec::neutral());
    CHECK(std::abs(got - expected) <= 1e-12);
    CHECK(got >= -1e-12);  // Gibbs inequality

    diff::Graph g;
    policy::ParamMap pm(g, theta);
    auto kl = losses::d_seq_kl(g, pm, theta, ref, pair.prompt, pair.chosen);
    auto rr = [&] {
        diff::Graph g2;
        policy::ParamMap pm2(g2, theta);
        return g2.scalar(losses::d_seq_rr(g2, pm2, theta, ref, pair.prompt,
                                          pair.chosen,
                                          RiskMeasureSpec::neutral()));
    }();
    CHECK(g.scalar(kl) == rr);
}

TEST_CASE("single-position CVaR picks the worst half") {
    VocabSpec vocab;
    vocab.size = 2;
    vocab.bos_id = 0;
    vocab.eos_id = 1;
    auto ref = TabularPolicy::zeros(vocab, 1).clone_frozen();  // uniform
    auto theta = TabularPolicy::zeros(vocab, 1);
    theta.logits[0] = 0.8;  // BOS row becomes non-uniform
    auto rp = ref.next_logprobs(TokenSeq{});
    auto tp = theta.next_logprobs(TokenSeq{});
    double worst = std::max(rp[0] - tp[0], rp[1] - tp[1]);
    double got = losses::d_seq_rr_value(theta, ref, {}, {1},
                                        RiskMeasureSpec::cvar(0.5));
    CHECK(std::abs(got - worst) <= 1e-14);
}

TEST_CASE("risk dominance over sequential KL") {
    Rng rng(4);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 2.0);
    for (int trial = 0; trial < 30; ++trial) {
        auto pair = random_pair(rng, ref, 2, 6);
        double kl = losses::d_seq_rr_value(theta, ref, pair.prompt, pair.chosen,
                                           RiskMeasureSpec::neutral());
        for (auto spec :
             {RiskMeasureSpec::cvar(0.7), RiskMeasureSpec::erm(3.0)}) {
            CHECK(losses::d_seq_rr_value(theta, ref, pair.prompt, pair.chosen,
                                         spec) >= kl - 1e-12);
        }
    }
}

TEST_CASE("TDPO reductions") {
    Rng rng(5);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 1.0);
    auto batch = random_batch(rng, ref, 5);
    struct Case {
        LossKind risk_kind, base_kind;
        RiskMeasureSpec measure;
        double tol;
    };
    const Case cases[] = {
        {LossKind::RaDPO1, LossKind::TDPO1, RiskMeasureSpec::neutral(), 0.0},
        {LossKind::RaDPO2, LossKind::TDPO2, RiskMeasureSpec::neutral(), 0.0},
        {LossKind::RaDPO1, LossKind::TDPO1, RiskMeasureSpec::cvar(1.0), 1e-12},
        {LossKind::RaDPO2, LossKind::TDPO2, RiskMeasureSpec::cvar(1.0), 1e-12},
        {LossKind::RaDPO1, LossKind::TDPO1, RiskMeasureSpec::erm(1e-6), 1e-6},
        {LossKind::RaDPO2, LossKind::TDPO2, RiskMeasureSpec::erm(1e-6), 1e-6},
    };
    for (const auto& c : cases) {
        auto a = losses::batch_loss_and_grad(theta, ref, batch,
                                             config_of(c.risk_kind, c.measure));
        auto b = losses::batch_loss_and_grad(
            theta, ref, batch,
            config_of(c.base_kind, RiskMeasureSpec::neutral()));
        CHECK(std::abs(a.loss - b.loss) <= c.tol);
        double grad_gap = 0.0;
        for (size_t i = 0; i < a.grad.size(); ++i)
            grad_gap = std::max(grad_gap, std::abs(a.grad[i] - b.grad[i]));
        CHECK(grad_gap <= c.tol);
    }
}

TEST_CASE("RaDPO2 with alpha 0 equals the DPO loss value") {
    Rng rng(6);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 1.0);
    auto pair = random_pair(rng, ref, 2, 6);
    auto a = losses::pair_diagnostics(
        theta, ref, pair, config_of(LossKind::RaDPO2, RiskMeasureSpec::cvar(0.9), 0.0));
    auto b = losses::pair_diagnostics(
        theta, ref, pair, config_of(LossKind::DPO, RiskMeasureSpec::neutral()));
    CHECK(a.loss == b.loss);
}

TEST_CASE("batch reduction: identical pairs and permutation invariance") {
    Rng rng(7);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 1.0);
    auto pair = random_pair(rng, ref, 2, 6);
    auto config = config_of(LossKind::RaDPO1, RiskMeasureSpec::erm(3.0));
    std::vector<PreferencePair> rep(4, pair);
    auto batch_res = losses::batch_loss_and_grad(theta, ref, rep, config);
    std::vector<PreferencePair> one(1, pair);
    auto single = losses::batch_loss_and_grad(theta, ref, one, config);
    CHECK(std::abs(batch_res.loss - single.loss) <= 1e-14);

    auto batch = random_batch(rng, ref, 6);
    auto forward = losses::batch_loss_and_grad(theta, ref, batch, config);
    std::reverse(batch.begin(), batch.end());
    auto reversed = losses::batch_loss_and_grad(theta, ref, batch, config);
    CHECK(std::abs(forward.loss - reversed.loss) <= 1e-12);
}

TEST_CASE("gradients match finite differences for every loss kind") {
    Rng rng(8);
    struct Case {
        LossKind kind;
        RiskMeasureSpec measure;
    };
    const Case cases[] = {
        {LossKind::DPO, RiskMeasureSpec::neutral()},
        {LossKind::TDPO1, RiskMeasureSpec::neutral()},
        {LossKind::TDPO2, RiskMeasureSpec::neutral()},
        {LossKind::RaDPO1, RiskMeasureSpec::erm(3.0)},
        {LossKind::RaDPO2, RiskMeasureSpec::erm(3.0)},
        {LossKind::RaDPO1, RiskMeasureSpec::cvar(0.6)},
        {LossKind::RaDPO2, RiskMeasureSpec::cvar(0.6)},
    };
    for (const auto& c : cases) {
        for (int trial = 0; trial < 5; ++trial) {
            auto ref = TabularPolicy::random(rng, small_vocab(4), 1, 1.5)
                           .clone_frozen();
            auto theta = TabularPolicy::random(rng, small_vocab(4), 1, 1.5);
            auto batch = random_batch(rng, ref, 3);
            auto config = config_of(c.kind, c.measure);
            // For the sg-bearing kinds the defined gradient treats the
            // chosen-side term as constant, so the finite-difference target
            // must freeze that branch at the base point.
            bool has_sg = c.kind == LossKind::TDPO2 || c.kind == LossKind::RaDPO2;
            auto build = [&](diff::Graph& g, std::span<const double> p) {
                policy::ParamMap pm(g, theta, p);
                diff::NodeRef total;
                bool first = true;
                for (const auto& pair : batch) {
                    diff::NodeRef node;
                    if (has_sg) {
                        auto u = losses::margin_u(g, pm, theta, ref, pair,
                                                  config.beta);
                        auto m = config.effective_measure();
                        auto dl = losses::d_seq_rr(g, pm, theta, ref,
                                                   pair.prompt, pair.rejected,
                                                   m);
                        double dw = losses::d_seq_rr_value(
                            theta, ref, pair.prompt, pair.chosen, m);
                        auto delta2 = g.sub(g.scale(dl, config.beta),
                                            g.constant(config.beta * dw));
                        node = g.neg(g.log_sigmoid(
                            g.sub(u, g.scale(delta2, config.alpha))));
                    } else {
                        node = losses::pair_loss(g, pm, theta, ref, pair,
                                                 config)
                                   .first;
                    }
                    total = first ? node : g.add(total, node);
                    first = false;
                }
                return g.scale(total, 1.0 / batch.size());
            };
            // Probe build with no override to learn the leaf layout; the
            // evaluation point is then the probe's own parameter vector.
            diff::Graph probe;
            build(probe, {});
            auto point = probe.params();
            CHECK(diff::finite_diff_check(build, point, 1e-5) < 1e-4);
        }
    }
}

TEST_CASE("stop-gradient branch contributes nothing to the RaDPO2 gradient") {
    Rng rng(9);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = TabularPolicy::random(rng, small_vocab(), 2, 1.0);
    auto pair = random_pair(rng, ref, 2, 6);
    auto config = config_of(LossKind::RaDPO2, RiskMeasureSpec::cvar(0.8));

    auto with_sg = [&] {
        std::vector<PreferencePair> one(1, pair);
        return losses::batch_loss_and_grad(theta, ref, one, config);
    }();

    // Reference computation with the chosen-side term baked in as a constant.
    diff::Graph g;
    policy::ParamMap pm(g, theta);
    auto u = losses::margin_u(g, pm, theta, ref, pair, config.beta);
    double dw = losses::d_seq_rr_value(theta, ref, pair.prompt, pair.chosen,
                                       config.measure);
    auto dl = losses::d_seq_rr(g, pm, theta, ref, pair.prompt, pair.rejected,
                               config.measure);
    auto delta2 = g.sub(g.scale(dl, config.beta),
                        g.constant(config.beta * dw));
    auto loss = g.neg(g.log_sigmoid(g.sub(u, g.scale(delta2, config.alpha))));
    CHECK(g.scalar(loss) == doctest::Approx(with_sg.loss).epsilon(1e-14));
    auto leaf_grad = g.backward(loss);
    std::vector<double> table(theta.logits.size(), 0.0);
    pm.scatter(leaf_grad, table);
    for (size_t i = 0; i < table.size(); ++i)
        CHECK(table[i] == with_sg.grad[i]);
}

TEST_CASE("losses are invariant to a consistent token relabeling") {
    Rng rng(10);
    VocabSpec vocab;
    vocab.size = 4;
    auto ref = TabularPolicy::random(rng, vocab, 1, 2.0);
    auto theta = TabularPolicy::random(rng, vocab, 1, 1.0);
    auto frozen_ref = ref.clone_frozen();
    auto pair = random_pair(rng, frozen_ref, 1, 4);

    // Swap the two non-reserved tokens (2 <-> 3) everywhere.
    auto perm = [](int t) { return t == 2 ? 3 : (t == 3 ? 2 : t); };
    auto permute_policy = [&](const TabularPolicy& p) {
        auto q = p;
        for (int row = 0; row < p.contexts(); ++row)
            for (int j = 0; j < vocab.size; ++j)
                q.logits[static_cast<size_t>(perm(row)) * vocab.size +
                         perm(j)] =
                    p.logits[static_cast<size_t>(row) * vocab.size + j];
        return q;
    };
    auto permute_seq = [&](const TokenSeq& s) {
        TokenSeq out;
        for (int t : s) out.push_back(perm(t));
        return out;
    };
    PreferencePair ppair;
    ppair.prompt = permute_seq(pair.prompt);
    ppair.chosen = permute_seq(pair.chosen);
    ppair.rejected = permute_seq(pair.rejected);
    auto pref = permute_policy(ref).clone_frozen();
    auto ptheta = permute_policy(theta);

    for (auto kind : {LossKind::DPO, LossKind::RaDPO1, LossKind::RaDPO2}) {
        auto config = config_of(kind, RiskMeasureSpec::cvar(0.7));
        auto a = losses::pair_diagnostics(theta, frozen_ref, pair, config);
        auto b = losses::pair_diagnostics(ptheta, pref, ppair, config);
        CHECK(std::abs(a.loss - b.loss) <= 1e-12);
        CHECK(std::abs(a.u - b.u) <= 1e-12);
    }
}

TEST_CASE("validation errors") {
    Rng rng(11);
    auto ref = TabularPolicy::random(rng, small_vocab(), 2, 2.0).clone_frozen();
    auto theta = ref.clone_trainable();
    auto pair = random_pair(rng, ref, 2, 6);
    LossConfig bad;
    bad.beta = 0.0;
    CHECK_THROWS(losses::pair_diagnostics(theta, ref, pair, bad));
    LossConfig bad_measure;
    bad_measure.kind = LossKind::RaDPO1;
    bad_measure.measure = RiskMeasureSpec::cvar(2.0);
    CHECK_THROWS(losses::pair_diagnostics(theta, ref, pair, bad_measure));
    std::vector<PreferencePair> empty;
    CHECK_THROWS(losses::batch_loss_and_grad(theta, ref, empty, LossConfig{}));
    diff::Graph g;
    policy::ParamMap pm(g, theta);
    auto unfrozen = ref.clone_trainable();
    CHECK_THROWS(losses::margin_u(g, pm, theta, unfrozen, pair, 0.1));
}
