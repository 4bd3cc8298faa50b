#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "radpo/datagen.hpp"
#include "radpo/trainer.hpp"

using namespace radpo;
using losses::LossKind;
using policy::TabularPolicy;
using policy::VocabSpec;
using trainer::OptimizerKind;
using trainer::OptimizerState;
using trainer::TrainConfig;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct Fixture {
    VocabSpec vocab;
    datagen::TaskSpec task;
    TabularPolicy ref;
    datagen::Dataset data;

    explicit Fixture(int n_pairs = 120) {
        vocab.size = 6;
        task = datagen::gen_task(2, vocab, 2, 2, 6, 2.0);
        Rng rng(3);
        ref = TabularPolicy::random(rng, vocab, 2, 0.5);
        data = datagen::sample_dataset(task, ref, n_pairs, 5);
    }
};

}  // namespace

TEST_CASE("optimizer_step basics") {
    TrainConfig config;
    config.learning_rate = 0.1;

    SUBCASE("zero gradient is a no-op") {
        for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
            config.optimizer = kind;
            OptimizerState state;
            std::vector<double> params = {1.0, -2.0};
            std::vector<double> grad = {0.0, 0.0};
            trainer::optimizer_step(state, params, grad, config);
            CHECK(params[0] == 1.0);
            CHECK(params[1] == -2.0);
        }
    }

    SUBCASE("Adam first step moves by about lr in the gradient direction") {
        config.optimizer = OptimizerKind::Adam;
        for (double g : {1.0, -0.5, 1e-3}) {
            OptimizerState state;
            std::vector<double> params = {0.0};
            std::vector<double> grad = {g};
            trainer::optimizer_step(state, params, grad, config);
            double expected = -config.learning_rate * g /
                              (std::abs(g) + config.adam_eps);
            CHECK(std::abs(params[0] - expected) <=
                  1e-6 * std::abs(expected));
        }
    }

    SUBCASE("SGD is linear in repeated application") {
        config.optimizer = OptimizerKind::SGD;
        OptimizerState state;
        std::vector<double> params = {1.0};
        std::vector<double> grad = {0.25};
        trainer::optimizer_step(state, params, grad, config);
        trainer::optimizer_step(state, params, grad, config);
        CHECK(params[0] == doctest::Approx(1.0 - 2 * 0.1 * 0.25)
                               .epsilon(1e-15));
    }

    SUBCASE("non-finite gradient aborts") {
        OptimizerState state;
        std::vector<double> params = {1.0};
        std::vector<double> grad = {std::nan("")};
        CHECK_THROWS(trainer::optimizer_step(state, params, grad, config));
    }
}

TEST_CASE("evaluate at theta = ref and under label flips") {
    Fixture f(60);
    auto ref = f.ref.clone_frozen();
    auto theta = f.ref.clone_trainable();
    losses::LossConfig loss;
    loss.kind = LossKind::TDPO1;
    auto row = trainer::evaluate(theta, ref, f.data, loss);
    CHECK(row.reward_accuracy == 0.5);
    CHECK(row.seqkl_chosen == 0.0);
    CHECK(row.seqrr_chosen == 0.0);
    CHECK(row.margin_mean == 0.0);
    CHECK(row.train_loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    Rng rng(9);
    auto other = TabularPolicy::random(rng, f.vocab, 2, 0.5);
    auto a = trainer::evaluate(other, ref, f.data, loss);
    auto flipped = f.data;
    for (auto& pair : flipped) std::swap(pair.chosen, pair.rejected);
    auto b = trainer::evaluate(other, ref, flipped, loss);
    CHECK(a.reward_accuracy == doctest::Approx(1.0 - b.reward_accuracy)
                                   .epsilon(1e-12));

    datagen::Dataset empty;
    CHECK_THROWS(trainer::evaluate(theta, ref, empty, loss));
}

TEST_CASE("evaluate matches an independent recomputation on a tiny dataset") {
    Fixture f(3);
    Rng rng(11);
    auto theta = TabularPolicy::random(rng, f.vocab, 2, 0.5);
    auto ref = f.ref.clone_frozen();
    losses::LossConfig loss;
    loss.kind = LossKind::RaDPO2;
    loss.alpha = 0.5;
    loss.measure = risk::RiskMeasureSpec::cvar(0.9);
    auto row = trainer::evaluate(theta, ref, f.data, loss);
    double u_sum = 0.0, kl_sum = 0.0, acc = 0.0;
    for (const auto& pair : f.data) {
        auto d = losses::pair_diagnostics(theta, ref, pair, loss);
        u_sum += d.u;
        kl_sum += d.seqkl_chosen;
        acc += d.u > 0 ? 1.0 : (d.u == 0 ? 0.5 : 0.0);
    }
    CHECK(std::abs(row.margin_mean - u_sum / 3.0) <= 1e-12);
    CHECK(std::abs(row.seqkl_chosen - kl_sum / 3.0) <= 1e-12);
    CHECK(row.reward_accuracy == doctest::Approx(acc / 3.0).epsilon(1e-15));
}

TEST_CASE("train: epochs 0 and lr 0") {
    Fixture f;
    TrainConfig config;
    config.loss.kind = LossKind::TDPO1;
    config.epochs = 0;
    auto r0 = trainer::train_in_memory(config, f.ref, f.data, false);
    CHECK(r0.metrics.size() == 1);
    CHECK(r0.metrics[0].step == 0);
    CHECK(r0.metrics[0].reward_accuracy == 0.5);

    config.epochs = 2;
    config.learning_rate = 0.0;
    config.eval_every = 1;
    auto r1 = trainer::train_in_memory(config, f.ref, f.data, false);
    CHECK(r1.metrics.size() > 2);
    for (const auto& row : r1.metrics) {
        CHECK(std::abs(row.train_loss - r1.metrics[0].train_loss) <= 1e-12);
        CHECK(std::abs(row.reward_accuracy - 0.5) <= 1e-12);
        CHECK(std::abs(row.seqkl_chosen) <= 1e-12);
    }
}

TEST_CASE("train decreases the loss and is byte-identically reproducible") {
    Fixture f;
    TrainConfig config;
    config.loss.kind = LossKind::RaDPO2;
    config.loss.alpha = 0.5;
    config.loss.measure = risk::RiskMeasureSpec::cvar(0.95);
    config.epochs = 3;
    config.eval_every = 2;
    config.seed = 7;
    auto base = std::filesystem::temp_directory_path();
    config.output_dir = base / "radpo_train_a";
    auto a = trainer::train_in_memory(config, f.ref, f.data, true);
    config.output_dir = base / "radpo_train_b";
    auto b = trainer::train_in_memory(config, f.ref, f.data, true);

    CHECK(a.metrics.back().train_loss < a.metrics.front().train_loss);
    CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
    CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
    CHECK(std::filesystem::file_size(a.metrics_path) > 0);

    std::filesystem::remove_all(base / "radpo_train_a");
    std::filesystem::remove_all(base / "radpo_train_b");
}

TEST_CASE("metrics csv format") {
    std::vector<trainer::MetricsRow> rows(1);
    rows[0].step = 3;
    rows[0].train_loss = 0.123456789123;
    auto path = std::filesystem::temp_directory_path() / "radpo_metrics.csv";
    trainer::write_metrics_csv(path, rows);
    auto text = slurp(path);
    CHECK(text.find("step,train_loss,reward_accuracy,") == 0);
    CHECK(text.find("\n3,0.123456789,") != std::string::npos);
    std::filesystem::remove(path);
}
