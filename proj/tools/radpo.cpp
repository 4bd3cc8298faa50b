#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "radpo/datagen.hpp"
#include "radpo/losses.hpp"
#include "radpo/oracle.hpp"
#include "radpo/policy.hpp"
#include "radpo/risk.hpp"
#include "radpo/trainer.hpp"

namespace {

using namespace radpo;

risk::RiskMeasureSpec parse_measure(const std::string& name, double mu) {
    if (name == "neutral") return risk::RiskMeasureSpec::neutral();
    if (name == "cvar") return risk::RiskMeasureSpec::cvar(mu);
    if (name == "erm") return risk::RiskMeasureSpec::erm(mu);
    throw CLI::ValidationError("--measure",
                               "expected neutral, cvar, or erm: " + name);
}

losses::LossKind parse_loss(const std::string& name) {
    if (name == "dpo") return losses::LossKind::DPO;
    if (name == "tdpo1") return losses::LossKind::TDPO1;
    if (name == "tdpo2") return losses::LossKind::TDPO2;
    if (name == "radpo1") return losses::LossKind::RaDPO1;
    if (name == "radpo2") return losses::LossKind::RaDPO2;
    throw CLI::ValidationError(
        "--loss", "expected dpo, tdpo1, tdpo2, radpo1, or radpo2: " + name);
}

struct LossFlags {
    std::string loss = "dpo";
    double beta = 0.1;
    double alpha = 0.5;
    std::string measure = "neutral";
    double mu = 0.95;

    void attach(CLI::App* cmd) {
        cmd->add_option("--loss", loss, "dpo, tdpo1, tdpo2, radpo1, radpo2");
        cmd->add_option("--beta", beta, "KL/temperature coefficient");
        cmd->add_option("--alpha", alpha, "tdpo2/radpo2 drift weight");
        cmd->add_option("--measure", measure, "neutral, cvar, erm");
        cmd->add_option("--mu", mu, "risk-measure parameter");
    }
    losses::LossConfig build() const {
        losses::LossConfig c;
        c.kind = parse_loss(loss);
        c.beta = beta;
        c.alpha = alpha;
        c.measure = parse_measure(measure, mu);
        c.validate();
        return c;
    }
};

void print_metrics_row(const trainer::MetricsRow& row) {
    std::printf(
        "step,train_loss,reward_accuracy,seqkl_chosen,seqkl_rejected,"
        "seqrr_chosen,seqrr_rejected,margin_mean,truncation_rate\n");
    std::printf("%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.step,
                row.train_loss, row.reward_accuracy, row.seqkl_chosen,
                row.seqkl_rejected, row.seqrr_chosen, row.seqrr_rejected,
                row.margin_mean, row.truncation_rate);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-aware token-level preference optimization lab"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "key=value config file; subcommand options live in a "
                   "matching [section]");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate task, reference policy, "
                                          "and preference dataset");
    uint64_t gen_seed = 0;
    int gen_vocab = 12, gen_window = 2, gen_prompt_len = 3,
        gen_response_len = 16, gen_pairs = 5000;
    double gen_score_scale = 1.0, gen_ref_scale = 0.5;
    std::string gen_out = "task_out";
    std::string gen_ref;
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--vocab", gen_vocab, "vocabulary size");
    gen->add_option("--window", gen_window, "context window");
    gen->add_option("--prompt-len", gen_prompt_len, "prompt length");
    gen->add_option("--response-len", gen_response_len, "max response length");
    gen->add_option("--pairs", gen_pairs, "number of preference pairs");
    gen->add_option("--score-scale", gen_score_scale,
                    "ground-truth score scale");
    gen->add_option("--ref-scale", gen_ref_scale,
                    "reference logit scale when sampling a fresh reference");
    gen->add_option("--ref", gen_ref, "existing reference checkpoint to use");
    gen->add_option("--out", gen_out, "output directory");

    // train
    auto* train = app.add_subcommand("train", "Run the training loop");
    LossFlags train_loss;
    train_loss.attach(train);
    trainer::TrainConfig tc;
    std::string train_optimizer = "adam";
    std::string train_dataset, train_ref, train_out = "train_out";
    bool paper_lr = false;
    train->add_option("--dataset", train_dataset, "dataset file")->required();
    train->add_option("--ref", train_ref, "reference checkpoint")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--lr", tc.learning_rate, "learning rate");
    train->add_option("--optimizer", train_optimizer, "sgd or adam");
    train->add_option("--weight-decay", tc.weight_decay, "decoupled decay");
    train->add_option("--batch-size", tc.batch_size, "micro-batch size");
    train->add_option("--grad-accum", tc.grad_accum_steps,
                      "micro-batches per optimizer step");
    train->add_option("--epochs", tc.epochs, "epochs");
    train->add_option("--eval-every", tc.eval_every,
                      "optimizer steps between metric rows");
    train->add_option("--seed", tc.seed, "run seed");
    train->add_flag("--paper-lr", paper_lr,
                    "use the published fine-tuning rate 5e-6");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    LossFlags eval_loss;
    eval_loss.attach(eval);
    std::string eval_dataset, eval_ref, eval_ckpt;
    eval->add_option("--dataset", eval_dataset, "dataset file")->required();
    eval->add_option("--ref", eval_ref, "reference checkpoint")->required();
    eval->add_option("--checkpoint", eval_ckpt,
                     "policy checkpoint (defaults to the reference)");

    // verify
    auto* verify = app.add_subcommand("verify", "Run the identity suite");
    uint64_t verify_seed = 0;
    verify->add_option("--seed", verify_seed, "suite seed");

    // riskcalc
    auto* riskcalc = app.add_subcommand(
        "riskcalc", "Aggregate a categorical distribution file");
    std::string risk_file, risk_measure = "neutral";
    double risk_mu = 0.95;
    riskcalc->add_option("--file", risk_file,
                         "file of `prob value` lines")->required();
    riskcalc->add_option("--measure", risk_measure, "neutral, cvar, erm");
    riskcalc->add_option("--mu", risk_mu, "risk-measure parameter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            policy::VocabSpec vocab;
            vocab.size = gen_vocab;
            auto task = datagen::gen_task(gen_seed, vocab, gen_window,
                                          gen_prompt_len, gen_response_len,
                                          gen_score_scale);
            policy::TabularPolicy ref;
            if (!gen_ref.empty()) {
                ref = policy::TabularPolicy::load(gen_ref);
            } else {
                Rng rng(mix_seed(gen_seed, 0x9e3779b9));
                ref = policy::TabularPolicy::random(rng, vocab, gen_window,
                                                    gen_ref_scale);
            }
            auto data = datagen::sample_dataset(task, ref, gen_pairs, gen_seed);
            std::filesystem::create_directories(gen_out);
            datagen::write_task(std::filesystem::path(gen_out) / "task.txt",
                                task);
            ref.save(std::filesystem::path(gen_out) / "ref.txt");
            datagen::write_dataset(
                std::filesystem::path(gen_out) / "dataset.txt", data);
            std::printf("wrote %d pairs to %s\n", gen_pairs, gen_out.c_str());
        } else if (train->parsed()) {
            tc.loss = train_loss.build();
            if (train_optimizer == "sgd")
                tc.optimizer = trainer::OptimizerKind::SGD;
            else if (train_optimizer == "adam")
                tc.optimizer = trainer::OptimizerKind::Adam;
            else
                throw std::invalid_argument("unknown optimizer: " +
                                            train_optimizer);
            if (paper_lr) tc.learning_rate = 5e-6;
            tc.dataset_path = train_dataset;
            tc.ref_path = train_ref;
            tc.output_dir = train_out;
            auto result = trainer::train(tc);
            print_metrics_row(result.metrics.back());
        } else if (eval->parsed()) {
            auto config = eval_loss.build();
            auto ref = policy::TabularPolicy::load(eval_ref).clone_frozen();
            auto theta = eval_ckpt.empty()
                             ? ref.clone_trainable()
                             : policy::TabularPolicy::load(eval_ckpt);
            auto data = datagen::read_dataset(eval_dataset, ref.vocab);
            print_metrics_row(trainer::evaluate(theta, ref, data, config));
        } else if (verify->parsed()) {
            if (!oracle::run_verification_suite(std::cout, verify_seed))
                return 2;
        } else if (riskcalc->parsed()) {
            std::ifstream in(risk_file);
            if (!in)
                throw std::runtime_error("cannot read distribution: " +
                                         risk_file);
            risk::Categorical dist;
            std::string line;
            while (std::getline(in, line)) {
                size_t start = line.find_first_not_of(" \t\r");
                if (start == std::string::npos || line[start] == '#') continue;
                std::istringstream row(line);
                double p, v;
                if (!(row >> p >> v))
                    throw std::runtime_error("bad distribution line: " + line);
                dist.probs.push_back(p);
                dist.values.push_back(v);
            }
            auto spec = parse_measure(risk_measure, risk_mu);
            std::printf("%.17g\n", risk::penalty_aggregate(spec, dist));
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
