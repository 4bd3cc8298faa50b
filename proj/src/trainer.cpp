#include "radpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace radpo::trainer {

void TrainConfig::validate() const {
    loss.validate();
    if (!(learning_rate >= 0.0))
        throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (batch_size < 1)
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (grad_accum_steps < 1)
        throw std::invalid_argument(
            "TrainConfig: grad_accum_steps must be >= 1");
    if (epochs < 0)
        throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (eval_every < 1)
        throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
        throw std::invalid_argument("TrainConfig: bad Adam constants");
    if (!(weight_decay >= 0.0))
        throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
}

void optimizer_step(OptimizerState& state, std::span<double> params,
                    std::span<const double> grad, const TrainConfig& config) {
    if (params.size() != grad.size())
        throw std::invalid_argument("optimizer_step: shape mismatch");
    for (double g : grad)
        if (!std::isfinite(g))
            throw std::runtime_error("optimizer_step: non-finite gradient");
    double lr = config.learning_rate;
    if (config.optimizer == OptimizerKind::SGD) {
        ++state.step;
        for (size_t i = 0; i < params.size(); ++i)
            params[i] -= lr * grad[i] + lr * config.weight_decay * params[i];
        return;
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("optimizer_step: state shape mismatch");
    ++state.step;
    double b1 = config.adam_beta1, b2 = config.adam_beta2;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        double mhat = state.m[i] / c1;
        double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps) +
                     lr * config.weight_decay * params[i];
    }
}

MetricsRow evaluate(const policy::TabularPolicy& theta,
                    const policy::TabularPolicy& ref,
                    std::span<const losses::PreferencePair> pairs,
                    const losses::LossConfig& loss) {
    if (pairs.empty())
        throw std::invalid_argument("evaluate: empty dataset");
    MetricsRow row;
    int eos = theta.vocab.eos_id;
    for (const auto& pair : pairs) {
        auto d = losses::pair_diagnostics(theta, ref, pair, loss);
        row.train_loss += d.loss;
        row.reward_accuracy += d.u > 0.0 ? 1.0 : (d.u == 0.0 ? 0.5 : 0.0);
        row.seqkl_chosen += d.seqkl_chosen;
        row.seqkl_rejected += d.seqkl_rejected;
        row.seqrr_chosen += d.seqrr_chosen;
        row.seqrr_rejected += d.seqrr_rejected;
        row.margin_mean += d.u;
        row.truncation_rate += (pair.chosen.back() != eos ? 0.5 : 0.0) +
                               (pair.rejected.back() != eos ? 0.5 : 0.0);
    }
    double n = static_cast<double>(pairs.size());
    row.train_loss /= n;
    row.reward_accuracy /= n;
    row.seqkl_chosen /= n;
    row.seqkl_rejected /= n;
    row.seqrr_chosen /= n;
    row.seqrr_rejected /= n;
    row.margin_mean /= n;
    row.truncation_rate /= n;
    return row;
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const MetricsRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics: " + path.string());
    out << "step,train_loss,reward_accuracy,seqkl_chosen,seqkl_rejected,"
           "seqrr_chosen,seqrr_rejected,margin_mean,truncation_rate\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.step;
        const double cols[] = {r.train_loss,    r.reward_accuracy,
                               r.seqkl_chosen,  r.seqkl_rejected,
                               r.seqrr_chosen,  r.seqrr_rejected,
                               r.margin_mean,   r.truncation_rate};
        for (double c : cols) {
            std::snprintf(buf, sizeof(buf), "%.9g", c);
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TrainResult train_in_memory(const TrainConfig& config,
                            const policy::TabularPolicy& ref_in,
                            const datagen::Dataset& dataset,
                            bool write_outputs) {
    config.validate();
    if (dataset.empty())
        throw std::invalid_argument("train: empty dataset");

    auto ref = ref_in.clone_frozen();
    auto theta = ref_in.clone_trainable();

    size_t n = dataset.size();
    size_t n_heldout = n / 10;
    size_t n_train = n - n_heldout;
    std::span<const losses::PreferencePair> heldout =
        n_heldout > 0 ? std::span(dataset).subspan(n_train)
                      : std::span(dataset);

    TrainResult result;
    auto eval_row = [&](int step, bool use_running, double running_loss) {
        MetricsRow row = evaluate(theta, ref, heldout, config.loss);
        row.step = step;
        if (use_running) row.train_loss = running_loss;
        result.metrics.push_back(row);
    };
    eval_row(0, false, 0.0);

    OptimizerState opt;
    std::vector<size_t> order(n_train);
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<losses::PreferencePair> batch;
    std::vector<double> accum(theta.logits.size(), 0.0);
    int micro_in_accum = 0;
    double accum_loss = 0.0;
    int steps_done = 0;
    double running_loss = 0.0;
    int running_count = 0;

    auto apply_step = [&]() {
        for (double& g : accum) g /= micro_in_accum;
        double loss = accum_loss / micro_in_accum;
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at step " +
                                     std::to_string(steps_done + 1));
        optimizer_step(opt, theta.logits, accum, config);
        ++steps_done;
        running_loss += loss;
        ++running_count;
        std::fill(accum.begin(), accum.end(), 0.0);
        micro_in_accum = 0;
        accum_loss = 0.0;
        if (steps_done % config.eval_every == 0) {
            eval_row(steps_done, true, running_loss / running_count);
            running_loss = 0.0;
            running_count = 0;
        }
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(mix_seed(config.seed, static_cast<uint64_t>(epoch)));
        for (size_t i = n_train; i > 1; --i)
            std::swap(order[i - 1],
                      order[rng.uniform_int(static_cast<int>(i))]);
        for (size_t start = 0; start < n_train;
             start += static_cast<size_t>(config.batch_size)) {
            size_t end = std::min(
                n_train, start + static_cast<size_t>(config.batch_size));
            batch.clear();
            for (size_t i = start; i < end; ++i)
                batch.push_back(dataset[order[i]]);
            auto res =
                losses::batch_loss_and_grad(theta, ref, batch, config.loss);
            for (size_t i = 0; i < accum.size(); ++i) accum[i] += res.grad[i];
            accum_loss += res.loss;
            if (++micro_in_accum == config.grad_accum_steps) apply_step();
        }
    }
    if (micro_in_accum > 0) apply_step();
    if (result.metrics.back().step != steps_done)
        eval_row(steps_done, running_count > 0, running_loss /
                     std::max(running_count, 1));

    if (write_outputs) {
        std::filesystem::create_directories(config.output_dir);
        result.metrics_path = config.output_dir / "metrics.csv";
        result.checkpoint_path = config.output_dir / "checkpoint.txt";
        write_metrics_csv(result.metrics_path, result.metrics);
        theta.save(result.checkpoint_path);
    }
    return result;
}

TrainResult train(const TrainConfig& config) {
    config.validate();
    if (!std::filesystem::exists(config.dataset_path))
        throw std::runtime_error("cannot read dataset: " +
                                 config.dataset_path.string());
    auto ref = policy::TabularPolicy::load(config.ref_path);
    auto dataset = datagen::read_dataset(config.dataset_path, ref.vocab);
    return train_in_memory(config, ref, dataset, true);
}

}  // namespace radpo::trainer
