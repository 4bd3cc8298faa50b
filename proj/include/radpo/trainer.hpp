#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "radpo/datagen.hpp"
#include "radpo/losses.hpp"

namespace radpo::trainer {

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
    losses::LossConfig loss;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 32;
    int grad_accum_steps = 4;
    int epochs = 1;
    int eval_every = 10;  // in optimizer steps
    uint64_t seed = 0;
    std::filesystem::path dataset_path;
    std::filesystem::path ref_path;
    std::filesystem::path output_dir;

    void validate() const;
};

struct MetricsRow {
    int step = 0;
    double train_loss = 0.0;
    double reward_accuracy = 0.0;
    double seqkl_chosen = 0.0;
    double seqkl_rejected = 0.0;
    double seqrr_chosen = 0.0;
    double seqrr_rejected = 0.0;
    double margin_mean = 0.0;
    double truncation_rate = 0.0;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

// One SGD or bias-corrected Adam update in place; weight decay is decoupled.
void optimizer_step(OptimizerState& state, std::span<double> params,
                    std::span<const double> grad, const TrainConfig& config);

// Held-out metrics. reward_accuracy counts u > 0 as 1 and u = 0 as 0.5;
// truncation_rate is the fraction of responses not ending in EOS.
MetricsRow evaluate(const policy::TabularPolicy& theta,
                    const policy::TabularPolicy& ref,
                    std::span<const losses::PreferencePair> pairs,
                    const losses::LossConfig& loss);

struct TrainResult {
    std::vector<MetricsRow> metrics;
    std::filesystem::path metrics_path;
    std::filesystem::path checkpoint_path;
};

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const MetricsRow> rows);

// Full training loop: theta starts as a clone of ref, the last 10% of records
// (by index) are held out for evaluation, batches are shuffled per epoch from
// the run seed, and gradients are averaged over grad_accum_steps micro-batches
// per optimizer step. Writes metrics.csv and checkpoint.txt to output_dir.
TrainResult train(const TrainConfig& config);

// Same loop over in-memory inputs; used by train() and the tests.
TrainResult train_in_memory(const TrainConfig& config,
                            const policy::TabularPolicy& ref,
                            const datagen::Dataset& dataset,
                            bool write_outputs);

}  // namespace radpo::trainer
