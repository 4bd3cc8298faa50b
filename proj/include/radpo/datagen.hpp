#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "radpo/losses.hpp"
#include "radpo/policy.hpp"

namespace radpo::datagen {

// Ground-truth reward model: additive per-token scores looked up by the same
// context-window indexing the policies use. The EOS column is zero, so reward
// does not depend on response length through the terminator itself.
struct TaskSpec {
    policy::VocabSpec vocab;
    int window = 2;
    int prompt_len = 3;
    int response_len = 16;  // sampling cap; responses stop early at EOS
    uint64_t seed = 0;
    std::vector<double> token_score;  // contexts x vocab.size, row-major

    void validate() const;
    int contexts() const;
    // Additive ground-truth reward of a response given its prompt.
    double response_reward(const policy::TokenSeq& prompt,
                           const policy::TokenSeq& response) const;
};

TaskSpec gen_task(uint64_t seed, policy::VocabSpec vocab, int window,
                  int prompt_len, int response_len, double score_scale);

// With probability sigmoid(reward_first - reward_second) keeps the order,
// otherwise swaps. Returns true if the first candidate was labeled chosen.
bool bt_label(double reward_first, double reward_second, Rng& rng);

using Dataset = std::vector<losses::PreferencePair>;

// Per record: uniform random prompt over non-reserved tokens, two independent
// ancestral samples from ref, Bradley-Terry label from ground-truth rewards.
// Record i uses the derived seed mix_seed(seed, i), so output is
// order-independent. Identical sampled responses are rejected and redrawn.
Dataset sample_dataset(const TaskSpec& task,
                       const policy::TabularPolicy& ref_policy, int n_pairs,
                       uint64_t seed);

Dataset read_dataset(const std::filesystem::path& path,
                     const policy::VocabSpec& vocab);
void write_dataset(const std::filesystem::path& path, const Dataset& data);

TaskSpec read_task(const std::filesystem::path& path);
void write_task(const std::filesystem::path& path, const TaskSpec& task);

}  // namespace radpo::datagen
