#pragma once

#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "radpo/diff.hpp"
#include "radpo/numeric.hpp"

namespace radpo::policy {

using TokenSeq = std::vector<int>;

struct VocabSpec {
    int size = 12;
    int bos_id = 0;
    int eos_id = 1;

    void validate() const;
};

// Row for the last `window` tokens of a stream, BOS-padded, base-vocab.
int context_row(const VocabSpec& vocab, int window,
                std::span<const int> context);

class ParamMap;

// n-gram-context softmax policy: one logits row per context window of the
// last `window` tokens (BOS-padded), one column per next token.
struct TabularPolicy {
    VocabSpec vocab;
    int window = 2;
    std::vector<double> logits;  // contexts() x vocab.size, row-major
    bool frozen = false;

    static TabularPolicy zeros(VocabSpec vocab, int window);
    static TabularPolicy random(Rng& rng, VocabSpec vocab, int window,
                                double scale);

    int contexts() const;
    // Row for the last `window` tokens of the given stream, BOS-padded.
    int row_index(std::span<const int> context) const;

    std::vector<double> next_logprobs(std::span<const int> context) const;
    diff::NodeRef next_logprobs_node(diff::Graph& g, ParamMap& pm,
                                     std::span<const int> context) const;

    double seq_logprob(const TokenSeq& prompt, const TokenSeq& response) const;
    diff::NodeRef seq_logprob_node(diff::Graph& g, ParamMap& pm,
                                   const TokenSeq& prompt,
                                   const TokenSeq& response) const;

    // Deep copy with frozen = true; immutable from then on by convention.
    TabularPolicy clone_frozen() const;
    TabularPolicy clone_trainable() const;

    // Ancestral sampling, stopping at EOS or truncating at max_len.
    TokenSeq sample_response(Rng& rng, const TokenSeq& prompt, int max_len,
                             bool* truncated = nullptr) const;

    void save(const std::filesystem::path& path) const;
    static TabularPolicy load(const std::filesystem::path& path);
};

// Registers the logits rows a graph touches as leaves, one leaf per row, in
// first-touch order. Optionally overrides leaf values from a flat parameter
// vector (used by finite-difference checks).
class ParamMap {
public:
    ParamMap(diff::Graph& g, const TabularPolicy& theta,
             std::span<const double> override_params = {});

    diff::NodeRef row_leaf(int row);

    int rows() const { return static_cast<int>(order_.size()); }
    int row_at(int i) const { return order_[i]; }

    // Accumulates a leaf-layout gradient into a full logits-table gradient.
    void scatter(std::span<const double> leaf_grad,
                 std::span<double> table_grad) const;

private:
    diff::Graph* g_;
    const TabularPolicy* theta_;
    std::span<const double> override_;
    std::unordered_map<int, diff::NodeRef> leaves_;
    std::vector<int> order_;
};

}  // namespace radpo::policy
