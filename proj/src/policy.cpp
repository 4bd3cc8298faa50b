#include "radpo/policy.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace radpo::policy {

void VocabSpec::validate() const {
    if (size < 2 || size > 256)
        throw std::invalid_argument("VocabSpec: size must be in [2, 256]");
    if (bos_id == eos_id || bos_id < 0 || eos_id < 0 || bos_id >= size ||
        eos_id >= size)
        throw std::invalid_argument("VocabSpec: bad reserved token ids");
}

TabularPolicy TabularPolicy::zeros(VocabSpec vocab, int window) {
    vocab.validate();
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    TabularPolicy p;
    p.vocab = vocab;
    p.window = window;
    p.logits.assign(static_cast<size_t>(p.contexts()) * vocab.size, 0.0);
    return p;
}

TabularPolicy TabularPolicy::random(Rng& rng, VocabSpec vocab, int window,
                                    double scale) {
    TabularPolicy p = zeros(vocab, window);
    for (double& x : p.logits) x = rng.uniform(-scale, scale);
    return p;
}

int TabularPolicy::contexts() const {
    int n = 1;
    for (int i = 0; i < window; ++i) n *= vocab.size;
    return n;
}

int context_row(const VocabSpec& vocab, int window,
                std::span<const int> context) {
    int row = 0;
    int start = static_cast<int>(context.size()) - window;
    for (int i = start; i < static_cast<int>(context.size()); ++i) {
        int tok = i < 0 ? vocab.bos_id : context[i];
        if (tok < 0 || tok >= vocab.size)
            throw std::out_of_range("token id out of range");
        row = row * vocab.size + tok;
    }
    return row;
}

int TabularPolicy::row_index(std::span<const int> context) const {
    return context_row(vocab, window, context);
}

std::vector<double> TabularPolicy::next_logprobs(
    std::span<const int> context) const {
    int row = row_index(context);
    std::span<const double> logits_row(
        logits.data() + static_cast<size_t>(row) * vocab.size, vocab.size);
    return log_softmax(logits_row);
}

diff::NodeRef TabularPolicy::next_logprobs_node(
    diff::Graph& g, ParamMap& pm, std::span<const int> context) const {
    if (frozen) return g.constant(next_logprobs(context));
    return g.log_softmax(pm.row_leaf(row_index(context)));
}

double TabularPolicy::seq_logprob(const TokenSeq& prompt,
                                  const TokenSeq& response) const {
    if (response.empty())
        throw std::invalid_argument("seq_logprob: empty response");
    TokenSeq stream = prompt;
    double total = 0.0;
    for (int tok : response) {
        auto lp = next_logprobs(stream);
        if (tok < 0 || tok >= vocab.size)
            throw std::out_of_range("token id out of range");
        total += lp[tok];
        stream.push_back(tok);
    }
    return total;
}

diff::NodeRef TabularPolicy::seq_logprob_node(diff::Graph& g, ParamMap& pm,
                                              const TokenSeq& prompt,
                                              const TokenSeq& response) const {
    if (response.empty())
        throw std::invalid_argument("seq_logprob: empty response");
    TokenSeq stream = prompt;
    diff::NodeRef total;
    bool first = true;
    for (int tok : response) {
        auto lp = next_logprobs_node(g, pm, stream);
        auto term = g.gather(lp, tok);
        total = first ? term : g.add(total, term);
        first = false;
        stream.push_back(tok);
    }
    return total;
}

TabularPolicy TabularPolicy::clone_frozen() const {
    TabularPolicy p = *this;
    p.frozen = true;
    return p;
}

TabularPolicy TabularPolicy::clone_trainable() const {
    TabularPolicy p = *this;
    p.frozen = false;
    return p;
}

TokenSeq TabularPolicy::sample_response(Rng& rng, const TokenSeq& prompt,
                                        int max_len, bool* truncated) const {
    TokenSeq stream = prompt;
    TokenSeq out;
    if (truncated) *truncated = true;
    for (int step = 0; step < max_len; ++step) {
        auto lp = next_logprobs(stream);
        double u = rng.uniform();
        double cum = 0.0;
        int tok = vocab.size - 1;
        for (int i = 0; i < vocab.size; ++i) {
            cum += std::exp(lp[i]);
            if (u < cum) {
                tok = i;
                break;
            }
        }
        out.push_back(tok);
        stream.push_back(tok);
        if (tok == vocab.eos_id) {
            if (truncated) *truncated = false;
            break;
        }
    }
    return out;
}

void TabularPolicy::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " +
                                       path.string());
    out << vocab.size << " " << window << "\n";
    char buf[64];
    int n = contexts();
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < vocab.size; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g",
                          logits[static_cast<size_t>(r) * vocab.size + j]);
            out << buf << (j + 1 == vocab.size ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TabularPolicy TabularPolicy::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " +
                                      path.string());
    int v = 0, k = 0;
    if (!(in >> v >> k))
        throw std::runtime_error("malformed checkpoint header: " +
                                 path.string());
    VocabSpec vocab;
    vocab.size = v;
    TabularPolicy p = zeros(vocab, k);
    for (double& x : p.logits)
        if (!(in >> x))
            throw std::runtime_error("truncated checkpoint: " + path.string());
    return p;
}

ParamMap::ParamMap(diff::Graph& g, const TabularPolicy& theta,
                   std::span<const double> override_params)
    : g_(&g), theta_(&theta), override_(override_params) {}

diff::NodeRef ParamMap::row_leaf(int row) {
    auto it = leaves_.find(row);
    if (it != leaves_.end()) return it->second;
    int v = theta_->vocab.size;
    int offset = g_->param_count();
    std::span<const double> values;
    if (override_.empty()) {
        values = std::span<const double>(
            theta_->logits.data() + static_cast<size_t>(row) * v, v);
    } else {
        if (offset + v > static_cast<int>(override_.size()))
            throw std::out_of_range("ParamMap: override vector too short");
        values = override_.subspan(offset, v);
    }
    auto ref = g_->leaf(values);
    leaves_.emplace(row, ref);
    order_.push_back(row);
    return ref;
}

void ParamMap::scatter(std::span<const double> leaf_grad,
                       std::span<double> table_grad) const {
    int v = theta_->vocab.size;
    if (table_grad.size() != theta_->logits.size())
        throw std::invalid_argument("scatter: table gradient size mismatch");
    for (size_t i = 0; i < order_.size(); ++i) {
        size_t src = i * v;
        size_t dst = static_cast<size_t>(order_[i]) * v;
        for (int j = 0; j < v; ++j) table_grad[dst + j] += leaf_grad[src + j];
    }
}

}  // namespace radpo::policy
