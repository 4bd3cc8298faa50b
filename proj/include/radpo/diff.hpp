#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace radpo::diff {

enum class Op : uint8_t {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sum,
    Dot,
    Scale,
    LogSoftmax,
    LogSumExp,
    Gather,
    LogSigmoid,
    StopGradient,
    WeightedTailMean,
};

struct NodeRef {
    int32_t id = -1;
    int32_t size = 0;
};

// Tail weights for the upper-tail CVaR aggregator: mass mu taken from the
// largest values downward, the atom where the mass runs out split
// proportionally among equal values. Weights sum to 1 and mu = 1 reproduces
// the plain probabilities exactly.
std::vector<double> cvar_tail_weights(std::span<const double> values,
                                      std::span<const double> probs, double mu);

// Eagerly evaluated tape. Single-writer during construction and backward;
// independent graphs may be used concurrently.
class Graph {
public:
    NodeRef leaf(std::span<const double> values);
    NodeRef constant(std::span<const double> values);
    NodeRef constant(double v);

    NodeRef add(NodeRef a, NodeRef b);
    NodeRef sub(NodeRef a, NodeRef b);
    NodeRef mul(NodeRef a, NodeRef b);
    NodeRef div(NodeRef a, NodeRef b);
    NodeRef neg(NodeRef a);
    NodeRef exp(NodeRef a);
    NodeRef log(NodeRef a);
    NodeRef sum(NodeRef a);
    NodeRef dot(NodeRef a, NodeRef b);
    NodeRef scale(NodeRef a, double c);
    NodeRef log_softmax(NodeRef a);
    NodeRef logsumexp(NodeRef a);
    NodeRef gather(NodeRef a, int index);
    NodeRef log_sigmoid(NodeRef a);
    NodeRef stop_gradient(NodeRef a);
    NodeRef weighted_tail_mean(NodeRef values, std::span<const double> probs,
                               double mu);

    const std::vector<double>& value(NodeRef n) const;
    double scalar(NodeRef n) const;

    int param_count() const { return param_count_; }
    // Concatenated leaf values, in leaf creation order.
    std::vector<double> params() const;

    // Exact reverse-mode gradient of a scalar root with respect to all
    // leaves. stop_gradient nodes propagate zero.
    std::vector<double> backward(NodeRef root) const;

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Op op;
        int32_t a = -1;
        int32_t b = -1;
        int32_t index = 0;        // Gather
        int32_t param_offset = -1;  // Leaf
        double c = 0.0;           // Scale
        std::vector<double> value;
        std::vector<double> aux;  // WeightedTailMean: frozen tail weights
    };

    NodeRef push(Node n);
    const Node& at(NodeRef n) const;

    std::vector<Node> nodes_;
    int param_count_ = 0;
};

using GraphBuilder =
    std::function<NodeRef(Graph&, std::span<const double>)>;

// Max over parameters of |analytic - central difference| / max(1, |analytic|).
// The builder must be deterministic and consume exactly point.size() leaf
// parameters.
double finite_diff_check(const GraphBuilder& build,
                         std::span<const double> point, double step);

}  // namespace radpo::diff
