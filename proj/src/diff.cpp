#include "radpo/diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "radpo/numeric.hpp"

namespace radpo::diff {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_finite(std::span<const double> xs, const char* msg) {
    for (double x : xs)
        if (!std::isfinite(x)) throw std::invalid_argument(msg);
}

}  // namespace

std::vector<double> cvar_tail_weights(std::span<const double> values,
                                      std::span<const double> probs,
                                      double mu) {
    require(values.size() == probs.size() && !values.empty(),
            "cvar_tail_weights: shape mismatch or empty");
    require(mu > 0.0 && mu <= 1.0, "cvar_tail_weights: mu must be in (0, 1]");
    size_t n = values.size();
    std::vector<double> w(n, 0.0);
    if (mu == 1.0) {
        // Risk-neutral limit must be exact.
        std::copy(probs.begin(), probs.end(), w.begin());
        return w;
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return values[i] > values[j];
    });
    double remaining = mu;
    size_t i = 0;
    while (i < n && remaining > 0.0) {
        size_t j = i;
        double group_mass = 0.0;
        while (j < n && values[order[j]] == values[order[i]]) {
            group_mass += probs[order[j]];
            ++j;
        }
        if (group_mass <= remaining) {
            for (size_t k = i; k < j; ++k) w[order[k]] = probs[order[k]] / mu;
            remaining -= group_mass;
        } else {
            double frac = remaining / group_mass;
            for (size_t k = i; k < j; ++k)
                w[order[k]] = probs[order[k]] * frac / mu;
            remaining = 0.0;
        }
        i = j;
    }
    return w;
}

NodeRef Graph::push(Node n) {
    require_finite(n.value, "graph op produced a non-finite value");
    NodeRef ref{static_cast<int32_t>(nodes_.size()),
                static_cast<int32_t>(n.value.size())};
    nodes_.push_back(std::move(n));
    return ref;
}

const Graph::Node& Graph::at(NodeRef n) const {
    require(n.id >= 0 && n.id < static_cast<int32_t>(nodes_.size()),
            "NodeRef out of range");
    return nodes_[n.id];
}

NodeRef Graph::leaf(std::span<const double> values) {
    require(!values.empty(), "leaf: empty value");
    require_finite(values, "leaf: non-finite input");
    Node n;
    n.op = Op::Leaf;
    n.param_offset = param_count_;
    n.value.assign(values.begin(), values.end());
    param_count_ += static_cast<int>(values.size());
    return push(std::move(n));
}

NodeRef Graph::constant(std::span<const double> values) {
    require(!values.empty(), "constant: empty value");
    require_finite(values, "constant: non-finite input");
    Node n;
    n.op = Op::Constant;
    n.value.assign(values.begin(), values.end());
    return push(std::move(n));
}

NodeRef Graph::constant(double v) {
    return constant(std::span<const double>(&v, 1));
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
    require(a.size == b.size, "add: size mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] + vb[i];
    return push(std::move(n));
}

NodeRef Graph::sub(NodeRef a, NodeRef b) {
    require(a.size == b.size, "sub: size mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] - vb[i];
    return push(std::move(n));
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
    require(a.size == b.size, "mul: size mismatch");
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = va[i] * vb[i];
    return push(std::move(n));
}

NodeRef Graph::div(NodeRef a, NodeRef b) {
    require(a.size == b.size, "div: size mismatch");
    Node n;
    n.op = Op::Div;
    n.a = a.id;
    n.b = b.id;
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) {
        if (vb[i] == 0.0) throw std::domain_error("div: division by zero");
        n.value[i] = va[i] / vb[i];
    }
    return push(std::move(n));
}

NodeRef Graph::neg(NodeRef a) {
    Node n;
    n.op = Op::Neg;
    n.a = a.id;
    const auto& va = at(a).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = -va[i];
    return push(std::move(n));
}

NodeRef Graph::exp(NodeRef a) {
    Node n;
    n.op = Op::Exp;
    n.a = a.id;
    const auto& va = at(a).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = std::exp(va[i]);
    return push(std::move(n));
}

NodeRef Graph::log(NodeRef a) {
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    const auto& va = at(a).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) {
        if (va[i] <= 0.0) throw std::domain_error("log: nonpositive input");
        n.value[i] = std::log(va[i]);
    }
    return push(std::move(n));
}

NodeRef Graph::sum(NodeRef a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    const auto& va = at(a).value;
    double s = 0.0;
    for (double v : va) s += v;
    n.value = {s};
    return push(std::move(n));
}

NodeRef Graph::dot(NodeRef a, NodeRef b) {
    require(a.size == b.size, "dot: size mismatch");
    Node n;
    n.op = Op::Dot;
    n.a = a.id;
    n.b = b.id;
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    double s = 0.0;
    for (size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
    n.value = {s};
    return push(std::move(n));
}

NodeRef Graph::scale(NodeRef a, double c) {
    require(std::isfinite(c), "scale: non-finite constant");
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.c = c;
    const auto& va = at(a).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i) n.value[i] = c * va[i];
    return push(std::move(n));
}

NodeRef Graph::log_softmax(NodeRef a) {
    Node n;
    n.op = Op::LogSoftmax;
    n.a = a.id;
    n.value = radpo::log_softmax(at(a).value);
    return push(std::move(n));
}

NodeRef Graph::logsumexp(NodeRef a) {
    Node n;
    n.op = Op::LogSumExp;
    n.a = a.id;
    n.value = {radpo::logsumexp(at(a).value)};
    return push(std::move(n));
}

NodeRef Graph::gather(NodeRef a, int index) {
    require(index >= 0 && index < a.size, "gather: index out of range");
    Node n;
    n.op = Op::Gather;
    n.a = a.id;
    n.index = index;
    n.value = {at(a).value[index]};
    return push(std::move(n));
}

NodeRef Graph::log_sigmoid(NodeRef a) {
    Node n;
    n.op = Op::LogSigmoid;
    n.a = a.id;
    const auto& va = at(a).value;
    n.value.resize(va.size());
    for (size_t i = 0; i < va.size(); ++i)
        n.value[i] = radpo::log_sigmoid(va[i]);
    return push(std::move(n));
}

NodeRef Graph::stop_gradient(NodeRef a) {
    Node n;
    n.op = Op::StopGradient;
    n.a = a.id;
    n.value = at(a).value;
    return push(std::move(n));
}

NodeRef Graph::weighted_tail_mean(NodeRef values,
                                  std::span<const double> probs, double mu) {
    require(static_cast<size_t>(values.size) == probs.size(),
            "weighted_tail_mean: shape mismatch");
    Node n;
    n.op = Op::WeightedTailMean;
    n.a = values.id;
    const auto& v = at(values).value;
    // Weights are frozen at the forward pass (envelope rule): the optimal
    // CVaR threshold is held fixed during differentiation.
    n.aux = cvar_tail_weights(v, probs, mu);
    double s = 0.0;
    for (size_t i = 0; i < v.size(); ++i) s += n.aux[i] * v[i];
    n.value = {s};
    return push(std::move(n));
}

const std::vector<double>& Graph::value(NodeRef n) const { return at(n).value; }

double Graph::scalar(NodeRef n) const {
    require(n.size == 1, "scalar: node is not scalar");
    return at(n).value[0];
}

std::vector<double> Graph::params() const {
    std::vector<double> out(param_count_);
    for (const auto& n : nodes_)
        if (n.op == Op::Leaf)
            std::copy(n.value.begin(), n.value.end(),
                      out.begin() + n.param_offset);
    return out;
}

std::vector<double> Graph::backward(NodeRef root) const {
    require(root.size == 1, "backward: root must be scalar");
    at(root);
    std::vector<std::vector<double>> adj(nodes_.size());
    auto touch = [&](int32_t id) -> std::vector<double>& {
        if (adj[id].empty()) adj[id].assign(nodes_[id].value.size(), 0.0);
        return adj[id];
    };
    touch(root.id)[0] = 1.0;

    std::vector<double> grad(param_count_, 0.0);
    for (int32_t id = root.id; id >= 0; --id) {
        if (adj[id].empty()) continue;
        const Node& n = nodes_[id];
        const auto& g = adj[id];
        switch (n.op) {
            case Op::Leaf:
                for (size_t i = 0; i < g.size(); ++i)
                    grad[n.param_offset + i] += g[i];
                break;
            case Op::Constant:
            case Op::StopGradient:
                break;
            case Op::Add: {
                auto& ga = touch(n.a);
                auto& gb = touch(n.b);
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                auto& ga = touch(n.a);
                auto& gb = touch(n.b);
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                auto& ga = touch(n.a);
                auto& gb = touch(n.b);
                const auto& va = nodes_[n.a].value;
                const auto& vb = nodes_[n.b].value;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb[i];
                    gb[i] += g[i] * va[i];
                }
                break;
            }
            case Op::Div: {
                auto& ga = touch(n.a);
                auto& gb = touch(n.b);
                const auto& va = nodes_[n.a].value;
                const auto& vb = nodes_[n.b].value;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] / vb[i];
                    gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
                break;
            }
            case Op::Neg: {
                auto& ga = touch(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
                break;
            }
            case Op::Exp: {
                auto& ga = touch(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * n.value[i];
                break;
            }
            case Op::Log: {
                auto& ga = touch(n.a);
                const auto& va = nodes_[n.a].value;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
                break;
            }
            case Op::Sum: {
                auto& ga = touch(n.a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::Dot: {
                auto& ga = touch(n.a);
                auto& gb = touch(n.b);
                const auto& va = nodes_[n.a].value;
                const auto& vb = nodes_[n.b].value;
                for (size_t i = 0; i < ga.size(); ++i) {
                    ga[i] += g[0] * vb[i];
                    gb[i] += g[0] * va[i];
                }
                break;
            }
            case Op::Scale: {
                auto& ga = touch(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += n.c * g[i];
                break;
            }
            case Op::LogSoftmax: {
                auto& ga = touch(n.a);
                double gsum = 0.0;
                for (double gi : g) gsum += gi;
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] - std::exp(n.value[i]) * gsum;
                break;
            }
            case Op::LogSumExp: {
                auto& ga = touch(n.a);
                const auto& va = nodes_[n.a].value;
                for (size_t i = 0; i < ga.size(); ++i)
                    ga[i] += g[0] * std::exp(va[i] - n.value[0]);
                break;
            }
            case Op::Gather: {
                auto& ga = touch(n.a);
                ga[n.index] += g[0];
                break;
            }
            case Op::LogSigmoid: {
                auto& ga = touch(n.a);
                const auto& va = nodes_[n.a].value;
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * radpo::sigmoid(-va[i]);
                break;
            }
            case Op::WeightedTailMean: {
                auto& ga = touch(n.a);
                for (size_t i = 0; i < ga.size(); ++i)
                    ga[i] += g[0] * n.aux[i];
                break;
            }
        }
    }
    return grad;
}

double finite_diff_check(const GraphBuilder& build,
                         std::span<const double> point, double step) {
    Graph g;
    NodeRef root = build(g, point);
    if (g.param_count() != static_cast<int>(point.size()))
        throw std::invalid_argument(
            "finite_diff_check: builder consumed " +
            std::to_string(g.param_count()) + " params, point has " +
            std::to_string(point.size()));
    std::vector<double> grad = g.backward(root);

    std::vector<double> p(point.begin(), point.end());
    double max_err = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double orig = p[i];
        p[i] = orig + step;
        Graph gp;
        double fp = gp.scalar(build(gp, p));
        p[i] = orig - step;
        Graph gm;
        double fm = gm.scalar(build(gm, p));
        p[i] = orig;
        double fd = (fp - fm) / (2.0 * step);
        double err = std::abs(grad[i] - fd) / std::max(1.0, std::abs(grad[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace radpo::diff
