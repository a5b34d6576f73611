#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "apo/tensor.hpp"

namespace apo {

// Trainable tensor. `grad` accumulates across backward passes until zeroed.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name_, Tensor value_);

    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad.fill(0.0); }
};

class Graph;

struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

// Tape of primitive operations. Nodes are appended after their parents, so
// reverse insertion order is a valid topological order for backward.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Parameter& p);
    Var constant(Tensor t);
    // Non-owning constant; `t` must outlive the graph.
    Var constant_ref(const Tensor& t);

    // Used by primitives. `fn` is dropped when no parent requires a gradient.
    Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    // Gradient buffer of a node, allocated on first use.
    Tensor& grad(std::size_t id);

    // Reverse sweep from a rank-0 output. Sums each leaf's gradient into its
    // Parameter::grad and returns this pass's per-leaf contributions.
    GradientMap backward(Var output);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        Parameter* leaf = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        Tensor grad;
    };
    std::vector<Node> nodes_;
};

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var neg(Var a);
// x[n,m] + b[m] broadcast over rows.
Var add_bias(Var x, Var b);
// x[n,in] * W[out,in]^T -> [n,out]
Var linear(Var x, Var w);
// x * mask elementwise; mask is a constant of the same shape.
Var mul_const(Var x, const Tensor& mask);
Var silu(Var x);
Var sigmoid(Var x);
// log(1 + exp(x)), overflow-safe.
Var softplus(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
// table[v,d] rows gathered by index -> [indices.size(), d]
Var gather_rows(Var table, std::vector<std::size_t> indices);
// Rank-0 element of a vector / rank-1 view of a batch row.
Var select_row(Var x, std::size_t r);

}  // namespace ad

double stable_softplus(double x);
double stable_sigmoid(double x);

}  // namespace apo
