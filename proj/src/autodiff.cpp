#include "apo/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace apo {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::leaf(Parameter& p) {
    Node n;
    n.value = Tensor(Shape{0});
    n.external = &p.value;
    n.leaf = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::constant_ref(const Tensor& t) {
    Node n;
    n.value = Tensor(Shape{0});
    n.external = &t;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
    if (!value.all_finite()) throw std::domain_error("non-finite value produced in graph");
    Node n;
    n.value = std::move(value);
    for (auto p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Tensor& Graph::grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor(value(id).shape());
        n.has_grad = true;
    }
    return n.grad;
}

GradientMap Graph::backward(Var output) {
    if (output.graph != this) throw std::invalid_argument("backward: output belongs to another graph");
    if (value(output.id).rank() != 0) throw std::invalid_argument("backward requires scalar");
    GradientMap out;
    if (!nodes_[output.id].requires_grad) return out;
    grad(output.id)[0] = 1.0;
    // Nodes past the output cannot contribute to it.
    for (std::size_t i = output.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.has_grad) continue;
        if (n.leaf) {
            axpy_inplace(n.leaf->grad, 1.0, n.grad);
            auto [it, inserted] = out.try_emplace(n.leaf, n.grad);
            if (!inserted) axpy_inplace(it->second, 1.0, n.grad);
        } else if (n.backward) {
            n.backward(*this, i);
        }
    }
    // Interior gradients are not retained.
    for (auto& n : nodes_) {
        n.grad = Tensor();
        n.has_grad = false;
    }
    return out;
}

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace ad {

namespace {

Graph& same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw std::invalid_argument("operands belong to different graphs");
    return *a.graph;
}

void accumulate(Graph& g, std::size_t id, const Tensor& contribution) {
    if (g.requires_grad(id)) axpy_inplace(g.grad(id), 1.0, contribution);
}

template <class F>
Var unary_elementwise(Var x, F f, double (*df)(double, double)) {
    Graph& g = *x.graph;
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
    const std::size_t xi = x.id;
    return g.record(std::move(y), {xi}, [xi, df](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        const Tensor& xv2 = gr.value(xi);
        const Tensor& yv = gr.value(self);
        Tensor& gx = gr.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv2[i], yv[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const std::size_t ai = a.id, bi = b.id;
    return g.record(a.value() + b.value(), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
        const Tensor gy = gr.grad(self);
        accumulate(gr, ai, gy);
        accumulate(gr, bi, gy);
    });
}

Var sub(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const std::size_t ai = a.id, bi = b.id;
    return g.record(a.value() - b.value(), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
        const Tensor gy = gr.grad(self);
        accumulate(gr, ai, gy);
        accumulate(gr, bi, -1.0 * gy);
    });
}

Var mul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const std::size_t ai = a.id, bi = b.id;
    return g.record(hadamard(a.value(), b.value()), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
        const Tensor gy = gr.grad(self);
        if (gr.requires_grad(ai)) accumulate(gr, ai, hadamard(gy, gr.value(bi)));
        if (gr.requires_grad(bi)) accumulate(gr, bi, hadamard(gy, gr.value(ai)));
    });
}

Var scale(Var a, double s) {
    const std::size_t ai = a.id;
    return a.graph->record(s * a.value(), {ai}, [ai, s](Graph& gr, std::size_t self) {
        accumulate(gr, ai, s * gr.grad(self));
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_bias(Var x, Var b) {
    Graph& g = same_graph(x, b);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
        throw std::invalid_argument("add_bias: expected x[n,m] and b[m], got " + shape_str(xv.shape()) + " and " +
                                    shape_str(bv.shape()));
    }
    Tensor y = xv;
    const std::size_t n = xv.dim(0), m = xv.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) y.at(i, j) += bv[j];
    const std::size_t xi = x.id, bi = b.id;
    return g.record(std::move(y), {xi, bi}, [xi, bi, n, m](Graph& gr, std::size_t self) {
        const Tensor gy = gr.grad(self);
        accumulate(gr, xi, gy);
        if (gr.requires_grad(bi)) {
            Tensor& gb = gr.grad(bi);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb[j] += gy.at(i, j);
        }
    });
}

Var linear(Var x, Var w) {
    Graph& g = same_graph(x, w);
    const std::size_t xi = x.id, wi = w.id;
    return g.record(matmul_nt(x.value(), w.value()), {xi, wi}, [xi, wi](Graph& gr, std::size_t self) {
        const Tensor gy = gr.grad(self);
        // y = x W^T: dx = gy W, dW = gy^T x
        if (gr.requires_grad(xi)) accumulate(gr, xi, matmul(gy, gr.value(wi)));
        if (gr.requires_grad(wi)) accumulate(gr, wi, matmul_tn(gy, gr.value(xi)));
    });
}

Var mul_const(Var x, const Tensor& mask) {
    const Tensor& xv = x.value();
    require_same_shape(xv, mask, "mul_const");
    const std::size_t xi = x.id;
    return x.graph->record(hadamard(xv, mask), {xi}, [xi, mask](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        Tensor& gx = gr.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
}

Var silu(Var x) {
    return unary_elementwise(
        x, [](double v) { return v * stable_sigmoid(v); },
        [](double v, double) {
            const double s = stable_sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Var sigmoid(Var x) {
    return unary_elementwise(
        x, [](double v) { return stable_sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
    return unary_elementwise(
        x, [](double v) { return stable_softplus(v); }, [](double v, double) { return stable_sigmoid(v); });
}

Var square(Var x) {
    return unary_elementwise(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
    const std::size_t xi = x.id;
    return x.graph->record(Tensor::scalar(apo::sum(x.value())), {xi}, [xi](Graph& gr, std::size_t self) {
        const double gy = gr.grad(self)[0];
        Tensor& gx = gr.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(x), 1.0 / n);
}

Var gather_rows(Var table, std::vector<std::size_t> indices) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank-2");
    const std::size_t d = tv.dim(1);
    Tensor y({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= tv.dim(0)) throw std::out_of_range("gather_rows: index out of range");
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) = tv.at(indices[i], j);
    }
    const std::size_t ti = table.id;
    return table.graph->record(std::move(y), {ti}, [ti, indices = std::move(indices), d](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        Tensor& gt = gr.grad(ti);
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt.at(indices[i], j) += gy.at(i, j);
    });
}

Var select_row(Var x, std::size_t r) {
    const Tensor& xv = x.value();
    const std::size_t xi = x.id;
    const std::size_t m = xv.dim(1);
    return x.graph->record(row(xv, r), {xi}, [xi, r, m](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.grad(self);
        Tensor& gx = gr.grad(xi);
        for (std::size_t j = 0; j < m; ++j) gx.at(r, j) += gy[j];
    });
}

}  // namespace ad
}  // namespace apo
