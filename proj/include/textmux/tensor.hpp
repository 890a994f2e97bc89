#pragma once

// Reverse-mode differentiable arrays: the numeric substrate for the trunk,
// the language prediction network and the recognition heads. Real is float
// for training and double for gradient checking.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace textmux {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

// Disables graph construction in scope (inference / data preparation).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
};

template <class Real>
struct TensorNode;

// Per-worker gradient buffers for leaf parameters. Batch workers backprop
// into private sinks; the trainer reduces them in fixed sample order.
template <class Real>
struct GradSink {
    std::unordered_map<const TensorNode<Real>*, std::vector<Real>> buffers;

    std::vector<Real>& at(const TensorNode<Real>* node, std::size_t n) {
        auto& buf = buffers[node];
        if (buf.size() != n) buf.assign(n, Real(0));
        return buf;
    }
};

template <class Real>
struct TensorNode {
    std::vector<int> shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::string name;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&, GradSink<Real>*)> backward_fn;

    std::size_t size() const { return value.size(); }

    // Destination buffer for gradient accumulation into this node.
    Real* grad_accum(GradSink<Real>* sink) {
        if (sink && leaf) return sink->at(this, size()).data();
        if (grad.size() != size()) grad.assign(size(), Real(0));
        return grad.data();
    }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

template <class Real>
class Tensor {
public:
    using Node = TensorNode<Real>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<int> shape, const std::string& name = "zeros") {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), Real(0));
        n->name = name;
        return Tensor(n);
    }

    static Tensor constant(std::vector<int> shape, std::vector<Real> data,
                           const std::string& name = "const") {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor::constant: shape/data size mismatch");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->name = name;
        return Tensor(n);
    }

    static Tensor scalar(Real v, const std::string& name = "scalar") {
        return constant({1}, {v}, name);
    }

    // Trainable leaf. Freezing later just clears requires_grad.
    static Tensor leaf_param(std::vector<int> shape, std::vector<Real> data, const std::string& name) {
        Tensor t = constant(std::move(shape), std::move(data), name);
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& handle() const { return node_; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::vector<Real>& values() { return node_->value; }
    const std::vector<Real>& values() const { return node_->value; }
    std::vector<Real>& grad() { return node_->grad; }
    const std::vector<Real>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    Real item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return node_->value[0];
    }

    void zero_grad() { node_->grad.assign(size(), Real(0)); }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <class Real>
std::shared_ptr<TensorNode<Real>> make_op_node(std::vector<int> shape, const char* name,
                                               std::initializer_list<Tensor<Real>> inputs) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), Real(0));
    n->name = name;
    bool need = false;
    if (grad_mode_flag()) {
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) need = true;
    }
    if (need) {
        n->requires_grad = true;
        n->leaf = false;
        for (const auto& t : inputs)
            if (t.defined()) n->parents.push_back(t.handle());
    }
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    auto n = detail::make_op_node<Real>(a.shape(), "add", {a, b});
    const std::size_t m = n->value.size();
    for (std::size_t i = 0; i < m; ++i) n->value[i] = a.values()[i] + b.values()[i];
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                Real* g = p->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
    auto n = detail::make_op_node<Real>(a.shape(), "sub", {a, b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.values()[i] - b.values()[i];
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                Real* g = pa->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                Real* g = pb->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] -= self.grad[i];
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    auto n = detail::make_op_node<Real>(a.shape(), "mul", {a, b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.values()[i] * b.values()[i];
    if (n->requires_grad) {
        auto av = a.handle();
        auto bv = b.handle();
        n->backward_fn = [av, bv](TensorNode<Real>& self, GradSink<Real>* sink) {
            if (av->requires_grad) {
                Real* g = av->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * bv->value[i];
            }
            if (bv->requires_grad) {
                Real* g = bv->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * av->value[i];
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("div: shape mismatch");
    auto n = detail::make_op_node<Real>(a.shape(), "div", {a, b});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.values()[i] / b.values()[i];
    if (n->requires_grad) {
        auto av = a.handle();
        auto bv = b.handle();
        n->backward_fn = [av, bv](TensorNode<Real>& self, GradSink<Real>* sink) {
            if (av->requires_grad) {
                Real* g = av->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] / bv->value[i];
            }
            if (bv->requires_grad) {
                Real* g = bv->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i)
                    g[i] -= self.grad[i] * av->value[i] / (bv->value[i] * bv->value[i]);
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    auto n = detail::make_op_node<Real>(a.shape(), "scale", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.values()[i] * s;
    if (n->requires_grad) {
        n->backward_fn = [s](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * s;
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
    auto n = detail::make_op_node<Real>(a.shape(), "add_scalar", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.values()[i] + s;
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "relu", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.values()[i] > Real(0) ? a.values()[i] : Real(0);
    if (n->requires_grad) {
        auto av = a.handle();
        n->backward_fn = [av](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = av->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i)
                if (av->value[i] > Real(0)) g[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "sigmoid", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) {
        Real x = a.values()[i];
        n->value[i] = x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                   : std::exp(x) / (Real(1) + std::exp(x));
    }
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) {
                Real y = self.value[i];
                g[i] += self.grad[i] * y * (Real(1) - y);
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> tanh_op(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "tanh", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::tanh(a.values()[i]);
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i)
                g[i] += self.grad[i] * (Real(1) - self.value[i] * self.value[i]);
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> exp_op(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "exp", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::exp(a.values()[i]);
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] * self.value[i];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> log_op(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "log", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::log(a.values()[i]);
    if (n->requires_grad) {
        auto av = a.handle();
        n->backward_fn = [av](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = av->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i] / av->value[i];
        };
    }
    return Tensor<Real>(n);
}

// Values clamped to [lo,hi]; gradient passes only through unclamped entries.
template <class Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi) {
    auto n = detail::make_op_node<Real>(a.shape(), "clamp", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = std::min(hi, std::max(lo, a.values()[i]));
    if (n->requires_grad) {
        auto av = a.handle();
        n->backward_fn = [av, lo, hi](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = av->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i)
                if (av->value[i] > lo && av->value[i] < hi) g[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

// Entries where mask == 0 are replaced with fill and receive no gradient.
template <class Real>
Tensor<Real> masked_fill(const Tensor<Real>& a, const std::vector<Real>& mask, Real fill) {
    if (mask.size() != a.size()) throw std::invalid_argument("masked_fill: mask size mismatch");
    auto n = detail::make_op_node<Real>(a.shape(), "masked_fill", {a});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = mask[i] != Real(0) ? a.values()[i] : fill;
    if (n->requires_grad) {
        auto m = std::make_shared<std::vector<Real>>(mask);
        n->backward_fn = [m](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i)
                if ((*m)[i] != Real(0)) g[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

// ---------------------------------------------------------------------------
// reductions and indexing
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>({1}, "sum", {a});
    Real acc = 0;
    for (Real v : a.values()) acc += v;
    n->value[0] = acc;
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            auto& p = self.parents[0];
            Real* g = p->grad_accum(sink);
            for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[0];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    return scale(sum(a), Real(1) / static_cast<Real>(a.size()));
}

template <class Real>
Tensor<Real> pick(const Tensor<Real>& a, std::size_t index) {
    if (index >= a.size()) throw std::invalid_argument("pick: index out of range");
    auto n = detail::make_op_node<Real>({1}, "pick", {a});
    n->value[0] = a.values()[index];
    if (n->requires_grad) {
        n->backward_fn = [index](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            g[index] += self.grad[0];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b) {
    int total = static_cast<int>(a.size() + b.size());
    auto n = detail::make_op_node<Real>({total}, "concat", {a, b});
    std::copy(a.values().begin(), a.values().end(), n->value.begin());
    std::copy(b.values().begin(), b.values().end(), n->value.begin() + a.size());
    if (n->requires_grad) {
        std::size_t na = a.size();
        auto av = a.handle();
        auto bv = b.handle();
        n->backward_fn = [na, av, bv](TensorNode<Real>& self, GradSink<Real>* sink) {
            if (av->requires_grad) {
                Real* g = av->grad_accum(sink);
                for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
            }
            if (bv->requires_grad) {
                Real* g = bv->grad_accum(sink);
                for (std::size_t i = na; i < self.size(); ++i) g[i - na] += self.grad[i];
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.size()) throw std::invalid_argument("reshape: element count mismatch");
    auto n = detail::make_op_node<Real>(std::move(shape), "reshape", {a});
    n->value = a.values();
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

// ---------------------------------------------------------------------------
// softmax family (1-D)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softmax_vec(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "softmax", {a});
    Real mx = *std::max_element(a.values().begin(), a.values().end());
    Real denom = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        n->value[i] = std::exp(a.values()[i] - mx);
        denom += n->value[i];
    }
    for (auto& v : n->value) v /= denom;
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            Real dot = 0;
            for (std::size_t i = 0; i < self.size(); ++i) dot += self.grad[i] * self.value[i];
            for (std::size_t i = 0; i < self.size(); ++i)
                g[i] += self.value[i] * (self.grad[i] - dot);
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> log_softmax_vec(const Tensor<Real>& a) {
    auto n = detail::make_op_node<Real>(a.shape(), "log_softmax", {a});
    Real mx = *std::max_element(a.values().begin(), a.values().end());
    Real denom = 0;
    for (std::size_t i = 0; i < a.size(); ++i) denom += std::exp(a.values()[i] - mx);
    Real lse = mx + std::log(denom);
    for (std::size_t i = 0; i < a.size(); ++i) n->value[i] = a.values()[i] - lse;
    if (n->requires_grad) {
        n->backward_fn = [](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            Real gsum = 0;
            for (std::size_t i = 0; i < self.size(); ++i) gsum += self.grad[i];
            for (std::size_t i = 0; i < self.size(); ++i)
                g[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
        };
    }
    return Tensor<Real>(n);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// y = W x + b with W [out,in], x [in], b [out]
template <class Real>
Tensor<Real> linear(const Tensor<Real>& w, const Tensor<Real>& x, const Tensor<Real>& b) {
    if (w.shape().size() != 2) throw std::invalid_argument("linear: W must be 2-D");
    const int out = w.shape()[0];
    const int in = w.shape()[1];
    if (static_cast<int>(x.size()) != in || static_cast<int>(b.size()) != out)
        throw std::invalid_argument("linear: dimension mismatch");
    auto n = detail::make_op_node<Real>({out}, "linear", {w, x, b});
    const Real* wp = w.values().data();
    const Real* xp = x.values().data();
    for (int o = 0; o < out; ++o) {
        Real acc = b.values()[o];
        const Real* row = wp + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += row[i] * xp[i];
        n->value[o] = acc;
    }
    if (n->requires_grad) {
        auto wn = w.handle();
        auto xn = x.handle();
        auto bn = b.handle();
        n->backward_fn = [wn, xn, bn, out, in](TensorNode<Real>& self, GradSink<Real>* sink) {
            const Real* gy = self.grad.data();
            if (wn->requires_grad) {
                Real* gw = wn->grad_accum(sink);
                for (int o = 0; o < out; ++o) {
                    Real g = gy[o];
                    Real* row = gw + static_cast<std::size_t>(o) * in;
                    const Real* xp = xn->value.data();
                    for (int i = 0; i < in; ++i) row[i] += g * xp[i];
                }
            }
            if (xn->requires_grad) {
                Real* gx = xn->grad_accum(sink);
                for (int o = 0; o < out; ++o) {
                    Real g = gy[o];
                    const Real* row = wn->value.data() + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gx[i] += g * row[i];
                }
            }
            if (bn->requires_grad) {
                Real* gb = bn->grad_accum(sink);
                for (int o = 0; o < out; ++o) gb[o] += gy[o];
            }
        };
    }
    return Tensor<Real>(n);
}

// y = W x with W [out,in], x [in]
template <class Real>
Tensor<Real> matvec(const Tensor<Real>& w, const Tensor<Real>& x) {
    if (w.shape().size() != 2 || static_cast<int>(x.size()) != w.shape()[1])
        throw std::invalid_argument("matvec: dimension mismatch");
    const int out = w.shape()[0], in = w.shape()[1];
    auto n = detail::make_op_node<Real>({out}, "matvec", {w, x});
    for (int o = 0; o < out; ++o) {
        Real acc = 0;
        const Real* row = w.values().data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += row[i] * x.values()[i];
        n->value[o] = acc;
    }
    if (n->requires_grad) {
        auto wn = w.handle();
        auto xn = x.handle();
        n->backward_fn = [wn, xn, out, in](TensorNode<Real>& self, GradSink<Real>* sink) {
            const Real* gy = self.grad.data();
            if (wn->requires_grad) {
                Real* gw = wn->grad_accum(sink);
                for (int o = 0; o < out; ++o)
                    for (int i = 0; i < in; ++i)
                        gw[static_cast<std::size_t>(o) * in + i] += gy[o] * xn->value[i];
            }
            if (xn->requires_grad) {
                Real* gx = xn->grad_accum(sink);
                for (int o = 0; o < out; ++o) {
                    const Real* row = wn->value.data() + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gx[i] += gy[o] * row[i];
                }
            }
        };
    }
    return Tensor<Real>(n);
}

// C = A B with A [m,k], B [k,n]
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: shape mismatch");
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
    auto n = detail::make_op_node<Real>({m, nn}, "matmul", {a, b});
    const Real* ap = a.values().data();
    const Real* bp = b.values().data();
    Real* cp = n->value.data();
    for (int i = 0; i < m; ++i) {
        Real* crow = cp + static_cast<std::size_t>(i) * nn;
        for (int t = 0; t < k; ++t) {
            Real av = ap[static_cast<std::size_t>(i) * k + t];
            const Real* brow = bp + static_cast<std::size_t>(t) * nn;
            for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
    }
    if (n->requires_grad) {
        auto an = a.handle();
        auto bn = b.handle();
        n->backward_fn = [an, bn, m, k, nn](TensorNode<Real>& self, GradSink<Real>* sink) {
            const Real* gc = self.grad.data();
            if (an->requires_grad) {  // dA = dC B^T
                Real* ga = an->grad_accum(sink);
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        Real acc = 0;
                        const Real* gr = gc + static_cast<std::size_t>(i) * nn;
                        const Real* br = bn->value.data() + static_cast<std::size_t>(t) * nn;
                        for (int j = 0; j < nn; ++j) acc += gr[j] * br[j];
                        ga[static_cast<std::size_t>(i) * k + t] += acc;
                    }
            }
            if (bn->requires_grad) {  // dB = A^T dC
                Real* gb = bn->grad_accum(sink);
                for (int t = 0; t < k; ++t) {
                    Real* gbr = gb + static_cast<std::size_t>(t) * nn;
                    for (int i = 0; i < m; ++i) {
                        Real av = an->value[static_cast<std::size_t>(i) * k + t];
                        const Real* gr = gc + static_cast<std::size_t>(i) * nn;
                        for (int j = 0; j < nn; ++j) gbr[j] += av * gr[j];
                    }
                }
            }
        };
    }
    return Tensor<Real>(n);
}

// M [m,n] + v [m] broadcast over columns
template <class Real>
Tensor<Real> add_col_broadcast(const Tensor<Real>& m, const Tensor<Real>& v) {
    if (m.shape().size() != 2 || static_cast<int>(v.size()) != m.shape()[0])
        throw std::invalid_argument("add_col_broadcast: shape mismatch");
    const int rows = m.shape()[0], cols = m.shape()[1];
    auto n = detail::make_op_node<Real>(m.shape(), "add_col_broadcast", {m, v});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            n->value[static_cast<std::size_t>(i) * cols + j] =
                m.values()[static_cast<std::size_t>(i) * cols + j] + v.values()[i];
    if (n->requires_grad) {
        auto mn = m.handle();
        auto vn = v.handle();
        n->backward_fn = [mn, vn, rows, cols](TensorNode<Real>& self, GradSink<Real>* sink) {
            if (mn->requires_grad) {
                Real* g = mn->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
            if (vn->requires_grad) {
                Real* g = vn->grad_accum(sink);
                for (int i = 0; i < rows; ++i) {
                    Real acc = 0;
                    for (int j = 0; j < cols; ++j) acc += self.grad[static_cast<std::size_t>(i) * cols + j];
                    g[i] += acc;
                }
            }
        };
    }
    return Tensor<Real>(n);
}

// ---------------------------------------------------------------------------
// convolution / pooling / resampling (CHW layout)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    int stride, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: x must be CHW, w must be OIHW");
    const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    const int co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != ci || static_cast<int>(b.size()) != co)
        throw std::invalid_argument("conv2d: channel mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
    auto n = detail::make_op_node<Real>({co, ho, wo}, "conv2d", {x, w, b});

    const Real* xp = x.values().data();
    const Real* wp = w.values().data();
    Real* yp = n->value.data();
    for (int oc = 0; oc < co; ++oc) {
        Real* ybase = yp + static_cast<std::size_t>(oc) * ho * wo;
        Real bias = b.values()[oc];
        for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) ybase[i] = bias;
        for (int ic = 0; ic < ci; ++ic) {
            const Real* xbase = xp + static_cast<std::size_t>(ic) * h * wd;
            const Real* wbase = wp + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    Real wv = wbase[ky * kw + kx];
                    if (wv == Real(0)) continue;
                    for (int oy = 0; oy < ho; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const Real* xrow = xbase + static_cast<std::size_t>(iy) * wd;
                        Real* yrow = ybase + static_cast<std::size_t>(oy) * wo;
                        int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                        int ox1 = std::min(wo, (wd - 1 - kx + pad) / stride + 1);
                        if (stride == 1) {
                            int shift = kx - pad;
                            for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox + shift];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox)
                                yrow[ox] += wv * xrow[ox * stride - pad + kx];
                        }
                    }
                }
            }
        }
    }
    if (n->requires_grad) {
        auto xn = x.handle();
        auto wn = w.handle();
        auto bn = b.handle();
        n->backward_fn = [xn, wn, bn, ci, h, wd, co, kh, kw, ho, wo, stride,
                          pad](TensorNode<Real>& self, GradSink<Real>* sink) {
            const Real* gy = self.grad.data();
            Real* gx = xn->requires_grad ? xn->grad_accum(sink) : nullptr;
            Real* gw = wn->requires_grad ? wn->grad_accum(sink) : nullptr;
            Real* gb = bn->requires_grad ? bn->grad_accum(sink) : nullptr;
            for (int oc = 0; oc < co; ++oc) {
                const Real* gybase = gy + static_cast<std::size_t>(oc) * ho * wo;
                if (gb) {
                    Real acc = 0;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) acc += gybase[i];
                    gb[oc] += acc;
                }
                for (int ic = 0; ic < ci; ++ic) {
                    const Real* xbase = xn->value.data() + static_cast<std::size_t>(ic) * h * wd;
                    const std::size_t woff = ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
                    Real* gxbase = gx ? gx + static_cast<std::size_t>(ic) * h * wd : nullptr;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            Real wv = wn->value[woff + ky * kw + kx];
                            Real wacc = 0;
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                const Real* gyrow = gybase + static_cast<std::size_t>(oy) * wo;
                                const Real* xrow = xbase + static_cast<std::size_t>(iy) * wd;
                                Real* gxrow = gxbase ? gxbase + static_cast<std::size_t>(iy) * wd : nullptr;
                                int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
                                int ox1 = std::min(wo, (wd - 1 - kx + pad) / stride + 1);
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    int ix = ox * stride - pad + kx;
                                    Real g = gyrow[ox];
                                    if (gw) wacc += g * xrow[ix];
                                    if (gxrow) gxrow[ix] += g * wv;
                                }
                            }
                            if (gw) gw[woff + ky * kw + kx] += wacc;
                        }
                    }
                }
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> maxpool2x2(const Tensor<Real>& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("maxpool2x2: x must be CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("maxpool2x2: input too small");
    auto n = detail::make_op_node<Real>({c, ho, wo}, "maxpool2x2", {x});
    auto argmax = std::make_shared<std::vector<std::size_t>>(n->value.size());
    const Real* xp = x.values().data();
    for (int ic = 0; ic < c; ++ic) {
        const std::size_t xoff = static_cast<std::size_t>(ic) * h * w;
        const std::size_t yoff = static_cast<std::size_t>(ic) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                std::size_t best = xoff + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                Real bv = xp[best];
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t k : cand) {
                    if (xp[k] > bv) {
                        bv = xp[k];
                        best = k;
                    }
                }
                n->value[yoff + static_cast<std::size_t>(oy) * wo + ox] = bv;
                (*argmax)[yoff + static_cast<std::size_t>(oy) * wo + ox] = best;
            }
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [argmax](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (std::size_t i = 0; i < self.size(); ++i) g[(*argmax)[i]] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> upsample2x_nearest(const Tensor<Real>& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("upsample2x: x must be CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    auto n = detail::make_op_node<Real>({c, 2 * h, 2 * w}, "upsample2x", {x});
    const Real* xp = x.values().data();
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < 2 * h; ++y) {
            const Real* xrow = xp + (static_cast<std::size_t>(ic) * h + y / 2) * w;
            Real* yrow = n->value.data() + (static_cast<std::size_t>(ic) * 2 * h + y) * 2 * w;
            for (int xx = 0; xx < 2 * w; ++xx) yrow[xx] = xrow[xx / 2];
        }
    if (n->requires_grad) {
        n->backward_fn = [c, h, w](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (int ic = 0; ic < c; ++ic)
                for (int y = 0; y < 2 * h; ++y) {
                    Real* grow = g + (static_cast<std::size_t>(ic) * h + y / 2) * w;
                    const Real* srow = self.grad.data() + (static_cast<std::size_t>(ic) * 2 * h + y) * 2 * w;
                    for (int xx = 0; xx < 2 * w; ++xx) grow[xx / 2] += srow[xx];
                }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
Tensor<Real> crop2d(const Tensor<Real>& x, int y0, int x0, int ch, int cw) {
    if (x.shape().size() != 3) throw std::invalid_argument("crop2d: x must be CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (y0 < 0 || x0 < 0 || y0 + ch > h || x0 + cw > w || ch <= 0 || cw <= 0)
        throw std::invalid_argument("crop2d: window out of range");
    auto n = detail::make_op_node<Real>({c, ch, cw}, "crop2d", {x});
    const Real* xp = x.values().data();
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < ch; ++y) {
            const Real* src = xp + (static_cast<std::size_t>(ic) * h + (y0 + y)) * w + x0;
            Real* dst = n->value.data() + (static_cast<std::size_t>(ic) * ch + y) * cw;
            std::copy(src, src + cw, dst);
        }
    if (n->requires_grad) {
        n->backward_fn = [c, h, w, y0, x0, ch, cw](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (int ic = 0; ic < c; ++ic)
                for (int y = 0; y < ch; ++y) {
                    Real* dst = g + (static_cast<std::size_t>(ic) * h + (y0 + y)) * w + x0;
                    const Real* src = self.grad.data() + (static_cast<std::size_t>(ic) * ch + y) * cw;
                    for (int xx = 0; xx < cw; ++xx) dst[xx] += src[xx];
                }
        };
    }
    return Tensor<Real>(n);
}

// Align-corners bilinear resize of a CHW block to [c, oh, ow].
template <class Real>
Tensor<Real> bilinear_resize(const Tensor<Real>& x, int oh, int ow) {
    if (x.shape().size() != 3) throw std::invalid_argument("bilinear_resize: x must be CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    auto n = detail::make_op_node<Real>({c, oh, ow}, "bilinear_resize", {x});
    auto coords = std::make_shared<std::vector<std::array<int, 2>>>();
    auto fracs = std::make_shared<std::vector<std::array<Real, 2>>>();
    coords->resize(static_cast<std::size_t>(oh) * ow);
    fracs->resize(static_cast<std::size_t>(oh) * ow);
    for (int oy = 0; oy < oh; ++oy) {
        Real sy = (oh > 1 && h > 1) ? Real(oy) * Real(h - 1) / Real(oh - 1) : Real(0);
        int iy = std::min(static_cast<int>(sy), h - 1);
        Real fy = sy - Real(iy);
        if (iy >= h - 1) { iy = h - 1; fy = 0; }
        for (int ox = 0; ox < ow; ++ox) {
            Real sx = (ow > 1 && w > 1) ? Real(ox) * Real(w - 1) / Real(ow - 1) : Real(0);
            int ix = std::min(static_cast<int>(sx), w - 1);
            Real fx = sx - Real(ix);
            if (ix >= w - 1) { ix = w - 1; fx = 0; }
            (*coords)[static_cast<std::size_t>(oy) * ow + ox] = {iy, ix};
            (*fracs)[static_cast<std::size_t>(oy) * ow + ox] = {fy, fx};
        }
    }
    const Real* xp = x.values().data();
    for (int ic = 0; ic < c; ++ic) {
        const Real* xb = xp + static_cast<std::size_t>(ic) * h * w;
        Real* yb = n->value.data() + static_cast<std::size_t>(ic) * oh * ow;
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) {
            auto [iy, ix] = (*coords)[i];
            auto [fy, fx] = (*fracs)[i];
            int iy1 = std::min(iy + 1, h - 1), ix1 = std::min(ix + 1, w - 1);
            Real v00 = xb[static_cast<std::size_t>(iy) * w + ix];
            Real v01 = xb[static_cast<std::size_t>(iy) * w + ix1];
            Real v10 = xb[static_cast<std::size_t>(iy1) * w + ix];
            Real v11 = xb[static_cast<std::size_t>(iy1) * w + ix1];
            yb[i] = (Real(1) - fy) * ((Real(1) - fx) * v00 + fx * v01) +
                    fy * ((Real(1) - fx) * v10 + fx * v11);
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [c, h, w, oh, ow, coords, fracs](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            for (int ic = 0; ic < c; ++ic) {
                Real* gb = g + static_cast<std::size_t>(ic) * h * w;
                const Real* sg = self.grad.data() + static_cast<std::size_t>(ic) * oh * ow;
                for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) {
                    auto [iy, ix] = (*coords)[i];
                    auto [fy, fx] = (*fracs)[i];
                    int iy1 = std::min(iy + 1, h - 1), ix1 = std::min(ix + 1, w - 1);
                    Real gv = sg[i];
                    gb[static_cast<std::size_t>(iy) * w + ix] += gv * (Real(1) - fy) * (Real(1) - fx);
                    gb[static_cast<std::size_t>(iy) * w + ix1] += gv * (Real(1) - fy) * fx;
                    gb[static_cast<std::size_t>(iy1) * w + ix] += gv * fy * (Real(1) - fx);
                    gb[static_cast<std::size_t>(iy1) * w + ix1] += gv * fy * fx;
                }
            }
        };
    }
    return Tensor<Real>(n);
}

// Row lookup: table [V,E], returns row `index` as a vector [E].
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, int index) {
    if (table.shape().size() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    const int v = table.shape()[0], e = table.shape()[1];
    if (index < 0 || index >= v) throw std::invalid_argument("embedding: index out of range");
    auto n = detail::make_op_node<Real>({e}, "embedding", {table});
    const Real* src = table.values().data() + static_cast<std::size_t>(index) * e;
    std::copy(src, src + e, n->value.begin());
    if (n->requires_grad) {
        n->backward_fn = [index, e](TensorNode<Real>& self, GradSink<Real>* sink) {
            Real* g = self.parents[0]->grad_accum(sink);
            Real* row = g + static_cast<std::size_t>(index) * e;
            for (int i = 0; i < e; ++i) row[i] += self.grad[i];
        };
    }
    return Tensor<Real>(n);
}

// ---------------------------------------------------------------------------
// backprop driver
// ---------------------------------------------------------------------------

template <class Real>
std::vector<TensorNode<Real>*> topo_order(TensorNode<Real>* root) {
    std::vector<TensorNode<Real>*> order;
    std::unordered_set<TensorNode<Real>*> seen;
    // iterative post-order DFS; child ordering = parent vector order (fixed
    // at construction), so traversal is deterministic
    std::vector<std::pair<TensorNode<Real>*, std::size_t>> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<Real>* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

// Populates gradients of every trainable leaf reachable from a scalar root.
// Repeated calls accumulate until grads are zeroed. Non-finite forward
// values are reported with the offending node's name.
template <class Real>
void forward_backward(const Tensor<Real>& root, GradSink<Real>* sink = nullptr,
                      bool check_finite = true) {
    if (root.size() != 1) throw std::invalid_argument("forward_backward: root must be scalar");
    if (!root.node()->requires_grad) return;
    auto order = topo_order(root.node());
    if (check_finite) {
        for (auto* node : order)
            for (Real v : node->value)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError("non-finite value in forward pass at node '" + node->name + "'");
    }
    // intermediates always start from zero; leaf grads accumulate
    for (auto* node : order)
        if (!node->leaf) node->grad.assign(node->size(), Real(0));
    root.node()->grad.assign(1, Real(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<Real>* node = *it;
        if (node->backward_fn) node->backward_fn(*node, sink);
    }
}

}  // namespace textmux
