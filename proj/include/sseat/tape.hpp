#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace sseat {

enum class OpKind {
    Leaf,
    Constant,
    MatMul,
    AddBias,
    Relu,
    LogSoftmax,
    Nll,
    Add,
    Sub,
    Scale,
    Sum,
    Mean,
    Detach,
    JsRows,
};

inline const char* op_name(OpKind k) {
    switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Relu: return "relu";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Nll: return "nll";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Detach: return "detach";
    case OpKind::JsRows: return "js_rows";
    }
    return "?";
}

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Extra operands that are not tensors.
struct OpArgs {
    double factor = 1.0;                 // Scale
    std::vector<std::size_t> labels;     // Nll
};

/// Leaf gradients produced by one backward pass.
class Gradients {
public:
    Gradients() = default;
    Gradients(std::vector<Tensor> grads, std::vector<bool> is_leaf)
        : grads_(std::move(grads)), is_leaf_(std::move(is_leaf)) {}

    const Tensor& operator[](Var leaf) const {
        if (leaf.id() >= grads_.size() || !is_leaf_[leaf.id()])
            throw ShapeError("gradients: node " + std::to_string(leaf.id()) + " is not a recorded leaf");
        return grads_[leaf.id()];
    }

    bool has(Var leaf) const { return leaf.id() < grads_.size() && is_leaf_[leaf.id()]; }

    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count(is_leaf_.begin(), is_leaf_.end(), true));
    }

private:
    std::vector<Tensor> grads_;
    std::vector<bool> is_leaf_;
};

/// Append-only record of operations for reverse-mode differentiation.
/// Nodes are stored in creation order, which is a topological order.
class Tape {
public:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        OpArgs args;
        bool requires_grad;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value) { return push(OpKind::Leaf, {}, std::move(value), {}, true); }
    Var constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), {}, false); }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::size_t id) const { return nodes_.at(id); }

    /// Evaluates `kind` on `inputs` and records it.
    Var apply(OpKind kind, std::span<const Var> inputs, OpArgs args = {}) {
        for (const Var& v : inputs)
            if (v.tape() != this) throw ShapeError(std::string(op_name(kind)) + ": input belongs to another tape");
        auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].id()].value; };
        auto arity = [&](std::size_t n) {
            if (inputs.size() != n)
                throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                                 std::to_string(inputs.size()));
        };
        Tensor out;
        switch (kind) {
        case OpKind::Leaf:
        case OpKind::Constant:
            throw ShapeError("apply: use leaf() or constant() to create inputs");
        case OpKind::MatMul: arity(2); out = kernel::matmul(in(0), in(1)); break;
        case OpKind::AddBias: arity(2); out = kernel::add_bias(in(0), in(1)); break;
        case OpKind::Relu: arity(1); out = kernel::relu(in(0)); break;
        case OpKind::LogSoftmax: arity(1); out = kernel::log_softmax(in(0)); break;
        case OpKind::Nll: arity(1); out = kernel::nll(in(0), args.labels); break;
        case OpKind::Add: arity(2); out = kernel::add(in(0), in(1)); break;
        case OpKind::Sub: arity(2); out = kernel::sub(in(0), in(1)); break;
        case OpKind::Scale: arity(1); out = kernel::scale(in(0), args.factor); break;
        case OpKind::Sum: arity(1); out = kernel::sum(in(0)); break;
        case OpKind::Mean: arity(1); out = kernel::mean(in(0)); break;
        case OpKind::Detach: arity(1); out = in(0); break;
        case OpKind::JsRows: arity(2); out = kernel::js_rows(in(0), in(1)); break;
        }
        bool grad = false;
        if (kind != OpKind::Detach)
            for (const Var& v : inputs) grad = grad || nodes_[v.id()].requires_grad;
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        for (const Var& v : inputs) ids.push_back(v.id());
        return push(kind, std::move(ids), std::move(out), std::move(args), grad);
    }

    Var apply(OpKind kind, std::initializer_list<Var> inputs, OpArgs args = {}) {
        return apply(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(args));
    }

    /// Reverse pass from a scalar root. Every leaf receives a gradient; leaves
    /// that do not influence the root get zeros.
    Gradients backward(Var root) const {
        if (nodes_.empty()) throw ShapeError("backward: empty tape");
        if (root.tape() != this) throw ShapeError("backward: root belongs to another tape");
        const Node& r = nodes_.at(root.id());
        if (r.value.numel() != 1)
            throw ShapeError("backward: root must be scalar, got " + shape_str(r.value.shape()));

        std::vector<Tensor> grads(nodes_.size());
        std::vector<bool> seeded(nodes_.size(), false);
        grads[root.id()] = Tensor(r.value.shape(), 1.0);
        seeded[root.id()] = true;

        auto accumulate = [&](std::size_t id, Tensor g) {
            if (!nodes_[id].requires_grad) return;
            if (!seeded[id]) {
                grads[id] = std::move(g);
                seeded[id] = true;
            } else {
                auto dst = grads[id].data();
                auto src = g.data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
        };

        for (std::size_t id = root.id() + 1; id-- > 0;) {
            if (!seeded[id]) continue;
            const Node& n = nodes_[id];
            if (!n.requires_grad || n.kind == OpKind::Leaf) continue;
            const Tensor& g = grads[id];
            backward_node(n, g, accumulate);
        }

        std::vector<bool> is_leaf(nodes_.size(), false);
        std::vector<Tensor> out(nodes_.size());
        for (std::size_t id = 0; id < nodes_.size(); ++id) {
            if (nodes_[id].kind != OpKind::Leaf) continue;
            is_leaf[id] = true;
            out[id] = seeded[id] ? std::move(grads[id]) : Tensor(nodes_[id].value.shape(), 0.0);
        }
        return Gradients(std::move(out), std::move(is_leaf));
    }

private:
    Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, OpArgs args, bool grad) {
        nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(args), grad});
        return Var(this, nodes_.size() - 1);
    }

    template <typename Acc>
    void backward_node(const Node& n, const Tensor& g, Acc& accumulate) const {
        const Tensor& v = n.value;
        auto input = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
        auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
        switch (n.kind) {
        case OpKind::Leaf:
        case OpKind::Constant:
        case OpKind::Detach:
            break;
        case OpKind::MatMul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t m = a.dim(0), k = a.dim(1);
            const std::size_t cols = b.rank() == 1 ? 1 : b.dim(1);
            if (wants(0)) {
                Tensor da(a.shape());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
                        da[i * k + p] = s;
                    }
                accumulate(n.inputs[0], std::move(da));
            }
            if (wants(1)) {
                Tensor db(b.shape());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < cols; ++j) db[p * cols + j] += av * g[i * cols + j];
                    }
                accumulate(n.inputs[1], std::move(db));
            }
            break;
        }
        case OpKind::AddBias: {
            if (wants(0)) accumulate(n.inputs[0], g);
            if (wants(1)) {
                const std::size_t cols = g.dim(1);
                Tensor db(Shape{cols});
                for (std::size_t i = 0; i < g.numel(); ++i) db[i % cols] += g[i];
                accumulate(n.inputs[1], std::move(db));
            }
            break;
        }
        case OpKind::Relu: {
            const Tensor& x = input(0);
            Tensor dx(x.shape());
            for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
            accumulate(n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::LogSoftmax: {
            // dz = dy - softmax(z) * rowsum(dy)
            const std::size_t cols = v.shape().back();
            const std::size_t rows = v.numel() / cols;
            Tensor dz(v.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                double gs = 0.0;
                for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    dz[r * cols + j] = g[r * cols + j] - std::exp(v[r * cols + j]) * gs;
            }
            accumulate(n.inputs[0], std::move(dz));
            break;
        }
        case OpKind::Nll: {
            const Tensor& logp = input(0);
            Tensor d(logp.shape());
            const double w = g.item() / static_cast<double>(n.args.labels.size());
            for (std::size_t i = 0; i < n.args.labels.size(); ++i) d.at(i, n.args.labels[i]) = -w;
            accumulate(n.inputs[0], std::move(d));
            break;
        }
        case OpKind::Add:
            if (wants(0)) accumulate(n.inputs[0], g);
            if (wants(1)) accumulate(n.inputs[1], g);
            break;
        case OpKind::Sub:
            if (wants(0)) accumulate(n.inputs[0], g);
            if (wants(1)) accumulate(n.inputs[1], kernel::scale(g, -1.0));
            break;
        case OpKind::Scale:
            accumulate(n.inputs[0], kernel::scale(g, n.args.factor));
            break;
        case OpKind::Sum:
            accumulate(n.inputs[0], Tensor(input(0).shape(), g.item()));
            break;
        case OpKind::Mean:
            accumulate(n.inputs[0],
                       Tensor(input(0).shape(), g.item() / static_cast<double>(input(0).numel())));
            break;
        case OpKind::JsRows: {
            // d JS / d log p_i = p_i * 0.5 * log(p_i / m_i), scaled by the row mean.
            const Tensor& lp = input(0);
            const Tensor& lq = input(1);
            const std::size_t rows = lp.dim(0);
            const double w = g.item() / static_cast<double>(rows);
            Tensor dp(lp.shape()), dq(lq.shape());
            for (std::size_t i = 0; i < lp.numel(); ++i) {
                const double p = std::exp(lp[i]);
                const double q = std::exp(lq[i]);
                const double m = 0.5 * (p + q);
                if (m <= 0.0) continue;
                const double logm = std::log(m);
                if (p > 0.0) dp[i] = w * 0.5 * p * (lp[i] - logm);
                if (q > 0.0) dq[i] = w * 0.5 * q * (lq[i] - logm);
            }
            if (wants(0)) accumulate(n.inputs[0], std::move(dp));
            if (wants(1)) accumulate(n.inputs[1], std::move(dq));
            break;
        }
        }
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }
inline bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

// Convenience wrappers over Tape::apply.

inline Var matmul(Var a, Var b) { return a.tape()->apply(OpKind::MatMul, {a, b}); }
inline Var add_bias(Var x, Var b) { return x.tape()->apply(OpKind::AddBias, {x, b}); }
inline Var relu(Var x) { return x.tape()->apply(OpKind::Relu, {x}); }
inline Var log_softmax(Var z) { return z.tape()->apply(OpKind::LogSoftmax, {z}); }
inline Var nll(Var logp, std::vector<std::size_t> labels) {
    OpArgs args;
    args.labels = std::move(labels);
    return logp.tape()->apply(OpKind::Nll, {logp}, std::move(args));
}
inline Var add(Var a, Var b) { return a.tape()->apply(OpKind::Add, {a, b}); }
inline Var sub(Var a, Var b) { return a.tape()->apply(OpKind::Sub, {a, b}); }
inline Var scale(Var a, double s) {
    OpArgs args;
    args.factor = s;
    return a.tape()->apply(OpKind::Scale, {a}, std::move(args));
}
inline Var sum(Var a) { return a.tape()->apply(OpKind::Sum, {a}); }
inline Var mean(Var a) { return a.tape()->apply(OpKind::Mean, {a}); }
inline Var detach(Var a) { return a.tape()->apply(OpKind::Detach, {a}); }
/// Mean row-wise Jensen-Shannon divergence between two log-probability matrices.
inline Var js_rows(Var logp, Var logq) { return logp.tape()->apply(OpKind::JsRows, {logp, logq}); }

/// Cross-entropy of raw logits against labels, batch mean.
inline Var cross_entropy(Var logits, std::vector<std::size_t> labels) {
    return nll(log_softmax(logits), std::move(labels));
}

} // namespace sseat
