#pragma once

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// Every op takes single-sample tensors (no batch axis). A graph is built
// eagerly while values are computed; backward() walks it in reverse
// topological order and accumulates gradients into every node that
// requires them. Nodes that do not depend on a gradient-requiring leaf
// keep no parents, so forward passes over frozen weights stay cheap and
// never write to shared state.

#include "lvo/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace lvo::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }

    /// Accumulated gradient; zeros when backward never reached this node.
    Tensor grad() const;
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad = Tensor(); }

    const std::shared_ptr<Node>& node() const { return node_; }
    bool valid() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var leaf(Tensor t) { return Var(std::move(t), true); }

/// Seeds d(out)/d(out) = 1 and propagates. `out` must hold exactly one element.
void backward(const Var& out);

/// Linear map y = A x stored as per-output lists of (input index, weight).
struct SparseLinearMap {
    std::vector<int> in_shape;
    std::vector<int> out_shape;
    std::vector<int> offsets;  // size out + 1
    std::vector<int> index;
    std::vector<double> weight;

    Tensor apply(const Tensor& x) const;
    Tensor apply_transpose(const Tensor& y) const;
};

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);
/// a * x + offset, offset treated as a constant.
Var affine(const Var& x, double a, const Tensor& offset);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);
Var exp(const Var& x);

// reductions
Var sum(const Var& x);
Var mean(const Var& x);
/// sum(x * w) with w constant.
Var dot(const Var& x, const Tensor& w);

// shape
Var reshape(const Var& x, std::vector<int> shape);
/// [C, H, W] -> [H*W, C]
Var to_tokens(const Var& x);
/// [H*W, C] -> [C, H, W]
Var from_tokens(const Var& x, int height, int width);
Var slice_channels(const Var& x, int begin, int end);
Var upsample_nearest2(const Var& x);
Var transpose(const Var& x);

// linear algebra / layers
Var matmul(const Var& a, const Var& b);
/// x [N, K] * w[M, K]^T + b[M]; pass an invalid Var for no bias.
Var linear(const Var& x, const Var& w, const Var& b);
Var add_row_bias(const Var& x, const Var& bias);
Var add_channel_bias(const Var& x, const Var& bias);
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var softmax_rows(const Var& x);
/// Row `index` of table [V, D] -> [D].
Var embedding(const Var& table, int index);

// feature readout
/// max over rows of column j of x [N, M]; gradient flows to the first arg-max.
Var column_max(const Var& x, int column);
Var column_mean(const Var& x, int column);
/// Per row keep the k largest entries (ties to the lower index), zero the rest, clamp at 0.
Var topk_relu_rows(const Var& x, int k);

Var sparse_map(const Var& x, const SparseLinearMap& map);

/// Replaces the value with `replacement` (same shape); gradient passes through unchanged.
Var substitute(const Var& x, Tensor replacement);

} // namespace lvo::ag
