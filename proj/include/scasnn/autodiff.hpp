#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Var is a handle to an immutable node of the computation graph. Ops on Vars
// record a node only when at least one input requires a gradient, so the same
// forward code runs untaped when every leaf is a constant.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "scasnn/tensor.hpp"

namespace scasnn {

enum class OpKind {
    Parameter,
    Constant,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    AddBias,
    Sum,
    Mean,
    Conv2d,
    Reshape,
    ConcatColumns,
    Gather,
    Scatter,
    Custom,
    SoftmaxCrossEntropy,
};

namespace detail {
struct Node;
}

class Gradients;

class Var {
public:
    Var() = default;

    /// Leaf whose gradient is reported by backward().
    static Var parameter(Tensor value);
    static Var constant(Tensor value);

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    OpKind kind() const;
    bool requires_grad() const;
    bool valid() const noexcept { return node_ != nullptr; }

    /// True when both handles refer to the same graph node.
    bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

private:
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend class Gradients;
    friend struct OpBuilder;
    friend Gradients backward(const Var& loss);
};

/// Gradients of a scalar loss with respect to the parameter leaves it reached.
class Gradients {
public:
    /// Gradient for `param`; zeros when the loss does not depend on it.
    Tensor of(const Var& param) const;
    bool reached(const Var& param) const;

private:
    std::unordered_map<const detail::Node*, Tensor> grads_;
    friend Gradients backward(const Var& loss);
};

/// Accumulates d(loss)/d(parameter) for every parameter leaf under `loss`.
/// Each node is visited once, in reverse topological order.
Gradients backward(const Var& loss);

// --- ops -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a[m x n] + bias[n] broadcast over rows; the only broadcasting op.
Var add_bias(const Var& a, const Var& bias);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat_columns(std::span<const Var> parts);
/// out[i] = a[index[i]] over flat storage, reshaped to `shape`.
Var gather(const Var& a, std::vector<std::size_t> index, Shape shape);
/// Zeros of `shape` with out[index[i]] += a[i]; the adjoint of gather.
Var scatter(const Var& a, std::vector<std::size_t> index, Shape shape);

/// Cross-correlation. `input` is C x H x W or N x C x H x W, `kernels` is
/// C_out x C_in x kh x kw. Output keeps the input's rank.
Var conv2d(const Var& input, const Var& kernels, std::size_t stride, std::size_t padding);

/// Element-wise op with a caller-supplied local derivative. The derivative
/// replaces the true derivative of `forward` in the backward pass.
Var custom_unary(const Var& x, const std::function<double(double)>& forward,
                 const std::function<double(double)>& derivative);

/// Mean softmax cross-entropy of logits[m x K] against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels);

// --- checking --------------------------------------------------------------

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
/// comparing backward() against central differences of `f` at `params`.
double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& params, double step);

}  // namespace scasnn
