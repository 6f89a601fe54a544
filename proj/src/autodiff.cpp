#include "scasnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include <Eigen/Core>

#include "scasnn/errors.hpp"

namespace scasnn {

namespace detail {

// Receives the node's output gradient and one slot per input; a slot is null
// when that input does not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

struct Node {
    OpKind kind = OpKind::Constant;
    Tensor value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
};

}  // namespace detail

using detail::Node;

struct OpBuilder {
    static const std::shared_ptr<Node>& node(const Var& v) {
        if (!v.node_) throw ContractError("use of an empty Var");
        return v.node_;
    }

    static bool any_requires_grad(std::initializer_list<const Var*> vars) {
        return std::any_of(vars.begin(), vars.end(), [](const Var* v) { return node(*v)->requires_grad; });
    }

    // Records the node only when some input requires a gradient.
    static Var make(OpKind kind, Tensor value, std::vector<Var> inputs, detail::BackwardFn fn) {
        auto n = std::make_shared<Node>();
        n->kind = kind;
        n->value = std::move(value);
        for (const auto& in : inputs)
            if (node(in)->requires_grad) n->requires_grad = true;
        if (n->requires_grad) {
            n->inputs.reserve(inputs.size());
            for (const auto& in : inputs) n->inputs.push_back(node(in));
            n->backward = std::move(fn);
        }
        return Var(std::move(n));
    }
};

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->kind = OpKind::Parameter;
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->kind = OpKind::Constant;
    n->value = std::move(value);
    return Var(std::move(n));
}

const Tensor& Var::value() const { return OpBuilder::node(*this)->value; }
OpKind Var::kind() const { return OpBuilder::node(*this)->kind; }
bool Var::requires_grad() const { return OpBuilder::node(*this)->requires_grad; }

Tensor Gradients::of(const Var& param) const {
    auto it = grads_.find(param.node_.get());
    if (it != grads_.end()) return it->second;
    return Tensor::zeros_like(param.value());
}

bool Gradients::reached(const Var& param) const { return grads_.count(param.node_.get()) != 0; }

Gradients backward(const Var& loss) {
    const auto& root = OpBuilder::node(loss);
    if (root->value.size() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_string(root->value.shape()));

    Gradients out;
    if (!root->requires_grad) return out;

    // Iterative post-order DFS gives a topological order without recursion.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    std::unordered_map<Node*, Tensor> grad;
    grad.emplace(root.get(), Tensor(root->value.shape(), 1.0));
    std::vector<Tensor*> slots;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        auto g = grad.find(n);
        if (g == grad.end()) continue;
        if (n->kind == OpKind::Parameter) {
            out.grads_.emplace(n, std::move(g->second));
            continue;
        }
        slots.clear();
        for (auto& in : n->inputs) {
            if (!in->requires_grad) {
                slots.push_back(nullptr);
                continue;
            }
            auto [pos, inserted] = grad.try_emplace(in.get());
            if (inserted) pos->second = Tensor::zeros_like(in->value);
            slots.push_back(&pos->second);
        }
        n->backward(g->second, slots);
        grad.erase(g);
    }
    return out;
}

// --- elementary ops ----------------------------------------------------------

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
}

// c[m x n] += a[m x k] * b[k x n], all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    using M = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k), ni = static_cast<Eigen::Index>(n);
    Eigen::Map<M>(c, mi, ni).noalias() += Eigen::Map<const M>(a, mi, ki) * Eigen::Map<const M>(b, ki, ni);
}

Tensor transposed(const Tensor& a) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank(av, 2, "matmul");
    require_rank(bv, 2, "matmul");
    if (av.dim(1) != bv.dim(0))
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
    Var a_keep = a, b_keep = b;
    return OpBuilder::make(OpKind::MatMul, std::move(out), {a, b},
                           [a_keep, b_keep, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
                               if (in[0]) {
                                   Tensor bt = transposed(b_keep.value());
                                   gemm_acc(g.data(), bt.data(), in[0]->data(), m, n, k);
                               }
                               if (in[1]) {
                                   Tensor at = transposed(a_keep.value());
                                   gemm_acc(at.data(), g.data(), in[1]->data(), k, m, n);
                               }
                           });
}

Var transpose(const Var& a) {
    require_rank(a.value(), 2, "transpose");
    return OpBuilder::make(OpKind::Transpose, transposed(a.value()), {a},
                           [](const Tensor& g, std::span<Tensor* const> in) { *in[0] += transposed(g); });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return OpBuilder::make(OpKind::Add, std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) *in[0] += g;
        if (in[1]) *in[1] += g;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return OpBuilder::make(OpKind::Sub, std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) *in[0] += g;
        if (in[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Var a_keep = a, b_keep = b;
    return OpBuilder::make(OpKind::Mul, std::move(out), {a, b},
                           [a_keep, b_keep](const Tensor& g, std::span<Tensor* const> in) {
                               const auto av = a_keep.value().values();
                               const auto bv = b_keep.value().values();
                               if (in[0])
                                   for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                               if (in[1])
                                   for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                           });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out *= s;
    return OpBuilder::make(OpKind::Scale, std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> in) {
        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += s * g[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v += s;
    return OpBuilder::make(OpKind::AddScalar, std::move(out), {a},
                           [](const Tensor& g, std::span<Tensor* const> in) { *in[0] += g; });
}

Var add_bias(const Var& a, const Var& bias) {
    const Tensor& av = a.value();
    require_rank(av, 2, "add_bias");
    require_rank(bias.value(), 1, "add_bias");
    const std::size_t m = av.dim(0), n = av.dim(1);
    if (bias.value().dim(0) != n)
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                             shape_string(av.shape()));
    Tensor out = av;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
    return OpBuilder::make(OpKind::AddBias, std::move(out), {a, bias},
                           [m, n](const Tensor& g, std::span<Tensor* const> in) {
                               if (in[0]) *in[0] += g;
                               if (in[1])
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[i * n + j];
                           });
}

Var sum(const Var& a) {
    return OpBuilder::make(OpKind::Sum, Tensor::scalar(a.value().sum()), {a},
                           [](const Tensor& g, std::span<Tensor* const> in) {
                               for (auto& v : in[0]->values()) v += g[0];
                           });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return OpBuilder::make(OpKind::Mean, Tensor::scalar(a.value().sum() / n), {a},
                           [n](const Tensor& g, std::span<Tensor* const> in) {
                               for (auto& v : in[0]->values()) v += g[0] / n;
                           });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return OpBuilder::make(OpKind::Reshape, std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> in) {
        const auto gv = g.values();
        for (std::size_t i = 0; i < gv.size(); ++i) (*in[0])[i] += gv[i];
    });
}

Var gather(const Var& a, std::vector<std::size_t> index, Shape shape) {
    Tensor out(std::move(shape));
    if (out.size() != index.size())
        throw DimensionError("gather: " + std::to_string(index.size()) + " indices for shape " +
                             shape_string(out.shape()));
    const Tensor& v = a.value();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= v.size()) throw DimensionError("gather: index out of range");
        out[i] = v[index[i]];
    }
    return OpBuilder::make(OpKind::Gather, std::move(out), {a},
                           [index = std::move(index)](const Tensor& g, std::span<Tensor* const> in) {
                               for (std::size_t i = 0; i < index.size(); ++i) (*in[0])[index[i]] += g[i];
                           });
}

Var scatter(const Var& a, std::vector<std::size_t> index, Shape shape) {
    Tensor out(std::move(shape));
    const Tensor& v = a.value();
    if (v.size() != index.size())
        throw DimensionError("scatter: " + std::to_string(index.size()) + " indices for " + shape_string(v.shape()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= out.size()) throw DimensionError("scatter: index out of range");
        out[index[i]] += v[i];
    }
    return OpBuilder::make(OpKind::Scatter, std::move(out), {a},
                           [index = std::move(index)](const Tensor& g, std::span<Tensor* const> in) {
                               for (std::size_t i = 0; i < index.size(); ++i) (*in[0])[i] += g[index[i]];
                           });
}

Var concat_columns(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_columns needs at least one part");
    const std::size_t m = parts[0].value().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p.value(), 2, "concat_columns");
        if (p.value().dim(0) != m)
            throw DimensionError("concat_columns: row counts differ, " + shape_string(parts[0].shape()) + " vs " +
                                 shape_string(p.shape()));
        widths.push_back(p.value().dim(1));
        total += widths.back();
    }
    Tensor out({m, total});
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + offset);
        offset += widths[k];
    }
    return OpBuilder::make(OpKind::ConcatColumns, std::move(out), {parts.begin(), parts.end()},
                           [m, total, widths](const Tensor& g, std::span<Tensor* const> in) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < in.size(); ++k) {
                                   if (in[k])
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < widths[k]; ++j)
                                               (*in[k])[i * widths[k] + j] += g[i * total + off + j];
                                   off += widths[k];
                               }
                           });
}

Var custom_unary(const Var& x, const std::function<double(double)>& forward,
                 const std::function<double(double)>& derivative) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
    Tensor local;
    if (x.requires_grad()) {
        local = Tensor(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) local[i] = derivative(xv[i]);
    }
    return OpBuilder::make(OpKind::Custom, std::move(out), {x},
                           [local = std::move(local)](const Tensor& g, std::span<Tensor* const> in) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * local[i];
                           });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
    const Tensor& z = logits.value();
    require_rank(z, 2, "softmax_cross_entropy");
    const std::size_t m = z.dim(0), k = z.dim(1);
    if (labels.size() != m)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             shape_string(z.shape()) + " logits");
    Tensor prob(z.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= k) throw DimensionError("softmax_cross_entropy: label out of range");
        const double* zi = z.data() + i * k;
        const double zmax = *std::max_element(zi, zi + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(zi[j] - zmax);
        for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(zi[j] - zmax) / denom;
        loss += zmax + std::log(denom) - zi[labels[i]];
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return OpBuilder::make(OpKind::SoftmaxCrossEntropy, Tensor::scalar(loss / static_cast<double>(m)), {logits},
                           [prob = std::move(prob), lab = std::move(lab), m, k](const Tensor& g,
                                                                                  std::span<Tensor* const> in) {
                               const double s = g[0] / static_cast<double>(m);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < k; ++j)
                                       (*in[0])[i * k + j] += s * (prob[i * k + j] - (j == lab[i] ? 1.0 : 0.0));
                           });
}

// --- convolution -------------------------------------------------------------

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
    std::size_t rows() const { return c * kh * kw; }
    std::size_t plane() const { return oh * ow; }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Patch matrix [C*kh*kw][oh*ow] of one sample; padding reads as zero.
void im2col(const double* xs, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.plane();
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.ow + ox] =
                            inside ? xs[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

// Adjoint of im2col: accumulates patch gradients back onto the input.
void col2im_acc(const double* cols, const ConvGeometry& g, double* dxs) {
    const std::size_t plane = g.plane();
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dxs[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.ow + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernels, std::size_t stride, std::size_t padding) {
    const Tensor& x = input.value();
    const Tensor& k = kernels.value();
    if (x.rank() != 3 && x.rank() != 4)
        throw DimensionError("conv2d: input must be CxHxW or NxCxHxW, got " + shape_string(x.shape()));
    require_rank(k, 4, "conv2d");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const bool batched = x.rank() == 4;
    ConvGeometry g{};
    g.n = batched ? x.dim(0) : 1;
    g.c = x.dim(batched ? 1 : 0);
    g.h = x.dim(batched ? 2 : 1);
    g.w = x.dim(batched ? 3 : 2);
    g.o = k.dim(0);
    g.kh = k.dim(2);
    g.kw = k.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (k.dim(1) != g.c)
        throw DimensionError("conv2d: kernel " + shape_string(k.shape()) + " does not match input " +
                             shape_string(x.shape()));
    const std::size_t span_h = g.h + 2 * padding, span_w = g.w + 2 * padding;
    if (span_h < g.kh || span_w < g.kw || (span_h - g.kh) % stride || (span_w - g.kw) % stride)
        throw ConfigError("conv2d: output extent is not integral for input " + shape_string(x.shape()) +
                          ", kernel " + shape_string(k.shape()) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    g.oh = (span_h - g.kh) / stride + 1;
    g.ow = (span_w - g.kw) / stride + 1;

    const std::size_t in_size = g.c * g.h * g.w, out_size = g.o * g.plane();
    const auto R = static_cast<Eigen::Index>(g.rows()), P = static_cast<Eigen::Index>(g.plane()),
               O = static_cast<Eigen::Index>(g.o);
    Tensor out(batched ? Shape{g.n, g.o, g.oh, g.ow} : Shape{g.o, g.oh, g.ow});
    std::vector<double> cols(g.rows() * g.plane());
    const ConstMap K(k.data(), O, R);
    for (std::size_t s = 0; s < g.n; ++s) {
        im2col(x.data() + s * in_size, g, cols.data());
        MutMap(out.data() + s * out_size, O, P).noalias() = K * ConstMap(cols.data(), R, P);
    }

    Var x_keep = input, k_keep = kernels;
    return OpBuilder::make(
        OpKind::Conv2d, std::move(out), {input, kernels},
        [x_keep, k_keep, g, in_size, out_size, R, P, O](const Tensor& grad, std::span<Tensor* const> in) {
            std::vector<double> cols(g.rows() * g.plane());
            const ConstMap K(k_keep.value().data(), O, R);
            for (std::size_t s = 0; s < g.n; ++s) {
                const ConstMap G(grad.data() + s * out_size, O, P);
                if (in[1]) {
                    im2col(x_keep.value().data() + s * in_size, g, cols.data());
                    MutMap(in[1]->data(), O, R).noalias() += G * ConstMap(cols.data(), R, P).transpose();
                }
                if (in[0]) {
                    MutMap(cols.data(), R, P).noalias() = K.transpose() * G;
                    col2im_acc(cols.data(), g, in[0]->data() + s * in_size);
                }
            }
        });
}

// --- checking ------------------------------------------------------------------

double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& params, double step) {
    if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
    const Var p = Var::parameter(params);
    const Tensor analytic = backward(f(p)).of(p);
    Tensor probe = params;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = f(Var::constant(probe)).value()[0];
        probe[i] = orig - step;
        const double down = f(Var::constant(probe)).value()[0];
        probe[i] = orig;
        const double central = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace scasnn
