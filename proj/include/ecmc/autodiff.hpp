#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ecmc/error.hpp"
#include "ecmc/tensor.hpp"

// Reverse-mode automatic differentiation over 2-D tensors. Each operation
// records a node with its parents and a backward closure; backward() walks
// the graph in reverse topological order exactly once. Values are immutable
// after the forward pass; only leaves may be mutated (optimizer updates,
// finite-difference probes).

namespace ecmc {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad; // empty until first needed; same shape as value afterwards
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_op;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.rows(), value.cols());
        return grad;
    }
};

inline void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
        throw NumericError(std::string(op) + ": produced a non-finite value");
}

// Plain value-level kernels shared by forward and backward passes.

inline Tensor mat_mul(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bd + p * m;
            double* orow = od + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    return out;
}

// a * b^T
inline Tensor mat_mul_nt(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data().data() + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.data().data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out(i, j) = acc;
        }
    }
    return out;
}

// a^T * b
inline Tensor mat_mul_tn(const Tensor& a, const Tensor& b) {
    Tensor out(a.cols(), b.cols());
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    double* od = out.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data().data() + p * n;
        const double* brow = b.data().data() + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* orow = od + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += api * brow[j];
        }
    }
    return out;
}

inline void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

} // namespace detail

// Handle to a graph node. Copying a Var shares the node.
class Var {
public:
    Var() = default;

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var parameter(Tensor value) { return Var(std::move(value), true); }

    bool defined() const { return node_ != nullptr; }

    const Tensor& value() const { return node_->value; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }

    // Mutation is restricted to leaves: graph interiors are immutable once built.
    Tensor& leaf_value() {
        if (!node_->leaf)
            throw ContractError("Var::leaf_value: only leaf tensors may be mutated");
        return node_->value;
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }

    const Tensor& grad() const {
        if (!has_grad())
            throw ContractError("Var::grad: gradient never allocated; call zero_grad/backward first");
        return node_->grad;
    }

    void zero_grad() { node_->ensure_grad().fill(0.0); }

    std::shared_ptr<detail::Node> node() const { return node_; }

    static Var from_node(std::shared_ptr<detail::Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
        detail::check_finite(value, "Var leaf");
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Var make_op(Tensor value, const char* op, std::vector<Var> parents,
                   std::function<void(Node&)> backward) {
    check_finite(value, op);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->leaf = false;
    bool needs = false;
    for (const Var& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
        n->parents.reserve(parents.size());
        for (const Var& p : parents) n->parents.push_back(p.node());
        n->backward_op = std::move(backward);
    }
    return Var::from_node(std::move(n));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions " + a.value().shape_string() + " * " +
                             b.value().shape_string());
    Tensor out = detail::mat_mul(a.value(), b.value());
    return detail::make_op(std::move(out), "matmul", {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            detail::accumulate(pa.ensure_grad(), detail::mat_mul_nt(self.grad, pb.value));
        if (pb.requires_grad)
            detail::accumulate(pb.ensure_grad(), detail::mat_mul_tn(pa.value, self.grad));
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw DimensionError("add: shapes " + a.value().shape_string() + " vs " +
                             b.value().shape_string());
    Tensor out = a.value();
    detail::accumulate(out, b.value());
    return detail::make_op(std::move(out), "add", {a, b}, [](detail::Node& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) detail::accumulate(p->ensure_grad(), self.grad);
    });
}

// Adds a 1 x c bias row to every row of a.
inline Var add_bias(const Var& a, const Var& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw DimensionError("add_bias: bias " + bias.value().shape_string() +
                             " does not broadcast over " + a.value().shape_string());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()(0, j);
    return detail::make_op(std::move(out), "add_bias", {a, bias}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) detail::accumulate(pa.ensure_grad(), self.grad);
        if (pb.requires_grad) {
            Tensor& g = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
        }
    });
}

inline Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= factor;
    return detail::make_op(std::move(out), "scale", {a}, [factor](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += factor * self.grad.data()[i];
    });
}

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return detail::make_op(std::move(out), "relu", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (p.value.data()[i] > 0.0) g.data()[i] += self.grad.data()[i];
    });
}

// Row-wise softmax of (scale * a), computed with per-row max subtraction.
inline Var row_softmax(const Var& a, double scale) {
    if (a.cols() == 0 || a.rows() == 0)
        throw DimensionError("row_softmax: empty input " + a.value().shape_string());
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, scale * a.value()(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = std::exp(scale * a.value()(i, j) - mx);
            denom += out(i, j);
        }
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= denom;
    }
    return detail::make_op(std::move(out), "row_softmax", {a}, [scale](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const Tensor& y = self.value;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += self.grad(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                g(i, j) += scale * y(i, j) * (self.grad(i, j) - dot);
        }
    });
}

inline constexpr double kNormEpsilon = 1e-12;

// Scales every row to unit Euclidean norm. Rows with norm below kNormEpsilon
// are rejected rather than silently blown up.
inline Var l2_normalize_rows(const Var& a) {
    Tensor out(a.rows(), a.cols());
    std::vector<double> norms(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) sq += a.value()(i, j) * a.value()(i, j);
        const double norm = std::sqrt(sq);
        if (norm < kNormEpsilon)
            throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) +
                                       " has near-zero norm");
        norms[i] = norm;
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a.value()(i, j) / norm;
    }
    return detail::make_op(std::move(out), "l2_normalize_rows", {a},
                           [norms = std::move(norms)](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const Tensor& y = self.value;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += self.grad(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                g(i, j) += (self.grad(i, j) - y(i, j) * dot) / norms[i];
        }
    });
}

// Column-wise mean over rows: (r x c) -> (1 x c).
inline Var mean_pool_rows(const Var& a) {
    if (a.rows() == 0)
        throw DimensionError("mean_pool_rows: zero rows");
    Tensor out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a.value()(i, j);
    const double inv = 1.0 / static_cast<double>(a.rows());
    for (double& v : out.data()) v *= inv;
    return detail::make_op(std::move(out), "mean_pool_rows", {a}, [inv](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += inv * self.grad(0, j);
    });
}

inline Var transpose(const Var& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a.value()(i, j);
    return detail::make_op(std::move(out), "transpose", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += self.grad(j, i);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        total += p.cols();
    }
    Tensor out(r, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    return detail::make_op(std::move(out), "concat_cols", parts, [](detail::Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t c = p->value.cols();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(i, off + j);
            }
            off += c;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        total += p.rows();
    }
    Tensor out(total, c);
    std::size_t off = 0;
    for (const Var& p : parts) {
        for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) out(off + i, j) = p.value()(i, j);
        off += p.rows();
    }
    return detail::make_op(std::move(out), "concat_rows", parts, [](detail::Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t r = p->value.rows();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += self.grad(off + i, j);
            }
            off += r;
        }
    });
}

inline Var elem_exp(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::exp(v);
    return detail::make_op(std::move(out), "elem_exp", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data()[i] += self.grad.data()[i] * self.value.data()[i];
    });
}

inline Var elem_log(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::log(v);
    return detail::make_op(std::move(out), "elem_log", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data()[i] += self.grad.data()[i] / p.value.data()[i];
    });
}

inline Var elem_mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value()))
        throw DimensionError("elem_mul: shapes " + a.value().shape_string() + " vs " +
                             b.value().shape_string());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
    return detail::make_op(std::move(out), "elem_mul", {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g.data()[i] += self.grad.data()[i] * pb.value.data()[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                g.data()[i] += self.grad.data()[i] * pa.value.data()[i];
        }
    });
}

inline Var sum_all(const Var& a) {
    Tensor out(1, 1);
    for (double v : a.value().data()) out(0, 0) += v;
    return detail::make_op(std::move(out), "sum_all", {a}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const double s = self.grad(0, 0);
        for (double& v : g.data()) v += s;
    });
}

// Weighted reduction: sum of a (.) mask, where mask is a plain tensor.
inline Var masked_sum(const Var& a, const Tensor& mask) {
    if (!a.value().same_shape(mask))
        throw DimensionError("masked_sum: mask shape " + mask.shape_string() +
                             " vs input " + a.value().shape_string());
    Tensor out(1, 1);
    for (std::size_t i = 0; i < mask.size(); ++i)
        out(0, 0) += a.value().data()[i] * mask.data()[i];
    return detail::make_op(std::move(out), "masked_sum", {a}, [mask](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const double s = self.grad(0, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += s * mask.data()[i];
    });
}

// Selects rows of a table by index; duplicate indices accumulate gradient.
inline Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
    for (std::size_t id : ids)
        if (id >= table.rows())
            throw DimensionError("gather_rows: index " + std::to_string(id) +
                                 " out of range for " + table.value().shape_string());
    Tensor out(ids.size(), table.cols());
    for (std::size_t k = 0; k < ids.size(); ++k)
        for (std::size_t j = 0; j < table.cols(); ++j) out(k, j) = table.value()(ids[k], j);
    return detail::make_op(std::move(out), "gather_rows", {table}, [ids](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t k = 0; k < ids.size(); ++k)
            for (std::size_t j = 0; j < g.cols(); ++j) g(ids[k], j) += self.grad(k, j);
    });
}

inline Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
    if (start + count > a.rows())
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") exceeds " +
                             std::to_string(a.rows()) + " rows");
    Tensor out(count, a.cols());
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a.value()(start + i, j);
    return detail::make_op(std::move(out), "slice_rows", {a}, [start, count](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(start + i, j) += self.grad(i, j);
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Populates grad on every requires_grad leaf reachable from loss. Repeated
// calls accumulate into leaf grads; interior grads are reset per call.
inline void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw ContractError("backward: loss must be a 1x1 scalar, got " +
                            loss.value().shape_string());
    if (!loss.requires_grad()) return; // nothing reachable requires gradients

    // Iterative post-order over parents.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            ++stack.back().second;
            detail::Node* parent = node->parents[idx].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is post-order: parents before children; reverse for backprop.
    std::reverse(order.begin(), order.end());

    for (detail::Node* n : order)
        if (!n->leaf) n->ensure_grad().fill(0.0);
    loss.node()->ensure_grad()(0, 0) += 1.0;

    for (detail::Node* n : order) {
        if (n->backward_op) {
            n->backward_op(*n);
            if (!n->grad.all_finite())
                throw NumericError("backward: non-finite gradient encountered");
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

// Compares the analytic gradient of f (a scalar-valued function of the given
// leaf parameters, rebuilt on every call) against central differences.
// Returns the max over parameters of
//   |analytic - central| / max(|analytic|, |central|, 1e-8),
// where |.| is the Frobenius norm over one parameter tensor. Per-component
// ratios are not used: at step 1e-5 the difference quotient carries rounding
// noise of order eps*|f|/h, which swamps components whose true gradient is
// below ~1e-8 no matter how correct the backward pass is.
inline double grad_check(const std::function<Var()>& f, std::span<const Var> params,
                         double h = 1e-5) {
    if (h <= 0.0) throw ContractError("grad_check: step must be positive");

    for (const Var& p : params) {
        if (!p.is_leaf() || !p.requires_grad())
            throw ContractError("grad_check: parameters must be requires_grad leaves");
        const_cast<Var&>(p).zero_grad();
    }
    Var loss = f();
    if (loss.rows() != 1 || loss.cols() != 1)
        throw ContractError("grad_check: f must return a scalar");
    backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Var& p : params) analytic.push_back(p.grad());

    const auto eval = [&]() {
        const Var v = f();
        if (v.rows() != 1 || v.cols() != 1)
            throw ContractError("grad_check: f must return a scalar");
        const double x = v.value()(0, 0);
        if (!std::isfinite(x)) throw NumericError("grad_check: f evaluated to a non-finite value");
        return x;
    };

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& value = const_cast<Var&>(params[pi]).leaf_value();
        double diff_sq = 0.0, a_sq = 0.0, cd_sq = 0.0;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value.data()[i];
            value.data()[i] = saved + h;
            const double up = eval();
            value.data()[i] = saved - h;
            const double down = eval();
            value.data()[i] = saved;
            const double central = (up - down) / (2.0 * h);
            const double a = analytic[pi].data()[i];
            diff_sq += (a - central) * (a - central);
            a_sq += a * a;
            cd_sq += central * central;
        }
        const double rel = std::sqrt(diff_sq) /
                           std::max({std::sqrt(a_sq), std::sqrt(cd_sq), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace ecmc
