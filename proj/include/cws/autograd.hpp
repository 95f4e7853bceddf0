#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cws/tensor.hpp"

namespace cws {

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool trainable = true;  // leaf flag consulted by optimizers; cleared by freeze_prefix
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // reads this->grad, accumulates into parents

    void accumulate(const Tensor& g) {
        if (grad.empty()) grad = Tensor::zeros(value.shape());
        grad += g;
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// RAII guard disabling graph construction (inference / statistics updates).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
};

// Shared handle to an autograd node. Copies alias the same storage, so an
// optimizer mutating `value()` is visible to every holder of the handle.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) : n_(std::make_shared<detail::Node>()) {
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;  // graph construction is gated in make_op, not here
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& value() { return n_->value; }
    const Tensor& grad() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const Shape& shape() const { return n_->value.shape(); }
    int64_t numel() const { return n_->value.numel(); }

    void zero_grad() {
        if (n_) n_->grad = Tensor();
    }

    // Reverse-mode sweep from a scalar output.
    void backward() const {
        if (n_->value.numel() != 1) throw std::logic_error("backward: output is not scalar");
        std::vector<detail::Node*> topo;
        std::unordered_set<detail::Node*> seen;
        // iterative post-order
        std::vector<std::pair<detail::Node*, size_t>> frames;
        frames.push_back({n_.get(), 0});
        seen.insert(n_.get());
        while (!frames.empty()) {
            auto& [node, idx] = frames.back();
            if (idx < node->parents.size()) {
                detail::Node* p = node->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    frames.push_back({p, 0});
                }
            } else {
                topo.push_back(node);
                frames.pop_back();
            }
        }
        n_->accumulate(Tensor::full({1}, 1.0));
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            detail::Node* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn();
        }
    }

    std::shared_ptr<detail::Node> node() const { return n_; }

private:
    std::shared_ptr<detail::Node> n_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var constant(double v) { return Var(Tensor::scalar(v), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    Node& n = *out.node();
    bool any = false;
    if (grad_mode()) {
        for (const auto& p : parents) any = any || p.requires_grad();
    }
    if (any) {
        n.requires_grad = true;
        for (const auto& p : parents) n.parents.push_back(p.node());
        Node* self = &n;
        n.backward_fn = [self, backward = std::move(backward)]() { backward(*self); };
    }
    return out;
}

// Broadcast helpers (NumPy alignment from the right).
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (size_t i = 0; i < nd; ++i) {
        int da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        int db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `src` viewed under `dst` (right-aligned, 0 where broadcast).
inline std::vector<int64_t> broadcast_strides(const Shape& src, const Shape& dst) {
    auto st = row_major_strides(src);
    std::vector<int64_t> out(dst.size(), 0);
    size_t off = dst.size() - src.size();
    for (size_t i = 0; i < src.size(); ++i)
        out[off + i] = (src[i] == 1 && dst[off + i] != 1) ? 0 : st[i];
    return out;
}

// Sum `g` (shaped like `dst`) down to `src`'s shape for broadcast backward.
inline Tensor reduce_to(const Tensor& g, const Shape& src) {
    if (g.shape() == src) return g;
    Tensor out(src, 0.0);
    const Shape& dst = g.shape();
    auto src_st = broadcast_strides(src, dst);
    size_t nd = dst.size();
    std::vector<int> idx(nd, 0);
    const double* gp = g.data();
    double* op = out.data();
    int64_t src_off = 0;
    for (int64_t i = 0;; ++i) {
        op[src_off] += gp[i];
        size_t d = nd;
        while (d-- > 0) {
            idx[d]++;
            src_off += src_st[d];
            if (idx[d] < dst[d]) break;
            src_off -= static_cast<int64_t>(idx[d]) * src_st[d];
            idx[d] = 0;
            if (d == 0) return out;
        }
        if (nd == 0) return out;
    }
}

template <class FwdFn, class DaFn, class DbFn>
Var broadcast_binary(const Var& a, const Var& b, FwdFn f, DaFn dfa, DbFn dfb) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    auto ast = broadcast_strides(a.shape(), os);
    auto bst = broadcast_strides(b.shape(), os);
    size_t nd = os.size();
    const double* ap = a.value().data();
    const double* bp = b.value().data();
    double* op = out.data();
    int64_t n = out.numel();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < n; ++i) op[i] = f(ap[i], bp[i]);
    } else {
        std::vector<int> idx(nd, 0);
        int64_t ai = 0, bi = 0;
        for (int64_t i = 0; i < n; ++i) {
            op[i] = f(ap[ai], bp[bi]);
            size_t d = nd;
            while (d-- > 0) {
                idx[d]++;
                ai += ast[d];
                bi += bst[d];
                if (idx[d] < os[d]) break;
                ai -= static_cast<int64_t>(idx[d]) * ast[d];
                bi -= static_cast<int64_t>(idx[d]) * bst[d];
                idx[d] = 0;
            }
        }
    }
    return make_op(std::move(out), {a, b}, [a, b, dfa, dfb, os](Node& self) {
        auto ast2 = broadcast_strides(a.shape(), os);
        auto bst2 = broadcast_strides(b.shape(), os);
        size_t nd2 = os.size();
        const double* ap2 = a.value().data();
        const double* bp2 = b.value().data();
        const double* gp = self.grad.data();
        int64_t n2 = self.grad.numel();
        Tensor ga, gb;
        if (a.requires_grad()) ga = Tensor::zeros(os);
        if (b.requires_grad()) gb = Tensor::zeros(os);
        std::vector<int> idx(nd2, 0);
        int64_t ai = 0, bi = 0;
        for (int64_t i = 0; i < n2; ++i) {
            if (a.requires_grad()) ga[i] = dfa(ap2[ai], bp2[bi]) * gp[i];
            if (b.requires_grad()) gb[i] = dfb(ap2[ai], bp2[bi]) * gp[i];
            size_t d = nd2;
            while (d-- > 0) {
                idx[d]++;
                ai += ast2[d];
                bi += bst2[d];
                if (idx[d] < os[d]) break;
                ai -= static_cast<int64_t>(idx[d]) * ast2[d];
                bi -= static_cast<int64_t>(idx[d]) * bst2[d];
                idx[d] = 0;
            }
        }
        if (a.requires_grad()) a.node()->accumulate(reduce_to(ga, a.shape()));
        if (b.requires_grad()) b.node()->accumulate(reduce_to(gb, b.shape()));
    });
}

template <class FwdFn, class DFn>
Var unary(const Var& a, FwdFn f, DFn df) {
    Tensor out(a.shape());
    const double* ap = a.value().data();
    double* op = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) op[i] = f(ap[i]);
    return make_op(std::move(out), {a}, [a, df](Node& self) {
        if (!a.requires_grad()) return;
        Tensor g(a.shape());
        const double* ap2 = a.value().data();
        const double* vp = self.value.data();
        const double* gp = self.grad.data();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = df(ap2[i], vp[i]) * gp[i];
        a.node()->accumulate(g);
    });
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}
inline Var div(const Var& a, const Var& b) {
    return detail::broadcast_binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

inline Var add_c(const Var& a, double c) {
    return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Var mul_c(const Var& a, double c) {
    return detail::unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}
inline Var neg(const Var& a) { return mul_c(a, -1.0); }
inline Var pow_c(const Var& a, double p) {
    return detail::unary(a, [p](double x) { return std::pow(x, p); },
                         [p](double x, double) { return p * std::pow(x, p - 1.0); });
}
inline Var sqrt(const Var& a) {
    return detail::unary(a, [](double x) { return std::sqrt(x); },
                         [](double, double y) { return 0.5 / y; });
}
inline Var exp(const Var& a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var sigmoid(const Var& a) {
    return detail::unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                         [](double, double y) { return y * (1.0 - y); });
}
inline Var relu(const Var& a) {
    return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; },
                         [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
// tanh-approximation GELU
inline Var gelu(const Var& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return detail::unary(
        a,
        [](double x) {
            double t = std::tanh(k * (x + 0.044715 * x * x * x));
            return 0.5 * x * (1.0 + t);
        },
        [](double x, double) {
            double u = k * (x + 0.044715 * x * x * x);
            double t = std::tanh(u);
            double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}
inline Var clamp_min(const Var& a, double lo) {
    return detail::unary(a, [lo](double x) { return x < lo ? lo : x; },
                         [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}
inline Var clamp_max(const Var& a, double hi) {
    return detail::unary(a, [hi](double x) { return x > hi ? hi : x; },
                         [hi](double x, double) { return x > hi ? 0.0 : 1.0; });
}

// ---- reductions / shape ----

inline Var sum_dims(const Var& a, std::vector<int> dims) {
    Shape os = a.shape();
    for (int d : dims) os[static_cast<size_t>(d)] = 1;
    Tensor out = detail::reduce_to(a.value(), os);
    return detail::make_op(std::move(out), {a}, [a, os](detail::Node& self) {
        if (!a.requires_grad()) return;
        // broadcast grad back up
        Tensor g(a.shape());
        auto st = detail::broadcast_strides(os, a.shape());
        std::vector<int> idx(a.shape().size(), 0);
        const double* gp = self.grad.data();
        int64_t gi = 0;
        for (int64_t i = 0; i < g.numel(); ++i) {
            g[i] = gp[gi];
            size_t d = a.shape().size();
            while (d-- > 0) {
                idx[d]++;
                gi += st[d];
                if (idx[d] < a.shape()[d]) break;
                gi -= static_cast<int64_t>(idx[d]) * st[d];
                idx[d] = 0;
            }
        }
        a.node()->accumulate(g);
    });
}

inline Var mean_dims(const Var& a, std::vector<int> dims) {
    int64_t cnt = 1;
    for (int d : dims) cnt *= a.shape()[static_cast<size_t>(d)];
    return mul_c(sum_dims(a, std::move(dims)), 1.0 / static_cast<double>(cnt));
}

inline Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    return detail::make_op(std::move(out), {a}, [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        Tensor g(a.shape(), self.grad[0]);
        a.node()->accumulate(g);
    });
}
inline Var mean_all(const Var& a) { return mul_c(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

inline Var reshape(const Var& a, Shape s) {
    Tensor out = a.value().reshaped(s);
    return detail::make_op(std::move(out), {a}, [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->accumulate(self.grad.reshaped(a.shape()));
    });
}

inline Var permute(const Var& a, std::vector<int> perm) {
    const Shape& is = a.shape();
    if (perm.size() != is.size()) throw std::invalid_argument("permute: rank mismatch");
    Shape os(is.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = is[static_cast<size_t>(perm[i])];
    auto ist = row_major_strides(is);
    Tensor out(os);
    std::vector<int> idx(os.size(), 0);
    const double* ap = a.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        int64_t src = 0;
        for (size_t d = 0; d < os.size(); ++d) src += static_cast<int64_t>(idx[d]) * ist[static_cast<size_t>(perm[d])];
        out[i] = ap[src];
        size_t d = os.size();
        while (d-- > 0) {
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
        }
    }
    return detail::make_op(std::move(out), {a}, [a, perm, os](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto ist2 = row_major_strides(a.shape());
        Tensor g(a.shape());
        std::vector<int> idx(os.size(), 0);
        const double* gp = self.grad.data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            int64_t src = 0;
            for (size_t d = 0; d < os.size(); ++d)
                src += static_cast<int64_t>(idx[d]) * ist2[static_cast<size_t>(perm[d])];
            g[src] += gp[i];
            size_t d = os.size();
            while (d-- > 0) {
                if (++idx[d] < os[d]) break;
                idx[d] = 0;
            }
        }
        a.node()->accumulate(g);
    });
}

inline Var narrow(const Var& a, int dim, int start, int len) {
    const Shape& is = a.shape();
    Shape os = is;
    os[static_cast<size_t>(dim)] = len;
    auto ist = row_major_strides(is);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= is[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(dim) + 1; d < is.size(); ++d) inner *= is[d];
    Tensor out(os);
    const double* ap = a.value().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len; ++j)
            std::copy_n(ap + (o * is[static_cast<size_t>(dim)] + start + j) * inner, inner,
                        out.data() + (o * len + j) * inner);
    return detail::make_op(std::move(out), {a}, [a, dim, start, len, outer, inner](detail::Node& self) {
        if (!a.requires_grad()) return;
        Tensor g = Tensor::zeros(a.shape());
        const double* gp = self.grad.data();
        int full = a.shape()[static_cast<size_t>(dim)];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < len; ++j) {
                double* dst = g.data() + (o * full + start + j) * inner;
                const double* src = gp + (o * len + j) * inner;
                for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
            }
        a.node()->accumulate(g);
    });
}

inline Var cat(const std::vector<Var>& parts, int dim) {
    if (parts.empty()) throw std::invalid_argument("cat: no parts");
    Shape os = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) total += p.shape()[static_cast<size_t>(dim)];
    os[static_cast<size_t>(dim)] = total;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= os[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(dim) + 1; d < os.size(); ++d) inner *= os[d];
    Tensor out(os);
    int offset = 0;
    for (const auto& p : parts) {
        int plen = p.shape()[static_cast<size_t>(dim)];
        const double* sp = p.value().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(sp + o * plen * inner, plen * inner, out.data() + (o * total + offset) * inner);
        offset += plen;
    }
    return detail::make_op(std::move(out), parts, [parts, dim, outer, inner, total](detail::Node& self) {
        int offset2 = 0;
        const double* gp = self.grad.data();
        for (const auto& p : parts) {
            int plen = p.shape()[static_cast<size_t>(dim)];
            if (p.requires_grad()) {
                Tensor g(p.shape());
                for (int64_t o = 0; o < outer; ++o)
                    std::copy_n(gp + (o * total + offset2) * inner, plen * inner, g.data() + o * plen * inner);
                p.node()->accumulate(g);
            }
            offset2 += plen;
        }
    });
}

// scalar pick from a 1-D var (mixture weights etc.)
inline Var index1(const Var& a, int i) { return narrow(a, 0, i, 1); }

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out(Shape{m, n});
    detail::ECMap A(a.value().data(), m, k), B(b.value().data(), k, n);
    detail::EMap O(out.data(), m, n);
    O.noalias() = A * B;
    return detail::make_op(std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
        detail::ECMap A2(a.value().data(), m, k), B2(b.value().data(), k, n), G(self.grad.data(), m, n);
        if (a.requires_grad()) {
            Tensor ga(Shape{m, k});
            detail::EMap GA(ga.data(), m, k);
            GA.noalias() = G * B2.transpose();
            a.node()->accumulate(ga);
        }
        if (b.requires_grad()) {
            Tensor gb(Shape{k, n});
            detail::EMap GB(gb.data(), k, n);
            GB.noalias() = A2.transpose() * G;
            b.node()->accumulate(gb);
        }
    });
}

// batched matmul: [B,m,k] x [B,k,n] -> [B,m,n]
inline Var bmm(const Var& a, const Var& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[1])
        throw std::invalid_argument("bmm: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    Tensor out(Shape{bs, m, n});
    for (int i = 0; i < bs; ++i) {
        detail::ECMap A(a.value().data() + static_cast<int64_t>(i) * m * k, m, k);
        detail::ECMap B(b.value().data() + static_cast<int64_t>(i) * k * n, k, n);
        detail::EMap O(out.data() + static_cast<int64_t>(i) * m * n, m, n);
        O.noalias() = A * B;
    }
    return detail::make_op(std::move(out), {a, b}, [a, b, bs, m, k, n](detail::Node& self) {
        Tensor ga, gb;
        if (a.requires_grad()) ga = Tensor::zeros(a.shape());
        if (b.requires_grad()) gb = Tensor::zeros(b.shape());
        for (int i = 0; i < bs; ++i) {
            detail::ECMap A2(a.value().data() + static_cast<int64_t>(i) * m * k, m, k);
            detail::ECMap B2(b.value().data() + static_cast<int64_t>(i) * k * n, k, n);
            detail::ECMap G(self.grad.data() + static_cast<int64_t>(i) * m * n, m, n);
            if (a.requires_grad()) {
                detail::EMap GA(ga.data() + static_cast<int64_t>(i) * m * k, m, k);
                GA.noalias() = G * B2.transpose();
            }
            if (b.requires_grad()) {
                detail::EMap GB(gb.data() + static_cast<int64_t>(i) * k * n, k, n);
                GB.noalias() = A2.transpose() * G;
            }
        }
        if (a.requires_grad()) a.node()->accumulate(ga);
        if (b.requires_grad()) b.node()->accumulate(gb);
    });
}

inline Var softmax(const Var& a, int dim) {
    const Shape& s = a.shape();
    auto st = row_major_strides(s);
    int D = s[static_cast<size_t>(dim)];
    int64_t stride = st[static_cast<size_t>(dim)];
    int64_t rows = a.numel() / D;
    Tensor out(s);
    const double* ap = a.value().data();
    // enumerate all index tuples holding `dim` at 0; each is one softmax row
    {
        std::vector<int> idx(s.size(), 0);
        for (int64_t r = 0; r < rows; ++r) {
            int64_t base = 0;
            for (size_t d = 0; d < s.size(); ++d) base += static_cast<int64_t>(idx[d]) * st[d];
            double mx = -1e300;
            for (int j = 0; j < D; ++j) mx = std::max(mx, ap[base + j * stride]);
            double sum = 0;
            for (int j = 0; j < D; ++j) sum += std::exp(ap[base + j * stride] - mx);
            for (int j = 0; j < D; ++j) out[base + j * stride] = std::exp(ap[base + j * stride] - mx) / sum;
            size_t d = s.size();
            while (d-- > 0) {
                if (static_cast<int>(d) == dim) continue;
                if (++idx[d] < s[d]) break;
                idx[d] = 0;
            }
        }
    }
    return detail::make_op(std::move(out), {a}, [a, dim](detail::Node& self) {
        if (!a.requires_grad()) return;
        const Shape& s2 = a.shape();
        auto st2 = row_major_strides(s2);
        int D2 = s2[static_cast<size_t>(dim)];
        int64_t stride2 = st2[static_cast<size_t>(dim)];
        int64_t rows2 = a.numel() / D2;
        Tensor g(s2);
        const double* y = self.value.data();
        const double* gy = self.grad.data();
        std::vector<int> idx(s2.size(), 0);
        for (int64_t r = 0; r < rows2; ++r) {
            int64_t base = 0;
            for (size_t d = 0; d < s2.size(); ++d) base += static_cast<int64_t>(idx[d]) * st2[d];
            double dot = 0;
            for (int j = 0; j < D2; ++j) dot += gy[base + j * stride2] * y[base + j * stride2];
            for (int j = 0; j < D2; ++j)
                g[base + j * stride2] = (gy[base + j * stride2] - dot) * y[base + j * stride2];
            size_t d = s2.size();
            while (d-- > 0) {
                if (static_cast<int>(d) == dim) continue;
                if (++idx[d] < s2[d]) break;
                idx[d] = 0;
            }
        }
        a.node()->accumulate(g);
    });
}

// PReLU with per-channel slope: x [N,C,H,W], a [C].
inline Var prelu(const Var& x, const Var& a) {
    const Shape& s = x.shape();
    if (s.size() != 4 || a.shape() != Shape{s[1]})
        throw std::invalid_argument("prelu: expected x NCHW and a [C]");
    int N = s[0], C = s[1];
    int64_t HW = static_cast<int64_t>(s[2]) * s[3];
    Tensor out(s);
    const double* xp = x.value().data();
    const double* av = a.value().data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = xp + (static_cast<int64_t>(n) * C + c) * HW;
            double* dst = out.data() + (static_cast<int64_t>(n) * C + c) * HW;
            double slope = av[c];
            for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] > 0 ? src[i] : slope * src[i];
        }
    return detail::make_op(std::move(out), {x, a}, [x, a, N, C, HW](detail::Node& self) {
        const double* xp2 = x.value().data();
        const double* av2 = a.value().data();
        const double* gp = self.grad.data();
        Tensor gx, ga;
        if (x.requires_grad()) gx = Tensor::zeros(x.shape());
        if (a.requires_grad()) ga = Tensor::zeros(a.shape());
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                int64_t base = (static_cast<int64_t>(n) * C + c) * HW;
                double slope = av2[c];
                for (int64_t i = 0; i < HW; ++i) {
                    double xv = xp2[base + i], gv = gp[base + i];
                    if (x.requires_grad()) gx[base + i] = xv > 0 ? gv : slope * gv;
                    if (a.requires_grad() && xv <= 0) ga[c] += xv * gv;
                }
            }
        if (x.requires_grad()) x.node()->accumulate(gx);
        if (a.requires_grad()) a.node()->accumulate(ga);
    });
}

// ---- convolution and spatial ops ----

namespace detail {

inline void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                   int Wo, double* col) {
    // col: [C*kh*kw, Ho*Wo]
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                double* dst = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * Ho * Wo;
                for (int ho = 0; ho < Ho; ++ho) {
                    int hi = ho * stride - pad + i;
                    if (hi < 0 || hi >= H) {
                        std::fill_n(dst + static_cast<int64_t>(ho) * Wo, Wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<int64_t>(c) * H + hi) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        int wi = wo * stride - pad + j;
                        dst[static_cast<int64_t>(ho) * Wo + wo] = (wi >= 0 && wi < W) ? src[wi] : 0.0;
                    }
                }
            }
}

inline void col2im(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                   int Wo, double* x) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const double* src = col + ((static_cast<int64_t>(c) * kh + i) * kw + j) * Ho * Wo;
                for (int ho = 0; ho < Ho; ++ho) {
                    int hi = ho * stride - pad + i;
                    if (hi < 0 || hi >= H) continue;
                    double* dst = x + (static_cast<int64_t>(c) * H + hi) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        int wi = wo * stride - pad + j;
                        if (wi >= 0 && wi < W) dst[wi] += src[static_cast<int64_t>(ho) * Wo + wo];
                    }
                }
            }
}

}  // namespace detail

// x [N,Cin,H,W], w [Cout,Cin/groups,kh,kw], b [Cout] (optional, pass undefined Var).
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups = 1) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: rank");
    int N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    int Cout = ws[0], kh = ws[2], kw = ws[3];
    if (Cin % groups || Cout % groups || ws[1] != Cin / groups)
        throw std::invalid_argument("conv2d: channel/group mismatch");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");
    int cg = Cin / groups, og = Cout / groups;
    int64_t colrows = static_cast<int64_t>(cg) * kh * kw;
    Tensor out(Shape{N, Cout, Ho, Wo});
    std::vector<double> col(static_cast<size_t>(colrows * Ho * Wo));
    const bool has_bias = b.defined();
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const double* xg = x.value().data() + ((static_cast<int64_t>(n) * Cin) + g * cg) * H * W;
            detail::im2col(xg, cg, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            detail::ECMap Wm(w.value().data() + static_cast<int64_t>(g) * og * colrows, og, colrows);
            detail::ECMap Cm(col.data(), colrows, static_cast<int64_t>(Ho) * Wo);
            detail::EMap Om(out.data() + ((static_cast<int64_t>(n) * Cout) + g * og) * Ho * Wo, og,
                            static_cast<int64_t>(Ho) * Wo);
            Om.noalias() = Wm * Cm;
        }
    if (has_bias) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < Cout; ++c) {
                double bv = b.value()[c];
                double* dst = out.data() + (static_cast<int64_t>(n) * Cout + c) * Ho * Wo;
                for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) dst[i] += bv;
            }
    }
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return detail::make_op(
        std::move(out), std::move(parents),
        [x, w, b, has_bias, N, Cin, H, W, Cout, kh, kw, stride, pad, groups, cg, og, colrows, Ho,
         Wo](detail::Node& self) {
            const double* gp = self.grad.data();
            Tensor gx, gw, gb;
            if (x.requires_grad()) gx = Tensor::zeros(x.shape());
            if (w.requires_grad()) gw = Tensor::zeros(w.shape());
            if (has_bias && b.requires_grad()) gb = Tensor::zeros(b.shape());
            std::vector<double> col(static_cast<size_t>(colrows * Ho * Wo));
            std::vector<double> gcol(static_cast<size_t>(colrows * Ho * Wo));
            for (int n = 0; n < N; ++n)
                for (int g = 0; g < groups; ++g) {
                    detail::ECMap Gm(gp + ((static_cast<int64_t>(n) * Cout) + g * og) * Ho * Wo, og,
                                     static_cast<int64_t>(Ho) * Wo);
                    if (w.requires_grad() || x.requires_grad()) {
                        const double* xg =
                            x.value().data() + ((static_cast<int64_t>(n) * Cin) + g * cg) * H * W;
                        detail::im2col(xg, cg, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
                    }
                    if (w.requires_grad()) {
                        detail::ECMap Cm(col.data(), colrows, static_cast<int64_t>(Ho) * Wo);
                        detail::EMap GW(gw.data() + static_cast<int64_t>(g) * og * colrows, og, colrows);
                        GW.noalias() += Gm * Cm.transpose();
                    }
                    if (x.requires_grad()) {
                        detail::ECMap Wm(w.value().data() + static_cast<int64_t>(g) * og * colrows, og,
                                         colrows);
                        detail::EMap GC(gcol.data(), colrows, static_cast<int64_t>(Ho) * Wo);
                        GC.noalias() = Wm.transpose() * Gm;
                        double* xgd = gx.data() + ((static_cast<int64_t>(n) * Cin) + g * cg) * H * W;
                        detail::col2im(gcol.data(), cg, H, W, kh, kw, stride, pad, Ho, Wo, xgd);
                    }
                }
            if (has_bias && b.requires_grad()) {
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < Cout; ++c) {
                        const double* src = gp + (static_cast<int64_t>(n) * Cout + c) * Ho * Wo;
                        double acc = 0;
                        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += src[i];
                        gb[c] += acc;
                    }
            }
            if (x.requires_grad()) x.node()->accumulate(gx);
            if (w.requires_grad()) w.node()->accumulate(gw);
            if (has_bias && b.requires_grad()) b.node()->accumulate(gb);
        });
}

inline Var avg_pool2d(const Var& x, int k, int stride) {
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    Tensor out(Shape{N, C, Ho, Wo});
    const double* xp = x.value().data();
    double inv = 1.0 / (k * k);
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = xp + static_cast<int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<int64_t>(nc) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho)
            for (int wo = 0; wo < Wo; ++wo) {
                double acc = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) acc += src[(ho * stride + i) * W + wo * stride + j];
                dst[ho * Wo + wo] = acc * inv;
            }
    }
    return detail::make_op(std::move(out), {x}, [x, k, stride, N, C, H, W, Ho, Wo](detail::Node& self) {
        if (!x.requires_grad()) return;
        Tensor g = Tensor::zeros(x.shape());
        const double* gp = self.grad.data();
        double inv = 1.0 / (k * k);
        for (int nc = 0; nc < N * C; ++nc) {
            double* dst = g.data() + static_cast<int64_t>(nc) * H * W;
            const double* src = gp + static_cast<int64_t>(nc) * Ho * Wo;
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double gv = src[ho * Wo + wo] * inv;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j) dst[(ho * stride + i) * W + wo * stride + j] += gv;
                }
        }
        x.node()->accumulate(g);
    });
}

inline Var adaptive_avg_pool2d(const Var& x, int oh, int ow) {
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out(Shape{N, C, oh, ow});
    auto start = [](int o, int O, int I) { return (o * I) / O; };
    auto end = [](int o, int O, int I) { return ((o + 1) * I + O - 1) / O; };
    const double* xp = x.value().data();
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = xp + static_cast<int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<int64_t>(nc) * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                int h0 = start(i, oh, H), h1 = end(i, oh, H);
                int w0 = start(j, ow, W), w1 = end(j, ow, W);
                double acc = 0;
                for (int h = h0; h < h1; ++h)
                    for (int w = w0; w < w1; ++w) acc += src[h * W + w];
                dst[i * ow + j] = acc / ((h1 - h0) * (w1 - w0));
            }
    }
    return detail::make_op(std::move(out), {x}, [x, oh, ow, N, C, H, W](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto start = [](int o, int O, int I) { return (o * I) / O; };
        auto end = [](int o, int O, int I) { return ((o + 1) * I + O - 1) / O; };
        Tensor g = Tensor::zeros(x.shape());
        const double* gp = self.grad.data();
        for (int nc = 0; nc < N * C; ++nc) {
            double* dst = g.data() + static_cast<int64_t>(nc) * H * W;
            const double* src = gp + static_cast<int64_t>(nc) * oh * ow;
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    int h0 = start(i, oh, H), h1 = end(i, oh, H);
                    int w0 = start(j, ow, W), w1 = end(j, ow, W);
                    double gv = src[i * ow + j] / ((h1 - h0) * (w1 - w0));
                    for (int h = h0; h < h1; ++h)
                        for (int w = w0; w < w1; ++w) dst[h * W + w] += gv;
                }
        }
        x.node()->accumulate(g);
    });
}

// bilinear, half-pixel centers (align_corners=false)
inline Var upsample_bilinear(const Var& x, int oh, int ow) {
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (oh == H && ow == W) return x;
    Tensor out(Shape{N, C, oh, ow});
    double sh = static_cast<double>(H) / oh, sw = static_cast<double>(W) / ow;
    std::vector<int> h0(oh), h1(oh), w0(ow), w1(ow);
    std::vector<double> lh(oh), lw(ow);
    for (int i = 0; i < oh; ++i) {
        double p = std::max(0.0, (i + 0.5) * sh - 0.5);
        h0[i] = std::min(static_cast<int>(p), H - 1);
        h1[i] = std::min(h0[i] + 1, H - 1);
        lh[i] = p - h0[i];
    }
    for (int j = 0; j < ow; ++j) {
        double p = std::max(0.0, (j + 0.5) * sw - 0.5);
        w0[j] = std::min(static_cast<int>(p), W - 1);
        w1[j] = std::min(w0[j] + 1, W - 1);
        lw[j] = p - w0[j];
    }
    const double* xp = x.value().data();
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = xp + static_cast<int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<int64_t>(nc) * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double a = src[h0[i] * W + w0[j]], bb = src[h0[i] * W + w1[j]];
                double c = src[h1[i] * W + w0[j]], d = src[h1[i] * W + w1[j]];
                dst[i * ow + j] = (a * (1 - lw[j]) + bb * lw[j]) * (1 - lh[i]) +
                                  (c * (1 - lw[j]) + d * lw[j]) * lh[i];
            }
    }
    return detail::make_op(std::move(out), {x},
                           [x, oh, ow, N, C, H, W, h0, h1, w0, w1, lh, lw](detail::Node& self) {
                               if (!x.requires_grad()) return;
                               Tensor g = Tensor::zeros(x.shape());
                               const double* gp = self.grad.data();
                               for (int nc = 0; nc < N * C; ++nc) {
                                   double* dst = g.data() + static_cast<int64_t>(nc) * H * W;
                                   const double* src = gp + static_cast<int64_t>(nc) * oh * ow;
                                   for (int i = 0; i < oh; ++i)
                                       for (int j = 0; j < ow; ++j) {
                                           double gv = src[i * ow + j];
                                           dst[h0[i] * W + w0[j]] += gv * (1 - lh[i]) * (1 - lw[j]);
                                           dst[h0[i] * W + w1[j]] += gv * (1 - lh[i]) * lw[j];
                                           dst[h1[i] * W + w0[j]] += gv * lh[i] * (1 - lw[j]);
                                           dst[h1[i] * W + w1[j]] += gv * lh[i] * lw[j];
                                       }
                               }
                               x.node()->accumulate(g);
                           });
}

inline Var reflect_pad2d(const Var& x, int pl, int pr, int pt, int pb) {
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (pl >= W || pr >= W || pt >= H || pb >= H)
        throw std::invalid_argument("reflect_pad2d: pad >= size");
    int Ho = H + pt + pb, Wo = W + pl + pr;
    auto refl = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    Tensor out(Shape{N, C, Ho, Wo});
    const double* xp = x.value().data();
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = xp + static_cast<int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<int64_t>(nc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i) {
            int hi = refl(i - pt, H);
            for (int j = 0; j < Wo; ++j) dst[i * Wo + j] = src[hi * W + refl(j - pl, W)];
        }
    }
    return detail::make_op(std::move(out), {x}, [x, pl, pt, N, C, H, W, Ho, Wo](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto refl = [](int i, int n) {
            while (i < 0 || i >= n) {
                if (i < 0) i = -i;
                if (i >= n) i = 2 * n - 2 - i;
            }
            return i;
        };
        Tensor g = Tensor::zeros(x.shape());
        const double* gp = self.grad.data();
        for (int nc = 0; nc < N * C; ++nc) {
            double* dst = g.data() + static_cast<int64_t>(nc) * H * W;
            const double* src = gp + static_cast<int64_t>(nc) * Ho * Wo;
            for (int i = 0; i < Ho; ++i) {
                int hi = refl(i - pt, H);
                for (int j = 0; j < Wo; ++j) dst[hi * W + refl(j - pl, W)] += src[i * Wo + j];
            }
        }
        x.node()->accumulate(g);
    });
}

// crop spatial region [h0,h0+h) x [w0,w0+w)
inline Var crop2d(const Var& x, int h0, int w0, int h, int w) {
    return narrow(narrow(x, 2, h0, h), 3, w0, w);
}

// Sliding windows: [N,C,H,W] -> [N*nH*nW, C, win, win], window order row-major per sample.
inline Var unfold_windows(const Var& x, int win, int stride) {
    const Shape& s = x.shape();
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int nH = (H - win) / stride + 1, nW = (W - win) / stride + 1;
    if (nH <= 0 || nW <= 0) throw std::invalid_argument("unfold_windows: window too large");
    Tensor out(Shape{N * nH * nW, C, win, win});
    const double* xp = x.value().data();
    int64_t widx = 0;
    for (int n = 0; n < N; ++n)
        for (int ph = 0; ph < nH; ++ph)
            for (int pw = 0; pw < nW; ++pw, ++widx)
                for (int c = 0; c < C; ++c) {
                    const double* src = xp + (static_cast<int64_t>(n) * C + c) * H * W;
                    double* dst = out.data() + (widx * C + c) * win * win;
                    for (int i = 0; i < win; ++i)
                        std::copy_n(src + (ph * stride + i) * W + pw * stride, win, dst + i * win);
                }
    return detail::make_op(std::move(out), {x}, [x, win, stride, N, C, H, W, nH, nW](detail::Node& self) {
        if (!x.requires_grad()) return;
        Tensor g = Tensor::zeros(x.shape());
        const double* gp = self.grad.data();
        int64_t widx = 0;
        for (int n = 0; n < N; ++n)
            for (int ph = 0; ph < nH; ++ph)
                for (int pw = 0; pw < nW; ++pw, ++widx)
                    for (int c = 0; c < C; ++c) {
                        double* dst = g.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                        const double* src = gp + (widx * C + c) * win * win;
                        for (int i = 0; i < win; ++i)
                            for (int j = 0; j < win; ++j)
                                dst[(ph * stride + i) * W + pw * stride + j] += src[i * win + j];
                    }
        x.node()->accumulate(g);
    });
}

// Inverse of unfold_windows for the non-overlapping case (stride == win).
inline Var fold_windows(const Var& x, int N, int H, int W) {
    const Shape& s = x.shape();
    int win = s[2], C = s[1];
    int nH = H / win, nW = W / win;
    if (s[0] != N * nH * nW || s[3] != win) throw std::invalid_argument("fold_windows: shape mismatch");
    Tensor out(Shape{N, C, H, W});
    const double* xp = x.value().data();
    int64_t widx = 0;
    for (int n = 0; n < N; ++n)
        for (int ph = 0; ph < nH; ++ph)
            for (int pw = 0; pw < nW; ++pw, ++widx)
                for (int c = 0; c < C; ++c) {
                    double* dst = out.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const double* src = xp + (widx * C + c) * win * win;
                    for (int i = 0; i < win; ++i)
                        std::copy_n(src + i * win, win, dst + (ph * win + i) * W + pw * win);
                }
    return detail::make_op(std::move(out), {x}, [x, N, C, H, W, win, nH, nW](detail::Node& self) {
        if (!x.requires_grad()) return;
        Tensor g(x.shape());
        const double* gp = self.grad.data();
        int64_t widx = 0;
        for (int n = 0; n < N; ++n)
            for (int ph = 0; ph < nH; ++ph)
                for (int pw = 0; pw < nW; ++pw, ++widx)
                    for (int c = 0; c < C; ++c) {
                        const double* src = gp + (static_cast<int64_t>(n) * C + c) * H * W;
                        double* dst = g.data() + (widx * C + c) * win * win;
                        for (int i = 0; i < win; ++i)
                            std::copy_n(src + (ph * win + i) * W + pw * win, win, dst + i * win);
                    }
        x.node()->accumulate(g);
    });
}

}  // namespace cws
