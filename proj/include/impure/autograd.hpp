#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "impure/tensor.hpp"

namespace impure::ag {

// Reverse-mode tape. Each op builds a node holding the forward value and a
// closure that scatters the node's gradient into its parents. Graphs are
// built per forward call and discarded after backward(), so nodes are cheap
// single-use objects. When no input requires a gradient the closure and the
// parent links are dropped entirely, which makes the same code path usable
// for plain inference.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (!grad.defined()) grad = Tensor<T>::zeros(value.shape());
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

template <typename T>
void backward(const Var<T>& root) {
    IMPURE_CHECK(root->requires_grad, "backward() on a graph with no gradients");
    IMPURE_CHECK(root->value.numel() == 1, "backward() root must be scalar");
    // Post-order DFS, then replay in reverse.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---- arithmetic ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    IMPURE_CHECK(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<T> out(a->value.shape());
    out.vec() = a->value.vec() + b->value.vec();
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        for (int i = 0; i < 2; ++i) {
            auto& p = n.parents[i];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad.vec() += n.grad.vec();
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    IMPURE_CHECK(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor<T> out(a->value.shape());
    out.vec() = a->value.vec() - b->value.vec();
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.vec() += n.grad.vec();
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.vec() -= n.grad.vec();
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    IMPURE_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<T> out(a->value.shape());
    out.vec() = a->value.vec() * b->value.vec();
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto &a = n.parents[0], &b = n.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.vec() += n.grad.vec() * b->value.vec();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.vec() += n.grad.vec() * a->value.vec();
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    out.vec() = a->value.vec() * c;
    return make_op<T>(std::move(out), {a}, [c](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.vec() += n.grad.vec() * c;
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    IMPURE_CHECK(a->value.ndim() == 2 && b->value.ndim() == 2 && a->value.dim(1) == b->value.dim(0),
                 "matmul: bad shapes");
    Tensor<T> out({a->value.dim(0), b->value.dim(1)});
    out.mat().noalias() = a->value.mat() * b->value.mat();
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto &a = n.parents[0], &b = n.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.mat().noalias() += n.grad.mat() * b->value.mat().transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.mat().noalias() += a->value.mat().transpose() * n.grad.mat();
        }
    });
}

// x [R,C] + v [C] broadcast over rows
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
    IMPURE_CHECK(x->value.dim(x->value.ndim() - 1) == v->value.numel(), "add_rowvec: dim mismatch");
    Tensor<T> out(x->value.shape());
    out.mat() = x->value.mat().rowwise() + v->value.mat().row(0);
    return make_op<T>(std::move(out), {x, v}, [](Node<T>& n) {
        auto &x = n.parents[0], &v = n.parents[1];
        if (x->requires_grad) {
            x->ensure_grad();
            x->grad.vec() += n.grad.vec();
        }
        if (v->requires_grad) {
            v->ensure_grad();
            v->grad.mat().row(0) += n.grad.mat().colwise().sum();
        }
    });
}

// ---- activations ----

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x->value.shape());
    out.vec() = x->value.vec().max(T(0));
    return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T* xv = p->value.ptr();
        const T* g = n.grad.ptr();
        T* pg = p->grad.ptr();
        for (int64_t i = 0, e = n.value.numel(); i < e; ++i) pg[i] += xv[i] > T(0) ? g[i] : T(0);
    });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out(x->value.shape());
    const T* xv = x->value.ptr();
    T* ov = out.ptr();
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (int64_t i = 0, e = out.numel(); i < e; ++i)
        ov[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    return make_op<T>(std::move(out), {x}, [inv_sqrt2](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T inv_sqrt2pi = T(0.3989422804014326779);
        const T* xv = p->value.ptr();
        const T* g = n.grad.ptr();
        T* pg = p->grad.ptr();
        for (int64_t i = 0, e = n.value.numel(); i < e; ++i) {
            T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
            pg[i] += g[i] * (cdf + xv[i] * pdf);
        }
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    Tensor<T> out(x->value.shape());
    auto xm = x->value.mat();
    auto om = out.mat();
    for (int64_t r = 0; r < xm.rows(); ++r) {
        T mx = xm.row(r).maxCoeff();
        om.row(r) = (xm.row(r).array() - mx).exp();
        om.row(r) /= om.row(r).sum();
    }
    return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        auto pm = n.value.mat();
        auto gm = n.grad.mat();
        auto og = p->grad.mat();
        for (int64_t r = 0; r < pm.rows(); ++r) {
            T dot = (gm.row(r).array() * pm.row(r).array()).sum();
            og.row(r).array() += pm.row(r).array() * (gm.row(r).array() - dot);
        }
    });
}

// Per-row layer normalization with affine parameters.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6)) {
    int64_t cols = x->value.dim(x->value.ndim() - 1);
    IMPURE_CHECK(gamma->value.numel() == cols && beta->value.numel() == cols,
                 "layer_norm: affine dim mismatch");
    Tensor<T> out(x->value.shape());
    Tensor<T> norm(x->value.shape());  // (x - mu) * inv_std, saved for backward
    Tensor<T> inv_std({x->value.numel() / cols});
    auto xm = x->value.mat();
    auto nm = norm.mat();
    auto om = out.mat();
    for (int64_t r = 0; r < xm.rows(); ++r) {
        T mu = xm.row(r).mean();
        T var = (xm.row(r).array() - mu).square().sum() / T(cols);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        nm.row(r) = (xm.row(r).array() - mu) * is;
        om.row(r) = nm.row(r).array() * gamma->value.vec().transpose() +
                    beta->value.vec().transpose();
    }
    return make_op<T>(std::move(out), {x, gamma, beta}, [norm, inv_std, cols](Node<T>& n) {
        auto &x = n.parents[0], &gamma = n.parents[1], &beta = n.parents[2];
        auto gm = n.grad.mat();
        auto nm = norm.mat();
        if (gamma->requires_grad) {
            gamma->ensure_grad();
            gamma->grad.mat().row(0) += (gm.array() * nm.array()).colwise().sum().matrix();
        }
        if (beta->requires_grad) {
            beta->ensure_grad();
            beta->grad.mat().row(0) += gm.colwise().sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            auto xg = x->grad.mat();
            for (int64_t r = 0; r < gm.rows(); ++r) {
                Eigen::Array<T, Eigen::Dynamic, 1> dy =
                    gm.row(r).transpose().array() * gamma->value.vec();
                T m1 = dy.mean();
                T m2 = (dy * nm.row(r).transpose().array()).mean();
                xg.row(r).array() +=
                    ((dy - m1 - nm.row(r).transpose().array() * m2) * inv_std[r]).transpose();
            }
        }
    });
}

// ---- shape / indexing ----

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
    Tensor<T> out = x->value.reshaped(std::move(shape));
    return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.vec() += n.grad.vec();
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> idx) {
    int64_t cols = x->value.dim(1);
    Tensor<T> out({static_cast<int64_t>(idx.size()), cols});
    for (size_t r = 0; r < idx.size(); ++r)
        out.mat().row(static_cast<int64_t>(r)) = x->value.mat().row(idx[r]);
    return make_op<T>(std::move(out), {x}, [idx](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r)
            p->grad.mat().row(idx[r]) += n.grad.mat().row(static_cast<int64_t>(r));
    });
}

// base with rows idx replaced by x's rows
template <typename T>
Var<T> scatter_rows(const Var<T>& base, const Var<T>& x, std::vector<int> idx) {
    IMPURE_CHECK(static_cast<int64_t>(idx.size()) == x->value.dim(0) &&
                     base->value.dim(1) == x->value.dim(1),
                 "scatter_rows: shape mismatch");
    Tensor<T> out = base->value.clone();
    for (size_t r = 0; r < idx.size(); ++r)
        out.mat().row(idx[r]) = x->value.mat().row(static_cast<int64_t>(r));
    return make_op<T>(std::move(out), {base, x}, [idx](Node<T>& n) {
        auto &base = n.parents[0], &x = n.parents[1];
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t r = 0; r < idx.size(); ++r)
                x->grad.mat().row(static_cast<int64_t>(r)) += n.grad.mat().row(idx[r]);
        }
        if (base->requires_grad) {
            base->ensure_grad();
            Tensor<T> masked = n.grad.clone();
            for (int i : idx) masked.mat().row(i).setZero();
            base->grad.vec() += masked.vec();
        }
    });
}

template <typename T>
Var<T> repeat_row(const Var<T>& v, int64_t rows) {
    int64_t cols = v->value.numel();
    Tensor<T> out({rows, cols});
    out.mat().rowwise() = v->value.mat().row(0);
    return make_op<T>(std::move(out), {v}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.mat().row(0) += n.grad.mat().colwise().sum();
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t c0, int64_t len) {
    Tensor<T> out({x->value.dim(0), len});
    out.mat() = x->value.mat().middleCols(c0, len);
    return make_op<T>(std::move(out), {x}, [c0, len](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.mat().middleCols(c0, len) += n.grad.mat();
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
    int64_t rows = xs[0]->value.dim(0), cols = 0;
    for (auto& x : xs) cols += x->value.dim(1);
    Tensor<T> out({rows, cols});
    int64_t c = 0;
    for (auto& x : xs) {
        out.mat().middleCols(c, x->value.dim(1)) = x->value.mat();
        c += x->value.dim(1);
    }
    return make_op<T>(std::move(out), xs, [](Node<T>& n) {
        int64_t c = 0;
        for (auto& p : n.parents) {
            int64_t w = p->value.dim(1);
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad.mat() += n.grad.mat().middleCols(c, w);
            }
            c += w;
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
    Tensor<T> out({x->value.dim(1), x->value.dim(0)});
    out.mat() = x->value.mat().transpose();
    return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.mat() += n.grad.mat().transpose();
    });
}

// ---- reductions / losses ----

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(x->value.vec().sum());
    return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        p->grad.vec() += n.grad[0];
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    return scale(sum_all(x), T(1) / T(x->value.numel()));
}

// sum |a - b|; subgradient at zero is 0
template <typename T>
Var<T> l1_diff(const Var<T>& a, const Var<T>& b) {
    IMPURE_CHECK(a->value.same_shape(b->value), "l1_diff: shape mismatch");
    Tensor<T> out = Tensor<T>::scalar((a->value.vec() - b->value.vec()).abs().sum());
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto &a = n.parents[0], &b = n.parents[1];
        const T g = n.grad[0];
        const T* av = a->value.ptr();
        const T* bv = b->value.ptr();
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int64_t i = 0, e = a->value.numel(); i < e; ++i) {
            T s = av[i] > bv[i] ? T(1) : (av[i] < bv[i] ? T(-1) : T(0));
            if (a->requires_grad) a->grad[i] += g * s;
            if (b->requires_grad) b->grad[i] -= g * s;
        }
    });
}

// mean cross-entropy over rows of logits
template <typename T>
Var<T> cross_entropy_mean(const Var<T>& logits, std::vector<int> labels) {
    auto lm = logits->value.mat();
    int64_t rows = lm.rows();
    IMPURE_CHECK(static_cast<int64_t>(labels.size()) == rows, "cross_entropy: label count");
    Tensor<T> probs(logits->value.shape());
    auto pm = probs.mat();
    T loss = T(0);
    for (int64_t r = 0; r < rows; ++r) {
        T mx = lm.row(r).maxCoeff();
        pm.row(r) = (lm.row(r).array() - mx).exp();
        T z = pm.row(r).sum();
        pm.row(r) /= z;
        loss += std::log(z) + mx - lm(r, labels[static_cast<size_t>(r)]);
    }
    loss /= T(rows);
    return make_op<T>(Tensor<T>::scalar(loss), {logits}, [probs, labels](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T g = n.grad[0] / T(probs.mat().rows());
        auto pg = p->grad.mat();
        pg += probs.mat() * g;
        for (int64_t r = 0; r < pg.rows(); ++r) pg(r, labels[static_cast<size_t>(r)]) -= g;
    });
}

// out[i] = x_flat[idx[i]]; idx must be a bijection-or-injection into x
template <typename T>
Var<T> gather_flat(const Var<T>& x, std::shared_ptr<const std::vector<int64_t>> idx,
                   std::vector<int64_t> out_shape) {
    Tensor<T> out(std::move(out_shape));
    IMPURE_CHECK(out.numel() == static_cast<int64_t>(idx->size()), "gather_flat: index size");
    const T* xv = x->value.ptr();
    T* ov = out.ptr();
    for (size_t i = 0; i < idx->size(); ++i) ov[i] = xv[(*idx)[i]];
    return make_op<T>(std::move(out), {x}, [idx](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T* g = n.grad.ptr();
        T* pg = p->grad.ptr();
        for (size_t i = 0; i < idx->size(); ++i) pg[(*idx)[i]] += g[i];
    });
}

// gradient passes only where the input lies strictly inside (lo, hi)
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    Tensor<T> out(x->value.shape());
    out.vec() = x->value.vec().max(lo).min(hi);
    return make_op<T>(std::move(out), {x}, [lo, hi](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T* xv = p->value.ptr();
        const T* g = n.grad.ptr();
        T* pg = p->grad.ptr();
        for (int64_t i = 0, e = n.value.numel(); i < e; ++i)
            if (xv[i] > lo && xv[i] < hi) pg[i] += g[i];
    });
}

// ---- convolution stack (NHWC single image) ----

namespace detail {
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, Tensor<T>& cols) {
    const int h = static_cast<int>(x.dim(0)), w = static_cast<int>(x.dim(1)),
              c = static_cast<int>(x.dim(2));
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    const T* xv = x.ptr();
    T* cv = cols.ptr();
    int64_t col = 0;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < kw; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        const T* src = xv + (static_cast<int64_t>(iy) * w + ix) * c;
                        std::copy(src, src + c, cv + col);
                    } else {
                        std::fill(cv + col, cv + col + c, T(0));
                    }
                    col += c;
                }
            }
        }
    }
}

template <typename T>
void col2im(const Tensor<T>& cols, int h, int w, int c, int kh, int kw, int stride, int pad,
            Tensor<T>& x) {
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    const T* cv = cols.ptr();
    T* xv = x.ptr();
    int64_t col = 0;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < kw; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        T* dst = xv + (static_cast<int64_t>(iy) * w + ix) * c;
                        for (int ch = 0; ch < c; ++ch) dst[ch] += cv[col + ch];
                    }
                    col += c;
                }
            }
        }
    }
}
}  // namespace detail

// x [H,W,Cin], weight [KH*KW*Cin, Cout] (kh,kw,cin row-major), bias [Cout]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kh, int kw,
              int stride, int pad) {
    const int h = static_cast<int>(x->value.dim(0)), w = static_cast<int>(x->value.dim(1)),
              cin = static_cast<int>(x->value.dim(2));
    const int cout = static_cast<int>(weight->value.dim(1));
    IMPURE_CHECK(weight->value.dim(0) == int64_t(kh) * kw * cin, "conv2d: weight shape");
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    Tensor<T> cols({int64_t(oh) * ow, int64_t(kh) * kw * cin});
    detail::im2col(x->value, kh, kw, stride, pad, cols);
    Tensor<T> out({oh, ow, cout});
    auto om = out.reshaped({int64_t(oh) * ow, cout});
    om.mat().noalias() = cols.mat() * weight->value.mat();
    om.mat().rowwise() += bias->value.mat().row(0);
    return make_op<T>(std::move(out), {x, weight, bias},
                      [cols, h, w, cin, kh, kw, stride, pad](Node<T>& n) {
        auto &x = n.parents[0], &weight = n.parents[1], &bias = n.parents[2];
        const int cout = static_cast<int>(weight->value.dim(1));
        Tensor<T> g = n.grad.reshaped({n.grad.numel() / cout, cout});
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.mat().row(0) += g.mat().colwise().sum();
        }
        if (weight->requires_grad) {
            weight->ensure_grad();
            weight->grad.mat().noalias() += cols.mat().transpose() * g.mat();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            Tensor<T> dcols(cols.shape());
            dcols.mat().noalias() = g.mat() * weight->value.mat().transpose();
            detail::col2im(dcols, h, w, cin, kh, kw, stride, pad, x->grad);
        }
    });
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
    const int h = static_cast<int>(x->value.dim(0)), w = static_cast<int>(x->value.dim(1)),
              c = static_cast<int>(x->value.dim(2));
    IMPURE_CHECK(h % 2 == 0 && w % 2 == 0, "maxpool2: odd spatial dims");
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out({oh, ow, c});
    auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
    const T* xv = x->value.ptr();
    T* ov = out.ptr();
    int64_t o = 0;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int ch = 0; ch < c; ++ch, ++o) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t bi = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int64_t i = ((int64_t(oy) * 2 + dy) * w + (int64_t(ox) * 2 + dx)) * c + ch;
                        if (xv[i] > best) {
                            best = xv[i];
                            bi = i;
                        }
                    }
                ov[o] = best;
                (*argmax)[o] = bi;
            }
    return make_op<T>(std::move(out), {x}, [argmax](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T* g = n.grad.ptr();
        T* pg = p->grad.ptr();
        for (int64_t i = 0, e = n.value.numel(); i < e; ++i) pg[(*argmax)[i]] += g[i];
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const int64_t hw = x->value.dim(0) * x->value.dim(1), c = x->value.dim(2);
    Tensor<T> out({1, c});
    out.mat() = x->value.reshaped({hw, c}).mat().colwise().mean();
    return make_op<T>(std::move(out), {x}, [hw, c](Node<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        auto pg = p->grad.reshaped({hw, c});
        pg.mat().rowwise() += n.grad.mat().row(0) / T(hw);
    });
}

}  // namespace impure::ag
