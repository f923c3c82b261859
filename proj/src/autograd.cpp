#include "lvo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace lvo::ag {

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return Tensor(node_->value.shape());
}

namespace {

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || (p.valid() && p.requires_grad());
    if (any) {
        node->requires_grad = true;
        for (auto& p : parents) node->parents.push_back(p.valid() ? p.node() : nullptr);
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

// parent i's gradient buffer, or nullptr if it needs none
Tensor* pgrad(Node& self, std::size_t i) {
    auto& p = self.parents[i];
    if (!p || !p->requires_grad) return nullptr;
    return &p->grad_buffer();
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
}

template <class F, class D>
Var unary(const Var& x, F f, D df) {
    Tensor out(x.shape());
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(std::move(out), {x}, [df](Node& self) {
        Tensor* gx = pgrad(self, 0);
        if (!gx) return;
        const Tensor& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
    });
}

} // namespace

void backward(const Var& out) {
    if (out.size() != 1) throw std::invalid_argument("backward: output must be a scalar");
    if (!out.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{out.node().get(), 0}};
    seen.insert(out.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    out.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
    // interior gradients are not needed after the sweep; leaves keep theirs
    for (Node* n : order) {
        if (n->backward_fn) n->grad = Tensor();
    }
}

Tensor SparseLinearMap::apply(const Tensor& x) const {
    if (x.shape() != in_shape) throw std::invalid_argument("sparse map: input shape mismatch");
    Tensor y(out_shape);
    for (std::size_t o = 0; o + 1 < offsets.size(); ++o) {
        double acc = 0.0;
        for (int e = offsets[o]; e < offsets[o + 1]; ++e) acc += weight[e] * x[index[e]];
        y[o] = acc;
    }
    return y;
}

Tensor SparseLinearMap::apply_transpose(const Tensor& y) const {
    if (y.shape() != out_shape) throw std::invalid_argument("sparse map: output shape mismatch");
    Tensor x(in_shape);
    for (std::size_t o = 0; o + 1 < offsets.size(); ++o) {
        for (int e = offsets[o]; e < offsets[o + 1]; ++e) x[index[e]] += weight[e] * y[o];
    }
    return x;
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
        if (Tensor* g = pgrad(self, 1)) *g += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
        if (Tensor* g = pgrad(self, 1)) *g -= self.grad;
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (Tensor* g = pgrad(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [s](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    });
}

Var add_constant(const Var& a, const Tensor& c) {
    if (a.shape() != c.shape()) throw std::invalid_argument("add_constant: shape mismatch");
    return make_result(a.value() + c, {a}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
    });
}

Var affine(const Var& x, double a, const Tensor& offset) {
    if (x.shape() != offset.shape()) throw std::invalid_argument("affine: shape mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + offset[i];
    return make_result(std::move(out), {x}, [a](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += a * self.grad[i];
    });
}

Var silu(const Var& x) {
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Var sigmoid(const Var& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var exp(const Var& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var sum(const Var& x) {
    return make_result(Tensor::scalar(lvo::sum(x.value())), {x}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (double& v : g->storage()) v += self.grad[0];
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.size());
    return make_result(Tensor::scalar(lvo::sum(x.value()) / n), {x}, [n](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (double& v : g->storage()) v += self.grad[0] / n;
    });
}

Var dot(const Var& x, const Tensor& w) {
    if (x.shape() != w.shape()) throw std::invalid_argument("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
    return make_result(Tensor::scalar(s), {x}, [w](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * w[i];
    });
}

Var reshape(const Var& x, std::vector<int> shape) {
    return make_result(x.value().reshaped(std::move(shape)), {x}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

Var to_tokens(const Var& x) {
    if (x.value().rank() != 3) throw std::invalid_argument("to_tokens expects [C, H, W]");
    const int c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
    Tensor out({hw, c});
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) out[static_cast<std::size_t>(p) * c + ch] = x.value()[static_cast<std::size_t>(ch) * hw + p];
    return make_result(std::move(out), {x}, [c, hw](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    (*g)[static_cast<std::size_t>(ch) * hw + p] += self.grad[static_cast<std::size_t>(p) * c + ch];
    });
}

Var from_tokens(const Var& x, int height, int width) {
    if (x.value().rank() != 2 || x.value().dim(0) != height * width)
        throw std::invalid_argument("from_tokens: token count does not match H*W");
    const int c = x.value().dim(1), hw = height * width;
    Tensor out({c, height, width});
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) out[static_cast<std::size_t>(ch) * hw + p] = x.value()[static_cast<std::size_t>(p) * c + ch];
    return make_result(std::move(out), {x}, [c, hw](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    (*g)[static_cast<std::size_t>(p) * c + ch] += self.grad[static_cast<std::size_t>(ch) * hw + p];
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3 || begin < 0 || end > xv.dim(0) || begin >= end)
        throw std::invalid_argument("slice_channels: bad range");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    Tensor out({end - begin, xv.dim(1), xv.dim(2)});
    std::copy(xv.data() + begin * plane, xv.data() + end * plane, out.data());
    return make_result(std::move(out), {x}, [begin, plane](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * plane + i] += self.grad[i];
    });
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.value();
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
    return make_result(std::move(out), {x}, [c, h, w](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < 2 * h; ++y)
                    for (int xx = 0; xx < 2 * w; ++xx) g->at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
    });
}

Var transpose(const Var& x) {
    const Tensor& xv = x.value();
    const int r = xv.dim(0), c = xv.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
    return make_result(std::move(out), {x}, [r, c](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g->at(i, j) += self.grad.at(j, i);
    });
}

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[static_cast<std::size_t>(i) * n + j] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* bi = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            double* cp = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                                    shape_string(bv.shape()));
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* g = pgrad(self, 0)) gemm_nt(self.grad.data(), bv.data(), g->data(), m, n, k);
        if (Tensor* g = pgrad(self, 1)) gemm_tn(av.data(), self.grad.data(), g->data(), m, k, n);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
        throw std::invalid_argument("linear: incompatible shapes " + shape_string(xv.shape()) + " and " +
                                    shape_string(wv.shape()));
    const int n = xv.dim(0), k = xv.dim(1), m = wv.dim(0);
    const bool has_bias = b.valid();
    if (has_bias && (b.value().rank() != 1 || b.value().dim(0) != m))
        throw std::invalid_argument("linear: bias size mismatch");
    Tensor out({n, m});
    if (has_bias)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) out.at(i, j) = b.value()[j];
    gemm_nt(xv.data(), wv.data(), out.data(), n, k, m);
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_result(std::move(out), parents, [n, k, m, has_bias](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        if (Tensor* g = pgrad(self, 0)) gemm_nn(self.grad.data(), wv.data(), g->data(), n, m, k);
        if (Tensor* g = pgrad(self, 1)) gemm_tn(self.grad.data(), xv.data(), g->data(), n, m, k);
        if (has_bias)
            if (Tensor* g = pgrad(self, 2))
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) (*g)[j] += self.grad.at(i, j);
    });
}

Var add_row_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const int n = xv.dim(0), m = xv.dim(1);
    if (bias.value().size() != static_cast<std::size_t>(m)) throw std::invalid_argument("add_row_bias: size mismatch");
    Tensor out = xv;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) += bias.value()[j];
    return make_result(std::move(out), {x, bias}, [n, m](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
        if (Tensor* g = pgrad(self, 1))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) (*g)[j] += self.grad.at(i, j);
    });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const int c = xv.dim(0);
    if (bias.value().size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("add_channel_bias: size mismatch");
    const std::size_t plane = xv.size() / c;
    Tensor out = xv;
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] += bias.value()[ch];
    return make_result(std::move(out), {x, bias}, [c, plane](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
        if (Tensor* g = pgrad(self, 1))
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < plane; ++p) (*g)[ch] += self.grad[ch * plane + p];
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3))
        throw std::invalid_argument("conv2d: incompatible shapes " + shape_string(xv.shape()) + " and " +
                                    shape_string(wv.shape()));
    const int ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int co = wv.dim(0), k = wv.dim(2);
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor out({co, ho, wo});
    const bool has_bias = b.valid();
    for (int o = 0; o < co; ++o) {
        double* op = out.data() + static_cast<std::size_t>(o) * ho * wo;
        if (has_bias) std::fill(op, op + ho * wo, b.value()[o]);
        for (int i = 0; i < ci; ++i) {
            const double* ip = xv.data() + static_cast<std::size_t>(i) * h * wd;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const double wgt = wv[((static_cast<std::size_t>(o) * ci + i) * k + ky) * k + kx];
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* row = ip + static_cast<std::size_t>(iy) * wd;
                        double* orow = op + static_cast<std::size_t>(oy) * wo;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < wd) orow[ox] += wgt * row[ix];
                        }
                    }
                }
        }
    }
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_result(std::move(out), parents, [=](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        Tensor* gx = pgrad(self, 0);
        Tensor* gw = pgrad(self, 1);
        for (int o = 0; o < co; ++o) {
            const double* gp = self.grad.data() + static_cast<std::size_t>(o) * ho * wo;
            for (int i = 0; i < ci; ++i) {
                const double* ip = xv.data() + static_cast<std::size_t>(i) * h * wd;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const std::size_t widx = ((static_cast<std::size_t>(o) * ci + i) * k + ky) * k + kx;
                        const double wgt = wv[widx];
                        double gacc = 0.0;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const double* grow = gp + static_cast<std::size_t>(oy) * wo;
                            const double* row = ip + static_cast<std::size_t>(iy) * wd;
                            double* gxrow = gx ? gx->data() + (static_cast<std::size_t>(i) * h + iy) * wd : nullptr;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                gacc += grow[ox] * row[ix];
                                if (gxrow) gxrow[ix] += wgt * grow[ox];
                            }
                        }
                        if (gw) (*gw)[widx] += gacc;
                    }
            }
            if (has_bias)
                if (Tensor* gb = pgrad(self, 2))
                    for (int p = 0; p < ho * wo; ++p) (*gb)[o] += gp[p];
        }
    });
}

Var softmax_rows(const Var& x) {
    const Tensor& xv = x.value();
    const int n = xv.dim(0), m = xv.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        double mx = xv.at(i, 0);
        for (int j = 1; j < m; ++j) mx = std::max(mx, xv.at(i, j));
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += (out.at(i, j) = std::exp(xv.at(i, j) - mx));
        for (int j = 0; j < m; ++j) out.at(i, j) /= s;
    }
    return make_result(std::move(out), {x}, [n, m](Node& self) {
        Tensor* g = pgrad(self, 0);
        if (!g) return;
        for (int i = 0; i < n; ++i) {
            double d = 0.0;
            for (int j = 0; j < m; ++j) d += self.grad.at(i, j) * self.value.at(i, j);
            for (int j = 0; j < m; ++j) g->at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - d);
        }
    });
}

Var embedding(const Var& table, int index) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2 || index < 0 || index >= tv.dim(0)) throw std::out_of_range("embedding: index out of range");
    const int d = tv.dim(1);
    Tensor out({d});
    for (int j = 0; j < d; ++j) out[j] = tv.at(index, j);
    return make_result(std::move(out), {table}, [index, d](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int j = 0; j < d; ++j) g->at(index, j) += self.grad[j];
    });
}

Var column_max(const Var& x, int column) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || column < 0 || column >= xv.dim(1)) throw std::out_of_range("column_max: bad column");
    int arg = 0;
    for (int i = 1; i < xv.dim(0); ++i)
        if (xv.at(i, column) > xv.at(arg, column)) arg = i;
    return make_result(Tensor::scalar(xv.at(arg, column)), {x}, [arg, column](Node& self) {
        if (Tensor* g = pgrad(self, 0)) g->at(arg, column) += self.grad[0];
    });
}

Var column_mean(const Var& x, int column) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || column < 0 || column >= xv.dim(1)) throw std::out_of_range("column_mean: bad column");
    const int n = xv.dim(0);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += xv.at(i, column);
    return make_result(Tensor::scalar(s / n), {x}, [n, column](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (int i = 0; i < n; ++i) g->at(i, column) += self.grad[0] / n;
    });
}

Var topk_relu_rows(const Var& x, int k) {
    const Tensor& xv = x.value();
    const int n = xv.dim(0), m = xv.dim(1);
    if (k < 1 || k > m) throw std::invalid_argument("topk_relu_rows: k out of range");
    Tensor out({n, m});
    std::vector<int> idx(m);
    for (int i = 0; i < n; ++i) {
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
            const double va = xv.at(i, a), vb = xv.at(i, b);
            return va > vb || (va == vb && a < b);
        });
        for (int j = 0; j < k; ++j) out.at(i, idx[j]) = std::max(0.0, xv.at(i, idx[j]));
    }
    return make_result(std::move(out), {x}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (self.value[i] > 0.0) (*g)[i] += self.grad[i];
    });
}

Var sparse_map(const Var& x, const SparseLinearMap& map) {
    return make_result(map.apply(x.value()), {x}, [map](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += map.apply_transpose(self.grad);
    });
}

Var substitute(const Var& x, Tensor replacement) {
    if (replacement.shape() != x.shape())
        throw std::invalid_argument("substitute: edit changed activation shape from " + shape_string(x.shape()) +
                                    " to " + shape_string(replacement.shape()));
    return make_result(std::move(replacement), {x}, [](Node& self) {
        if (Tensor* g = pgrad(self, 0)) *g += self.grad;
    });
}

} // namespace lvo::ag
