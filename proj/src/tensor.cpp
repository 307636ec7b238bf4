// SPDX-License-Identifier: Apache-2.0
#include "superdir/tensor.hpp"

#include "superdir/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace superdir::nn {
namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RMat>;
using CMapR = Eigen::Map<const RMat>;

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const std::string& what) {
    throw InvalidArgument(std::string(op) + ": " + what);
}

Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (t_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->leaf = false;
            for (auto& p : parents) n->parents.push_back(p.shared());
            n->backward = std::move(bw);
        }
    }
    return Tensor(std::move(n));
}

CMapR cmat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return CMapR(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapR mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MapR(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapR mat(double* p, std::size_t rows, std::size_t cols) {
    return MapR(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

CMapR cmat(const double* p, std::size_t rows, std::size_t cols) {
    return CMapR(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) shape_error(op, "undefined tensor");
}

}  // namespace

std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return from(shape, std::vector<double>(nn::numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) shape_error("tensor", "zero extent in shape " + nn::to_string(shape));
    }
    if (data.size() != nn::numel(shape)) {
        shape_error("tensor", std::to_string(data.size()) + " values for shape " + nn::to_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (numel() != 1) shape_error("item", "tensor of shape " + nn::to_string(shape()) + " is not a scalar");
    return node_->data[0];
}

void Tensor::set_requires_grad(bool on) {
    if (!node_->leaf) shape_error("set_requires_grad", "only leaf tensors can change requires_grad");
    node_->requires_grad = on;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), data(), false); }

void Tensor::backward() const {
    if (numel() != 1) shape_error("backward", "loss must be a scalar, got shape " + nn::to_string(shape()));
    if (!node_->requires_grad) return;

    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->leaf && (*it)->backward) (*it)->backward(**it);
    }
}

NoGrad::NoGrad() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGrad::~NoGrad() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- matmul / linear ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3 || (sb.size() == 3 && sa.size() != 3)) {
        shape_error("matmul", "unsupported ranks " + to_string(sa) + " x " + to_string(sb));
    }
    const std::size_t k = sa.back();
    if (sb[sb.size() - 2] != k) shape_error("matmul", "inner extents differ: " + to_string(sa) + " x " + to_string(sb));
    const std::size_t m = sb.back();

    if (sb.size() == 2) {
        const std::size_t rows = a.numel() / k;
        Shape out_shape = sa;
        out_shape.back() = m;
        std::vector<double> out(rows * m);
        mat(out, rows, m).noalias() = cmat(a.data(), rows, k) * cmat(b.data(), k, m);
        return record(out_shape, std::move(out), {a, b}, [rows, k, m](Node& self) {
            Node& A = *self.parents[0];
            Node& B = *self.parents[1];
            const auto g = cmat(self.grad, rows, m);
            if (A.requires_grad) mat(A.grad_buffer(), rows, k).noalias() += g * cmat(B.data, k, m).transpose();
            if (B.requires_grad) mat(B.grad_buffer(), k, m).noalias() += cmat(A.data, rows, k).transpose() * g;
        });
    }

    const std::size_t batch = sa[0];
    if (sb[0] != batch) shape_error("matmul", "batch extents differ: " + to_string(sa) + " x " + to_string(sb));
    const std::size_t n = sa[1];
    std::vector<double> out(batch * n * m);
    for (std::size_t i = 0; i < batch; ++i) {
        mat(out.data() + i * n * m, n, m).noalias() =
            cmat(a.data().data() + i * n * k, n, k) * cmat(b.data().data() + i * k * m, k, m);
    }
    return record({batch, n, m}, std::move(out), {a, b}, [batch, n, k, m](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
            const auto g = cmat(self.grad.data() + i * n * m, n, m);
            if (A.requires_grad) {
                mat(A.grad_buffer().data() + i * n * k, n, k).noalias() +=
                    g * cmat(B.data.data() + i * k * m, k, m).transpose();
            }
            if (B.requires_grad) {
                mat(B.grad_buffer().data() + i * k * m, k, m).noalias() +=
                    cmat(A.data.data() + i * n * k, n, k).transpose() * g;
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_defined(x, "linear");
    require_defined(w, "linear");
    if (w.ndim() != 2) shape_error("linear", "weight must be (out, in), got " + to_string(w.shape()));
    const std::size_t in = w.dim(1), out_f = w.dim(0);
    if (x.shape().back() != in) shape_error("linear", "input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
    const bool has_b = b.defined();
    if (has_b && (b.ndim() != 1 || b.dim(0) != out_f)) shape_error("linear", "bias must be (" + std::to_string(out_f) + ")");
    const std::size_t rows = x.numel() / in;
    Shape os = x.shape();
    os.back() = out_f;
    std::vector<double> out(rows * out_f);
    auto o = mat(out, rows, out_f);
    o.noalias() = cmat(x.data(), rows, in) * cmat(w.data(), out_f, in).transpose();
    if (has_b) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), static_cast<Eigen::Index>(out_f));
    std::vector<Tensor> parents{x, w};
    if (has_b) parents.push_back(b);
    return record(os, std::move(out), parents, [rows, in, out_f, has_b](Node& self) {
        Node& X = *self.parents[0];
        Node& W = *self.parents[1];
        const auto g = cmat(self.grad, rows, out_f);
        if (X.requires_grad) mat(X.grad_buffer(), rows, in).noalias() += g * cmat(W.data, out_f, in);
        if (W.requires_grad) mat(W.grad_buffer(), out_f, in).noalias() += g.transpose() * cmat(X.data, rows, in);
        if (has_b) {
            Node& B = *self.parents[2];
            if (B.requires_grad) {
                // plain loops: Eigen's vectorized reductions peel by runtime
                // alignment, which breaks bitwise reproducibility
                auto& gb = B.grad_buffer();
                for (Eigen::Index r = 0; r < g.rows(); ++r)
                    for (std::size_t o = 0; o < out_f; ++o) gb[o] += g(r, static_cast<Eigen::Index>(o));
            }
        }
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
        shape_error("add", "cannot broadcast " + to_string(sb) + " onto " + to_string(sa));
    }
    const std::size_t inner = b.numel(), outer = a.numel() / inner;
    std::vector<double> out = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * inner;
        const double* src = b.data().data();
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    return record(sa, std::move(out), {a, b}, [outer, inner](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    if (a.shape() != b.shape()) shape_error("sub", to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return record(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape()) shape_error("mul", to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return record(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    require_defined(a, "scale");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return record(a.shape(), std::move(out), {a}, [s](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor relu(const Tensor& x) {
    require_defined(x, "relu");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return record(x.shape(), std::move(out), {x}, [](Node& self) {
        Node& X = *self.parents[0];
        auto& g = X.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (X.data[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    require_defined(x, "sigmoid");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        // split by sign so exp never overflows
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return record(x.shape(), std::move(out), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.data[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    require_defined(x, "softmax");
    if (axis >= x.ndim()) shape_error("softmax", "axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
    const auto& s = x.shape();
    const std::size_t len = s[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t outer = x.numel() / (len * inner);
    std::vector<double> out(x.numel());
    const auto& in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            double mx = in[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
            double z = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const double e = std::exp(in[base + l * inner] - mx);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
        }
    }
    return record(s, std::move(out), {x}, [outer, len, inner](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& y = self.data;
        const auto& go = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < inner; ++j) {
                const std::size_t base = o * len * inner + j;
                double dot = 0.0;
                for (std::size_t l = 0; l < len; ++l) dot += go[base + l * inner] * y[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t k = base + l * inner;
                    g[k] += y[k] * (go[k] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_defined(x, "layer_norm");
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        shape_error("layer_norm", "gamma/beta must have " + std::to_string(d) + " entries");
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
    const auto& in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += p[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (p[i] - mu) * rstd[r];
            xhat[r * d + i] = h;
            out[r * d + i] = gamma.data()[i] * h + beta.data()[i];
        }
    }
    return record(x.shape(), std::move(out), {x, gamma, beta},
                  [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                      Node& X = *self.parents[0];
                      Node& G = *self.parents[1];
                      Node& B = *self.parents[2];
                      const auto& go = self.grad;
                      if (G.requires_grad || B.requires_grad) {
                          auto& gg = G.grad_buffer();
                          auto& gb = B.grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t i = 0; i < d; ++i) {
                                  gg[i] += go[r * d + i] * xhat[r * d + i];
                                  gb[i] += go[r * d + i];
                              }
                          }
                      }
                      if (X.requires_grad) {
                          auto& gx = X.grad_buffer();
                          const double inv_d = 1.0 / static_cast<double>(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                              double s1 = 0.0, s2 = 0.0;
                              for (std::size_t i = 0; i < d; ++i) {
                                  const double gh = go[r * d + i] * G.data[i];
                                  s1 += gh;
                                  s2 += gh * xhat[r * d + i];
                              }
                              for (std::size_t i = 0; i < d; ++i) {
                                  const double gh = go[r * d + i] * G.data[i];
                                  gx[r * d + i] += rstd[r] * (gh - inv_d * s1 - xhat[r * d + i] * inv_d * s2);
                              }
                          }
                      }
                  });
}

// ---- convolution ----------------------------------------------------------

namespace {

struct ConvGeom {
    std::size_t b, c, h, w, o, k, s, p, ho, wo;
    std::size_t ckk() const { return c * k * k; }
    std::size_t cols() const { return b * ho * wo; }
};

// col[(c k k), (b ho wo)]
void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::size_t hw = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = col + ((c * g.k + ki) * g.k + kj) * g.cols();
                for (std::size_t b = 0; b < g.b; ++b) {
                    const double* src = x + (b * g.c + c) * g.h * g.w;
                    double* dst = row + b * hw;
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        const auto ih = static_cast<std::ptrdiff_t>(oh * g.s + ki) - static_cast<std::ptrdiff_t>(g.p);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(dst + oh * g.wo, dst + (oh + 1) * g.wo, 0.0);
                            continue;
                        }
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            const auto iw =
                                static_cast<std::ptrdiff_t>(ow * g.s + kj) - static_cast<std::ptrdiff_t>(g.p);
                            dst[oh * g.wo + ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w))
                                                      ? 0.0
                                                      : src[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
    const std::size_t hw = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = col + ((c * g.k + ki) * g.k + kj) * g.cols();
                for (std::size_t b = 0; b < g.b; ++b) {
                    double* dst = dx + (b * g.c + c) * g.h * g.w;
                    const double* src = row + b * hw;
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        const auto ih = static_cast<std::ptrdiff_t>(oh * g.s + ki) - static_cast<std::ptrdiff_t>(g.p);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            const auto iw =
                                static_cast<std::ptrdiff_t>(ow * g.s + kj) - static_cast<std::ptrdiff_t>(g.p);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                            dst[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad, const Tensor& bias) {
    require_defined(x, "conv2d");
    require_defined(w, "conv2d");
    if (x.ndim() != 4) shape_error("conv2d", "input must be (B, C, H, W), got " + to_string(x.shape()));
    if (w.ndim() != 4 || w.dim(2) != w.dim(3)) shape_error("conv2d", "weight must be (O, C, K, K), got " + to_string(w.shape()));
    if (w.dim(1) != x.dim(1)) {
        shape_error("conv2d", "input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                                  std::to_string(w.dim(1)) + " (input " + to_string(x.shape()) + ", weight " +
                                  to_string(w.shape()) + ")");
    }
    if (stride == 0) shape_error("conv2d", "stride must be >= 1");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
    if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) shape_error("conv2d", "kernel larger than padded input");
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    const bool has_b = bias.defined();
    if (has_b && bias.numel() != g.o) shape_error("conv2d", "bias must have " + std::to_string(g.o) + " entries");

    std::vector<double> col(g.ckk() * g.cols());
    im2col(g, x.data().data(), col.data());
    std::vector<double> om(g.o * g.cols());
    mat(om, g.o, g.cols()).noalias() = cmat(w.data(), g.o, g.ckk()) * cmat(col, g.ckk(), g.cols());

    const std::size_t hw = g.ho * g.wo;
    std::vector<double> out(g.b * g.o * hw);
    for (std::size_t b = 0; b < g.b; ++b) {
        for (std::size_t o = 0; o < g.o; ++o) {
            const double add = has_b ? bias.data()[o] : 0.0;
            const double* src = om.data() + o * g.cols() + b * hw;
            double* dst = out.data() + (b * g.o + o) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + add;
        }
    }
    std::vector<Tensor> parents{x, w};
    if (has_b) parents.push_back(bias);
    return record({g.b, g.o, g.ho, g.wo}, std::move(out), parents, [g, has_b, col = std::move(col)](Node& self) {
        Node& X = *self.parents[0];
        Node& W = *self.parents[1];
        const std::size_t hw = g.ho * g.wo;
        std::vector<double> gm(g.o * g.cols());
        for (std::size_t b = 0; b < g.b; ++b) {
            for (std::size_t o = 0; o < g.o; ++o) {
                std::copy_n(self.grad.data() + (b * g.o + o) * hw, hw, gm.data() + o * g.cols() + b * hw);
            }
        }
        const auto gmat = cmat(gm, g.o, g.cols());
        if (W.requires_grad) mat(W.grad_buffer(), g.o, g.ckk()).noalias() += gmat * cmat(col, g.ckk(), g.cols()).transpose();
        if (X.requires_grad) {
            std::vector<double> dcol(g.ckk() * g.cols());
            mat(dcol, g.ckk(), g.cols()).noalias() = cmat(W.data, g.o, g.ckk()).transpose() * gmat;
            col2im_add(g, dcol.data(), X.grad_buffer().data());
        }
        if (has_b) {
            Node& B = *self.parents[2];
            if (B.requires_grad) {
                auto& gb = B.grad_buffer();
                for (std::size_t o = 0; o < g.o; ++o) {
                    double acc = 0.0;
                    for (Eigen::Index c = 0; c < gmat.cols(); ++c) acc += gmat(static_cast<Eigen::Index>(o), c);
                    gb[o] += acc;
                }
            }
        }
    });
}

Tensor upsample_nearest(const Tensor& x, std::size_t f) {
    require_defined(x, "upsample_nearest");
    if (x.ndim() < 2) shape_error("upsample_nearest", "needs at least two axes, got " + to_string(x.shape()));
    if (f == 0) shape_error("upsample_nearest", "factor must be >= 1");
    Shape os = x.shape();
    const std::size_t h = os[os.size() - 2], w = os.back();
    os[os.size() - 2] = h * f;
    os.back() = w * f;
    const std::size_t planes = x.numel() / (h * w);
    const std::size_t H = h * f, W = w * f;
    std::vector<double> out(planes * H * W);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data().data() + p * h * w;
        double* dst = out.data() + p * H * W;
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = src[(i / f) * w + j / f];
        }
    }
    return record(os, std::move(out), {x}, [planes, h, w, f](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const std::size_t H = h * f, W = w * f;
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = self.grad.data() + p * H * W;
            double* dst = g.data() + p * h * w;
            for (std::size_t i = 0; i < H; ++i) {
                for (std::size_t j = 0; j < W; ++j) dst[(i / f) * w + j / f] += src[i * W + j];
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) shape_error("concat", "no inputs");
    for (const auto& t : parts) require_defined(t, "concat");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) shape_error("concat", "axis out of range for " + to_string(s0));
    Shape os = s0;
    os[axis] = 0;
    for (const auto& t : parts) {
        const auto& s = t.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
        if (!ok) shape_error("concat", "shape " + to_string(s) + " does not match " + to_string(s0) + " off axis " + std::to_string(axis));
        os[axis] += s[axis];
    }
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    std::vector<std::size_t> chunk;
    for (const auto& t : parts) chunk.push_back(t.dim(axis) * inner);
    const std::size_t row = os[axis] * inner;
    std::vector<double> out(outer * row);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            std::copy_n(parts[p].data().data() + o * chunk[p], chunk[p], out.data() + o * row + off);
            off += chunk[p];
        }
    }
    return record(os, std::move(out), parts, [outer, row, chunk](Node& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < chunk.size(); ++p) {
            Node& P = *self.parents[p];
            if (P.requires_grad) {
                auto& g = P.grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * row + off;
                    double* dst = g.data() + o * chunk[p];
                    for (std::size_t i = 0; i < chunk[p]; ++i) dst[i] += src[i];
                }
            }
            off += chunk[p];
        }
    });
}

// ---- shape ops ------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
    require_defined(x, "reshape");
    if (numel(shape) != x.numel()) shape_error("reshape", "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    return record(shape, x.data(), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    require_defined(x, "permute");
    const auto& s = x.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) shape_error("permute", "permutation rank differs from " + to_string(s));
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) shape_error("permute", "invalid permutation");
        used[p] = true;
    }
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = s[perm[i]];
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
    // stride in the input of each output axis
    std::vector<std::size_t> st(r);
    for (std::size_t i = 0; i < r; ++i) st[i] = in_stride[perm[i]];
    const std::size_t n = x.numel();
    std::vector<std::size_t> src_index(n);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t k = 0; k < n; ++k) {
            src_index[k] = off;
            for (std::size_t a = r; a-- > 0;) {
                if (++idx[a] < os[a]) {
                    off += st[a];
                    break;
                }
                off -= st[a] * (os[a] - 1);
                idx[a] = 0;
            }
        }
    }
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = x.data()[src_index[k]];
    return record(os, std::move(out), {x}, [src_index = std::move(src_index)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < src_index.size(); ++k) g[src_index[k]] += self.grad[k];
    });
}

Tensor transpose(const Tensor& x, std::size_t i, std::size_t j) {
    std::vector<std::size_t> perm(x.ndim());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (i >= perm.size() || j >= perm.size()) shape_error("transpose", "axis out of range for " + to_string(x.shape()));
    std::swap(perm[i], perm[j]);
    return permute(x, perm);
}

// ---- reductions and losses ------------------------------------------------

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double s = 0.0;
    for (double v : x.data()) s += v;
    return record({1}, {s}, {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor bce(const Tensor& p, double target) {
    require_defined(p, "bce");
    const double lo = kProbClamp, hi = 1.0 - kProbClamp;
    const double n = static_cast<double>(p.numel());
    double s = 0.0;
    for (double v : p.data()) {
        const double c = std::clamp(v, lo, hi);
        s -= target * std::log(c) + (1.0 - target) * std::log(1.0 - c);
    }
    return record({1}, {s / n}, {p}, [target, lo, hi, n](Node& self) {
        Node& P = *self.parents[0];
        auto& g = P.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = P.data[i];
            if (v < lo || v > hi) continue;
            g[i] += self.grad[0] * (-target / v + (1.0 - target) / (1.0 - v)) / n;
        }
    });
}

// ---- initialization -------------------------------------------------------

Tensor init_tensor(const Shape& shape, Init scheme, Rng& rng, std::size_t fan_in) {
    switch (scheme) {
        case Init::zeros:
            return Tensor::zeros(shape, true);
        case Init::ones:
            return Tensor::full(shape, 1.0, true);
        case Init::fan_in_uniform: {
            if (fan_in == 0) throw InvalidArgument("init_tensor: fan_in_uniform needs fan_in > 0");
            const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
            std::vector<double> v(numel(shape));
            for (double& x : v) x = rng.uniform(-bound, bound);
            return Tensor::from(shape, std::move(v), true);
        }
    }
    throw InvalidArgument("init_tensor: unknown scheme");
}

// ---- gradient checking ----------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                           const GradCheckOptions& options) {
    std::vector<Tensor> ts = wrt;
    std::vector<bool> was(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        was[i] = ts[i].requires_grad();
        ts[i].set_requires_grad(true);
        ts[i].zero_grad();
    }
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : ts) analytic.push_back(t.grad());

    GradCheckReport rep;
    Rng rng(options.seed);
    NoGrad ng;
    for (std::size_t ti = 0; ti < ts.size(); ++ti) {
        auto& data = ts[ti].data();
        std::vector<std::size_t> coords(data.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (coords.size() > options.max_coords) {
            shuffle(coords, rng);
            coords.resize(options.max_coords);
        }
        for (std::size_t c : coords) {
            const double orig = data[c];
            data[c] = orig + options.step;
            const double fp = loss().item();
            data[c] = orig - options.step;
            const double fm = loss().item();
            data[c] = orig;
            const double num = (fp - fm) / (2.0 * options.step);
            const double an = analytic[ti][c];
            const double abs_err = std::abs(num - an);
            const double rel = abs_err / std::max({std::abs(num), std::abs(an), options.floor});
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
            if (rel > rep.max_rel_error || rep.coords == 0) {
                rep.max_rel_error = std::max(rep.max_rel_error, rel);
                rep.worst = "tensor " + std::to_string(ti) + ", coord " + std::to_string(c);
            }
            ++rep.coords;
        }
    }
    for (std::size_t i = 0; i < ts.size(); ++i) ts[i].set_requires_grad(was[i]);
    return rep;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           const GradCheckOptions& options) {
    return grad_check([&] { return f(input); }, {input}, options);
}

// ---- optimizer ------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& st) {
    if (st.m.empty()) {
        for (auto& p : params) {
            st.m.emplace_back(p.numel(), 0.0);
            st.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw InvalidArgument("adam_step: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) throw InvalidArgument("adam_step: parameter " + std::to_string(i) + " has no gradient");
        if (st.m[i].size() != params[i].numel()) throw InvalidArgument("adam_step: moment shape mismatch");
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& d = params[i].data();
        const auto& g = params[i].grad();
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t k = 0; k < d.size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            d[k] -= st.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
        }
    }
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

void set_requires_grad(std::vector<Tensor>& params, bool on) {
    for (auto& p : params) p.set_requires_grad(on);
}

// ---- checkpoints ----------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw InvalidArgument(path + ": truncated checkpoint");
    return v;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void save_checkpoint(const std::string& path, const std::string& config_json, const std::vector<NamedTensor>& tensors) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw InvalidArgument("cannot write " + tmp);
        out.write(kMagic, sizeof kMagic);
        put(out, kCheckpointVersion);
        put(out, fnv1a64(config_json));
        put(out, static_cast<std::uint64_t>(config_json.size()));
        out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
        put(out, static_cast<std::uint64_t>(tensors.size()));
        for (const auto& nt : tensors) {
            put(out, static_cast<std::uint32_t>(nt.name.size()));
            out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
            put(out, static_cast<std::uint32_t>(nt.tensor.ndim()));
            for (auto e : nt.tensor.shape()) put(out, static_cast<std::uint64_t>(e));
            out.write(reinterpret_cast<const char*>(nt.tensor.data().data()),
                      static_cast<std::streamsize>(nt.tensor.numel() * sizeof(double)));
        }
        if (!out) throw InvalidArgument("write failed: " + tmp);
    }
    std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open checkpoint " + path);
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw InvalidArgument(path + ": not a checkpoint file");
    }
    Checkpoint ck;
    ck.version = get<std::uint32_t>(in, path);
    if (ck.version != kCheckpointVersion) throw InvalidArgument(path + ": unsupported checkpoint version " + std::to_string(ck.version));
    ck.config_hash = get<std::uint64_t>(in, path);
    const auto clen = get<std::uint64_t>(in, path);
    if (clen > (1ULL << 30)) throw InvalidArgument(path + ": corrupt config length");
    ck.config_json.resize(clen);
    if (!in.read(ck.config_json.data(), static_cast<std::streamsize>(clen))) throw InvalidArgument(path + ": truncated checkpoint");
    if (fnv1a64(ck.config_json) != ck.config_hash) throw InvalidArgument(path + ": config hash mismatch");
    const auto count = get<std::uint64_t>(in, path);
    for (std::uint64_t t = 0; t < count; ++t) {
        NamedTensor nt;
        const auto nlen = get<std::uint32_t>(in, path);
        nt.name.resize(nlen);
        if (!in.read(nt.name.data(), nlen)) throw InvalidArgument(path + ": truncated checkpoint");
        const auto rank = get<std::uint32_t>(in, path);
        if (rank == 0 || rank > 8) throw InvalidArgument(path + ": corrupt tensor rank");
        Shape s(rank);
        for (auto& e : s) e = static_cast<std::size_t>(get<std::uint64_t>(in, path));
        std::vector<double> data(numel(s));
        if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
            throw InvalidArgument(path + ": truncated checkpoint");
        }
        nt.tensor = Tensor::from(s, std::move(data), false);
        ck.tensors.push_back(std::move(nt));
    }
    return ck;
}

}  // namespace superdir::nn
