// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a reverse-mode tape. Every op that sees an input
// requiring grad records a node holding its parents and a closure that maps
// the node's output gradient onto the parents' gradients.
#pragma once

#include "superdir/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace superdir::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string to_string(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    // grad buffer, zero-filled on first use
    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad() { return node_->grad_buffer(); }
    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad();

    // Reverse sweep from this scalar. Leaf grads accumulate across calls;
    // intermediate grads are reset first.
    void backward() const;

    // Same values, no tape history.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables tape recording in its scope (per thread).
class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- primitives -----------------------------------------------------------

// (n,k)x(k,m); (B,n,k)x(k,m) shares the right operand; (B,n,k)x(B,k,m) batched.
Tensor matmul(const Tensor& a, const Tensor& b);
// x (..., in) W^T + b with W (out, in); b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// b's shape must equal a's or be a suffix of it (broadcast over leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis: gamma * (x - mu) / sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x (B,C,H,W), w (O,C,K,K); output (B,O,(H+2P-K)/S+1,(W+2P-K)/S+1), exact.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad, const Tensor& bias = {});
// Nearest-neighbour upsampling of the two trailing axes by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x, std::size_t i, std::size_t j);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean binary cross-entropy against a constant target, probabilities clamped
// to [1e-7, 1 - 1e-7] with zero gradient outside the clamp.
Tensor bce(const Tensor& p, double target);
inline constexpr double kProbClamp = 1e-7;

// ---- initialization -------------------------------------------------------

enum class Init { fan_in_uniform, zeros, ones };

// fan_in_uniform draws from U(-sqrt(1/fan_in), sqrt(1/fan_in)).
Tensor init_tensor(const Shape& shape, Init scheme, Rng& rng, std::size_t fan_in = 0);

// ---- gradient checking ----------------------------------------------------

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t max_coords = 48;  // per tensor; all coordinates when smaller
    std::uint64_t seed = 0;
    double floor = 1e-6;  // denominator floor of the relative error
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coords = 0;
    std::string worst;  // "tensor i, coord j"

    bool passed(double rel_tol) const { return max_rel_error <= rel_tol; }
};

// Compares reverse-mode gradients of the scalar loss() against central
// differences on sampled coordinates of each tensor in `wrt`.
GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                           const GradCheckOptions& options = {});
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           const GradCheckOptions& options = {});

// ---- optimizer ------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Bias-corrected adaptive-moment update; every parameter needs a grad buffer.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);
void set_requires_grad(std::vector<Tensor>& params, bool on);

// ---- checkpoints ----------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Flat little-endian binary: "SDCKPT01", u32 version, u64 FNV-1a hash of the
// config text, u64 config length + config text, u64 count, then per tensor
// u32 name length + name, u32 rank, u64 extents, float64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::string& config_json, const std::vector<NamedTensor>& tensors);

struct Checkpoint {
    std::uint32_t version = 0;
    std::uint64_t config_hash = 0;
    std::string config_json;
    std::vector<NamedTensor> tensors;
};

Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace superdir::nn
