#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "heliocast/errors.hpp"

namespace heliocast::nnet {

// Reverse-mode autodiff over dense float64 tensors. A Tensor is a shared
// handle to a graph node; ops build the tape, backward() replays it. All
// loops are element-deterministic: a fixed summation order per output
// element, so results are bitwise reproducible at any thread count.
class Tensor {
  public:
    struct Node {
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        size_t size() const { return value.size(); }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(std::vector<int> shape, std::vector<double> value);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor param(std::vector<int> shape, std::vector<double> value);
    static Tensor scalar(double v) { return constant({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    size_t size() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape[i]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const;

    std::shared_ptr<Node> node() const { return node_; }

    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    // Reverse sweep from this (scalar) tensor; seeds d(this)/d(this) = 1.
    void backward() const;

  private:
    std::shared_ptr<Node> node_;
};

size_t numel(const std::vector<int>& shape);

// --- graph ops -------------------------------------------------------------

// a [..., M, K] x b, where b is [K, N] (shared across leading dims) or has
// identical leading dims [..., K, N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise; b may broadcast as a trailing-suffix shape of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_lastdim(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

Tensor reshape(const Tensor& x, std::vector<int> shape);
// [A, B, C, D] -> [A, C, B, D]
Tensor permute_0213(const Tensor& x);
// [..., M, N] -> [..., N, M]
Tensor transpose_last2(const Tensor& x);

Tensor slice_lastdim(const Tensor& x, int start, int len);
Tensor concat_lastdim(const std::vector<Tensor>& xs);

Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Pairwise rotary rotation. x is [B, H, N, D]; sin/cos hold B*N*D phases
// (shared across heads). Norm-preserving per token.
Tensor rotary(const Tensor& x, std::shared_ptr<const std::vector<double>> sin,
              std::shared_ptr<const std::vector<double>> cos);

// Losses against constant targets; both reduce by mean over all elements.
Tensor mae_loss(const Tensor& pred, const std::vector<double>& target);
// max(alpha*(pred-y), (1-alpha)*(y-pred)) averaged over elements.
Tensor pinball_loss(const Tensor& pred, const std::vector<double>& target, double alpha);

// Thread-count control for the engine's parallel loops.
void set_num_threads(int n);
int num_threads();

}  // namespace heliocast::nnet
