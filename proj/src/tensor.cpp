#include "heliocast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace heliocast::nnet {

namespace {

int g_threads = 0;  // 0 = library default

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

using Node = Tensor::Node;

}  // namespace

void set_num_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

size_t numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    return n;
}

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> value) {
    const size_t n = numel(shape);
    if (value.size() != n)
        throw ShapeError("constant: data size " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    return Tensor(node);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    const size_t n = numel(shape);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(n, 0.0);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> value) {
    Tensor t = constant(std::move(shape), std::move(value));
    t.node()->requires_grad = true;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar");
    return node_->value[0];
}

void Tensor::backward() const {
    if (size() != 1) throw ShapeError("backward(): loss must be scalar");

    // Post-order DFS over parents, then reverse for the backward sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// op helpers
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<Node> new_op(std::vector<int> shape, std::vector<std::shared_ptr<Node>> parents) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.resize(numel(node->shape));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    node->requires_grad = rg;
    node->parents = std::move(parents);
    return node;
}

// Validates that b's shape is a trailing suffix of a's; returns b's numel.
size_t suffix_broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    if (b.size() > a.size())
        throw ShapeError("broadcast: " + shape_str(b) + " vs " + shape_str(a));
    for (size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
            throw ShapeError("broadcast: " + shape_str(b) + " is not a suffix of " + shape_str(a));
    return numel(b);
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) throw ShapeError("matmul: operands must be >= 2-D");

    const int M = as[as.size() - 2];
    const int K = as[as.size() - 1];
    const int Kb = bs[bs.size() - 2];
    const int N = bs[bs.size() - 1];
    if (K != Kb)
        throw ShapeError("matmul: inner dims differ, " + shape_str(as) + " x " + shape_str(bs));

    const bool shared_b = bs.size() == 2 && as.size() > 2;
    if (!shared_b && as.size() != bs.size())
        throw ShapeError("matmul: rank mismatch " + shape_str(as) + " x " + shape_str(bs));
    if (!shared_b)
        for (size_t i = 0; i + 2 < as.size(); ++i)
            if (as[i] != bs[i])
                throw ShapeError("matmul: batch dims differ " + shape_str(as) + " x " + shape_str(bs));

    size_t batch = 1;
    for (size_t i = 0; i + 2 < as.size(); ++i) batch *= static_cast<size_t>(as[i]);

    std::vector<int> out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(N);
    auto node = new_op(out_shape, {a.node(), b.node()});

    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = node->value.data();

#pragma omp parallel for collapse(2) schedule(static)
    for (long long g = 0; g < static_cast<long long>(batch); ++g) {
        for (int m = 0; m < M; ++m) {
            const double* arow = av + (static_cast<size_t>(g) * M + m) * K;
            const double* bmat = shared_b ? bv : bv + static_cast<size_t>(g) * K * N;
            double* orow = ov + (static_cast<size_t>(g) * M + m) * N;
            for (int n = 0; n < N; ++n) orow[n] = 0.0;
            for (int k = 0; k < K; ++k) {
                const double x = arow[k];
                const double* brow = bmat + static_cast<size_t>(k) * N;
                for (int n = 0; n < N; ++n) orow[n] += x * brow[n];
            }
        }
    }

    if (node->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        node->backward = [an, bn, M, K, N, batch, shared_b](Node& self) {
            const double* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                const double* bv2 = bn->value.data();
                // dA = dC * B^T
#pragma omp parallel for collapse(2) schedule(static)
                for (long long gi = 0; gi < static_cast<long long>(batch); ++gi) {
                    for (int m = 0; m < M; ++m) {
                        const double* grow = g + (static_cast<size_t>(gi) * M + m) * N;
                        const double* bmat = shared_b ? bv2 : bv2 + static_cast<size_t>(gi) * K * N;
                        double* darow = da + (static_cast<size_t>(gi) * M + m) * K;
                        for (int k = 0; k < K; ++k) {
                            const double* brow = bmat + static_cast<size_t>(k) * N;
                            double acc = 0.0;
                            for (int n = 0; n < N; ++n) acc += grow[n] * brow[n];
                            darow[k] += acc;
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                const double* av2 = an->value.data();
                if (shared_b) {
                    // dB[k,n] = sum over batch,m of A[.,m,k]*dC[.,m,n]; parallel
                    // over k so each output cell has one fixed-order owner.
#pragma omp parallel for schedule(static)
                    for (int k = 0; k < K; ++k) {
                        double* dbrow = db + static_cast<size_t>(k) * N;
                        for (size_t gm = 0; gm < batch * static_cast<size_t>(M); ++gm) {
                            const double x = av2[gm * K + k];
                            const double* grow = g + gm * N;
                            for (int n = 0; n < N; ++n) dbrow[n] += x * grow[n];
                        }
                    }
                } else {
#pragma omp parallel for collapse(2) schedule(static)
                    for (long long gi = 0; gi < static_cast<long long>(batch); ++gi) {
                        for (int k = 0; k < K; ++k) {
                            double* dbrow = db + (static_cast<size_t>(gi) * K + k) * N;
                            const double* ab = av2 + static_cast<size_t>(gi) * M * K;
                            const double* gb = g + static_cast<size_t>(gi) * M * N;
                            for (int m = 0; m < M; ++m) {
                                const double x = ab[static_cast<size_t>(m) * K + k];
                                const double* grow = gb + static_cast<size_t>(m) * N;
                                for (int n = 0; n < N; ++n) dbrow[n] += x * grow[n];
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// elementwise with suffix broadcast
// ---------------------------------------------------------------------------

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
    const size_t bn_size = suffix_broadcast(a.shape(), b.shape());
    auto node = new_op(a.shape(), {a.node(), b.node()});
    const size_t n = node->value.size();
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = node->value.data();

    switch (kind) {
        case EwKind::Add:
            for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % bn_size];
            break;
        case EwKind::Sub:
            for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i % bn_size];
            break;
        case EwKind::Mul:
            for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i % bn_size];
            break;
    }

    if (node->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        node->backward = [an, bn, kind, bn_size, n](Node& self) {
            const double* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                if (kind == EwKind::Mul) {
                    const double* bv2 = bn->value.data();
                    for (size_t i = 0; i < n; ++i) da[i] += g[i] * bv2[i % bn_size];
                } else {
                    for (size_t i = 0; i < n; ++i) da[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                const double* av2 = an->value.data();
                const double sign = kind == EwKind::Sub ? -1.0 : 1.0;
                for (size_t i = 0; i < n; ++i) {
                    if (kind == EwKind::Mul)
                        db[i % bn_size] += g[i] * av2[i];
                    else
                        db[i % bn_size] += sign * g[i];
                }
            }
        };
    }
    return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Mul); }

Tensor scale(const Tensor& a, double s) {
    auto node = new_op(a.shape(), {a.node()});
    const size_t n = node->value.size();
    for (size_t i = 0; i < n; ++i) node->value[i] = a.value()[i] * s;
    if (node->requires_grad) {
        auto an = a.node();
        node->backward = [an, s, n](Node& self) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * s;
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// layer norm over the last dim
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int D = x.shape().back();
    if (gain.shape() != std::vector<int>{D} || bias.shape() != std::vector<int>{D})
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(D) + "]");

    auto node = new_op(x.shape(), {x.node(), gain.node(), bias.node()});
    const size_t rows = x.size() / D;
    const double* xv = x.value().data();
    const double* gv = gain.value().data();
    const double* bv = bias.value().data();
    double* ov = node->value.data();

    // Cache per-row mean and inverse std for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(rows * 2);
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const double* row = xv + static_cast<size_t>(r) * D;
        double mean = 0.0;
        for (int i = 0; i < D; ++i) mean += row[i];
        mean /= D;
        double var = 0.0;
        for (int i = 0; i < D; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= D;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * r] = mean;
        (*stats)[2 * r + 1] = inv;
        double* orow = ov + static_cast<size_t>(r) * D;
        for (int i = 0; i < D; ++i) orow[i] = (row[i] - mean) * inv * gv[i] + bv[i];
    }

    if (node->requires_grad) {
        auto xn = x.node();
        auto gn = gain.node();
        auto bn = bias.node();
        node->backward = [xn, gn, bn, stats, rows, D](Node& self) {
            const double* g = self.grad.data();
            const double* xv2 = xn->value.data();
            const double* gv2 = gn->value.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                double* dx = xn->grad.data();
#pragma omp parallel for schedule(static)
                for (long long r = 0; r < static_cast<long long>(rows); ++r) {
                    const double mean = (*stats)[2 * r];
                    const double inv = (*stats)[2 * r + 1];
                    const double* row = xv2 + static_cast<size_t>(r) * D;
                    const double* grow = g + static_cast<size_t>(r) * D;
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int i = 0; i < D; ++i) {
                        const double gy = grow[i] * gv2[i];
                        sum_gy += gy;
                        sum_gyx += gy * (row[i] - mean) * inv;
                    }
                    double* dxrow = dx + static_cast<size_t>(r) * D;
                    for (int i = 0; i < D; ++i) {
                        const double xhat = (row[i] - mean) * inv;
                        const double gy = grow[i] * gv2[i];
                        dxrow[i] += inv * (gy - sum_gy / D - xhat * sum_gyx / D);
                    }
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                double* dg = gn->grad.data();
                for (size_t r = 0; r < rows; ++r) {
                    const double mean = (*stats)[2 * r];
                    const double inv = (*stats)[2 * r + 1];
                    const double* row = xv2 + r * D;
                    const double* grow = g + r * D;
                    for (int i = 0; i < D; ++i) dg[i] += grow[i] * (row[i] - mean) * inv;
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                for (size_t r = 0; r < rows; ++r)
                    for (int i = 0; i < D; ++i) db[i] += g[r * D + i];
            }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// softmax over the last dim
// ---------------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
    check_finite(x.value(), "softmax input");
    const int D = x.shape().back();
    auto node = new_op(x.shape(), {x.node()});
    const size_t rows = x.size() / D;
    const double* xv = x.value().data();
    double* ov = node->value.data();

#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const double* row = xv + static_cast<size_t>(r) * D;
        double* orow = ov + static_cast<size_t>(r) * D;
        double mx = row[0];
        for (int i = 1; i < D; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < D; ++i) {
            orow[i] = std::exp(row[i] - mx);
            sum += orow[i];
        }
        const double inv = 1.0 / sum;
        for (int i = 0; i < D; ++i) orow[i] *= inv;
    }

    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, rows, D](Node& self) {
            xn->ensure_grad();
            const double* y = self.value.data();
            const double* g = self.grad.data();
            double* dx = xn->grad.data();
#pragma omp parallel for schedule(static)
            for (long long r = 0; r < static_cast<long long>(rows); ++r) {
                const double* yrow = y + static_cast<size_t>(r) * D;
                const double* grow = g + static_cast<size_t>(r) * D;
                double dot = 0.0;
                for (int i = 0; i < D; ++i) dot += yrow[i] * grow[i];
                double* dxrow = dx + static_cast<size_t>(r) * D;
                for (int i = 0; i < D; ++i) dxrow[i] += yrow[i] * (grow[i] - dot);
            }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
    auto node = new_op(x.shape(), {x.node()});
    const size_t n = node->value.size();
    const double* xv = x.value().data();
    for (size_t i = 0; i < n; ++i)
        node->value[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, n](Node& self) {
            xn->ensure_grad();
            const double* xv2 = xn->value.data();
            for (size_t i = 0; i < n; ++i) {
                const double x = xv2[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                xn->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        };
    }
    return Tensor(node);
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ParameterError("dropout: p must lie in [0, 1)");
    if (p == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    const double keep_scale = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& m : *mask) m = uni(rng) < p ? 0.0 : keep_scale;

    auto node = new_op(x.shape(), {x.node()});
    const size_t n = node->value.size();
    for (size_t i = 0; i < n; ++i) node->value[i] = x.value()[i] * (*mask)[i];
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, mask, n](Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < n; ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: size mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
    auto node = new_op(shape, {x.node()});
    node->value = x.value();
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](Node& self) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        };
    }
    return Tensor(node);
}

Tensor permute_0213(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("permute_0213: tensor must be 4-D");
    const int A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
    auto node = new_op({A, C, B, D}, {x.node()});
    const double* xv = x.value().data();
    double* ov = node->value.data();
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double* src = xv + ((static_cast<size_t>(a) * B + b) * C + c) * D;
                double* dst = ov + ((static_cast<size_t>(a) * C + c) * B + b) * D;
                std::copy(src, src + D, dst);
            }
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, A, B, C, D](Node& self) {
            xn->ensure_grad();
            const double* g = self.grad.data();
            double* dx = xn->grad.data();
            for (int a = 0; a < A; ++a)
                for (int c = 0; c < C; ++c)
                    for (int b = 0; b < B; ++b) {
                        const double* src = g + ((static_cast<size_t>(a) * C + c) * B + b) * D;
                        double* dst = dx + ((static_cast<size_t>(a) * B + b) * C + c) * D;
                        for (int d = 0; d < D; ++d) dst[d] += src[d];
                    }
        };
    }
    return Tensor(node);
}

Tensor transpose_last2(const Tensor& x) {
    if (x.ndim() < 2) throw ShapeError("transpose_last2: tensor must be >= 2-D");
    const int M = x.shape()[x.ndim() - 2];
    const int N = x.shape().back();
    size_t batch = x.size() / (static_cast<size_t>(M) * N);
    std::vector<int> shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    auto node = new_op(shape, {x.node()});
    const double* xv = x.value().data();
    double* ov = node->value.data();
    for (size_t g = 0; g < batch; ++g)
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n)
                ov[(g * N + n) * M + m] = xv[(g * M + m) * N + n];
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, batch, M, N](Node& self) {
            xn->ensure_grad();
            const double* g = self.grad.data();
            double* dx = xn->grad.data();
            for (size_t gi = 0; gi < batch; ++gi)
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n)
                        dx[(gi * M + m) * N + n] += g[(gi * N + n) * M + m];
        };
    }
    return Tensor(node);
}

Tensor slice_lastdim(const Tensor& x, int start, int len) {
    const int D = x.shape().back();
    if (start < 0 || len <= 0 || start + len > D)
        throw ShapeError("slice_lastdim: range out of bounds");
    std::vector<int> shape = x.shape();
    shape.back() = len;
    auto node = new_op(shape, {x.node()});
    const size_t rows = x.size() / D;
    for (size_t r = 0; r < rows; ++r)
        for (int i = 0; i < len; ++i)
            node->value[r * len + i] = x.value()[r * D + start + i];
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, rows, D, start, len](Node& self) {
            xn->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (int i = 0; i < len; ++i)
                    xn->grad[r * D + start + i] += self.grad[r * len + i];
        };
    }
    return Tensor(node);
}

Tensor concat_lastdim(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_lastdim: empty list");
    std::vector<int> lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
    int total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Tensor& t : xs) {
        std::vector<int> l(t.shape().begin(), t.shape().end() - 1);
        if (l != lead) throw ShapeError("concat_lastdim: leading dims differ");
        total += t.shape().back();
        parents.push_back(t.node());
    }
    std::vector<int> shape = lead;
    shape.push_back(total);
    auto node = new_op(shape, parents);
    size_t rows = node->value.size() / total;
    int off = 0;
    for (const Tensor& t : xs) {
        const int d = t.shape().back();
        for (size_t r = 0; r < rows; ++r)
            for (int i = 0; i < d; ++i) node->value[r * total + off + i] = t.value()[r * d + i];
        off += d;
    }
    if (node->requires_grad) {
        std::vector<int> widths;
        for (const Tensor& t : xs) widths.push_back(t.shape().back());
        auto ps = node->parents;
        node->backward = [ps, widths, rows, total](Node& self) {
            int off2 = 0;
            for (size_t j = 0; j < ps.size(); ++j) {
                const int d = widths[j];
                if (ps[j]->requires_grad) {
                    ps[j]->ensure_grad();
                    for (size_t r = 0; r < rows; ++r)
                        for (int i = 0; i < d; ++i)
                            ps[j]->grad[r * d + i] += self.grad[r * total + off2 + i];
                }
                off2 += d;
            }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    auto node = new_op({1}, {x.node()});
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    node->value[0] = acc;
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn](Node& self) {
            xn->ensure_grad();
            const double g = self.grad[0];
            for (double& d : xn->grad) d += g;
        };
    }
    return Tensor(node);
}

Tensor mean_all(const Tensor& x) {
    auto node = new_op({1}, {x.node()});
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    node->value[0] = acc * inv;
    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, inv](Node& self) {
            xn->ensure_grad();
            const double g = self.grad[0] * inv;
            for (double& d : xn->grad) d += g;
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// rotary application
// ---------------------------------------------------------------------------

Tensor rotary(const Tensor& x, std::shared_ptr<const std::vector<double>> sin,
              std::shared_ptr<const std::vector<double>> cos) {
    if (x.ndim() != 4) throw ShapeError("rotary: tensor must be [B, H, N, D]");
    const int B = x.dim(0), H = x.dim(1), N = x.dim(2), D = x.dim(3);
    if (D % 2 != 0) throw ShapeError("rotary: head dim must be even");
    if (sin->size() != static_cast<size_t>(B) * N * D || cos->size() != sin->size())
        throw ShapeError("rotary: phase buffers must hold B*N*D values");

    auto node = new_op(x.shape(), {x.node()});
    const double* xv = x.value().data();
    double* ov = node->value.data();
    const double* sv = sin->data();
    const double* cv = cos->data();
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
            for (int n = 0; n < N; ++n) {
                const double* xr = xv + ((static_cast<size_t>(b) * H + h) * N + n) * D;
                double* orow = ov + ((static_cast<size_t>(b) * H + h) * N + n) * D;
                const double* srow = sv + (static_cast<size_t>(b) * N + n) * D;
                const double* crow = cv + (static_cast<size_t>(b) * N + n) * D;
                for (int d = 0; d < D; d += 2) {
                    const double a = xr[d], bb = xr[d + 1];
                    orow[d] = a * crow[d] - bb * srow[d];
                    orow[d + 1] = bb * crow[d + 1] + a * srow[d + 1];
                }
            }

    if (node->requires_grad) {
        auto xn = x.node();
        node->backward = [xn, sin, cos, B, H, N, D](Node& self) {
            xn->ensure_grad();
            const double* g = self.grad.data();
            double* dx = xn->grad.data();
            const double* sv2 = sin->data();
            const double* cv2 = cos->data();
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < H; ++h)
                    for (int n = 0; n < N; ++n) {
                        const double* grow = g + ((static_cast<size_t>(b) * H + h) * N + n) * D;
                        double* dxr = dx + ((static_cast<size_t>(b) * H + h) * N + n) * D;
                        const double* srow = sv2 + (static_cast<size_t>(b) * N + n) * D;
                        const double* crow = cv2 + (static_cast<size_t>(b) * N + n) * D;
                        for (int d = 0; d < D; d += 2) {
                            // transpose of the 2x2 rotation block
                            dxr[d] += grow[d] * crow[d] + grow[d + 1] * srow[d + 1];
                            dxr[d + 1] += -grow[d] * srow[d] + grow[d + 1] * crow[d + 1];
                        }
                    }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor mae_loss(const Tensor& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw ShapeError("mae_loss: size mismatch");
    auto node = new_op({1}, {pred.node()});
    const size_t n = pred.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target[i]);
    node->value[0] = acc / static_cast<double>(n);
    if (node->requires_grad) {
        auto pn = pred.node();
        auto tgt = std::make_shared<std::vector<double>>(target);
        node->backward = [pn, tgt, n](Node& self) {
            pn->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                const double e = pn->value[i] - (*tgt)[i];
                pn->grad[i] += g * (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0));
            }
        };
    }
    return Tensor(node);
}

Tensor pinball_loss(const Tensor& pred, const std::vector<double>& target, double alpha) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw ParameterError("pinball_loss: alpha must lie in (0, 1)");
    if (pred.size() != target.size()) throw ShapeError("pinball_loss: size mismatch");
    auto node = new_op({1}, {pred.node()});
    const size_t n = pred.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double e = pred.value()[i] - target[i];
        acc += std::max(alpha * e, (alpha - 1.0) * e);
    }
    node->value[0] = acc / static_cast<double>(n);
    if (node->requires_grad) {
        auto pn = pred.node();
        auto tgt = std::make_shared<std::vector<double>>(target);
        node->backward = [pn, tgt, n, alpha](Node& self) {
            pn->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                const double e = pn->value[i] - (*tgt)[i];
                pn->grad[i] += g * (e > 0 ? alpha : (e < 0 ? alpha - 1.0 : 0.0));
            }
        };
    }
    return Tensor(node);
}

}  // namespace heliocast::nnet
