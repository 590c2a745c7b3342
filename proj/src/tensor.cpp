#include "sarmatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace sarmatch {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
static void set_grad_enabled(bool v) { g_grad_enabled = v; }

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::grad_enabled()) {
    detail::set_grad_enabled(false);
}

NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(prev_); }

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

bool any_requires(std::initializer_list<const Tensor*> ts) {
    if (!detail::grad_enabled()) return false;
    for (const Tensor* t : ts)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Creates the output node; records parents + backward only when the tape is
// active for these inputs.
Tensor make_op(Shape shape, std::vector<float> value, const char* op,
               std::initializer_list<const Tensor*> inputs,
               std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    if (any_requires(inputs) && backward) {
        n->requires_grad = true;
        for (const Tensor* t : inputs) n->parents.push_back(t->node());
        n->backward = std::move(backward);
    }
    return Tensor(n);
}

void accum(Node& parent, const float* g, int64_t n) {
    if (!parent.requires_grad && parent.is_leaf()) return;
    parent.ensure_grad();
    float* dst = parent.grad.data();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

// --- Tensor methods -------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<float>(n, 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<float>(n, v), requires_grad));
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_vector: " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
    return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor(make_leaf({1}, {v}, requires_grad));
}

const Shape& Tensor::shape() const { return n_->shape; }
int Tensor::rank() const { return static_cast<int>(n_->shape.size()); }
int Tensor::dim(int i) const { return n_->shape.at(i); }
int64_t Tensor::numel() const { return static_cast<int64_t>(n_->value.size()); }

std::span<const float> Tensor::data() const { return {n_->value.data(), n_->value.size()}; }
std::span<float> Tensor::raw_data() { return {n_->value.data(), n_->value.size()}; }

bool Tensor::requires_grad() const { return n_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { n_->requires_grad = rg; }
bool Tensor::has_grad() const { return !n_->grad.empty(); }

std::span<const float> Tensor::grad() const { return {n_->grad.data(), n_->grad.size()}; }
std::span<float> Tensor::raw_grad() {
    n_->ensure_grad();
    return {n_->grad.data(), n_->grad.size()};
}

void Tensor::zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw ArgumentError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
}

float Tensor::at(int64_t i) const { return n_->value.at(static_cast<size_t>(i)); }

int64_t Tensor::argmax() const {
    return static_cast<int64_t>(
        std::max_element(n_->value.begin(), n_->value.end()) - n_->value.begin());
}

Tensor Tensor::detach() const {
    return Tensor(make_leaf(n_->shape, n_->value, false));
}

void Tensor::backward() const {
    if (numel() != 1) throw ArgumentError("backward(): loss must be a single element");
    if (!n_->requires_grad) return;

    // topological order (post-order DFS, iterative)
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // interior grads are per-call scratch; leaf grads persist and accumulate
    for (Node* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0f);
        else node->ensure_grad();
    }
    n_->grad[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) node->backward(*node);
    }
}

// --- elementwise ----------------------------------------------------------

namespace {

enum class BCast { Same, AScalar, BScalar };

BCast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return BCast::Same;
    if (a.numel() == 1) return BCast::AScalar;
    if (b.numel() == 1) return BCast::BScalar;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BCast k = bcast_kind(a, b, "add");
    const auto av = a.data();
    const auto bv = b.data();
    Shape out_shape = (k == BCast::AScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(out_shape);
    std::vector<float> out(n);
    for (int64_t i = 0; i < n; ++i) {
        float x = (k == BCast::AScalar) ? av[0] : av[i];
        float y = (k == BCast::BScalar) ? bv[0] : bv[i];
        out[i] = x + y;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(out_shape, std::move(out), "add", {&a, &b}, [an, bn, k, n](Node& self) {
        const float* g = self.grad.data();
        if (k == BCast::AScalar) {
            if (an->requires_grad || !an->is_leaf()) {
                an->ensure_grad();
                double s = 0;
                for (int64_t i = 0; i < n; ++i) s += g[i];
                an->grad[0] += static_cast<float>(s);
            }
        } else {
            accum(*an, g, n);
        }
        if (k == BCast::BScalar) {
            if (bn->requires_grad || !bn->is_leaf()) {
                bn->ensure_grad();
                double s = 0;
                for (int64_t i = 0; i < n; ++i) s += g[i];
                bn->grad[0] += static_cast<float>(s);
            }
        } else {
            accum(*bn, g, n);
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    BCast k = bcast_kind(a, b, "mul");
    const auto av = a.data();
    const auto bv = b.data();
    Shape out_shape = (k == BCast::AScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(out_shape);
    std::vector<float> out(n);
    for (int64_t i = 0; i < n; ++i) {
        float x = (k == BCast::AScalar) ? av[0] : av[i];
        float y = (k == BCast::BScalar) ? bv[0] : bv[i];
        out[i] = x * y;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(out_shape, std::move(out), "mul", {&a, &b}, [an, bn, k, n](Node& self) {
        const float* g = self.grad.data();
        const float* xa = an->value.data();
        const float* xb = bn->value.data();
        if (an->requires_grad || !an->is_leaf()) {
            an->ensure_grad();
            if (k == BCast::AScalar) {
                double s = 0;
                for (int64_t i = 0; i < n; ++i) s += static_cast<double>(g[i]) * xb[i];
                an->grad[0] += static_cast<float>(s);
            } else if (k == BCast::BScalar) {
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * xb[0];
            } else {
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * xb[i];
            }
        }
        if (bn->requires_grad || !bn->is_leaf()) {
            bn->ensure_grad();
            if (k == BCast::BScalar) {
                double s = 0;
                for (int64_t i = 0; i < n; ++i) s += static_cast<double>(g[i]) * xa[i];
                bn->grad[0] += static_cast<float>(s);
            } else if (k == BCast::AScalar) {
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i] * xa[0];
            } else {
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i] * xa[i];
            }
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    BCast k = bcast_kind(a, b, "div");
    const auto av = a.data();
    const auto bv = b.data();
    Shape out_shape = (k == BCast::AScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(out_shape);
    std::vector<float> out(n);
    for (int64_t i = 0; i < n; ++i) {
        float x = (k == BCast::AScalar) ? av[0] : av[i];
        float y = (k == BCast::BScalar) ? bv[0] : bv[i];
        out[i] = x / y;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(out_shape, std::move(out), "div", {&a, &b}, [an, bn, k, n](Node& self) {
        const float* g = self.grad.data();
        const float* xa = an->value.data();
        const float* xb = bn->value.data();
        auto aval = [&](int64_t i) { return (k == BCast::AScalar) ? xa[0] : xa[i]; };
        auto bval = [&](int64_t i) { return (k == BCast::BScalar) ? xb[0] : xb[i]; };
        if (an->requires_grad || !an->is_leaf()) {
            an->ensure_grad();
            if (k == BCast::AScalar) {
                double s = 0;
                for (int64_t i = 0; i < n; ++i) s += static_cast<double>(g[i]) / bval(i);
                an->grad[0] += static_cast<float>(s);
            } else {
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] / bval(i);
            }
        }
        if (bn->requires_grad || !bn->is_leaf()) {
            bn->ensure_grad();
            if (k == BCast::BScalar) {
                double s = 0;
                for (int64_t i = 0; i < n; ++i)
                    s -= static_cast<double>(g[i]) * aval(i) / (bval(i) * bval(i));
                bn->grad[0] += static_cast<float>(s);
            } else {
                for (int64_t i = 0; i < n; ++i)
                    bn->grad[i] -= g[i] * aval(i) / (xb[i] * xb[i]);
            }
        }
    });
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dfd) {
    const auto av = a.data();
    int64_t n = a.numel();
    std::vector<float> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), name, {&a}, [an, n, dfd](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float* g = self.grad.data();
        const float* x = an->value.data();
        const float* y = self.value.data();
        for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * dfd(x[i], y[i]);
    });
}

}  // namespace

Tensor scale(const Tensor& a, float c) {
    return unary_op(a, "scale", [c](float x) { return x * c; },
                    [c](float, float) { return c; });
}

Tensor add_scalar(const Tensor& a, float c) {
    return unary_op(a, "add_scalar", [c](float x) { return x + c; },
                    [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& a) {
    return unary_op(a, "neg", [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Tensor elu(const Tensor& a) {
    return unary_op(a, "elu",
                    [](float x) { return x > 0.0f ? x : std::expm1(x); },
                    [](float x, float y) { return x > 0.0f ? 1.0f : y + 1.0f; });
}

Tensor exp_t(const Tensor& a) {
    return unary_op(a, "exp", [](float x) { return std::exp(x); },
                    [](float, float y) { return y; });
}

Tensor log_t(const Tensor& a) {
    return unary_op(a, "log", [](float x) { return std::log(x); },
                    [](float x, float) { return 1.0f / x; });
}

Tensor sqrt_t(const Tensor& a) {
    return unary_op(a, "sqrt", [](float x) { return std::sqrt(x); },
                    [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

Tensor clamp_min(const Tensor& a, float lo) {
    return unary_op(a, "clamp_min", [lo](float x) { return x < lo ? lo : x; },
                    [lo](float x, float) { return x < lo ? 0.0f : 1.0f; });
}

// --- linear algebra / structure -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects 2-D, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
    if (K != K2)
        throw ShapeError("matmul: inner dims differ, axis 1 of " + shape_str(a.shape()) +
                         " vs axis 0 of " + shape_str(b.shape()));
    const float* A = a.data().data();
    const float* B = b.data().data();
    std::vector<float> out(static_cast<size_t>(M) * N, 0.0f);
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > 65536)
    for (int i = 0; i < M; ++i) {
        float* crow = out.data() + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const float av = A[static_cast<size_t>(i) * K + k];
            const float* brow = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op({M, N}, std::move(out), "matmul", {&a, &b}, [an, bn, M, K, N](Node& self) {
        const float* G = self.grad.data();
        if (an->requires_grad || !an->is_leaf()) {
            an->ensure_grad();
            const float* B = bn->value.data();
            float* GA = an->grad.data();
            // dA = G * B^T, contiguous dot over j
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > 65536)
            for (int i = 0; i < M; ++i) {
                const float* grow = G + static_cast<size_t>(i) * N;
                for (int k = 0; k < K; ++k) {
                    const float* brow = B + static_cast<size_t>(k) * N;
                    float acc = 0.0f;
                    for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                    GA[static_cast<size_t>(i) * K + k] += acc;
                }
            }
        }
        if (bn->requires_grad || !bn->is_leaf()) {
            bn->ensure_grad();
            const float* A = an->value.data();
            float* GB = bn->grad.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(M) * N * K > 65536)
            for (int k = 0; k < K; ++k)
                for (int i = 0; i < M; ++i) {
                    const float av = A[static_cast<size_t>(i) * K + k];
                    const float* grow = G + static_cast<size_t>(i) * N;
                    float* gbrow = GB + static_cast<size_t>(k) * N;
                    for (int j = 0; j < N; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
}

Tensor mul_rows(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(0))
        throw ShapeError("mul_rows: " + shape_str(a.shape()) + " * " + shape_str(v.shape()));
    const int M = a.dim(0), N = a.dim(1);
    const float* A = a.data().data();
    const float* V = v.data().data();
    std::vector<float> out(static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out[static_cast<size_t>(i) * N + j] = A[static_cast<size_t>(i) * N + j] * V[i];
    auto an = a.node();
    auto vn = v.node();
    return make_op({M, N}, std::move(out), "mul_rows", {&a, &v}, [an, vn, M, N](Node& self) {
        const float* G = self.grad.data();
        const float* A = an->value.data();
        const float* V = vn->value.data();
        if (an->requires_grad || !an->is_leaf()) {
            an->ensure_grad();
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j)
                    an->grad[static_cast<size_t>(i) * N + j] += G[static_cast<size_t>(i) * N + j] * V[i];
        }
        if (vn->requires_grad || !vn->is_leaf()) {
            vn->ensure_grad();
            for (int i = 0; i < M; ++i) {
                double s = 0;
                for (int j = 0; j < N; ++j)
                    s += static_cast<double>(G[static_cast<size_t>(i) * N + j]) *
                         A[static_cast<size_t>(i) * N + j];
                vn->grad[i] += static_cast<float>(s);
            }
        }
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.dim(0) != a.dim(1))
        throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
    const int M = a.dim(0), N = a.dim(1);
    const float* A = a.data().data();
    const float* V = v.data().data();
    std::vector<float> out(static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out[static_cast<size_t>(i) * N + j] = A[static_cast<size_t>(i) * N + j] + V[j];
    auto an = a.node();
    auto vn = v.node();
    return make_op({M, N}, std::move(out), "add_rowvec", {&a, &v}, [an, vn, M, N](Node& self) {
        const float* G = self.grad.data();
        if (an->requires_grad || !an->is_leaf()) accum(*an, G, static_cast<int64_t>(M) * N);
        if (vn->requires_grad || !vn->is_leaf()) {
            vn->ensure_grad();
            for (int j = 0; j < N; ++j) {
                double s = 0;
                for (int i = 0; i < M; ++i) s += G[static_cast<size_t>(i) * N + j];
                vn->grad[j] += static_cast<float>(s);
            }
        }
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d: expects 2-D, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    const float* A = a.data().data();
    std::vector<float> out(static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out[static_cast<size_t>(j) * M + i] = A[static_cast<size_t>(i) * N + j];
    auto an = a.node();
    return make_op({N, M}, std::move(out), "transpose", {&a}, [an, M, N](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float* G = self.grad.data();
        for (int j = 0; j < N; ++j)
            for (int i = 0; i < M; ++i)
                an->grad[static_cast<size_t>(i) * N + j] += G[static_cast<size_t>(j) * M + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<float> out(a.data().begin(), a.data().end());
    auto an = a.node();
    int64_t n = a.numel();
    return make_op(std::move(shape), std::move(out), "reshape", {&a}, [an, n](Node& self) {
        accum(*an, self.grad.data(), n);
    });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (a.rank() != 2) throw ShapeError("slice_cols: expects 2-D, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    if (c0 < 0 || c1 > N || c0 >= c1)
        throw ArgumentError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                            ") for " + std::to_string(N) + " cols");
    const int W = c1 - c0;
    const float* A = a.data().data();
    std::vector<float> out(static_cast<size_t>(M) * W);
    for (int i = 0; i < M; ++i)
        std::memcpy(out.data() + static_cast<size_t>(i) * W, A + static_cast<size_t>(i) * N + c0,
                    sizeof(float) * W);
    auto an = a.node();
    return make_op({M, W}, std::move(out), "slice_cols", {&a}, [an, M, N, W, c0](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float* G = self.grad.data();
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < W; ++j)
                an->grad[static_cast<size_t>(i) * N + c0 + j] += G[static_cast<size_t>(i) * W + j];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
    const int M = parts[0].dim(0);
    int N = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != M)
            throw ShapeError("concat_cols: row mismatch at " + shape_str(p.shape()));
        N += p.dim(1);
    }
    std::vector<float> out(static_cast<size_t>(M) * N);
    int off = 0;
    for (const auto& p : parts) {
        const int W = p.dim(1);
        const float* P = p.data().data();
        for (int i = 0; i < M; ++i)
            std::memcpy(out.data() + static_cast<size_t>(i) * N + off,
                        P + static_cast<size_t>(i) * W, sizeof(float) * W);
        off += W;
    }

    // build op with dynamic parent list
    auto n = std::make_shared<Node>();
    n->shape = {M, N};
    n->value = std::move(out);
    n->op = "concat_cols";
    bool rec = detail::grad_enabled();
    bool any = false;
    if (rec)
        for (const auto& p : parts) any = any || p.requires_grad();
    if (rec && any) {
        n->requires_grad = true;
        std::vector<int> widths;
        for (const auto& p : parts) {
            n->parents.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        n->backward = [M, N, widths](Node& self) {
            const float* G = self.grad.data();
            int off = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                Node& par = *self.parents[pi];
                const int W = widths[pi];
                if (par.requires_grad || !par.is_leaf()) {
                    par.ensure_grad();
                    for (int i = 0; i < M; ++i)
                        for (int j = 0; j < W; ++j)
                            par.grad[static_cast<size_t>(i) * W + j] +=
                                G[static_cast<size_t>(i) * N + off + j];
                }
                off += W;
            }
        };
    }
    return Tensor(n);
}

Tensor pick(const Tensor& a, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= a.numel())
        throw ArgumentError("pick: index " + std::to_string(flat_index) + " out of range of " +
                            std::to_string(a.numel()));
    std::vector<float> out{a.at(flat_index)};
    auto an = a.node();
    return make_op({1}, std::move(out), "pick", {&a}, [an, flat_index](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        an->grad[static_cast<size_t>(flat_index)] += self.grad[0];
    });
}

Tensor sample_stride(const Tensor& a, int64_t max_n) {
    if (max_n < 1) throw ArgumentError("sample_stride: max_n must be >= 1");
    const int64_t n = a.numel();
    const int64_t step = (n + max_n - 1) / max_n;
    const int64_t m = (n + step - 1) / step;
    const auto av = a.data();
    std::vector<float> out(m);
    for (int64_t i = 0; i < m; ++i) out[i] = av[i * step];
    auto an = a.node();
    return make_op({static_cast<int>(m)}, std::move(out), "sample_stride", {&a},
                   [an, m, step](Node& self) {
                       if (!an->requires_grad && an->is_leaf()) return;
                       an->ensure_grad();
                       for (int64_t i = 0; i < m; ++i) an->grad[i * step] += self.grad[i];
                   });
}

// --- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    const auto av = a.data();
    double s = 0;
    for (float v : av) s += v;
    auto an = a.node();
    int64_t n = a.numel();
    return make_op({1}, {static_cast<float>(s)}, "sum", {&a}, [an, n](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float g = self.grad[0];
        for (int64_t i = 0; i < n; ++i) an->grad[i] += g;
    });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0f / static_cast<float>(a.numel())); }

Tensor variance_all(const Tensor& a) {
    Tensor m = mean_all(a);
    Tensor d = sub(a, m);
    return mean_all(mul(d, d));
}

Tensor sum_axis0(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("sum_axis0: expects 2-D, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    const float* A = a.data().data();
    std::vector<float> out(N, 0.0f);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out[j] += A[static_cast<size_t>(i) * N + j];
    auto an = a.node();
    return make_op({N}, std::move(out), "sum_axis0", {&a}, [an, M, N](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float* G = self.grad.data();
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) an->grad[static_cast<size_t>(i) * N + j] += G[j];
    });
}

Tensor sum_axis1(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("sum_axis1: expects 2-D, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    const float* A = a.data().data();
    std::vector<float> out(M, 0.0f);
    for (int i = 0; i < M; ++i) {
        double s = 0;
        for (int j = 0; j < N; ++j) s += A[static_cast<size_t>(i) * N + j];
        out[i] = static_cast<float>(s);
    }
    auto an = a.node();
    return make_op({M}, std::move(out), "sum_axis1", {&a}, [an, M, N](Node& self) {
        if (!an->requires_grad && an->is_leaf()) return;
        an->ensure_grad();
        const float* G = self.grad.data();
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) an->grad[static_cast<size_t>(i) * N + j] += G[i];
    });
}

// --- neural-net ops ---------------------------------------------------------

namespace {

void check_conv_args(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.rank() != 3)
        throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    if (kernel.rank() != 4)
        throw ShapeError("conv2d: kernel must be [Co,Ci,k,k], got " + shape_str(kernel.shape()));
    if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0)
        throw ArgumentError("conv2d: kernel must be square with odd size, got " +
                            shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(0))
        throw ShapeError("conv2d: kernel axis 1 (" + std::to_string(kernel.dim(1)) +
                         ") != input axis 0 (" + std::to_string(input.dim(0)) + ")");
    if (stride != 1 && stride != 2) throw ArgumentError("conv2d: stride must be 1 or 2");
    if (padding < 0) throw ArgumentError("conv2d: negative padding");
    const int k = kernel.dim(2);
    const int H = input.dim(1), W = input.dim(2);
    if ((H + 2 * padding - k) % stride != 0 || (W + 2 * padding - k) % stride != 0)
        throw ArgumentError("conv2d: output size not integral for H=" + std::to_string(H) +
                            " W=" + std::to_string(W) + " k=" + std::to_string(k) +
                            " stride=" + std::to_string(stride) + " pad=" + std::to_string(padding));
    if (H + 2 * padding < k || W + 2 * padding < k)
        throw ShapeError("conv2d: kernel larger than padded input on axis 1 or 2");
}

std::vector<float> pad_chw(const float* x, int C, int H, int W, int p) {
    const int Hp = H + 2 * p, Wp = W + 2 * p;
    std::vector<float> out(static_cast<size_t>(C) * Hp * Wp, 0.0f);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            std::memcpy(out.data() + (static_cast<size_t>(c) * Hp + y + p) * Wp + p,
                        x + (static_cast<size_t>(c) * H + y) * W, sizeof(float) * W);
    return out;
}

// stride-1 correlation on a pre-padded input; output rows accumulate in a
// local buffer so each input row is streamed once per (ci,ky)
void conv_stride1_core(const float* padded, int Ci, int Hp, int Wp, const float* kernel, int Co,
                       int k, int Ho, int Wo, float* out) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co) {
        float* oplane = out + static_cast<size_t>(co) * Ho * Wo;
        std::vector<float> row(Wo);
        for (int y = 0; y < Ho; ++y) {
            std::fill(row.begin(), row.end(), 0.0f);
            for (int ci = 0; ci < Ci; ++ci) {
                const float* kw = kernel + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
                const float* in = padded + (static_cast<size_t>(ci) * Hp + y) * Wp;
                for (int ky = 0; ky < k; ++ky) {
                    const float* irow = in + static_cast<size_t>(ky) * Wp;
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = kw[ky * k + kx];
                        const float* src = irow + kx;
                        for (int x = 0; x < Wo; ++x) row[x] += wv * src[x];
                    }
                }
            }
            std::memcpy(oplane + static_cast<size_t>(y) * Wo, row.data(), sizeof(float) * Wo);
        }
    }
}

// kernel with swapped in/out channels and spatially flipped taps, so the
// input gradient is itself a stride-1 correlation
std::vector<float> flip_transpose_kernel(const float* kernel, int Co, int Ci, int k) {
    std::vector<float> out(static_cast<size_t>(Co) * Ci * k * k);
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                    out[((static_cast<size_t>(ci) * Co + co) * k + (k - 1 - ky)) * k +
                        (k - 1 - kx)] =
                        kernel[((static_cast<size_t>(co) * Ci + ci) * k + ky) * k + kx];
    return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    check_conv_args(input, kernel, stride, padding);
    const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Co = kernel.dim(0), k = kernel.dim(2);
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    const int Hp = H + 2 * padding, Wp = W + 2 * padding;

    std::vector<float> padded = pad_chw(input.data().data(), Ci, H, W, padding);
    const float* Kd = kernel.data().data();
    std::vector<float> out(static_cast<size_t>(Co) * Ho * Wo, 0.0f);

    if (stride == 1) {
        conv_stride1_core(padded.data(), Ci, Hp, Wp, Kd, Co, k, Ho, Wo, out.data());
    } else {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Co; ++co) {
            float* o = out.data() + static_cast<size_t>(co) * Ho * Wo;
            for (int ci = 0; ci < Ci; ++ci) {
                const float* in = padded.data() + static_cast<size_t>(ci) * Hp * Wp;
                const float* kw = Kd + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = kw[ky * k + kx];
                        for (int y = 0; y < Ho; ++y) {
                            const float* row = in + (y * stride + ky) * Wp + kx;
                            float* orow = o + y * Wo;
                            for (int x = 0; x < Wo; ++x) orow[x] += wv * row[x * stride];
                        }
                    }
            }
        }
    }

    auto in_node = input.node();
    auto k_node = kernel.node();
    auto shared_pad = std::make_shared<std::vector<float>>(std::move(padded));
    return make_op(
        {Co, Ho, Wo}, std::move(out), "conv2d", {&input, &kernel},
        [in_node, k_node, shared_pad, Ci, H, W, Co, k, Ho, Wo, Hp, Wp, stride,
         padding](Node& self) {
            const float* G = self.grad.data();
            const float* Kd = k_node->value.data();
            if (in_node->requires_grad || !in_node->is_leaf()) {
                in_node->ensure_grad();
                if (stride == 1 && padding <= k - 1) {
                    // input gradient == correlation of the padded upstream
                    // gradient with the flipped, channel-swapped kernel
                    const int q = k - 1 - padding;
                    std::vector<float> kflip = flip_transpose_kernel(Kd, Co, Ci, k);
                    std::vector<float> gpad = pad_chw(G, Co, Ho, Wo, q);
                    std::vector<float> gin(static_cast<size_t>(Ci) * H * W);
                    conv_stride1_core(gpad.data(), Co, Ho + 2 * q, Wo + 2 * q, kflip.data(), Ci,
                                      k, H, W, gin.data());
                    float* dst = in_node->grad.data();
                    for (int64_t i = 0; i < static_cast<int64_t>(Ci) * H * W; ++i)
                        dst[i] += gin[i];
                } else {
                    std::vector<float> gpad(static_cast<size_t>(Ci) * Hp * Wp, 0.0f);
#pragma omp parallel for schedule(static)
                    for (int ci = 0; ci < Ci; ++ci) {
                        float* gp = gpad.data() + static_cast<size_t>(ci) * Hp * Wp;
                        for (int co = 0; co < Co; ++co) {
                            const float* g = G + static_cast<size_t>(co) * Ho * Wo;
                            const float* kw = Kd + ((static_cast<size_t>(co) * Ci + ci) * k) * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const float wv = kw[ky * k + kx];
                                    for (int y = 0; y < Ho; ++y) {
                                        float* grow = gp + (y * stride + ky) * Wp + kx;
                                        const float* gout = g + y * Wo;
                                        for (int x = 0; x < Wo; ++x)
                                            grow[x * stride] += wv * gout[x];
                                    }
                                }
                        }
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x)
                                in_node->grad[(static_cast<size_t>(ci) * H + y) * W + x] +=
                                    gp[(y + padding) * Wp + x + padding];
                    }
                }
            }
            if (k_node->requires_grad || !k_node->is_leaf()) {
                k_node->ensure_grad();
                const float* pad = shared_pad->data();
#pragma omp parallel for schedule(static)
                for (int co = 0; co < Co; ++co) {
                    const float* g = G + static_cast<size_t>(co) * Ho * Wo;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const float* in = pad + static_cast<size_t>(ci) * Hp * Wp;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                double s = 0;
                                for (int y = 0; y < Ho; ++y) {
                                    const float* row = in + (y * stride + ky) * Wp + kx;
                                    const float* gout = g + y * Wo;
                                    if (stride == 1) {
                                        float acc = 0.0f;
                                        for (int x = 0; x < Wo; ++x) acc += row[x] * gout[x];
                                        s += acc;
                                    } else {
                                        float acc = 0.0f;
                                        for (int x = 0; x < Wo; ++x) acc += row[x * stride] * gout[x];
                                        s += acc;
                                    }
                                }
                                k_node->grad[((static_cast<size_t>(co) * Ci + ci) * k + ky) * k + kx] +=
                                    static_cast<float>(s);
                            }
                    }
                }
            }
        });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 3 || bias.rank() != 1 || bias.dim(0) != x.dim(0))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
    const float* X = x.data().data();
    const float* B = bias.data().data();
    std::vector<float> out(static_cast<size_t>(C) * HW);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i) out[static_cast<size_t>(c) * HW + i] = X[static_cast<size_t>(c) * HW + i] + B[c];
    auto xn = x.node();
    auto bn = bias.node();
    return make_op(x.shape(), std::move(out), "add_channel_bias", {&x, &bias},
                   [xn, bn, C, HW](Node& self) {
                       const float* G = self.grad.data();
                       if (xn->requires_grad || !xn->is_leaf()) accum(*xn, G, static_cast<int64_t>(C) * HW);
                       if (bn->requires_grad || !bn->is_leaf()) {
                           bn->ensure_grad();
                           for (int c = 0; c < C; ++c) {
                               double s = 0;
                               for (int i = 0; i < HW; ++i) s += G[static_cast<size_t>(c) * HW + i];
                               bn->grad[c] += static_cast<float>(s);
                           }
                       }
                   });
}

Tensor mul_channel(const Tensor& x, const Tensor& s) {
    if (x.rank() != 3 || s.rank() != 1 || s.dim(0) != x.dim(0))
        throw ShapeError("mul_channel: " + shape_str(x.shape()) + " * " + shape_str(s.shape()));
    const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
    const float* X = x.data().data();
    const float* S = s.data().data();
    std::vector<float> out(static_cast<size_t>(C) * HW);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i) out[static_cast<size_t>(c) * HW + i] = X[static_cast<size_t>(c) * HW + i] * S[c];
    auto xn = x.node();
    auto sn = s.node();
    return make_op(x.shape(), std::move(out), "mul_channel", {&x, &s},
                   [xn, sn, C, HW](Node& self) {
                       const float* G = self.grad.data();
                       const float* X = xn->value.data();
                       const float* S = sn->value.data();
                       if (xn->requires_grad || !xn->is_leaf()) {
                           xn->ensure_grad();
                           for (int c = 0; c < C; ++c)
                               for (int i = 0; i < HW; ++i)
                                   xn->grad[static_cast<size_t>(c) * HW + i] += G[static_cast<size_t>(c) * HW + i] * S[c];
                       }
                       if (sn->requires_grad || !sn->is_leaf()) {
                           sn->ensure_grad();
                           for (int c = 0; c < C; ++c) {
                               double acc = 0;
                               for (int i = 0; i < HW; ++i)
                                   acc += static_cast<double>(G[static_cast<size_t>(c) * HW + i]) *
                                          X[static_cast<size_t>(c) * HW + i];
                               sn->grad[c] += static_cast<float>(acc);
                           }
                       }
                   });
}

Tensor channel_affine_elu(const Tensor& x, const Tensor& s, const Tensor& b) {
    if (x.rank() != 3 || s.rank() != 1 || b.rank() != 1 || s.dim(0) != x.dim(0) ||
        b.dim(0) != x.dim(0))
        throw ShapeError("channel_affine_elu: " + shape_str(x.shape()) + " with " +
                         shape_str(s.shape()) + ", " + shape_str(b.shape()));
    const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
    const float* X = x.data().data();
    const float* S = s.data().data();
    const float* B = b.data().data();
    std::vector<float> out(static_cast<size_t>(C) * HW);
    for (int c = 0; c < C; ++c) {
        const float sc = S[c], bc = B[c];
        const float* xi = X + static_cast<size_t>(c) * HW;
        float* oi = out.data() + static_cast<size_t>(c) * HW;
        for (int i = 0; i < HW; ++i) {
            const float z = xi[i] * sc + bc;
            oi[i] = z > 0.0f ? z : std::expm1(z);
        }
    }
    auto xn = x.node();
    auto sn = s.node();
    auto bn = b.node();
    return make_op(x.shape(), std::move(out), "channel_affine_elu", {&x, &s, &b},
                   [xn, sn, bn, C, HW](Node& self) {
                       const float* G = self.grad.data();
                       const float* Y = self.value.data();
                       const float* X = xn->value.data();
                       const float* S = sn->value.data();
                       const bool wx = xn->requires_grad || !xn->is_leaf();
                       const bool ws = sn->requires_grad || !sn->is_leaf();
                       const bool wb = bn->requires_grad || !bn->is_leaf();
                       if (wx) xn->ensure_grad();
                       if (ws) sn->ensure_grad();
                       if (wb) bn->ensure_grad();
                       for (int c = 0; c < C; ++c) {
                           const float sc = S[c];
                           const float* g = G + static_cast<size_t>(c) * HW;
                           const float* y = Y + static_cast<size_t>(c) * HW;
                           const float* xi = X + static_cast<size_t>(c) * HW;
                           float* gx = wx ? xn->grad.data() + static_cast<size_t>(c) * HW : nullptr;
                           double gs = 0, gb = 0;
                           for (int i = 0; i < HW; ++i) {
                               // elu'(z): 1 for z>0, elu(z)+1 otherwise; y>0 iff z>0
                               const float d = y[i] > 0.0f ? 1.0f : y[i] + 1.0f;
                               const float gz = g[i] * d;
                               if (gx) gx[i] += gz * sc;
                               gs += static_cast<double>(gz) * xi[i];
                               gb += gz;
                           }
                           if (ws) sn->grad[c] += static_cast<float>(gs);
                           if (wb) bn->grad[c] += static_cast<float>(gb);
                       }
                   });
}

namespace {

struct ResizePlan {
    std::vector<int> i0, i1;
    std::vector<float> w1;  // weight of the i1 sample; w0 = 1 - w1
};

ResizePlan make_axis_plan(int in_n, int out_n, bool align_corners) {
    ResizePlan p;
    p.i0.resize(out_n);
    p.i1.resize(out_n);
    p.w1.resize(out_n);
    for (int o = 0; o < out_n; ++o) {
        double src;
        if (align_corners) {
            src = (out_n == 1) ? 0.0
                               : static_cast<double>(o) * (in_n - 1) / (out_n - 1);
        } else {
            src = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
        }
        if (src < 0) src = 0;
        if (src > in_n - 1) src = in_n - 1;
        int lo = static_cast<int>(std::floor(src));
        int hi = std::min(lo + 1, in_n - 1);
        p.i0[o] = lo;
        p.i1[o] = hi;
        p.w1[o] = static_cast<float>(src - lo);
    }
    return p;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners) {
    if (out_h < 1 || out_w < 1) throw ArgumentError("bilinear_resize: non-positive output dims");
    const bool rank2 = x.rank() == 2;
    if (!rank2 && x.rank() != 3)
        throw ShapeError("bilinear_resize: expects [H,W] or [C,H,W], got " + shape_str(x.shape()));
    const int C = rank2 ? 1 : x.dim(0);
    const int H = rank2 ? x.dim(0) : x.dim(1);
    const int W = rank2 ? x.dim(1) : x.dim(2);

    ResizePlan py = make_axis_plan(H, out_h, align_corners);
    ResizePlan px = make_axis_plan(W, out_w, align_corners);

    const float* X = x.data().data();
    std::vector<float> out(static_cast<size_t>(C) * out_h * out_w);
    for (int c = 0; c < C; ++c) {
        const float* plane = X + static_cast<size_t>(c) * H * W;
        float* o = out.data() + static_cast<size_t>(c) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const int y0 = py.i0[y], y1 = py.i1[y];
            const float fy = py.w1[y];
            for (int xx = 0; xx < out_w; ++xx) {
                const int x0 = px.i0[xx], x1 = px.i1[xx];
                const float fx = px.w1[xx];
                const float v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
                const float v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
                o[y * out_w + xx] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                    fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    Shape out_shape = rank2 ? Shape{out_h, out_w} : Shape{C, out_h, out_w};
    auto xn = x.node();
    auto spy = std::make_shared<ResizePlan>(std::move(py));
    auto spx = std::make_shared<ResizePlan>(std::move(px));
    return make_op(std::move(out_shape), std::move(out), "bilinear_resize", {&x},
                   [xn, spy, spx, C, H, W, out_h, out_w](Node& self) {
                       if (!xn->requires_grad && xn->is_leaf()) return;
                       xn->ensure_grad();
                       const float* G = self.grad.data();
                       for (int c = 0; c < C; ++c) {
                           float* gx = xn->grad.data() + static_cast<size_t>(c) * H * W;
                           const float* g = G + static_cast<size_t>(c) * out_h * out_w;
                           for (int y = 0; y < out_h; ++y) {
                               const int y0 = spy->i0[y], y1 = spy->i1[y];
                               const float fy = spy->w1[y];
                               for (int xx = 0; xx < out_w; ++xx) {
                                   const int x0 = spx->i0[xx], x1 = spx->i1[xx];
                                   const float fx = spx->w1[xx];
                                   const float gv = g[y * out_w + xx];
                                   gx[y0 * W + x0] += gv * (1 - fy) * (1 - fx);
                                   gx[y0 * W + x1] += gv * (1 - fy) * fx;
                                   gx[y1 * W + x0] += gv * fy * (1 - fx);
                                   gx[y1 * W + x1] += gv * fy * fx;
                               }
                           }
                       }
                   });
}

Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("avg_pool2: expects [C,H,W], got " + shape_str(x.shape()));
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % 2 || W % 2)
        throw ArgumentError("avg_pool2: dims must be even, got H=" + std::to_string(H) +
                            " W=" + std::to_string(W));
    const int Ho = H / 2, Wo = W / 2;
    const float* X = x.data().data();
    std::vector<float> out(static_cast<size_t>(C) * Ho * Wo);
    for (int c = 0; c < C; ++c) {
        const float* p = X + static_cast<size_t>(c) * H * W;
        float* o = out.data() + static_cast<size_t>(c) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
                o[y * Wo + xx] = 0.25f * (p[(2 * y) * W + 2 * xx] + p[(2 * y) * W + 2 * xx + 1] +
                                          p[(2 * y + 1) * W + 2 * xx] + p[(2 * y + 1) * W + 2 * xx + 1]);
    }
    auto xn = x.node();
    return make_op({C, Ho, Wo}, std::move(out), "avg_pool2", {&x}, [xn, C, H, W, Ho, Wo](Node& self) {
        if (!xn->requires_grad && xn->is_leaf()) return;
        xn->ensure_grad();
        const float* G = self.grad.data();
        for (int c = 0; c < C; ++c) {
            float* gx = xn->grad.data() + static_cast<size_t>(c) * H * W;
            const float* g = G + static_cast<size_t>(c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx) {
                    const float gv = 0.25f * g[y * Wo + xx];
                    gx[(2 * y) * W + 2 * xx] += gv;
                    gx[(2 * y) * W + 2 * xx + 1] += gv;
                    gx[(2 * y + 1) * W + 2 * xx] += gv;
                    gx[(2 * y + 1) * W + 2 * xx + 1] += gv;
                }
        }
    });
}

Tensor softmax_flat(const Tensor& logits, float temperature) {
    if (!(temperature > 0.0f)) throw ArgumentError("softmax_flat: temperature must be > 0");
    const auto xv = logits.data();
    const int64_t n = logits.numel();
    float mx = xv[0];
    for (float v : xv) mx = std::max(mx, v);
    std::vector<float> out(n);
    double denom = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = std::exp((xv[i] - mx) / temperature);
        denom += out[i];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (auto& v : out) v *= inv;
    auto xn = logits.node();
    return make_op(logits.shape(), std::move(out), "softmax_flat", {&logits},
                   [xn, n, temperature](Node& self) {
                       if (!xn->requires_grad && xn->is_leaf()) return;
                       xn->ensure_grad();
                       const float* g = self.grad.data();
                       const float* y = self.value.data();
                       double dot = 0;
                       for (int64_t i = 0; i < n; ++i) dot += static_cast<double>(g[i]) * y[i];
                       const float inv_t = 1.0f / temperature;
                       for (int64_t i = 0; i < n; ++i)
                           xn->grad[i] += (g[i] - static_cast<float>(dot)) * y[i] * inv_t;
                   });
}

// --- histogram / loss primitives -------------------------------------------

Tensor soft_bin_assign(const Tensor& x, int bins, float sigma) {
    if (x.rank() != 1) throw ShapeError("soft_bin_assign: expects 1-D, got " + shape_str(x.shape()));
    if (bins < 2) throw ArgumentError("soft_bin_assign: bins must be >= 2");
    if (!(sigma > 0.0f)) throw ArgumentError("soft_bin_assign: sigma must be > 0");
    const int n = x.dim(0);
    const float* X = x.data().data();
    std::vector<float> centers(bins);
    for (int k = 0; k < bins; ++k) centers[k] = (k + 0.5f) / bins;
    const float inv2s2 = 1.0f / (2.0f * sigma * sigma);
    std::vector<float> out(static_cast<size_t>(n) * bins);
#pragma omp parallel for schedule(static) if (n > 2048)
    for (int i = 0; i < n; ++i) {
        float* row = out.data() + static_cast<size_t>(i) * bins;
        // subtract the nearest-center exponent to avoid full underflow
        float best = 1e30f;
        for (int k = 0; k < bins; ++k) {
            const float d = X[i] - centers[k];
            const float e = d * d * inv2s2;
            row[k] = e;
            best = std::min(best, e);
        }
        float s = 0.0f;
        for (int k = 0; k < bins; ++k) {
            row[k] = std::exp(best - row[k]);
            s += row[k];
        }
        const float inv = 1.0f / s;
        for (int k = 0; k < bins; ++k) row[k] *= inv;
    }
    auto xn = x.node();
    auto cent = std::make_shared<std::vector<float>>(std::move(centers));
    return make_op({n, bins}, std::move(out), "soft_bin_assign", {&x},
                   [xn, cent, n, bins, inv2s2](Node& self) {
                       if (!xn->requires_grad && xn->is_leaf()) return;
                       xn->ensure_grad();
                       const float* G = self.grad.data();
                       const float* A = self.value.data();
                       const float* X = xn->value.data();
                       const float* c = cent->data();
                       const float two = 2.0f * inv2s2;
#pragma omp parallel for schedule(static) if (n > 2048)
                       for (int i = 0; i < n; ++i) {
                           const float* arow = A + static_cast<size_t>(i) * bins;
                           const float* grow = G + static_cast<size_t>(i) * bins;
                           // dA_k/dx = A_k * (t_k - sum_j A_j t_j), t_k = (c_k - x)*2*inv2s2
                           float tbar = 0.0f;
                           for (int k = 0; k < bins; ++k) tbar += arow[k] * (c[k] - X[i]) * two;
                           float gx = 0.0f;
                           for (int k = 0; k < bins; ++k)
                               gx += grow[k] * arow[k] * ((c[k] - X[i]) * two - tbar);
                           xn->grad[i] += gx;
                       }
                   });
}

Tensor minmax_normalize(const Tensor& x) {
    if (x.rank() != 1) throw ShapeError("minmax_normalize: expects 1-D, got " + shape_str(x.shape()));
    const int n = x.dim(0);
    const float* X = x.data().data();
    int imin = 0, imax = 0;
    for (int i = 1; i < n; ++i) {
        if (X[i] < X[imin]) imin = i;
        if (X[i] > X[imax]) imax = i;
    }
    const float range = X[imax] - X[imin];
    const bool constant = range < 1e-12f;
    std::vector<float> out(n);
    if (constant) {
        std::fill(out.begin(), out.end(), 0.5f);
    } else {
        const float inv = 1.0f / range;
        const float mn = X[imin];
        for (int i = 0; i < n; ++i) out[i] = (X[i] - mn) * inv;
    }
    auto xn = x.node();
    return make_op({n}, std::move(out), "minmax_normalize", {&x},
                   [xn, n, imin, imax, range, constant](Node& self) {
                       if (constant) return;  // flat region, no gradient
                       if (!xn->requires_grad && xn->is_leaf()) return;
                       xn->ensure_grad();
                       const float* g = self.grad.data();
                       const float* y = self.value.data();
                       const float inv = 1.0f / range;
                       double gsum = 0, gysum = 0;
                       for (int i = 0; i < n; ++i) {
                           gsum += g[i];
                           gysum += static_cast<double>(g[i]) * y[i];
                       }
                       for (int i = 0; i < n; ++i) xn->grad[i] += g[i] * inv;
                       xn->grad[imin] -= static_cast<float>((gsum - gysum) * inv);
                       xn->grad[imax] -= static_cast<float>(gysum * inv);
                   });
}

namespace {

// stable logsumexp of scale*z
double logsumexp_scaled(std::span<const float> z, float scale) {
    double mx = -1e300;
    for (float v : z) mx = std::max(mx, static_cast<double>(scale) * v);
    double s = 0;
    for (float v : z) s += std::exp(static_cast<double>(scale) * v - mx);
    return mx + std::log(s);
}

}  // namespace

Tensor cross_entropy_at(const Tensor& logits, float scale, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= logits.numel())
        throw ArgumentError("cross_entropy_at: index " + std::to_string(flat_index) +
                            " out of range of " + std::to_string(logits.numel()));
    const double lse = logsumexp_scaled(logits.data(), scale);
    const double loss = lse - static_cast<double>(scale) * logits.at(flat_index);
    auto zn = logits.node();
    const int64_t n = logits.numel();
    return make_op({1}, {static_cast<float>(loss)}, "cross_entropy_at", {&logits},
                   [zn, n, scale, flat_index, lse](Node& self) {
                       if (!zn->requires_grad && zn->is_leaf()) return;
                       zn->ensure_grad();
                       const float g = self.grad[0];
                       const float* z = zn->value.data();
                       for (int64_t i = 0; i < n; ++i) {
                           const float p =
                               static_cast<float>(std::exp(static_cast<double>(scale) * z[i] - lse));
                           const float t = (i == flat_index) ? 1.0f : 0.0f;
                           zn->grad[i] += g * scale * (p - t);
                       }
                   });
}

Tensor cross_entropy_soft(const Tensor& logits, float scale, const Tensor& target) {
    check_same_shape(logits, target, "cross_entropy_soft");
    const double lse = logsumexp_scaled(logits.data(), scale);
    const auto zv = logits.data();
    const auto tv = target.data();
    double dot = 0;
    for (int64_t i = 0; i < logits.numel(); ++i)
        dot += static_cast<double>(tv[i]) * scale * zv[i];
    const double loss = lse - dot;
    auto zn = logits.node();
    auto tn = target.detach();  // target is a constant by contract
    auto tnode = tn.node();
    const int64_t n = logits.numel();
    return make_op({1}, {static_cast<float>(loss)}, "cross_entropy_soft", {&logits},
                   [zn, tnode, n, scale, lse](Node& self) {
                       if (!zn->requires_grad && zn->is_leaf()) return;
                       zn->ensure_grad();
                       const float g = self.grad[0];
                       const float* z = zn->value.data();
                       const float* t = tnode->value.data();
                       for (int64_t i = 0; i < n; ++i) {
                           const float p =
                               static_cast<float>(std::exp(static_cast<double>(scale) * z[i] - lse));
                           zn->grad[i] += g * scale * (p - t[i]);
                       }
                   });
}

}  // namespace sarmatch
