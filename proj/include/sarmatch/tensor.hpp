#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sarmatch/errors.hpp"
#include "sarmatch/rng.hpp"

namespace sarmatch {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated on demand, same size as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // null for leaves
    const char* op = "leaf";

    bool is_leaf() const { return !backward; }
    void ensure_grad();
};

bool grad_enabled();

}  // namespace detail

// Disables graph recording in the current scope (inference / pseudo-label
// construction).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense float32 tensor with tape-based reverse-mode autodiff. Value-semantic
// handle to shared storage; ops build the tape when any input requires grad
// and grad mode is on.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float v, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;
    int64_t numel() const;

    std::span<const float> data() const;
    // Direct mutation; only meaningful for leaves (parameters, loaders).
    std::span<float> raw_data();

    bool requires_grad() const;
    void set_requires_grad(bool rg);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> raw_grad();
    void zero_grad();

    float item() const;          // single-element tensors
    float at(int64_t i) const;   // flat index
    int64_t argmax() const;      // flat index of the max value

    // Same values, detached from the tape (constant leaf sharing no parents).
    Tensor detach() const;

    // Reverse pass from a scalar. Leaf grads accumulate across calls;
    // interior grads are reset per call.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return n_; }

private:
    std::shared_ptr<detail::Node> n_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or either side scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor neg(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor clamp_min(const Tensor& a, float lo);

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]
Tensor mul_rows(const Tensor& a, const Tensor& v);    // a [M,N] * v [M] per row
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // a [M,N] + v [N] per row
Tensor transpose2d(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, int c0, int c1);        // 2-D
Tensor concat_cols(const std::vector<Tensor>& parts);      // 2-D
Tensor pick(const Tensor& a, int64_t flat_index);          // -> [1]
Tensor sample_stride(const Tensor& a, int64_t max_n);      // strided subsample of flattened input

// ---- reductions ----
Tensor sum_all(const Tensor& a);    // -> [1]
Tensor mean_all(const Tensor& a);   // -> [1]
Tensor variance_all(const Tensor& a);  // biased, -> [1]
Tensor sum_axis0(const Tensor& a);  // 2-D [M,N] -> [N]
Tensor sum_axis1(const Tensor& a);  // 2-D [M,N] -> [M]

// ---- neural-net ops ----
// input [Ci,H,W], kernel [Co,Ci,k,k], odd k, stride 1 or 2
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);  // x [C,H,W], bias [C]
Tensor mul_channel(const Tensor& x, const Tensor& s);          // x [C,H,W], s [C]
// elu(x * s + b) in one pass; x [C,H,W], s/b [C]
Tensor channel_affine_elu(const Tensor& x, const Tensor& s, const Tensor& b);
// x rank 2 [H,W] or rank 3 [C,H,W]
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners);
Tensor avg_pool2(const Tensor& x);  // [C,H,W] -> [C,H/2,W/2], even dims
Tensor softmax_flat(const Tensor& logits, float temperature);

// ---- correlation primitives (FFT / integral-image backed) ----
// tpl [C,h,w], ref [C,H,W]; valid placements only.
// per_channel=false sums channels -> [Ho,Wo]; true -> [C,Ho,Wo].
Tensor cross_correlate_valid(const Tensor& tpl, const Tensor& ref, bool per_channel = false);
// Sliding-window sum of x over h x w windows via integral images.
Tensor window_sum(const Tensor& x, int h, int w, bool per_channel = false);

// ---- histogram / loss primitives ----
// x [n] assumed in [0,1]; Gaussian soft assignment to `bins` centers,
// rows normalized to sum 1 -> [n,bins]
Tensor soft_bin_assign(const Tensor& x, int bins, float sigma);
// min-max normalize to [0,1]; constant input maps to all 0.5
Tensor minmax_normalize(const Tensor& x);
// logsumexp(scale*z) - scale*z[idx]  (== -log softmax_flat(scale*z)[idx])
Tensor cross_entropy_at(const Tensor& logits, float scale, int64_t flat_index);
// logsumexp(scale*z) - sum(t * scale*z); target is treated as a constant
Tensor cross_entropy_soft(const Tensor& logits, float scale, const Tensor& target);

}  // namespace sarmatch
