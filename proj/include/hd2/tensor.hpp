#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hd2/error.hpp"

namespace hd2::diffcore {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// One value in the computation graph. Nodes are immutable after construction
// except for gradient accumulation during a backward pass.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized only during/after a backward pass
  bool requires_grad = false;
  uint64_t seq = 0;  // creation order; reverse order is a valid topo order
  std::vector<Tensor> parents;
  std::function<void(Node&)> backfn;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t rank() const;
  bool requires_grad() const;

  const double* data() const;
  double* data();
  const std::vector<double>& data_vec() const;

  // Throws if no backward pass has populated the gradient.
  const std::vector<double>& grad() const;
  bool has_grad() const;

  double item() const;  // scalar tensors only

  // Runs reverse-mode differentiation from this scalar. Zeroes the gradients
  // of every reachable node first, then accumulates in reverse creation
  // order, which is deterministic for a single-threaded forward pass.
  void backward() const;

  // Same values, detached from the graph (no gradient flows through).
  Tensor detach() const;

  Node* node() const { return n_.get(); }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> n_;
};

// Builds an op output node. Parents and the backward closure are retained
// only when some parent requires a gradient and graph capture is enabled.
Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> parents, std::function<void(Node&)> backfn);

// Disables graph capture on the current thread for its lifetime. Forward
// values are unchanged; backward() cannot reach through ops built under it.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_capture_enabled();

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs_val(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);  // domain error on non-positive entries
Tensor sqrt_elem(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Clamps values into [lo, hi]; gradient passes only where lo <= x <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);

// ---- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

// ---- shape / data movement -------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
// Horizontal stack of 2-D tensors sharing the row count.
Tensor concat_cols(const std::vector<Tensor>& parts);
// out[i] = idx[i] >= 0 ? a.flat[idx[i]] : 0. Also serves as broadcast.
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<int64_t>> idx,
              Shape out_shape);
// out = copy(base); out.flat[idx[i]] += values.flat[i] (idx -1 entries skip).
Tensor scatter_add(const Tensor& base,
                   std::shared_ptr<const std::vector<int64_t>> idx,
                   const Tensor& values);

// ---- reductions ------------------------------------------------------------
Tensor sum_all(const Tensor& a);   // -> shape {1}
Tensor mean_all(const Tensor& a);  // -> shape {1}
Tensor sum_axis(const Tensor& a, int axis);
// Max along one axis; ties route the gradient to the lowest index.
Tensor max_axis(const Tensor& a, int axis);

// ---- structured ops --------------------------------------------------------
Tensor softmax(const Tensor& a, int axis);

// Features [C,H,W] sampled at n real-valued (x, y) positions (feature-lattice
// coordinates, clamped to the border); rows with valid[i] == 0 come out zero.
// Returns [n, C]; differentiable w.r.t. features only.
Tensor bilinear_sample(const Tensor& features, const std::vector<double>& xs,
                       const std::vector<double>& ys,
                       const std::vector<uint8_t>& valid);

// Nearest-neighbor repetition along the three spatial axes of [C,H,W,Z].
Tensor upsample3d_nearest(const Tensor& a, int factor);

// ---- convolution (composed from gather + matmul) ----------------------------
struct Conv2dPlan {
  int64_t c_in, h_in, w_in, kh, kw, stride, pad, h_out, w_out;
  std::shared_ptr<const std::vector<int64_t>> idx;  // im2col map, -1 = zero pad
};
struct Conv3dPlan {
  int64_t c_in, h_in, w_in, z_in, k, stride, pad, h_out, w_out, z_out;
  std::shared_ptr<const std::vector<int64_t>> idx;
};
Conv2dPlan make_conv2d_plan(int64_t c_in, int64_t h, int64_t w, int64_t kh,
                            int64_t kw, int64_t stride, int64_t pad);
Conv3dPlan make_conv3d_plan(int64_t c_in, int64_t h, int64_t w, int64_t z,
                            int64_t k, int64_t stride, int64_t pad);
// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] -> [Cout,Hout,Wout]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv2dPlan& plan);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad);
// x: [Cin,H,W,Z], w: [Cout,Cin,k,k,k], b: [Cout] -> [Cout,Hout,Wout,Zout]
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv3dPlan& plan);
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad);

// ---- composite building blocks ----------------------------------------------
// Row i of the output = softmax(q_i . K^T / sqrt(d)) . V.
Tensor scaled_dot_attention(const Tensor& queries, const Tensor& keys,
                            const Tensor& values);
// Sum p * ln(p/q) with both distributions clamped to [1e-12, 1] before the
// log. Inputs must each sum to 1 within 1e-9.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// ---- parameters and RNG ------------------------------------------------------
// Deterministic generator: mt19937_64 with an explicit bits->double mapping so
// streams do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  uint64_t bits() { return eng_(); }
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal(double mu = 0.0, double sigma = 1.0);
  // Inclusive bounds.
  int64_t randint(int64_t lo, int64_t hi);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Parameter {
  std::string name;  // unique within one model, e.g. "hsd.de.weight"
  Tensor value;
};

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Parameter make_param(std::string name, Shape shape, int64_t fan_in, Rng& rng);
Parameter make_param_zero(std::string name, Shape shape);

}  // namespace hd2::diffcore
