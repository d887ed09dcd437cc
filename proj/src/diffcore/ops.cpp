#include <algorithm>
#include <cmath>
#include <cstring>

#include "hd2/kernels.hpp"
#include "hd2/tensor.hpp"

namespace hd2::diffcore {

namespace {

const kern::Ops& K() { return kern::active(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void check_finite(const Tensor& a, const char* op) {
  for (double x : a.data_vec())
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite input");
}

// Splits a shape around one axis: outer * extent * inner.
struct AxisSplit {
  int64_t outer, extent, inner;
};
AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor unary_op(const Tensor& a, const char* /*op*/,
                const std::function<void(const std::vector<double>&,
                                         std::vector<double>&)>& fwd,
                std::function<void(Node&)> backfn) {
  std::vector<double> out(a.data_vec().size());
  fwd(a.data_vec(), out);
  return make_op(a.shape(), std::move(out), {a}, std::move(backfn));
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  size_t n = a.data_vec().size();
  std::vector<double> out(n);
  K().add(a.data(), b.data(), out.data(), n);
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    size_t n = self.grad.size();
    for (int i = 0; i < 2; ++i) {
      Node* p = self.parents[i].node();
      if (p->requires_grad) K().axpy(1.0, self.grad.data(), p->grad.data(), n);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  size_t n = a.data_vec().size();
  std::vector<double> out(n);
  K().mul(a.data(), b.data(), out.data(), n);
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    size_t n = self.grad.size();
    Node* pa = self.parents[0].node();
    Node* pb = self.parents[1].node();
    if (pa->requires_grad)
      K().madd(self.grad.data(), pb->data.data(), pa->grad.data(), n);
    if (pb->requires_grad)
      K().madd(self.grad.data(), pa->data.data(), pb->grad.data(), n);
  });
}

Tensor scale(const Tensor& a, double c) {
  size_t n = a.data_vec().size();
  std::vector<double> out(n);
  K().scale(a.data(), c, out.data(), n);
  return make_op(a.shape(), std::move(out), {a}, [c](Node& self) {
    Node* p = self.parents[0].node();
    if (p->requires_grad)
      K().axpy(c, self.grad.data(), p->grad.data(), self.grad.size());
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data_vec());
  for (double& x : out) x += c;
  return make_op(a.shape(), std::move(out), {a}, [](Node& self) {
    Node* p = self.parents[0].node();
    if (p->requires_grad)
      K().axpy(1.0, self.grad.data(), p->grad.data(), self.grad.size());
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  size_t n = a.data_vec().size();
  std::vector<double> out(n);
  K().relu(a.data(), out.data(), n);
  return make_op(a.shape(), std::move(out), {a}, [](Node& self) {
    Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (p->data[i] > 0.0) p->grad[i] += self.grad[i];
  });
}

Tensor abs_val(const Tensor& a) {
  return unary_op(
      a, "abs",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) out[i] = std::fabs(in[i]);
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
          double s = p->data[i] > 0.0 ? 1.0 : (p->data[i] < 0.0 ? -1.0 : 0.0);
          p->grad[i] += s * self.grad[i];
        }
      });
}

Tensor exp_elem(const Tensor& a) {
  return unary_op(
      a, "exp",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        K().madd(self.grad.data(), self.data.data(), p->grad.data(),
                 self.grad.size());
      });
}

Tensor log_elem(const Tensor& a) {
  for (double x : a.data_vec())
    if (!(x > 0.0)) throw DomainError("log of non-positive value");
  return unary_op(
      a, "log",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) out[i] = std::log(in[i]);
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] / p->data[i];
      });
}

Tensor sqrt_elem(const Tensor& a) {
  for (double x : a.data_vec())
    if (x < 0.0) throw DomainError("sqrt of negative value");
  return unary_op(
      a, "sqrt",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) out[i] = std::sqrt(in[i]);
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * 0.5 / self.data[i];
      });
}

Tensor reciprocal(const Tensor& a) {
  for (double x : a.data_vec())
    if (x == 0.0) throw DomainError("reciprocal of zero");
  return unary_op(
      a, "reciprocal",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) out[i] = 1.0 / in[i];
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] -= self.grad[i] * self.data[i] * self.data[i];
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i) {
          double x = in[i];
          out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        }
      },
      [](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp with lo > hi");
  return unary_op(
      a, "clamp",
      [lo, hi](const std::vector<double>& in, std::vector<double>& out) {
        for (size_t i = 0; i < in.size(); ++i)
          out[i] = std::min(std::max(in[i], lo), hi);
      },
      [lo, hi](Node& self) {
        Node* p = self.parents[0].node();
        if (!p->requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (p->data[i] >= lo && p->data[i] <= hi)
            p->grad[i] += self.grad[i];
      });
}

// ---- matmul ----------------------------------------------------------------

namespace {

// C[M,N] += A[M,K] . B[K,N], all row-major.
void gemm_nn(int64_t m, int64_t k, int64_t n, const double* a, const double* b,
             double* c) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t l = 0; l < k; ++l)
      K().axpy(a[i * k + l], b + l * n, c + i * n, n);
}

// C[M,N] += A[M,K] . B[N,K]^T (dot of contiguous rows).
void gemm_nt(int64_t m, int64_t k, int64_t n, const double* a, const double* b,
             double* c) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      c[i * n + j] += K().dot(a + i * k, b + j * k, k);
}

// C[M,N] += A[K,M]^T . B[K,N].
void gemm_tn(int64_t m, int64_t k, int64_t n, const double* a, const double* b,
             double* c) {
  for (int64_t l = 0; l < k; ++l)
    for (int64_t i = 0; i < m; ++i)
      K().axpy(a[l * m + i], b + l * n, c + i * n, n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int64_t m = trans_a ? a.shape()[1] : a.shape()[0];
  int64_t ka = trans_a ? a.shape()[0] : a.shape()[1];
  int64_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  int64_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (ka != kb)
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " . " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  if (m == 0 || ka == 0 || n == 0) throw ShapeError("matmul with empty extent");

  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  if (!trans_a && !trans_b) gemm_nn(m, ka, n, pa, pb, out.data());
  else if (!trans_a && trans_b) gemm_nt(m, ka, n, pa, pb, out.data());
  else if (trans_a && !trans_b) gemm_tn(m, ka, n, pa, pb, out.data());
  else {
    // A^T . B^T: rare; materialize B^T once.
    std::vector<double> bt(static_cast<size_t>(ka * n));
    for (int64_t i = 0; i < n; ++i)
      for (int64_t l = 0; l < ka; ++l) bt[l * n + i] = pb[i * ka + l];
    gemm_tn(m, ka, n, pa, bt.data(), out.data());
  }

  int64_t kk = ka;
  return make_op(
      {m, n}, std::move(out), {a, b}, [m, kk, n, trans_a, trans_b](Node& self) {
        Node* pa = self.parents[0].node();
        Node* pb = self.parents[1].node();
        const double* g = self.grad.data();
        if (pa->requires_grad) {
          if (!trans_a) {
            // dA[M,K] += G[M,N] . B'[K,N]^T where B' is B in [K,N] layout.
            if (!trans_b) gemm_nt(m, n, kk, g, pb->data.data(), pa->grad.data());
            else gemm_nn(m, n, kk, g, pb->data.data(), pa->grad.data());
          } else {
            // dA[K,M] += B'[K,N] . G[M,N]^T.
            if (!trans_b) gemm_nt(kk, n, m, pb->data.data(), g, pa->grad.data());
            else {
              std::vector<double> tmp(static_cast<size_t>(kk * m), 0.0);
              gemm_nn(m, n, kk, g, pb->data.data(), tmp.data());
              for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < kk; ++l)
                  pa->grad[l * m + i] += tmp[i * kk + l];
            }
          }
        }
        if (pb->requires_grad) {
          if (!trans_b) {
            // dB[K,N] += A'[M,K]^T . G[M,N].
            if (!trans_a) gemm_tn(kk, m, n, pa->data.data(), g, pb->grad.data());
            else gemm_nn(kk, m, n, pa->data.data(), g, pb->grad.data());
          } else {
            // dB[N,K] += G[M,N]^T . A'[M,K].
            if (!trans_a) gemm_tn(n, m, kk, g, pa->data.data(), pb->grad.data());
            else {
              // dB[j,l] += sum_i G[i,j] * A[l,i] with A stored as [K,M].
              for (int64_t j = 0; j < n; ++j)
                for (int64_t l = 0; l < kk; ++l) {
                  double acc = 0.0;
                  for (int64_t i = 0; i < m; ++i)
                    acc += g[i * n + j] * pa->data[l * m + i];
                  pb->grad[j * kk + l] += acc;
                }
            }
          }
        }
      });
}

// ---- shape / data movement ---------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  std::vector<double> out(a.data_vec());
  return make_op(std::move(shape), std::move(out), {a}, [](Node& self) {
    Node* p = self.parents[0].node();
    if (p->requires_grad)
      K().axpy(1.0, self.grad.data(), p->grad.data(), self.grad.size());
  });
}

namespace {

std::vector<int64_t> strides_of(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const Shape& in_shape = a.shape();
  if (perm.size() != in_shape.size())
    throw ShapeError("permute order size mismatch");
  std::vector<bool> used(perm.size(), false);
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] < 0 || perm[i] >= static_cast<int>(perm.size()) ||
        used[perm[i]])
      throw ShapeError("permute order is not a permutation");
    used[perm[i]] = true;
    out_shape[i] = in_shape[perm[i]];
  }

  auto in_strides = strides_of(in_shape);
  auto out_strides = strides_of(out_shape);
  int64_t n = a.numel();
  const int rank = static_cast<int>(perm.size());

  // src[i] = input flat index feeding output flat index i.
  auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
  std::vector<int64_t> coord(rank, 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, flat = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t c = rem / out_strides[d];
      rem -= c * out_strides[d];
      flat += c * in_strides[perm[d]];
    }
    (*src)[o] = flat;
  }

  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data();
  for (int64_t o = 0; o < n; ++o) out[o] = pa[(*src)[o]];
  return make_op(std::move(out_shape), std::move(out), {a},
                 [src](Node& self) {
                   Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   for (size_t o = 0; o < self.grad.size(); ++o)
                     p->grad[(*src)[o]] += self.grad[o];
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  int64_t rows = parts[0].shape().size() == 2 ? parts[0].shape()[0] : -1;
  if (rows < 0) throw ShapeError("concat_cols expects rank-2 tensors");
  int64_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != 2 || t.shape()[0] != rows)
      throw ShapeError("concat_cols row mismatch");
    total += t.shape()[1];
  }
  std::vector<double> out(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (const Tensor& t : parts) {
    int64_t c = t.shape()[1];
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * total + off, t.data() + r * c,
                  sizeof(double) * c);
    off += c;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op({rows, total}, std::move(out), std::move(parents),
                 [rows, total](Node& self) {
                   int64_t off = 0;
                   for (Tensor& pt : self.parents) {
                     Node* p = pt.node();
                     int64_t c = p->shape[1];
                     if (p->requires_grad)
                       for (int64_t r = 0; r < rows; ++r)
                         K().axpy(1.0, self.grad.data() + r * total + off,
                                  p->grad.data() + r * c, c);
                     off += c;
                   }
                 });
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<int64_t>> idx,
              Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(idx->size()))
    throw ShapeError("gather index count does not match output shape");
  int64_t n = a.numel();
  std::vector<double> out(idx->size());
  const double* pa = a.data();
  for (size_t i = 0; i < idx->size(); ++i) {
    int64_t j = (*idx)[i];
    if (j >= n) throw ShapeError("gather index out of range");
    out[i] = j >= 0 ? pa[j] : 0.0;
  }
  return make_op(std::move(out_shape), std::move(out), {a}, [idx](Node& self) {
    Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      int64_t j = (*idx)[i];
      if (j >= 0) p->grad[j] += self.grad[i];
    }
  });
}

Tensor scatter_add(const Tensor& base,
                   std::shared_ptr<const std::vector<int64_t>> idx,
                   const Tensor& values) {
  if (static_cast<int64_t>(idx->size()) != values.numel())
    throw ShapeError("scatter_add index count does not match values");
  int64_t n = base.numel();
  std::vector<double> out(base.data_vec());
  const double* pv = values.data();
  for (size_t i = 0; i < idx->size(); ++i) {
    int64_t j = (*idx)[i];
    if (j >= n)
      throw InternalError("scatter_add index " + std::to_string(j) +
                          " out of range " + std::to_string(n));
    // Skipping exact zeros keeps untouched bit patterns intact.
    if (j >= 0 && pv[i] != 0.0) out[j] += pv[i];
  }
  return make_op(base.shape(), std::move(out), {base, values},
                 [idx](Node& self) {
                   Node* pb = self.parents[0].node();
                   Node* pv = self.parents[1].node();
                   if (pb->requires_grad)
                     K().axpy(1.0, self.grad.data(), pb->grad.data(),
                              self.grad.size());
                   if (pv->requires_grad)
                     for (size_t i = 0; i < idx->size(); ++i) {
                       int64_t j = (*idx)[i];
                       if (j >= 0) pv->grad[i] += self.grad[j];
                     }
                 });
}

// ---- reductions --------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double total = K().sum(a.data(), a.data_vec().size());
  return make_op({1}, {total}, {a}, [](Node& self) {
    Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    double g = self.grad[0];
    for (double& x : p->grad) x += g;
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, int axis) {
  AxisSplit s = split_axis(a.shape(), axis, "sum_axis");
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(a.shape().size()); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape = {1};

  std::vector<double> out(static_cast<size_t>(s.outer * s.inner), 0.0);
  const double* pa = a.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t e = 0; e < s.extent; ++e)
      K().axpy(1.0, pa + (o * s.extent + e) * s.inner,
               out.data() + o * s.inner, s.inner);
  return make_op(std::move(out_shape), std::move(out), {a}, [s](Node& self) {
    Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t e = 0; e < s.extent; ++e)
        K().axpy(1.0, self.grad.data() + o * s.inner,
                 p->grad.data() + (o * s.extent + e) * s.inner, s.inner);
  });
}

Tensor max_axis(const Tensor& a, int axis) {
  AxisSplit s = split_axis(a.shape(), axis, "max_axis");
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(a.shape().size()); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape = {1};

  std::vector<double> out(static_cast<size_t>(s.outer * s.inner));
  auto arg = std::make_shared<std::vector<int64_t>>(out.size());
  const double* pa = a.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      int64_t best = 0;
      double bv = pa[(o * s.extent) * s.inner + i];
      for (int64_t e = 1; e < s.extent; ++e) {
        double v = pa[(o * s.extent + e) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = e;
        }
      }
      out[o * s.inner + i] = bv;
      (*arg)[o * s.inner + i] = (o * s.extent + best) * s.inner + i;
    }
  return make_op(std::move(out_shape), std::move(out), {a},
                 [arg](Node& self) {
                   Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[(*arg)[i]] += self.grad[i];
                 });
}

// ---- softmax ------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  check_finite(a, "softmax");
  AxisSplit s = split_axis(a.shape(), axis, "softmax");
  std::vector<double> out(a.data_vec().size());
  const double* pa = a.data();
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      double m = -HUGE_VAL;
      for (int64_t e = 0; e < s.extent; ++e)
        m = std::max(m, pa[(o * s.extent + e) * s.inner + i]);
      double denom = 0.0;
      for (int64_t e = 0; e < s.extent; ++e) {
        size_t at = (o * s.extent + e) * s.inner + i;
        out[at] = std::exp(pa[at] - m);
        denom += out[at];
      }
      for (int64_t e = 0; e < s.extent; ++e)
        out[(o * s.extent + e) * s.inner + i] /= denom;
    }
  return make_op(a.shape(), std::move(out), {a}, [s](Node& self) {
    Node* p = self.parents[0].node();
    if (!p->requires_grad) return;
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.inner; ++i) {
        double dotgy = 0.0;
        for (int64_t e = 0; e < s.extent; ++e) {
          size_t at = (o * s.extent + e) * s.inner + i;
          dotgy += self.grad[at] * self.data[at];
        }
        for (int64_t e = 0; e < s.extent; ++e) {
          size_t at = (o * s.extent + e) * s.inner + i;
          p->grad[at] += self.data[at] * (self.grad[at] - dotgy);
        }
      }
  });
}

// ---- bilinear sampling ----------------------------------------------------------

Tensor bilinear_sample(const Tensor& features, const std::vector<double>& xs,
                       const std::vector<double>& ys,
                       const std::vector<uint8_t>& valid) {
  if (features.rank() != 3)
    throw ShapeError("bilinear_sample expects [C,H,W] features");
  if (xs.size() != ys.size() || xs.size() != valid.size())
    throw ShapeError("bilinear_sample coordinate arrays disagree");
  int64_t c = features.shape()[0];
  int64_t h = features.shape()[1];
  int64_t w = features.shape()[2];
  int64_t n = static_cast<int64_t>(xs.size());

  struct Tap {
    int64_t row;
    int64_t x0, y0, x1, y1;
    double wx, wy;
  };
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(valid.size());
  for (int64_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    double x = std::min(std::max(xs[i], 0.0), static_cast<double>(w - 1));
    double y = std::min(std::max(ys[i], 0.0), static_cast<double>(h - 1));
    int64_t x0 = static_cast<int64_t>(std::floor(x));
    int64_t y0 = static_cast<int64_t>(std::floor(y));
    int64_t x1 = std::min(x0 + 1, w - 1);
    int64_t y1 = std::min(y0 + 1, h - 1);
    taps->push_back({i, x0, y0, x1, y1, x - x0, y - y0});
  }

  std::vector<double> out(static_cast<size_t>(n * c), 0.0);
  const double* pf = features.data();
  for (const auto& t : *taps) {
    double w00 = (1.0 - t.wy) * (1.0 - t.wx);
    double w01 = (1.0 - t.wy) * t.wx;
    double w10 = t.wy * (1.0 - t.wx);
    double w11 = t.wy * t.wx;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = pf + ch * h * w;
      out[t.row * c + ch] = w00 * plane[t.y0 * w + t.x0] +
                            w01 * plane[t.y0 * w + t.x1] +
                            w10 * plane[t.y1 * w + t.x0] +
                            w11 * plane[t.y1 * w + t.x1];
    }
  }
  return make_op({n, c}, std::move(out), {features},
                 [taps, c, h, w](Node& self) {
                   Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   for (const auto& t : *taps) {
                     double w00 = (1.0 - t.wy) * (1.0 - t.wx);
                     double w01 = (1.0 - t.wy) * t.wx;
                     double w10 = t.wy * (1.0 - t.wx);
                     double w11 = t.wy * t.wx;
                     for (int64_t ch = 0; ch < c; ++ch) {
                       double g = self.grad[t.row * c + ch];
                       double* plane = p->grad.data() + ch * h * w;
                       plane[t.y0 * w + t.x0] += w00 * g;
                       plane[t.y0 * w + t.x1] += w01 * g;
                       plane[t.y1 * w + t.x0] += w10 * g;
                       plane[t.y1 * w + t.x1] += w11 * g;
                     }
                   }
                 });
}

// ---- nearest-neighbor 3D upsample -------------------------------------------------

Tensor upsample3d_nearest(const Tensor& a, int factor) {
  if (factor < 1) throw DomainError("upsample factor must be >= 1");
  if (a.rank() != 4) throw ShapeError("upsample3d expects [C,H,W,Z]");
  int64_t c = a.shape()[0], h = a.shape()[1], w = a.shape()[2],
          z = a.shape()[3];
  int64_t f = factor;
  Shape out_shape{c, h * f, w * f, z * f};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const double* pa = a.data();
  int64_t hw = h * f, ww = w * f, zz = z * f;
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t j = 0; j < ww; ++j)
        for (int64_t k = 0; k < zz; ++k)
          out[((ch * hw + i) * ww + j) * zz + k] =
              pa[((ch * h + i / f) * w + j / f) * z + k / f];
  return make_op(std::move(out_shape), std::move(out), {a},
                 [c, h, w, z, f](Node& self) {
                   Node* p = self.parents[0].node();
                   if (!p->requires_grad) return;
                   int64_t hw = h * f, ww = w * f, zz = z * f;
                   for (int64_t ch = 0; ch < c; ++ch)
                     for (int64_t i = 0; i < hw; ++i)
                       for (int64_t j = 0; j < ww; ++j)
                         for (int64_t k = 0; k < zz; ++k)
                           p->grad[((ch * h + i / f) * w + j / f) * z + k / f] +=
                               self.grad[((ch * hw + i) * ww + j) * zz + k];
                 });
}

// ---- convolution ---------------------------------------------------------------

Conv2dPlan make_conv2d_plan(int64_t c_in, int64_t h, int64_t w, int64_t kh,
                            int64_t kw, int64_t stride, int64_t pad) {
  if (stride < 1 || pad < 0) throw ConfigError("bad conv2d stride/pad");
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (w + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d kernel larger than input");
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(ho * wo * c_in * kh * kw));
  for (int64_t oy = 0; oy < ho; ++oy)
    for (int64_t ox = 0; ox < wo; ++ox)
      for (int64_t ci = 0; ci < c_in; ++ci)
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t iy = oy * stride + ky - pad;
            int64_t ix = ox * stride + kx - pad;
            bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
            idx->push_back(in ? (ci * h + iy) * w + ix : -1);
          }
  return Conv2dPlan{c_in, h, w, kh, kw, stride, pad, ho, wo, idx};
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv2dPlan& plan) {
  if (x.rank() != 3 || x.shape()[0] != plan.c_in || x.shape()[1] != plan.h_in ||
      x.shape()[2] != plan.w_in)
    throw ShapeError("conv2d input does not match plan");
  if (w.rank() != 4 || w.shape()[1] != plan.c_in || w.shape()[2] != plan.kh ||
      w.shape()[3] != plan.kw)
    throw ShapeError("conv2d weight shape mismatch");
  int64_t c_out = w.shape()[0];
  if (b.numel() != c_out) throw ShapeError("conv2d bias length mismatch");

  int64_t patch = plan.c_in * plan.kh * plan.kw;
  int64_t spots = plan.h_out * plan.w_out;
  Tensor cols = gather(x, plan.idx, {spots, patch});
  Tensor wmat = reshape(w, {c_out, patch});
  Tensor out = matmul(wmat, cols, false, true);  // [c_out, spots]

  auto bidx = std::make_shared<std::vector<int64_t>>();
  bidx->reserve(static_cast<size_t>(c_out * spots));
  for (int64_t co = 0; co < c_out; ++co)
    for (int64_t s = 0; s < spots; ++s) bidx->push_back(co);
  out = add(out, gather(b, bidx, {c_out, spots}));
  return reshape(out, {c_out, plan.h_out, plan.w_out});
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad) {
  if (x.rank() != 3) throw ShapeError("conv2d expects [C,H,W]");
  if (w.rank() != 4) throw ShapeError("conv2d expects [Cout,Cin,kh,kw] weight");
  return conv2d(x, w, b,
                make_conv2d_plan(x.shape()[0], x.shape()[1], x.shape()[2],
                                 w.shape()[2], w.shape()[3], stride, pad));
}

Conv3dPlan make_conv3d_plan(int64_t c_in, int64_t h, int64_t w, int64_t z,
                            int64_t k, int64_t stride, int64_t pad) {
  if (stride != 1) throw ConfigError("conv3d supports stride 1");
  if (pad < 0) throw ConfigError("bad conv3d pad");
  int64_t ho = h + 2 * pad - k + 1;
  int64_t wo = w + 2 * pad - k + 1;
  int64_t zo = z + 2 * pad - k + 1;
  if (ho < 1 || wo < 1 || zo < 1)
    throw ShapeError("conv3d kernel larger than input");
  return Conv3dPlan{c_in, h, w, z, k, stride, pad, ho, wo, zo, nullptr};
}

namespace {

// Zero-padded copy of [C,H,W,Z].
std::vector<double> pad3d(const double* x, int64_t c, int64_t h, int64_t w,
                          int64_t z, int64_t pad) {
  int64_t hp = h + 2 * pad, wp = w + 2 * pad, zp = z + 2 * pad;
  std::vector<double> out(static_cast<size_t>(c * hp * wp * zp), 0.0);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        std::memcpy(
            out.data() + (((ci * hp + i + pad) * wp + j + pad) * zp + pad),
            x + ((ci * h + i) * w + j) * z, sizeof(double) * z);
  return out;
}

}  // namespace

// Direct tap-accumulation convolution: for each output channel the [H,W,Z]
// slab stays hot while padded input rows stream through axpy.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              const Conv3dPlan& plan) {
  if (x.rank() != 4 || x.shape()[0] != plan.c_in || x.shape()[1] != plan.h_in ||
      x.shape()[2] != plan.w_in || x.shape()[3] != plan.z_in)
    throw ShapeError("conv3d input does not match plan");
  if (w.rank() != 5 || w.shape()[1] != plan.c_in || w.shape()[2] != plan.k ||
      w.shape()[3] != plan.k || w.shape()[4] != plan.k)
    throw ShapeError("conv3d weight shape mismatch");
  int64_t c_out = w.shape()[0];
  if (b.numel() != c_out) throw ShapeError("conv3d bias length mismatch");

  const int64_t ci_n = plan.c_in, k = plan.k, pad = plan.pad;
  const int64_t h = plan.h_in, wd = plan.w_in, z = plan.z_in;
  const int64_t ho = plan.h_out, wo = plan.w_out, zo = plan.z_out;
  const int64_t hp = h + 2 * pad, wp = wd + 2 * pad, zp = z + 2 * pad;

  std::vector<double> xpad = pad3d(x.data(), ci_n, h, wd, z, pad);
  std::vector<double> out(static_cast<size_t>(c_out * ho * wo * zo));
  const double* pw = w.data();
  for (int64_t co = 0; co < c_out; ++co) {
    double* slab = out.data() + co * ho * wo * zo;
    std::fill(slab, slab + ho * wo * zo, b.data()[co]);
    for (int64_t ci = 0; ci < ci_n; ++ci)
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx)
          for (int64_t kz = 0; kz < k; ++kz) {
            double wv = pw[(((co * ci_n + ci) * k + ky) * k + kx) * k + kz];
            if (wv == 0.0) continue;
            for (int64_t oy = 0; oy < ho; ++oy)
              for (int64_t ox = 0; ox < wo; ++ox)
                K().axpy(wv,
                         xpad.data() +
                             (((ci * hp + oy + ky) * wp + ox + kx) * zp + kz),
                         slab + (oy * wo + ox) * zo, zo);
          }
  }

  return make_op(
      {c_out, ho, wo, zo}, std::move(out), {x, w, b},
      [plan, c_out](Node& self) {
        Node* px = self.parents[0].node();
        Node* pw = self.parents[1].node();
        Node* pb = self.parents[2].node();
        const int64_t ci_n = plan.c_in, k = plan.k, pad = plan.pad;
        const int64_t h = plan.h_in, wd = plan.w_in, z = plan.z_in;
        const int64_t ho = plan.h_out, wo = plan.w_out, zo = plan.z_out;
        const int64_t hp = h + 2 * pad, wp = wd + 2 * pad, zp = z + 2 * pad;
        const double* g = self.grad.data();

        if (pb->requires_grad)
          for (int64_t co = 0; co < c_out; ++co)
            pb->grad[co] += K().sum(g + co * ho * wo * zo, ho * wo * zo);

        std::vector<double> xpad;
        if (pw->requires_grad)
          xpad = pad3d(px->data.data(), ci_n, h, wd, z, pad);
        std::vector<double> dxpad;
        if (px->requires_grad)
          dxpad.assign(static_cast<size_t>(ci_n * hp * wp * zp), 0.0);

        for (int64_t co = 0; co < c_out; ++co) {
          const double* gslab = g + co * ho * wo * zo;
          for (int64_t ci = 0; ci < ci_n; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx)
                for (int64_t kz = 0; kz < k; ++kz) {
                  int64_t woff = (((co * ci_n + ci) * k + ky) * k + kx) * k + kz;
                  if (pw->requires_grad) {
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < ho; ++oy)
                      for (int64_t ox = 0; ox < wo; ++ox)
                        acc += K().dot(
                            gslab + (oy * wo + ox) * zo,
                            xpad.data() +
                                (((ci * hp + oy + ky) * wp + ox + kx) * zp + kz),
                            zo);
                    pw->grad[woff] += acc;
                  }
                  if (px->requires_grad) {
                    double wv = pw->data[woff];
                    if (wv == 0.0) continue;
                    for (int64_t oy = 0; oy < ho; ++oy)
                      for (int64_t ox = 0; ox < wo; ++ox)
                        K().axpy(wv, gslab + (oy * wo + ox) * zo,
                                 dxpad.data() +
                                     (((ci * hp + oy + ky) * wp + ox + kx) * zp +
                                      kz),
                                 zo);
                  }
                }
        }
        if (px->requires_grad)
          for (int64_t ci = 0; ci < ci_n; ++ci)
            for (int64_t i = 0; i < h; ++i)
              for (int64_t j = 0; j < wd; ++j)
                K().axpy(1.0,
                         dxpad.data() +
                             (((ci * hp + i + pad) * wp + j + pad) * zp + pad),
                         px->grad.data() + ((ci * h + i) * wd + j) * z, z);
      });
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad) {
  if (x.rank() != 4) throw ShapeError("conv3d expects [C,H,W,Z]");
  if (w.rank() != 5) throw ShapeError("conv3d expects rank-5 weight");
  return conv3d(x, w, b,
                make_conv3d_plan(x.shape()[0], x.shape()[1], x.shape()[2],
                                 x.shape()[3], w.shape()[2], stride, pad));
}

// ---- composites -----------------------------------------------------------------

Tensor scaled_dot_attention(const Tensor& queries, const Tensor& keys,
                            const Tensor& values) {
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2)
    throw ShapeError("attention expects rank-2 inputs");
  int64_t d = queries.shape()[1];
  if (d == 0 || keys.shape()[0] == 0)
    throw ShapeError("attention with empty keys or zero width");
  if (keys.shape()[1] != d)
    throw ShapeError("attention query/key width mismatch");
  if (values.shape()[0] != keys.shape()[0])
    throw ShapeError("attention key/value count mismatch");
  Tensor scores =
      scale(matmul(queries, keys, false, true), 1.0 / std::sqrt(double(d)));
  Tensor attn = softmax(scores, 1);
  return matmul(attn, values);
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  check_same_shape(p, q, "kl_divergence");
  auto check_norm = [](const Tensor& t, const char* which) {
    double s = 0.0;
    for (double x : t.data_vec()) {
      if (!std::isfinite(x)) throw DomainError("kl_divergence: non-finite input");
      s += x;
    }
    if (std::fabs(s - 1.0) > 1e-9)
      throw DomainError(std::string("kl_divergence: ") + which +
                        " sums to " + std::to_string(s) + ", expected 1");
  };
  check_norm(p, "p");
  check_norm(q, "q");
  Tensor pc = clamp(p, 1e-12, 1.0);
  Tensor qc = clamp(q, 1e-12, 1.0);
  return sum_all(mul(pc, sub(log_elem(pc), log_elem(qc))));
}

}  // namespace hd2::diffcore
