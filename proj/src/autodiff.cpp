#include "chamae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "chamae/dft.hpp"
#include "chamae/kernels.hpp"

namespace chamae::ad {

using kernels::Trans;

std::vector<std::string> required_ops() {
  return {"matmul", "add", "mul", "softmax", "layer_norm", "gelu", "sigmoid", "dft_amplitude", "reverse_mode"};
}

std::vector<std::string> provided_ops() {
  return {"matmul",     "add",  "sub",     "mul",           "softmax",       "attention",
          "layer_norm", "gelu", "sigmoid", "abs",           "dft_amplitude", "cross_entropy",
          "gather_rows", "concat_rows", "l2_normalize_rows", "reverse_mode"};
}

void require_capabilities() {
  const auto have = provided_ops();
  for (const auto& op : required_ops()) {
    if (std::find(have.begin(), have.end(), op) == have.end()) {
      throw std::runtime_error("numeric backend is missing required capability: " + op);
    }
  }
}

namespace {

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

void check_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_string(s));
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw std::out_of_range("invalid Var");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Graph<T>::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const auto& v = n.external ? *n.external : n.value;
    n.grad = Tensor<T>(v.shape(), T{0});
  }
  return n.grad;
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, {});
}

template <typename T>
Var Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::leaf(const Tensor<T>& external, bool requires_grad) {
  Node n;
  n.external = &external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  return node(v).grad;
}

template <typename T>
T Graph<T>::scalar(Var v) const {
  const auto& t = value(v);
  if (t.size() != 1) throw std::invalid_argument("scalar(): node is not 1x1, shape " + shape_string(t.shape()));
  return t[0];
}

// ---------------------------------------------------------------- algebra

template <typename T>
Var Graph<T>::matmul(Var a, Var b, bool transpose_b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  check_rank2(av.shape(), "matmul");
  check_rank2(bv.shape(), "matmul");
  const std::size_t m = av.rows(), k = av.cols();
  const std::size_t n = transpose_b ? bv.rows() : bv.cols();
  const std::size_t kb = transpose_b ? bv.cols() : bv.rows();
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(av.shape()) + " * " +
                                shape_string(bv.shape()) + (transpose_b ? "^T" : ""));
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::gemm(Trans::kNo, transpose_b ? Trans::kYes : Trans::kNo, m, n, k, T(1), av.data(), bv.data(), T(0),
                out.data());
  const bool rg = needs(a) || needs(b);
  return push(std::move(out), rg, [a, b, m, n, k, transpose_b](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (g.needs(a)) {
      // dA = dC * op(B)^T
      auto& ga = g.grad_ref(a.id);
      kernels::gemm(Trans::kNo, transpose_b ? Trans::kNo : Trans::kYes, m, k, n, T(1), gy.data(),
                    g.value(b).data(), T(1), ga.data());
    }
    if (g.needs(b)) {
      auto& gb = g.grad_ref(b.id);
      if (transpose_b) {
        // B is n x k: dB = dC^T * A
        kernels::gemm(Trans::kYes, Trans::kNo, n, k, m, T(1), gy.data(), g.value(a).data(), T(1), gb.data());
      } else {
        // dB = A^T * dC
        kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, T(1), g.value(a).data(), gy.data(), T(1), gb.data());
      }
    }
  });
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var bias) {
  Var y = matmul(x, w);
  return bias.valid() ? add_row(y, bias) : y;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  check_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    for (Var in : {a, b}) {
      if (!g.needs(in)) continue;
      auto& gi = g.grad_ref(in.id);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += gy[i];
    }
  });
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  check_same_shape(av.shape(), bv.shape(), "sub");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (g.needs(a)) {
      auto& ga = g.grad_ref(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (g.needs(b)) {
      auto& gb = g.grad_ref(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  check_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (g.needs(a)) {
      auto& ga = g.grad_ref(a.id);
      const auto& bv = g.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.needs(b)) {
      auto& gb = g.grad_ref(b.id);
      const auto& av = g.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
  const auto& av = value(a);
  const auto& rv = value(row);
  check_rank2(av.shape(), "add_row");
  if (rv.size() != av.cols()) {
    throw std::invalid_argument("add_row: row " + shape_string(rv.shape()) + " vs matrix " + shape_string(av.shape()));
  }
  Tensor<T> out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
  return push(std::move(out), needs(a) || needs(row), [a, row, m, n](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    if (g.needs(a)) {
      auto& ga = g.grad_ref(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (g.needs(row)) {
      auto& gr = g.grad_ref(row.id);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gr[c] += gy[r * n + c];
    }
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x *= s;
  return push(std::move(out), needs(a), [a, s](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    auto& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * gy[i];
  });
}

template <typename T>
Var Graph<T>::add_scalar(Var a, T s) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x += s;
  return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    auto& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
  });
}

template <typename T>
Var Graph<T>::gelu(Var a) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x = gelu_value(x);
  return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& x = g.value(a);
    auto& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * gelu_grad(x[i]);
  });
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x = T(1) / (T(1) + std::exp(-x));
  return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& y = g.value(Var{static_cast<std::int32_t>(self)});
    auto& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var Graph<T>::abs(Var a) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x = std::abs(x);
  return push(std::move(out), needs(a), [a](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& x = g.value(a);
    auto& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > T(0)) ga[i] += gy[i];
      else if (x[i] < T(0)) ga[i] -= gy[i];
    }
  });
}

// ---------------------------------------------------------- normalization

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const auto& xv = value(x);
  check_rank2(xv.shape(), "layer_norm");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (value(gamma).size() != n || value(beta).size() != n) throw std::invalid_argument("layer_norm: affine width mismatch");
  const auto& gv = value(gamma);
  const auto& bv = value(beta);

  auto xhat = std::make_shared<std::vector<T>>(m * n);
  auto rstd = std::make_shared<std::vector<T>>(m);
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * n;
    T mean{0};
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= T(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (row[c] - mean) * rs;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const bool rg = needs(x) || needs(gamma) || needs(beta);
  return push(std::move(out), rg, [x, gamma, beta, m, n, xhat, rstd](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& gv = g.value(gamma);
    if (g.needs(gamma) || g.needs(beta)) {
      Tensor<T>* gg = g.needs(gamma) ? &g.grad_ref(gamma.id) : nullptr;
      Tensor<T>* gb = g.needs(beta) ? &g.grad_ref(beta.id) : nullptr;
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          if (gg) (*gg)[c] += gy[r * n + c] * (*xhat)[r * n + c];
          if (gb) (*gb)[c] += gy[r * n + c];
        }
      }
    }
    if (g.needs(x)) {
      auto& gx = g.grad_ref(x.id);
      for (std::size_t r = 0; r < m; ++r) {
        T mean_d{0}, mean_dh{0};
        for (std::size_t c = 0; c < n; ++c) {
          const T d = gy[r * n + c] * gv[c];
          mean_d += d;
          mean_dh += d * (*xhat)[r * n + c];
        }
        mean_d /= T(n);
        mean_dh /= T(n);
        for (std::size_t c = 0; c < n; ++c) {
          const T d = gy[r * n + c] * gv[c];
          gx[r * n + c] += (*rstd)[r] * (d - mean_d - (*xhat)[r * n + c] * mean_dh);
        }
      }
    }
  });
}

template <typename T>
Var Graph<T>::l2_normalize_rows(Var a, T eps) {
  const auto& av = value(a);
  check_rank2(av.shape(), "l2_normalize_rows");
  const std::size_t m = av.rows(), n = av.cols();
  auto norms = std::make_shared<std::vector<T>>(m);
  Tensor<T> out = av;
  for (std::size_t r = 0; r < m; ++r) {
    T s{0};
    for (std::size_t c = 0; c < n; ++c) s += av[r * n + c] * av[r * n + c];
    const T nrm = std::max(std::sqrt(s), eps);
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= nrm;
  }
  return push(std::move(out), needs(a), [a, m, n, norms](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& y = g.value(Var{static_cast<std::int32_t>(self)});
    auto& ga = g.grad_ref(a.id);
    for (std::size_t r = 0; r < m; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * gy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += (gy[r * n + c] - y[r * n + c] * dot) / (*norms)[r];
    }
  });
}

// --------------------------------------------------------------- attention

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, std::size_t heads, Tensor<T>* probs_out) {
  const auto& qv = value(q);
  const auto& kv = value(k);
  const auto& vv = value(v);
  check_rank2(qv.shape(), "attention");
  check_same_shape(kv.shape(), vv.shape(), "attention(k,v)");
  const std::size_t mq = qv.rows(), mk = kv.rows(), d = qv.cols();
  if (kv.cols() != d) throw std::invalid_argument("attention: query/key width mismatch");
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (mk == 0) throw std::invalid_argument("attention: no keys");
  const std::size_t dh = d / heads;
  const T scl = T(1) / std::sqrt(T(dh));

  auto probs = std::make_shared<std::vector<T>>(heads * mq * mk);
  Tensor<T> out = Tensor<T>::matrix(mq, d);
  std::vector<T> qh(mq * dh), kh(mk * dh), vh(mk * dh), oh(mq * dh);
  auto pack = [](const Tensor<T>& src, std::size_t rows, std::size_t width, std::size_t off, std::size_t dh_,
                 std::vector<T>& dst) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * width + off, dh_, dst.data() + r * dh_);
  };
  for (std::size_t h = 0; h < heads; ++h) {
    pack(qv, mq, d, h * dh, dh, qh);
    pack(kv, mk, d, h * dh, dh, kh);
    pack(vv, mk, d, h * dh, dh, vh);
    T* ph = probs->data() + h * mq * mk;
    kernels::gemm(Trans::kNo, Trans::kYes, mq, mk, dh, scl, qh.data(), kh.data(), T(0), ph);
    kernels::softmax_rows(ph, mq, mk);
    kernels::gemm(Trans::kNo, Trans::kNo, mq, dh, mk, T(1), ph, vh.data(), T(0), oh.data());
    for (std::size_t r = 0; r < mq; ++r) std::copy_n(oh.data() + r * dh, dh, out.data() + r * d + h * dh);
  }
  if (probs_out) *probs_out = Tensor<T>(Shape{heads, mq, mk}, *probs);

  const bool rg = needs(q) || needs(k) || needs(v);
  return push(std::move(out), rg, [q, k, v, heads, mq, mk, d, dh, scl, probs, pack](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    const auto& qv = g.value(q);
    const auto& kv = g.value(k);
    const auto& vv = g.value(v);
    std::vector<T> qh(mq * dh), kh(mk * dh), vh(mk * dh), goh(mq * dh);
    std::vector<T> gqh(mq * dh), gkh(mk * dh), gvh(mk * dh), dp(mq * mk);
    for (std::size_t h = 0; h < heads; ++h) {
      pack(qv, mq, d, h * dh, dh, qh);
      pack(kv, mk, d, h * dh, dh, kh);
      pack(vv, mk, d, h * dh, dh, vh);
      pack(gy, mq, d, h * dh, dh, goh);
      const T* ph = probs->data() + h * mq * mk;
      // dV = P^T dO ; dP = dO V^T
      kernels::gemm(Trans::kYes, Trans::kNo, mk, dh, mq, T(1), ph, goh.data(), T(0), gvh.data());
      kernels::gemm(Trans::kNo, Trans::kYes, mq, mk, dh, T(1), goh.data(), vh.data(), T(0), dp.data());
      // dS = P * (dP - rowsum(dP * P)), folded with the logit scale
      for (std::size_t r = 0; r < mq; ++r) {
        T dot{0};
        for (std::size_t c = 0; c < mk; ++c) dot += dp[r * mk + c] * ph[r * mk + c];
        for (std::size_t c = 0; c < mk; ++c) dp[r * mk + c] = ph[r * mk + c] * (dp[r * mk + c] - dot) * scl;
      }
      kernels::gemm(Trans::kNo, Trans::kNo, mq, dh, mk, T(1), dp.data(), kh.data(), T(0), gqh.data());
      kernels::gemm(Trans::kYes, Trans::kNo, mk, dh, mq, T(1), dp.data(), qh.data(), T(0), gkh.data());
      auto scatter = [&](Var dst, const std::vector<T>& src, std::size_t rows) {
        if (!g.needs(dst)) return;
        auto& gd = g.grad_ref(dst.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < dh; ++c) gd[r * d + h * dh + c] += src[r * dh + c];
      };
      scatter(q, gqh, mq);
      scatter(k, gkh, mk);
      scatter(v, gvh, mk);
    }
  });
}

// ------------------------------------------------------------ row plumbing

template <typename T>
Var Graph<T>::gather_rows(Var src, std::vector<std::size_t> index) {
  const auto& sv = value(src);
  check_rank2(sv.shape(), "gather_rows");
  const std::size_t n = sv.cols();
  Tensor<T> out = Tensor<T>::matrix(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= sv.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(index[r]) + " of " + std::to_string(sv.rows()));
    }
    std::copy_n(sv.data() + index[r] * n, n, out.data() + r * n);
  }
  return push(std::move(out), needs(src), [src, n, idx = std::move(index)](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    auto& gs = g.grad_ref(src.id);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) gs[idx[r] * n + c] += gy[r * n + c];
  });
}

template <typename T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t n = value(parts[0]).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const auto& pv = value(p);
    check_rank2(pv.shape(), "concat_rows");
    if (pv.cols() != n) throw std::invalid_argument("concat_rows: width mismatch");
    rows += pv.rows();
    rg = rg || needs(p);
  }
  Tensor<T> out = Tensor<T>::matrix(rows, n);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& pv = value(p);
    std::copy(pv.storage().begin(), pv.storage().end(), out.data() + offset);
    offset += pv.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(out), rg, [inputs = std::move(inputs)](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t count = g.value(p).size();
      if (g.needs(p)) {
        auto& gp = g.grad_ref(p.id);
        for (std::size_t i = 0; i < count; ++i) gp[i] += gy[offset + i];
      }
      offset += count;
    }
  });
}

template <typename T>
Var Graph<T>::slice_rows(Var src, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> index(count);
  for (std::size_t i = 0; i < count; ++i) index[i] = begin + i;
  return gather_rows(src, std::move(index));
}

// -------------------------------------------------------------- reductions

template <typename T>
Var Graph<T>::sum(Var a) {
  const auto& av = value(a);
  T s{0};
  for (T x : av.storage()) s += x;
  return push(Tensor<T>::matrix(1, 1, s), needs(a), [a](Graph& g, std::size_t self) {
    const T gy = g.out_grad(self)[0];
    auto& ga = g.grad_ref(a.id);
    for (auto& x : ga.storage()) x += gy;
  });
}

template <typename T>
Var Graph<T>::mean_rows(Var a) {
  const auto& av = value(a);
  check_rank2(av.shape(), "mean_rows");
  const std::size_t m = av.rows(), n = av.cols();
  if (m == 0) throw std::invalid_argument("mean_rows: no rows");
  Tensor<T> out = Tensor<T>::matrix(1, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += av[r * n + c];
  for (auto& x : out.storage()) x /= T(m);
  return push(std::move(out), needs(a), [a, m, n](Graph& g, std::size_t self) {
    const auto& gy = g.out_grad(self);
    auto& ga = g.grad_ref(a.id);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += gy[c] / T(m);
  });
}

// ----------------------------------------------------------- spectral / CE

template <typename T>
Var Graph<T>::dft_amplitude(Var a, std::size_t p) {
  const auto& av = value(a);
  check_rank2(av.shape(), "dft_amplitude");
  const std::size_t m = av.rows(), n = p * p;
  if (av.cols() != n) throw std::invalid_argument("dft_amplitude: rows must hold p*p values");
  auto spectrum = std::make_shared<std::vector<std::complex<T>>>(m * n);
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const Dft2<T> dft(p);
  for (std::size_t r = 0; r < m; ++r) {
    std::span<std::complex<T>> f(spectrum->data() + r * n, n);
    dft.transform_real(av.row(r), f);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = std::abs(f[i]);
  }
  return push(std::move(out), needs(a), [a, p, m, n, spectrum](Graph& g, std::size_t self) {
    // d|F_k|/dx = Re(conj(F_k)/|F_k| * w^k), i.e. the same transform applied to
    // z_k = g_k * conj(F_k) / |F_k|; zero-amplitude bins contribute nothing.
    const auto& gy = g.out_grad(self);
    const auto& amp = g.value(Var{static_cast<std::int32_t>(self)});
    auto& ga = g.grad_ref(a.id);
    const Dft2<T> dft(p);
    std::vector<std::complex<T>> z(n), back(n);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        const T A = amp[r * n + i];
        z[i] = A > T(0) ? gy[r * n + i] * std::conj((*spectrum)[r * n + i]) / A : std::complex<T>{};
      }
      dft.transform(z, back);
      for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += back[i].real();
    }
  });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::size_t label) {
  const auto& lv = value(logits);
  const std::size_t k = lv.size();
  if (label >= k) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside " + std::to_string(k) + " classes");
  }
  auto probs = std::make_shared<std::vector<T>>(lv.storage());
  kernels::softmax_rows(probs->data(), 1, k);
  const T mx = *std::max_element(lv.storage().begin(), lv.storage().end());
  T s{0};
  for (T x : lv.storage()) s += std::exp(x - mx);
  const T loss = mx + std::log(s) - lv[label];
  return push(Tensor<T>::matrix(1, 1, loss), needs(logits), [logits, label, probs](Graph& g, std::size_t self) {
    const T gy = g.out_grad(self)[0];
    auto& gl = g.grad_ref(logits.id);
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gy * ((*probs)[i] - (i == label ? T(1) : T(0)));
  });
}

// ----------------------------------------------------------------- sweep

template <typename T>
void Graph<T>::backward(Var loss) {
  if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!needs(loss)) return;
  grad_ref(loss.id)[0] += T(1);
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace chamae::ad
