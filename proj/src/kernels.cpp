#include "chamae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace chamae::kernels {

namespace {

template <typename T>
void scale_output(std::size_t count, T beta, T* c) {
  if (beta == T{0}) {
    std::fill(c, c + count, T{0});
  } else if (beta != T{1}) {
    for (std::size_t i = 0; i < count; ++i) c[i] *= beta;
  }
}

// Row i of C += alpha * a_row * B, with B row-major k x n.
template <typename T>
inline void axpy_rows(std::size_t n, std::size_t k, T alpha, const T* a_row, std::size_t a_stride,
                      const T* b, T* c_row) {
  for (std::size_t p = 0; p < k; ++p) {
    const T s = alpha * a_row[p * a_stride];
    if (s == T{0}) continue;
    const T* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  scale_output(m * n, beta, c);
  if (m == 0 || n == 0 || k == 0) return;

  // Bring B into k x n row-major so every variant reduces to row-wise axpy.
  std::vector<T> packed;
  const T* bk = b;
  if (tb == Trans::kYes) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
    bk = packed.data();
  }

  const bool parallel = m > 1 && m * n * k >= kParallelGemmWork;
  const auto rows = static_cast<long>(m);
  if (ta == Trans::kNo) {
#pragma omp parallel for schedule(static) if (parallel)
    for (long i = 0; i < rows; ++i) axpy_rows(n, k, alpha, a + i * k, 1, bk, c + i * n);
  } else {
    // A stored k x m: row i of op(A) is column i of A.
#pragma omp parallel for schedule(static) if (parallel)
    for (long i = 0; i < rows; ++i) axpy_rows(n, k, alpha, a + i, m, bk, c + i * n);
  }
}

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = (beta == T{0} ? T{0} : beta * c[i * n + j]) + alpha * acc;
    }
  }
}

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * cols;
    T mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < cols; ++j) row[j] = std::exp(row[j] - mx) / sum;
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, float, const float*,
                          const float*, float, float*);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, double, const double*,
                           const double*, double, double*);
template void softmax_rows<float>(float*, std::size_t, std::size_t);
template void softmax_rows<double>(double*, std::size_t, std::size_t);

}  // namespace reference

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, float, const float*,
                          const float*, float, float*);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, double, const double*,
                           const double*, double, double*);
template void softmax_rows<float>(float*, std::size_t, std::size_t);
template void softmax_rows<double>(double*, std::size_t, std::size_t);

}  // namespace chamae::kernels
