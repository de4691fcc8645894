#pragma once

#include <cstddef>

namespace chamae::kernels {

enum class Trans { kNo, kYes };

// C = alpha * op(A) * op(B) + beta * C with dense row-major operands.
// op(A) is m x k, op(B) is k x n, C is m x n. Leading dimensions are implied
// by the stored shapes (A is m x k or k x m; B is k x n or n x k).
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

// In-place numerically stable softmax over each row of a rows x cols block.
template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols);

// Work size (m*n*k) above which gemm splits rows across OpenMP threads.
inline constexpr std::size_t kParallelGemmWork = std::size_t{1} << 18;

/// Plain triple-loop versions kept as the correctness reference for the
/// optimized kernels above. Never used on the training path.
namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols);

}  // namespace reference

}  // namespace chamae::kernels
