#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace chamae {

/// Unnormalized 2-D DFT of a p x p row-major block:
///   out[u][v] = sum_{a,b} in[a][b] * exp(-2*pi*i*(u*a + v*b)/p)
/// computed separably (rows, then columns) from a shared twiddle table.
template <typename T>
class Dft2 {
 public:
  explicit Dft2(std::size_t p);

  std::size_t side() const { return p_; }

  void transform(std::span<const std::complex<T>> in, std::span<std::complex<T>> out) const;
  void transform_real(std::span<const T> in, std::span<std::complex<T>> out) const;

  /// |F| for one real patch.
  void amplitude(std::span<const T> patch, std::span<T> amp) const;

 private:
  std::size_t p_;
  std::vector<std::complex<T>> twiddle_;  // twiddle_[k] = exp(-2*pi*i*k/p)
};

}  // namespace chamae
