#include "chamae/dft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace chamae {

template <typename T>
Dft2<T>::Dft2(std::size_t p) : p_(p), twiddle_(p) {
  if (p == 0) throw std::invalid_argument("DFT side must be positive");
  for (std::size_t k = 0; k < p; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(p);
    twiddle_[k] = {static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle))};
  }
}

template <typename T>
void Dft2<T>::transform(std::span<const std::complex<T>> in, std::span<std::complex<T>> out) const {
  const std::size_t p = p_;
  if (in.size() != p * p || out.size() != p * p) throw std::invalid_argument("DFT block size mismatch");
  std::vector<std::complex<T>> scratch(p * p);
  // Along rows: scratch[a][v] = sum_b in[a][b] w^(v*b)
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t v = 0; v < p; ++v) {
      std::complex<T> acc{};
      for (std::size_t b = 0; b < p; ++b) acc += in[a * p + b] * twiddle_[(v * b) % p];
      scratch[a * p + v] = acc;
    }
  }
  // Along columns: out[u][v] = sum_a scratch[a][v] w^(u*a)
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t v = 0; v < p; ++v) {
      std::complex<T> acc{};
      for (std::size_t a = 0; a < p; ++a) acc += scratch[a * p + v] * twiddle_[(u * a) % p];
      out[u * p + v] = acc;
    }
  }
}

template <typename T>
void Dft2<T>::transform_real(std::span<const T> in, std::span<std::complex<T>> out) const {
  std::vector<std::complex<T>> z(in.begin(), in.end());
  transform(z, out);
}

template <typename T>
void Dft2<T>::amplitude(std::span<const T> patch, std::span<T> amp) const {
  std::vector<std::complex<T>> f(p_ * p_);
  transform_real(patch, f);
  for (std::size_t i = 0; i < f.size(); ++i) amp[i] = std::abs(f[i]);
}

template class Dft2<float>;
template class Dft2<double>;

}  // namespace chamae
