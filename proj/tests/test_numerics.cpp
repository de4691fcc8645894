#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "chamae/autodiff.hpp"
#include "chamae/dft.hpp"
#include "chamae/grad_check.hpp"
#include "chamae/kernels.hpp"
#include "chamae/rng.hpp"

using namespace chamae;
using kernels::Trans;

// ---------------------------------------------------------------- Philox

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswerVectors) {
  EXPECT_EQ(Philox::block({0, 0, 0, 0}, {0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox::block({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox::block({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, SameSeedSameStream) {
  Philox a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differs_stream = false, differs_seed = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u32();
    EXPECT_EQ(x, b.next_u32());
    differs_stream |= x != c.next_u32();
    differs_seed |= x != d.next_u32();
  }
  EXPECT_TRUE(differs_stream);
  EXPECT_TRUE(differs_seed);
}

TEST(Philox, DeriveIsPureFunctionOfTag) {
  Philox root(5);
  Philox a = root.derive(3);
  root.next_u64();  // consuming the parent must not change its children
  Philox b = root.derive(3);
  Philox c = root.derive(4);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Philox(5).derive(3).next_u64(), c.next_u64());
}

TEST(Philox, DrawCounterAndTrace) {
  Philox r(1);
  EXPECT_EQ(r.draws(), 0u);
  r.next_u32();
  EXPECT_EQ(r.draws(), 1u);
  for (int i = 0; i < 6; ++i) r.next_u32();
  EXPECT_EQ(r.draws(), 7u);
  EXPECT_NE(r.trace().find("7"), std::string::npos);
}

TEST(Philox, BelowIsUniform) {
  Philox r(11);
  const std::size_t bound = 6, draws = 60000;
  std::vector<double> counts(bound, 0.0);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto v = r.below(bound);
    ASSERT_LT(v, bound);
    counts[v] += 1.0;
  }
  double chi2 = 0.0;
  const double expected = double(draws) / bound;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 20.515);  // df = 5, p = 0.001
  EXPECT_THROW(r.below(0), std::invalid_argument);
}

TEST(Philox, UniformAndNormalMoments) {
  Philox r(3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.015);
}

// ---------------------------------------------------------------- kernels

template <typename T>
std::vector<T> random_vec(std::size_t n, Philox& r) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(r.normal());
  return v;
}

template <typename T>
void check_gemm(std::size_t m, std::size_t n, std::size_t k, double tol) {
  Philox r(m * 131 + n * 17 + k);
  for (Trans ta : {Trans::kNo, Trans::kYes}) {
    for (Trans tb : {Trans::kNo, Trans::kYes}) {
      const auto a = random_vec<T>(m * k, r), b = random_vec<T>(k * n, r);
      auto c0 = random_vec<T>(m * n, r);
      auto c1 = c0;
      kernels::gemm(ta, tb, m, n, k, T(0.7), a.data(), b.data(), T(0.3), c0.data());
      kernels::reference::gemm(ta, tb, m, n, k, T(0.7), a.data(), b.data(), T(0.3), c1.data());
      for (std::size_t i = 0; i < m * n; ++i) ASSERT_NEAR(c0[i], c1[i], tol * (1.0 + std::abs(double(c1[i]))));
    }
  }
}

TEST(Kernels, GemmMatchesReference) {
  check_gemm<double>(1, 1, 1, 1e-12);
  check_gemm<double>(7, 5, 3, 1e-12);
  check_gemm<double>(33, 17, 65, 1e-12);
  check_gemm<float>(19, 23, 29, 1e-5);
  // Above the OpenMP threshold.
  check_gemm<double>(96, 80, 72, 1e-12);
  check_gemm<float>(128, 64, 64, 1e-4);
}

TEST(Kernels, GemmBetaZeroIgnoresGarbage) {
  std::vector<double> a{1, 2, 3, 4}, b{1, 0, 0, 1}, c{NAN, NAN, NAN, NAN};
  kernels::gemm(Trans::kNo, Trans::kNo, 2, 2, 2, 1.0, a.data(), b.data(), 0.0, c.data());
  EXPECT_EQ(c, (std::vector<double>{1, 2, 3, 4}));
}

TEST(Kernels, SoftmaxMatchesReferenceAndIsStable) {
  Philox r(2);
  auto x = random_vec<double>(5 * 9, r);
  x[3] = 800.0;  // would overflow a naive exp
  auto y = x;
  kernels::softmax_rows(x.data(), 5, 9);
  kernels::reference::softmax_rows(y.data(), 5, 9);
  for (std::size_t row = 0; row < 5; ++row) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      ASSERT_TRUE(std::isfinite(x[row * 9 + c]));
      EXPECT_NEAR(x[row * 9 + c], y[row * 9 + c], 1e-14);
      s += x[row * 9 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------- DFT

// Direct double sum, no shared tables.
std::vector<std::complex<double>> direct_dft2(const std::vector<std::complex<double>>& in, std::size_t p) {
  std::vector<std::complex<double>> out(p * p);
  for (std::size_t u = 0; u < p; ++u)
    for (std::size_t v = 0; v < p; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
          const double ang = -2.0 * std::numbers::pi * double(u * a + v * b) / double(p);
          acc += in[a * p + b] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[u * p + v] = acc;
    }
  return out;
}

TEST(Dft, MatchesDirectSum) {
  Philox r(9);
  for (std::size_t p = 1; p <= 8; ++p) {
    Dft2<double> dft(p);
    std::vector<std::complex<double>> in(p * p), out(p * p);
    for (auto& z : in) z = {r.normal(), r.normal()};
    dft.transform(in, out);
    const auto ref = direct_dft2(in, p);
    for (std::size_t i = 0; i < p * p; ++i) EXPECT_LT(std::abs(out[i] - ref[i]), 1e-10 * (1 + std::abs(ref[i])));

    std::vector<double> real(p * p), amp(p * p);
    for (auto& x : real) x = r.normal();
    std::vector<std::complex<double>> rin(real.begin(), real.end());
    dft.amplitude(real, amp);
    const auto rref = direct_dft2(rin, p);
    for (std::size_t i = 0; i < p * p; ++i) EXPECT_NEAR(amp[i], std::abs(rref[i]), 1e-10 * (1 + std::abs(rref[i])));
  }
}

TEST(Dft, DeltaHasFlatSpectrum) {
  Dft2<double> dft(4);
  std::vector<double> x(16, 0.0), amp(16);
  x[5] = 2.0;
  dft.amplitude(x, amp);
  for (double a : amp) EXPECT_NEAR(a, 2.0, 1e-12);
}

// ---------------------------------------------------------------- autodiff

using G = ad::Graph<double>;
using ad::Var;

Tensor<double> random_tensor(std::size_t r, std::size_t c, Philox& rng, double scale = 1.0) {
  Tensor<double> t = Tensor<double>::matrix(r, c);
  for (auto& x : t.storage()) x = scale * rng.normal();
  return t;
}

// Wraps a graph builder into a grad_check over the given inputs.
GradCheckResult check_op(std::vector<Tensor<double>>& inputs,
                         const std::function<Var(G&, const std::vector<Var>&)>& build) {
  std::vector<NamedParam> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"in" + std::to_string(i), &inputs[i]});
  LossFn fn = [&](std::vector<Tensor<double>>* grads) {
    G g;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(g.leaf(t, true));
    // Random projection makes every output coordinate matter.
    Var out = build(g, vars);
    const auto& ov = g.value(out);
    Philox pr(77);
    Tensor<double> w(ov.shape());
    for (auto& x : w.storage()) x = pr.normal();
    Var loss = g.sum(g.mul(out, g.constant(w)));
    if (grads) {
      g.backward(loss);
      grads->clear();
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const auto& gr = g.grad(vars[i]);
        grads->push_back(gr.empty() ? Tensor<double>(inputs[i].shape()) : gr);
      }
    }
    return g.scalar(loss);
  };
  GradCheckOptions opt;
  opt.max_coords_per_param = 64;
  return grad_check(fn, params, opt);
}

struct OpCase {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::function<Var(G&, const std::vector<Var>&)> build;
};

class AutodiffOps : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 5}}, [](G& g, const auto& v) { return g.matmul(v[0], v[1]); }},
      {"matmul_tb", {{3, 4}, {5, 4}}, [](G& g, const auto& v) { return g.matmul(v[0], v[1], true); }},
      {"linear", {{3, 4}, {4, 2}, {1, 2}}, [](G& g, const auto& v) { return g.linear(v[0], v[1], v[2]); }},
      {"linear_nobias", {{3, 4}, {4, 2}}, [](G& g, const auto& v) { return g.linear(v[0], v[1], Var{}); }},
      {"add", {{2, 3}, {2, 3}}, [](G& g, const auto& v) { return g.add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](G& g, const auto& v) { return g.sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](G& g, const auto& v) { return g.mul(v[0], v[1]); }},
      {"add_row", {{4, 3}, {1, 3}}, [](G& g, const auto& v) { return g.add_row(v[0], v[1]); }},
      {"scale", {{2, 3}}, [](G& g, const auto& v) { return g.scale(v[0], -1.7); }},
      {"add_scalar", {{2, 3}}, [](G& g, const auto& v) { return g.mul(g.add_scalar(v[0], 0.4), v[0]); }},
      {"gelu", {{3, 5}}, [](G& g, const auto& v) { return g.gelu(v[0]); }},
      {"sigmoid", {{3, 5}}, [](G& g, const auto& v) { return g.sigmoid(v[0]); }},
      {"abs", {{3, 5}}, [](G& g, const auto& v) { return g.abs(v[0]); }},
      {"layer_norm", {{3, 6}, {1, 6}, {1, 6}}, [](G& g, const auto& v) { return g.layer_norm(v[0], v[1], v[2]); }},
      {"l2_normalize", {{3, 4}}, [](G& g, const auto& v) { return g.l2_normalize_rows(v[0]); }},
      {"attention_1h", {{3, 4}, {5, 4}, {5, 4}}, [](G& g, const auto& v) { return g.attention(v[0], v[1], v[2], 1); }},
      {"attention_2h", {{4, 6}, {4, 6}, {4, 6}}, [](G& g, const auto& v) { return g.attention(v[0], v[1], v[2], 2); }},
      {"gather_rows", {{4, 3}}, [](G& g, const auto& v) { return g.gather_rows(v[0], {2, 0, 2, 3}); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](G& g, const auto& v) { return g.concat_rows(v); }},
      {"slice_rows", {{5, 2}}, [](G& g, const auto& v) { return g.slice_rows(v[0], 1, 3); }},
      {"sum", {{3, 3}}, [](G& g, const auto& v) { return g.sum(g.mul(v[0], v[0])); }},
      {"mean_rows", {{4, 3}}, [](G& g, const auto& v) { return g.mean_rows(v[0]); }},
      {"dft_amplitude", {{3, 16}}, [](G& g, const auto& v) { return g.dft_amplitude(v[0], 4); }},
      {"cross_entropy", {{1, 5}}, [](G& g, const auto& v) { return g.cross_entropy(v[0], 3); }},
  };
}

TEST_P(AutodiffOps, GradientMatchesFiniteDifference) {
  const OpCase c = op_cases()[static_cast<std::size_t>(GetParam())];
  Philox rng(100 + GetParam());
  std::vector<Tensor<double>> inputs;
  for (auto [r, cc] : c.shapes) inputs.push_back(random_tensor(r, cc, rng));
  const auto res = check_op(inputs, c.build);
  EXPECT_TRUE(res.passed(1e-6)) << c.name << ": " << res.max_rel_error << " at " << res.worst_param << "["
                                << res.worst_index << "] analytic " << res.worst_analytic << " numeric "
                                << res.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(AllOps, AutodiffOps, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) { return op_cases()[static_cast<std::size_t>(info.param)].name; });

TEST(Autodiff, CapabilitiesCoverRequiredOps) {
  EXPECT_NO_THROW(ad::require_capabilities());
  const auto provided = ad::provided_ops();
  std::set<std::string> have(provided.begin(), provided.end());
  for (const auto& op : ad::required_ops()) EXPECT_TRUE(have.count(op)) << op;
}

TEST(Autodiff, CrossEntropyMatchesLogSumExp) {
  G g;
  Tensor<double> logits(Shape{1, 4}, std::vector<double>{1000.0, 999.0, -3.0, 2.0});
  const double lse = 1000.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-1003.0) + std::exp(-998.0));
  EXPECT_NEAR(g.scalar(g.cross_entropy(g.constant(logits), 1)), lse - 999.0, 1e-12);
  EXPECT_THROW(g.cross_entropy(g.constant(logits), 4), std::out_of_range);
}

TEST(Autodiff, GeluMatchesErfForm) {
  G g;
  Tensor<double> x(Shape{1, 5}, std::vector<double>{-3.0, -0.5, 0.0, 0.7, 2.5});
  const auto& y = g.value(g.gelu(g.constant(x)));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(y[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
  }
}

TEST(Autodiff, LayerNormNormalizesRows) {
  G g;
  Philox r(4);
  Tensor<double> x = random_tensor(3, 8, r, 5.0);
  Var y = g.layer_norm(g.constant(x), g.constant(Tensor<double>::matrix(1, 8, 1.0)),
                       g.constant(Tensor<double>::matrix(1, 8, 0.0)));
  const auto& v = g.value(y);
  for (std::size_t row = 0; row < 3; ++row) {
    double m = 0, s = 0;
    for (double z : v.row(row)) m += z;
    for (double z : v.row(row)) s += (z - m / 8) * (z - m / 8);
    EXPECT_NEAR(m / 8, 0.0, 1e-12);
    EXPECT_NEAR(s / 8, 1.0, 1e-6);
  }
}

TEST(Autodiff, AttentionProbabilitiesAreRowStochastic) {
  G g;
  Philox r(8);
  Tensor<double> probs;
  g.attention(g.constant(random_tensor(3, 4, r)), g.constant(random_tensor(6, 4, r)),
              g.constant(random_tensor(6, 4, r)), 2, &probs);
  ASSERT_EQ(probs.shape(), (Shape{2, 3, 6}));
  for (std::size_t row = 0; row < 6; ++row) {
    double s = 0.0;
    for (std::size_t k = 0; k < 6; ++k) s += probs[row * 6 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, ShapeErrorsAreReported) {
  G g;
  Var a = g.constant(Tensor<double>::matrix(2, 3)), b = g.constant(Tensor<double>::matrix(3, 2));
  EXPECT_THROW(g.add(a, b), std::invalid_argument);
  EXPECT_THROW(g.matmul(a, a), std::invalid_argument);
  EXPECT_THROW(g.slice_rows(a, 1, 2), std::out_of_range);
  EXPECT_THROW(g.gather_rows(a, {2}), std::out_of_range);
  EXPECT_THROW(g.backward(a), std::invalid_argument);
}

TEST(Autodiff, LeafBorrowsWithoutCopy) {
  Tensor<double> t = Tensor<double>::matrix(2, 2, 1.5);
  G g;
  Var v = g.leaf(t, true);
  EXPECT_EQ(&g.value(v), &t);
  g.backward(g.sum(v));
  EXPECT_EQ(g.grad(v), Tensor<double>::matrix(2, 2, 1.0));
}

TEST(Autodiff, ConstantsGetNoGradient) {
  G g;
  Var c = g.constant(Tensor<double>::matrix(1, 2, 2.0));
  Var v = g.variable(Tensor<double>::matrix(1, 2, 3.0));
  g.backward(g.sum(g.mul(c, v)));
  EXPECT_TRUE(g.grad(c).empty());
  EXPECT_EQ(g.grad(v), Tensor<double>::matrix(1, 2, 2.0));
}

// ---------------------------------------------------------------- grad_check

TEST(GradCheck, DetectsWrongGradient) {
  Tensor<double> w(Shape{1, 3}, std::vector<double>{0.3, -1.2, 2.0});
  std::vector<NamedParam> params{{"w", &w}};
  LossFn fn = [&](std::vector<Tensor<double>>* grads) {
    double s = 0.0;
    for (double x : w.storage()) s += x * x * x;
    if (grads) {
      Tensor<double> g(w.shape());
      for (std::size_t i = 0; i < 3; ++i) g[i] = 3.0 * w[i] * w[i];
      g[1] *= 1.01;  // planted error
      grads->assign(1, g);
    }
    return s;
  };
  const auto res = grad_check(fn, params);
  EXPECT_FALSE(res.passed(1e-4));
  EXPECT_EQ(res.worst_param, "w");
  EXPECT_EQ(res.worst_index, 1u);
  EXPECT_NEAR(res.max_rel_error, 0.01, 1e-4);
}

TEST(GradCheck, RestoresParametersBitExactly) {
  Philox r(6);
  Tensor<double> w = random_tensor(4, 4, r);
  const Tensor<double> before = w;
  std::vector<NamedParam> params{{"w", &w}};
  LossFn fn = [&](std::vector<Tensor<double>>* grads) {
    double s = 0.0;
    for (double x : w.storage()) s += std::sin(x);
    if (grads) {
      Tensor<double> g(w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) g[i] = std::cos(w[i]);
      grads->assign(1, g);
    }
    return s;
  };
  EXPECT_TRUE(grad_check(fn, params).passed(1e-6));
  EXPECT_EQ(w, before);
}

TEST(GradCheck, RejectsEpsilonOutOfRange) {
  Tensor<double> w = Tensor<double>::matrix(1, 1);
  std::vector<NamedParam> params{{"w", &w}};
  LossFn fn = [](std::vector<Tensor<double>>* grads) {
    if (grads) grads->assign(1, Tensor<double>::matrix(1, 1));
    return 0.0;
  };
  EXPECT_THROW(grad_check(fn, params, {1e-8, 24, 0}), std::invalid_argument);
  EXPECT_THROW(grad_check(fn, params, {1e-2, 24, 0}), std::invalid_argument);
}

TEST(GradCheck, FlagsNonFiniteLossWithParameterPath) {
  Tensor<double> w(Shape{1, 2}, std::vector<double>{1.0, 0.0});
  std::vector<NamedParam> params{{"blocks.0.w", &w}};
  LossFn fn = [&](std::vector<Tensor<double>>* grads) {
    if (grads) grads->assign(1, Tensor<double>::matrix(1, 2));
    return w[0] + std::sqrt(w[1]);  // finite at 0, NaN just below
  };
  const auto res = grad_check(fn, params);
  EXPECT_FALSE(res.finite);
  EXPECT_NE(res.failure.find("blocks.0.w"), std::string::npos);
}
