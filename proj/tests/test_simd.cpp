#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "yynet/model.hpp"
#include "yynet/simd/kernels.hpp"

using namespace yynet;
using namespace yynet::simd;

namespace {

template <class T>
std::vector<T> rand_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <class T>
double tol() {
  return std::is_same_v<T, float> ? 2e-5 : 1e-12;
}

template <class T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double rel, const char* what) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / std::max(1.0, std::abs(double(b[i]))));
  INFO(what << " worst " << worst);
  CHECK(worst <= rel);
}

// Restores the process-wide ISA after a test changes it.
struct IsaGuard {
  Isa saved = active_isa();
  ~IsaGuard() { set_isa(saved); }
};

}  // namespace

TEST_SUITE("simd") {
  TEST_CASE("scalar is always available and selectable") {
    IsaGuard g;
    CHECK(isa_supported(Isa::kScalar));
    set_isa(Isa::kScalar);
    CHECK(active_isa() == Isa::kScalar);
    CHECK(std::string(kernels<float>().name) == "scalar");
    if (!isa_supported(Isa::kAvx2)) CHECK_THROWS(set_isa(Isa::kAvx2));
  }

  TEST_CASE_TEMPLATE("avx2 kernels agree with the scalar reference", T, float, double) {
    if (!isa_supported(Isa::kAvx2)) {
      MESSAGE("AVX2 not available; skipping");
      return;
    }
    const auto& s = kernels_for<T>(Isa::kScalar);
    const auto& v = kernels_for<T>(Isa::kAvx2);
    std::mt19937_64 rng(8);
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 33u, 64u, 100u, 1023u}) {
      const auto a = rand_vec<T>(n, rng), b = rand_vec<T>(n, rng), base = rand_vec<T>(n, rng);
      auto run2 = [&](auto fn_s, auto fn_v, const char* what) {
        std::vector<T> os(n), ov(n);
        fn_s(os.data());
        fn_v(ov.data());
        check_close(ov, os, tol<T>(), what);
      };
      run2([&](T* o) { s.add(n, a.data(), b.data(), o); }, [&](T* o) { v.add(n, a.data(), b.data(), o); }, "add");
      run2([&](T* o) { s.sub(n, a.data(), b.data(), o); }, [&](T* o) { v.sub(n, a.data(), b.data(), o); }, "sub");
      run2([&](T* o) { s.mul(n, a.data(), b.data(), o); }, [&](T* o) { v.mul(n, a.data(), b.data(), o); }, "mul");
      run2([&](T* o) { std::copy(base.begin(), base.end(), o); s.mul_acc(n, a.data(), b.data(), o); },
           [&](T* o) { std::copy(base.begin(), base.end(), o); v.mul_acc(n, a.data(), b.data(), o); }, "mul_acc");
      run2([&](T* o) { std::copy(base.begin(), base.end(), o); s.axpy(n, T(0.7), a.data(), o); },
           [&](T* o) { std::copy(base.begin(), base.end(), o); v.axpy(n, T(0.7), a.data(), o); }, "axpy");
      run2([&](T* o) { s.affine(n, T(1.5), T(-0.25), a.data(), o); },
           [&](T* o) { v.affine(n, T(1.5), T(-0.25), a.data(), o); }, "affine");
      const auto wide = rand_vec<T>(n, rng, 3.0);
      run2([&](T* o) { s.gelu(n, wide.data(), o); }, [&](T* o) { v.gelu(n, wide.data(), o); }, "gelu");
      run2([&](T* o) { std::copy(base.begin(), base.end(), o); s.gelu_backward(n, wide.data(), a.data(), o); },
           [&](T* o) { std::copy(base.begin(), base.end(), o); v.gelu_backward(n, wide.data(), a.data(), o); },
           "gelu_backward");
      const double ds = s.dot(n, a.data(), b.data()), dv = v.dot(n, a.data(), b.data());
      CHECK(std::abs(ds - dv) <= tol<T>() * std::max(1.0, std::sqrt(double(n))));
      const double ss = s.sum(n, a.data()), sv = v.sum(n, a.data());
      CHECK(std::abs(ss - sv) <= tol<T>() * std::max(1.0, std::sqrt(double(n))));
    }
    for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, std::tuple{5u, 7u, 3u}, std::tuple{33u, 65u, 17u},
                           std::tuple{64u, 1024u, 27u}, std::tuple{96u, 17u, 144u}}) {
      const auto a = rand_vec<T>(m * k, rng), b = rand_vec<T>(k * n, rng), c0 = rand_vec<T>(m * n, rng);
      for (bool acc : {false, true}) {
        std::vector<T> cs = c0, cv = c0;
        s.gemm(m, n, k, a.data(), k, b.data(), n, cs.data(), n, acc);
        v.gemm(m, n, k, a.data(), k, b.data(), n, cv.data(), n, acc);
        check_close(cv, cs, tol<T>() * std::sqrt(double(k)), "gemm");
      }
    }
  }

  TEST_CASE("float gelu stays close to the exact erf form") {
    const auto& k = kernels<float>();
    std::vector<float> x(2001), y(2001);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = -10.0f + 0.01f * float(i);
    k.gelu(x.size(), x.data(), y.data());
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double ref = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
      worst = std::max(worst, std::abs(y[i] - ref));
    }
    CHECK(worst < 2e-6);
  }

  TEST_CASE("a model forward is equivalent under both ISAs") {
    if (!isa_supported(Isa::kAvx2)) return;
    IsaGuard g;
    ModelConfig mc = cifar10_preset(16);
    Tensor<float> x(Shape{2, 3, 32, 32});
    std::mt19937_64 rng(2);
    std::normal_distribution<float> d;
    for (auto& v : x.mutable_data()) v = d(rng);
    set_isa(Isa::kScalar);
    auto net = YYNet<float>::build(mc, 1);
    const auto ys = net.forward(x, nn::ForwardContext{false, nullptr}).detach();
    set_isa(Isa::kAvx2);
    const auto yv = net.forward(x, nn::ForwardContext{false, nullptr}).detach();
    for (std::size_t i = 0; i < ys.numel(); ++i) CHECK(yv.data()[i] == doctest::Approx(ys.data()[i]).epsilon(1e-3));
  }
}
