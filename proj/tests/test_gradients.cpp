#include <doctest.h>

#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace yynet::testing;

TEST_SUITE("gradients") {
  TEST_CASE("every op, layer and block passes central differences over 5 seeds") {
    const auto outcomes = gradient_suite(5, 1e-4);
    CHECK(outcomes.size() > 100);
    for (const auto& o : outcomes) {
      INFO(o.name << ": " << o.detail);
      CHECK(o.pass);
    }
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("the checker flags a wrong backward rule") {
    std::mt19937_64 rng(3);
    T64 x = random_tensor({3, 4}, rng);
    // y = 2x with a backward rule that claims dy/dx = 2.01
    auto broken = [x]() {
      T64 y = T64::uninitialized(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) y.mutable_data()[i] = 2.0 * x.data()[i];
      if (auto* tape = yynet::detail::recording_tape<double>({&x})) {
        tape->record(y, [xi = x.impl()](std::span<const double> g) {
          auto gx = yynet::detail::grad_slot(xi);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.01 * g[i];
        });
      }
      return weighted_sum(y, 1);
    };
    const GradCheckResult r = grad_check({{"x", x}}, broken);
    CHECK(r.max_error > 1e-3);
  }
}
