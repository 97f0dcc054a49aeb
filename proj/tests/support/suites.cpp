#include "support/suites.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "support/gradcheck.hpp"
#include "yynet/blocks.hpp"
#include "yynet/errors.hpp"
#include "yynet/optim.hpp"

namespace yynet::testing {

namespace fs = std::filesystem;

bool all_pass(const std::vector<Outcome>& v) {
  for (const auto& o : v)
    if (!o.pass) return false;
  return true;
}

std::string failures(const std::vector<Outcome>& v) {
  std::string s;
  for (const auto& o : v)
    if (!o.pass) s += o.name + ": " + o.detail + "\n";
  return s;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Moves values within margin of a kink to margin away from it.
void avoid_kinks(T64& t, std::initializer_list<double> kinks, double margin = 1e-2) {
  for (auto& v : t.mutable_data())
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v < k ? -margin : margin);
}

void perturb(const nn::NamedTensors<double>& params, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> d(0.0, scale);
  for (const auto& p : params)
    for (auto& v : const_cast<T64&>(p.tensor).mutable_data()) v += d(rng);
}

void randomize_buffers(const nn::NamedTensors<double>& buffers, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> n(0.0, 0.2);
  for (const auto& b : buffers) {
    const bool var = b.name.size() >= 11 && b.name.compare(b.name.size() - 11, 11, "running_var") == 0;
    for (auto& v : const_cast<T64&>(b.tensor).mutable_data()) v = var ? u(rng) : n(rng);
  }
}

using Inputs = std::vector<std::pair<std::string, T64>>;

struct GradCase {
  std::string name;
  // Builds inputs and the loss closure for one seed.
  std::function<std::pair<Inputs, std::function<T64()>>(std::mt19937_64&, std::uint64_t)> make;
  std::size_t max_per_tensor = 48;
};

template <class Block>
GradCase block_case(std::string name, std::function<Block()> build, Shape in_shape, bool training) {
  GradCase c;
  c.name = std::move(name);
  c.max_per_tensor = 16;
  c.make = [build, in_shape, training](std::mt19937_64& rng, std::uint64_t seed) {
    auto block = std::make_shared<Block>(build());
    Rng init_rng(seed);
    block->init(init_rng);
    nn::NamedTensors<double> params;
    block->collect_parameters("", params);
    perturb(params, rng);
    if (!training) {
      nn::NamedTensors<double> buffers;
      block->collect_buffers("", buffers);
      randomize_buffers(buffers, rng);
    }
    Inputs in = as_inputs(params);
    T64 x = random_tensor(in_shape, rng);
    in.insert(in.begin(), {"x", x});
    auto loss = [block, x, training, seed]() {
      return weighted_sum(block->forward(x, ForwardContext{training, nullptr}), seed);
    };
    return std::make_pair(in, std::function<T64()>(loss));
  };
  return c;
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto simple = [&](std::string name, std::vector<Shape> shapes,
                    std::function<T64(const std::vector<T64>&)> f,
                    std::function<void(std::vector<T64>&)> prep = nullptr) {
    GradCase c;
    c.name = std::move(name);
    c.make = [shapes, f, prep](std::mt19937_64& rng, std::uint64_t seed) {
      std::vector<T64> xs;
      Inputs in;
      for (std::size_t i = 0; i < shapes.size(); ++i) xs.push_back(random_tensor(shapes[i], rng));
      if (prep) prep(xs);
      for (std::size_t i = 0; i < xs.size(); ++i) in.emplace_back("in" + std::to_string(i), xs[i]);
      auto loss = [xs, f, seed]() { return weighted_sum(f(xs), seed); };
      return std::make_pair(in, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  };

  // Tensor primitives.
  simple("add", {{3, 5}, {3, 5}}, [](const auto& x) { return add(x[0], x[1]); });
  simple("sub", {{3, 5}, {3, 5}}, [](const auto& x) { return sub(x[0], x[1]); });
  simple("mul", {{3, 5}, {3, 5}}, [](const auto& x) { return mul(x[0], x[1]); });
  simple("one_minus", {{4, 4}}, [](const auto& x) { return one_minus(x[0]); });
  simple("scale", {{4, 4}}, [](const auto& x) { return scale(x[0], -1.7); });
  simple("matmul", {{4, 6}, {6, 3}}, [](const auto& x) { return matmul(x[0], x[1]); });
  simple("sum", {{2, 3, 4}}, [](const auto& x) { return sum(x[0]); });
  simple("mean", {{2, 3, 4}}, [](const auto& x) { return mean(x[0]); });
  simple("reshape", {{2, 3, 4}}, [](const auto& x) { return reshape(x[0], Shape{6, 4}); });

  // Convolutions.
  auto conv = [&](std::string name, std::size_t cin, std::size_t cout, std::size_t k, nn::ConvOptions o, bool bias,
                  std::size_t hw) {
    std::vector<Shape> shapes{{2, cin, hw, hw}, {cout, cin / o.groups, k, k}};
    if (bias) shapes.push_back(Shape{cout});
    simple(std::move(name), shapes, [o, bias](const auto& x) {
      return nn::conv2d(x[0], x[1], bias ? x[2] : T64(), o);
    });
  };
  conv("conv2d 3x3 pad1", 3, 4, 3, {1, 1, 1}, true, 6);
  conv("conv2d 3x3 stride2", 3, 4, 3, {2, 1, 1}, false, 7);
  conv("conv2d 1x1", 5, 3, 1, {1, 0, 1}, true, 4);
  conv("conv2d 1x1 stride2", 4, 6, 1, {2, 0, 1}, false, 6);
  conv("conv2d grouped", 4, 6, 3, {1, 1, 2}, true, 5);
  conv("conv2d depthwise", 4, 4, 3, {1, 1, 4}, false, 6);
  conv("conv2d depthwise stride2", 4, 4, 3, {2, 1, 4}, false, 7);
  conv("conv2d 5x5 pad2", 2, 3, 5, {1, 2, 1}, false, 6);
  conv("conv2d valid", 2, 3, 3, {1, 0, 1}, true, 5);

  // Normalization and dense layers.
  for (bool training : {true, false}) {
    GradCase c;
    c.name = training ? "batch_norm2d train" : "batch_norm2d eval";
    c.make = [training](std::mt19937_64& rng, std::uint64_t seed) {
      T64 x = random_tensor({3, 4, 3, 3}, rng, 2.0);
      T64 g = random_tensor({4}, rng);
      T64 b = random_tensor({4}, rng);
      auto rm = std::make_shared<T64>(random_tensor({4}, rng));
      auto rv = std::make_shared<T64>(T64::full({4}, 1.3));
      auto loss = [=]() {
        nn::BatchNormOptions o;
        o.training = training;
        return weighted_sum(nn::batch_norm2d(x, g, b, *rm, *rv, o), seed);
      };
      return std::make_pair(Inputs{{"x", x}, {"gamma", g}, {"beta", b}}, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  }
  simple("linear", {{3, 5}, {4, 5}, {4}}, [](const auto& x) { return nn::linear(x[0], x[1], x[2]); });
  simple("linear no bias", {{3, 5}, {4, 5}}, [](const auto& x) { return nn::linear(x[0], x[1], T64()); });

  // Pointwise nonlinearities.
  simple("gelu", {{2, 3, 4, 4}}, [](const auto& x) { return nn::gelu(x[0]); });
  simple("relu", {{2, 3, 4, 4}}, [](const auto& x) { return nn::relu(x[0]); },
         [](auto& xs) { avoid_kinks(xs[0], {0.0}); });
  simple("sigmoid", {{2, 3, 4, 4}}, [](const auto& x) { return nn::sigmoid(x[0]); });
  simple("hard_sigmoid", {{2, 3, 4, 4}}, [](const auto& x) { return nn::hard_sigmoid(scale(x[0], 3.0)); },
         [](auto& xs) { avoid_kinks(xs[0], {-1.0, 1.0}); });

  // Pooling, gating and reshaping ops.
  simple("global_avg_pool", {{2, 3, 4, 5}}, [](const auto& x) { return nn::global_avg_pool(x[0]); });
  simple("channel_scale", {{2, 3, 4, 4}, {2, 3}}, [](const auto& x) { return nn::channel_scale(x[0], x[1]); });
  simple("subsample2d", {{2, 3, 5, 5}}, [](const auto& x) { return nn::subsample2d(x[0], 2); });
  simple("select_channel", {{2, 3, 4, 4}}, [](const auto& x) { return nn::select_channel(x[0], 0); });
  simple("channel_mean", {{2, 3, 4, 4}}, [](const auto& x) { return nn::channel_mean(x[0]); });
  {
    GradCase c;
    c.name = "dropout";
    c.make = [](std::mt19937_64& rng, std::uint64_t seed) {
      T64 x = random_tensor({4, 10}, rng);
      auto loss = [x, seed]() {
        Rng r(seed);  // same mask on every evaluation
        return weighted_sum(nn::dropout(x, 0.3, true, r), seed);
      };
      return std::make_pair(Inputs{{"x", x}}, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "softmax_cross_entropy";
    c.make = [](std::mt19937_64& rng, std::uint64_t) {
      T64 x = random_tensor({5, 7}, rng, 2.0);
      std::vector<std::int32_t> labels{0, 3, 6, 2, 3};
      auto loss = [x, labels]() { return nn::softmax_cross_entropy(x, std::span<const std::int32_t>(labels)); };
      return std::make_pair(Inputs{{"logits", x}}, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  }

  // Fusion gate and Yin input.
  for (FusionFormula f : kAllFusionFormulas) {
    simple(std::string("fuse ") + formula_expression(f), {{2, 3, 4, 4}, {2, 3, 4, 4}},
           [f](const auto& x) { return fuse(x[0], x[1], f); });
  }
  for (YinMode m : {YinMode::kFirstChannel, YinMode::kMean}) {
    simple(std::string("yin_input ") + to_string(m), {{2, 3, 4, 4}}, [m](const auto& x) { return yin_input(x[0], m); });
  }

  // Squeeze-excite.
  for (auto acts : {std::pair{Activation::kGelu, Activation::kSigmoid},
                    std::pair{Activation::kRelu, Activation::kHardSigmoid}}) {
    GradCase c;
    c.name = std::string("squeeze_excite ") + nn::activation_name(acts.first) + "/" + nn::activation_name(acts.second);
    c.make = [acts](std::mt19937_64& rng, std::uint64_t seed) {
      auto se = std::make_shared<nn::SqueezeExcite<double>>(8, 4, true, acts.first, acts.second);
      Rng r(seed);
      se->init(r);
      nn::NamedTensors<double> params;
      se->collect_parameters("se", params);
      perturb(params, rng, 0.3);
      Inputs in = as_inputs(params);
      T64 x = random_tensor({2, 8, 3, 3}, rng);
      in.insert(in.begin(), {"x", x});
      auto loss = [se, x, seed]() { return weighted_sum(se->forward(x), seed); };
      return std::make_pair(in, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  }

  // Sub-blocks under several internals settings.
  BlockInternals textbook;
  BlockInternals reconciled = reconciled_internals();
  BlockInternals subsample = textbook;
  subsample.stride_shortcut = StrideShortcut::kSubsample;
  BlockInternals noshort = textbook;
  noshort.stride_shortcut = StrideShortcut::kNone;
  BlockInternals se_after = textbook;
  se_after.se_placement = SePlacement::kAfterProject;
  se_after.conv_bias = true;
  se_after.mbconv_norm = MBConvNorm::kProjectOnly;
  BlockInternals no_se = textbook;
  no_se.se_ratio = 0;

  using RB = ResNetSubBlock<double>;
  using MB = MBConvSubBlock<double>;
  const std::vector<std::pair<std::string, BlockInternals>> variants{
      {"textbook", textbook}, {"reconciled", reconciled}, {"subsample", subsample}, {"no_shortcut", noshort},
      {"se_after_project", se_after}, {"no_se", no_se}};
  for (const auto& [vname, bi] : variants) {
    const BlockInternals cfg = bi;
    cases.push_back(block_case<RB>("resnet same width " + vname, [cfg] { return RB(4, 4, 1, cfg); }, {2, 4, 6, 6}, true));
    cases.push_back(block_case<RB>("resnet widen stride2 " + vname, [cfg] { return RB(3, 5, 2, cfg); }, {2, 3, 6, 6}, true));
    cases.push_back(block_case<RB>("resnet stride2 " + vname, [cfg] { return RB(4, 4, 2, cfg); }, {2, 4, 6, 6}, true));
    cases.push_back(block_case<MB>("mbconv residual " + vname, [cfg] { return MB(4, 4, 1, cfg); }, {2, 4, 5, 5}, true));
    cases.push_back(block_case<MB>("mbconv widen stride2 " + vname, [cfg] { return MB(4, 6, 2, cfg); }, {2, 4, 6, 6}, true));
  }
  cases.push_back(block_case<RB>("resnet eval", [] { return RB(3, 5, 2, BlockInternals{}); }, {2, 3, 6, 6}, false));
  cases.push_back(block_case<MB>("mbconv eval", [] { return MB(4, 4, 1, BlockInternals{}); }, {2, 4, 5, 5}, false));
  for (BranchKind kind : {BranchKind::kYin, BranchKind::kYang, BranchKind::kSinglePath}) {
    const std::size_t cin = kind == BranchKind::kYin ? 1 : 3;
    cases.push_back(block_case<BranchLayer<double>>(
        std::string("branch layer ") + to_string(kind),
        [kind, cin] { return BranchLayer<double>(kind, cin, 4, 2, 2, true, reconciled_internals()); },
        {2, cin, 8, 8}, true));
  }

  // Whole network, training mode with dropout.
  for (FusionFormula f : {FusionFormula::kAPlusI, FusionFormula::kAMul1MIPlusAMinusI}) {
    GradCase c;
    c.name = std::string("yynet ") + formula_expression(f);
    c.max_per_tensor = 4;
    c.make = [f](std::mt19937_64& rng, std::uint64_t seed) {
      ModelConfig mc = tiny_model_config();
      mc.input_resolution = 16;
      mc.fusion = f;
      mc.dropout_rate = 0.2;
      auto net = std::make_shared<YYNet<double>>(YYNet<double>::build(mc, seed));
      perturb(net->parameters(), rng);
      Inputs in = as_inputs(net->parameters());
      T64 x = random_tensor({2, 3, 16, 16}, rng);
      in.insert(in.begin(), {"x", x});
      std::vector<std::int32_t> labels{1, 7};
      auto loss = [net, x, labels, seed]() {
        Rng r(seed);
        return nn::softmax_cross_entropy(net->forward(x, ForwardContext{true, &r}),
                                         std::span<const std::int32_t>(labels));
      };
      return std::make_pair(in, std::function<T64()>(loss));
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace

std::vector<Outcome> gradient_suite(std::size_t seeds, double tolerance) {
  std::vector<Outcome> out;
  for (const GradCase& c : gradient_cases()) {
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
      std::mt19937_64 rng(seed * 7919);
      auto [inputs, loss] = c.make(rng, seed);
      GradCheckOptions opt;
      opt.max_per_tensor = c.max_per_tensor;
      opt.sample_seed = seed;
      const GradCheckResult r = grad_check(inputs, loss, opt);
      Outcome o;
      o.name = c.name + " seed " + std::to_string(seed);
      o.pass = r.checked > 0 && r.max_error < tolerance;
      o.detail = "max rel err " + fmt("%.3g", r.max_error) + " over " + std::to_string(r.checked) + " elements" +
                 (r.worst.empty() ? "" : "; worst " + r.worst);
      out.push_back(std::move(o));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Outcome> shape_topology_suite() {
  std::vector<Outcome> out;
  for (const std::string& pname : preset_names()) {
    for (FusionFormula f : kAllFusionFormulas) {
      ModelConfig mc = preset(pname);
      mc.fusion = f;
      const std::string tag = pname + " " + formula_expression(f);
      YYNet<float> net = YYNet<float>::build(mc, 3);
      const std::size_t n = mc.input_resolution > 64 ? 1 : 2;
      const std::size_t r = mc.input_resolution;
      Tensor<float> x(Shape{n, 3, r, r});
      std::mt19937_64 rng(11);
      std::normal_distribution<float> d(0.f, 1.f);
      for (auto& v : x.mutable_data()) v = d(rng);

      const auto params = net.parameters();
      for (auto p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
      }
      GradTape<float> tape;
      YYNet<float>::Trace trace;
      {
        auto scope = tape.activate();
        Rng drop(5);
        trace = net.forward_trace(x, ForwardContext{true, &drop});
        std::vector<std::int32_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % mc.num_classes);
        tape.backward(nn::softmax_cross_entropy(trace.logits, std::span<const std::int32_t>(labels)));
      }

      // Expected halvings from the stride policy: every Yin/Yang layer strides
      // once; every single-path layer strides in its ResNet and optionally in
      // its first MBConv.
      const std::size_t yy_halvings = mc.yy_layers;
      const std::size_t sp_halvings = mc.sp_layers * (mc.extra_sp_stride2 ? 2 : 1);
      const std::size_t fused_side = r >> yy_halvings;
      const std::size_t final_side = r >> (yy_halvings + sp_halvings);

      Outcome same{tag + ": yin/yang shapes equal at fusion", trace.yin.shape() == trace.yang.shape(),
                   trace.yin.shape().to_string() + " vs " + trace.yang.shape().to_string()};
      out.push_back(same);
      Outcome fused{tag + ": fusion resolution", trace.fused.dim(2) == fused_side && trace.fused.dim(3) == fused_side,
                    "got " + trace.fused.shape().to_string() + ", expected side " + std::to_string(fused_side)};
      out.push_back(fused);
      Outcome trunk{tag + ": halving count",
                    trace.trunk.dim(2) == final_side && trace.trunk.dim(3) == final_side &&
                        mc.stride2_count() == yy_halvings + sp_halvings,
                    "trunk " + trace.trunk.shape().to_string() + ", expected side " + std::to_string(final_side)};
      out.push_back(trunk);
      Outcome logits{tag + ": logits", trace.logits.shape() == Shape{n, mc.num_classes},
                     trace.logits.shape().to_string()};
      out.push_back(logits);

      std::size_t reached = 0;
      std::string missing;
      for (const auto& p : params) {
        bool nonzero = false;
        if (p.tensor.has_grad())
          for (float g : p.tensor.grad()) nonzero = nonzero || g != 0.f;
        if (nonzero) {
          ++reached;
        } else if (missing.size() < 200) {
          missing += p.name + " ";
        }
      }
      out.push_back({tag + ": gradient reaches all parameters", reached == params.size(),
                     std::to_string(reached) + "/" + std::to_string(params.size()) +
                         (missing.empty() ? "" : " missing: " + missing)});
      out.push_back({tag + ": param count", net.param_count() == count_parameters(mc),
                     std::to_string(net.param_count()) + " vs closed form " + std::to_string(count_parameters(mc))});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Plain scalar AdamW recurrence, written independently of the library.
struct ScalarAdamW {
  std::vector<double> theta, m, v;
  int t = 0;
  void step(const std::vector<double>& g, double lr, double wd, double b1, double b2, double eps) {
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(b1, t));
      const double vhat = v[i] / (1 - std::pow(b2, t));
      theta[i] = theta[i] - lr * mhat / (std::sqrt(vhat) + eps) - lr * wd * theta[i];
    }
  }
};

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

std::vector<Outcome> optimizer_suite(const fs::path& scratch) {
  std::vector<Outcome> out;
  const OneCycleConfig oc;

  // AdamW against the scalar recurrence.
  {
    std::mt19937_64 rng(2024);
    T64 w = random_tensor({5, 7}, rng);
    T64 b = random_tensor({7}, rng);
    nn::NamedTensors<double> params{{"w", w}, {"b", b}};
    ScalarAdamW ref;
    for (const auto& p : params) ref.theta.insert(ref.theta.end(), p.tensor.data().begin(), p.tensor.data().end());
    ref.m.assign(ref.theta.size(), 0.0);
    ref.v.assign(ref.theta.size(), 0.0);
    AdamWState<double> st;
    st.reset(params);
    const std::size_t steps = 100;
    double worst = 0.0;
    std::normal_distribution<double> gd(0.0, 0.5);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<double> flat;
      for (auto& p : params) {
        auto g = const_cast<T64&>(p.tensor).mutable_grad();
        for (auto& x : g) {
          x = gd(rng);
          flat.push_back(x);
        }
      }
      const double lr = onecycle_lr(s, steps, 1e-2, oc);
      const double wd = 1.56 * lr;
      adamw_step(params, st, lr, wd, AdamWHyper{0.9, 0.999, 1e-8});
      ref.step(flat, lr, wd, 0.9, 0.999, 1e-8);
      std::size_t k = 0;
      for (const auto& p : params)
        for (double x : p.tensor.data()) worst = std::max(worst, rel_diff(x, ref.theta[k++]));
    }
    out.push_back({"adamw matches scalar recurrence over 100 steps", worst <= 1e-12,
                   "max relative difference " + fmt("%.3g", worst)});
  }

  // Global-norm clipping.
  {
    std::mt19937_64 rng(7);
    double worst_excess = -1.0, worst_mismatch = 0.0;
    for (double mag : {1e-3, 0.5, 0.999, 1.0, 1.001, 3.0, 1e4}) {
      T64 a = random_tensor({4, 9}, rng);
      T64 b = random_tensor({13}, rng);
      nn::NamedTensors<double> params{{"a", a}, {"b", b}};
      std::normal_distribution<double> d(0.0, 1.0);
      for (auto& p : params)
        for (auto& g : const_cast<T64&>(p.tensor).mutable_grad()) g = d(rng);
      const double n0 = global_grad_norm(params);
      for (auto& p : params)
        for (auto& g : const_cast<T64&>(p.tensor).mutable_grad()) g *= mag / n0;
      const double pre = clip_global_norm(params, 1.0);
      const double post = global_grad_norm(params);
      worst_excess = std::max(worst_excess, post - 1.0);
      worst_mismatch = std::max(worst_mismatch, std::abs(post - std::min(pre, 1.0)));
    }
    out.push_back({"clip: post-clip norm <= 1.0", worst_excess <= 1e-6, "max excess " + fmt("%.3g", worst_excess)});
    out.push_back({"clip: post-clip norm == min(pre, 1.0)", worst_mismatch <= 1e-6,
                   "max mismatch " + fmt("%.3g", worst_mismatch)});
  }

  // One-cycle schedule on the full CIFAR-10 recipe.
  {
    const std::size_t total = data::num_batches(50000, 64) * 40;
    const std::size_t peak = onecycle_peak_step(total, oc);
    double best = 0.0;
    std::size_t hits = 0;
    bool positive = true;
    for (std::size_t s = 0; s < total; ++s) {
      const double lr = onecycle_lr(s, total, 1e-2, oc);
      best = std::max(best, lr);
      hits += lr == 1e-2;
      positive = positive && lr > 0;
    }
    out.push_back({"schedule: lr reaches 1e-2 exactly once at the peak",
                   onecycle_lr(peak, total, 1e-2, oc) == 1e-2 && best == 1e-2 && hits == 1 && positive,
                   "peak step " + std::to_string(peak) + " of " + std::to_string(total) + ", max " + fmt("%.17g", best) +
                       ", hits " + std::to_string(hits)});
  }

  // EMA recurrence and activation step.
  {
    std::mt19937_64 rng(99);
    T64 w = random_tensor({6}, rng);
    nn::NamedTensors<double> params{{"w", w}};
    const std::size_t total = 40;
    Ema<double> ema;
    ema.start_step = Ema<double>::activation_step(total, 0.25);
    std::vector<double> shadow;
    bool ok = ema.start_step == 10;
    std::string why;
    double worst = 0.0;
    std::normal_distribution<double> d(0.0, 1.0);
    for (std::size_t s = 0; s < total; ++s) {
      for (auto& v : w.mutable_data()) v += 0.1 * d(rng);
      ema.update(params, s);
      if (s < ema.start_step) {
        if (ema.active) ok = false, why = "active before start";
        continue;
      }
      if (!ema.active) ok = false, why = "inactive at/after start";
      if (s == ema.start_step) {
        shadow.assign(w.data().begin(), w.data().end());
      } else {
        for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = 0.1 * shadow[i] + 0.9 * w.data()[i];
      }
      for (std::size_t i = 0; i < shadow.size(); ++i) worst = std::max(worst, std::abs(ema.shadow[0][i] - shadow[i]));
    }
    out.push_back({"ema: activates at floor(0.25 * total) and follows 0.1*shadow + 0.9*current",
                   ok && worst <= 1e-15, "start " + std::to_string(ema.start_step) + ", max diff " +
                                             fmt("%.3g", worst) + (why.empty() ? "" : ", " + why)});
  }

  // The same properties read back from a real (tiny) training run.
  {
    RunConfig cfg;
    cfg.model = tiny_model_config();
    cfg.train.epochs = 4;
    cfg.train.batch_size = 16;
    cfg.train.eval_batch_size = 32;
    cfg.train.seed = 5;
    const auto train_split = synthetic_split(96, 1, "train");
    const auto test_split = synthetic_split(32, 2, "test");
    TrainerOptions topt;
    topt.out_dir = scratch / "optim_suite_run";
    fs::remove_all(topt.out_dir);
    train(cfg, train_split, test_split, unit_stats(), topt);
    const CsvTable t = read_csv(topt.out_dir / "metrics.csv");
    const std::size_t ce = t.column("epoch"), cl = t.column("lr"), cw = t.column("wd"), ca = t.column("ema_active"),
                      cs = t.column("step");
    const std::size_t total = t.rows.size();
    const std::size_t per_epoch = total / cfg.train.epochs;

    double wd_err = 0.0;
    std::size_t boundaries = 0;
    bool first_wd_ok = false;
    for (std::size_t i = 1; i < total; ++i) {
      const double wd = std::stod(t.rows[i][cw]);
      if (t.rows[i][ce] != t.rows[i - 1][ce]) {
        wd_err = std::max(wd_err, std::abs(wd - 1.56 * std::stod(t.rows[i - 1][cl])));
        ++boundaries;
      } else {
        wd_err = std::max(wd_err, std::abs(wd - std::stod(t.rows[i - 1][cw])));
      }
    }
    first_wd_ok = std::abs(std::stod(t.rows[0][cw]) - 1.56 * std::stod(t.rows[0][cl])) <= 1e-12;
    out.push_back({"run: wd == 1.56 * lr at every epoch boundary", wd_err <= 1e-9 && first_wd_ok &&
                                                                        boundaries == cfg.train.epochs - 1,
                   std::to_string(boundaries) + " boundaries, max error " + fmt("%.3g", wd_err)});

    std::size_t flip = total;
    for (std::size_t i = 0; i < total; ++i)
      if (t.rows[i][ca] == "1") {
        flip = i;
        break;
      }
    bool monotone = true;
    for (std::size_t i = flip; i < total; ++i) monotone = monotone && t.rows[i][ca] == "1";
    const std::size_t expect = total / 4;
    out.push_back({"run: ema_active flips at floor(0.25 * total_steps)",
                   flip == expect && monotone && std::stoul(t.rows[flip][cs]) == expect,
                   "flipped at step " + std::to_string(flip) + ", expected " + std::to_string(expect) + " of " +
                       std::to_string(total)});

    double best = 0.0;
    std::size_t hits = 0;
    for (const auto& row : t.rows) {
      const double lr = std::stod(row[cl]);
      best = std::max(best, lr);
      hits += lr == 1e-2;
    }
    out.push_back({"run: lr column reaches 1e-2 exactly once", best == 1e-2 && hits == 1 && per_epoch == 6,
                   "max " + fmt("%.17g", best) + ", hits " + std::to_string(hits)});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Outcome> data_integrity_suite(const fs::path& dir) {
  std::vector<Outcome> out;
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& f : data::train_batch_files()) files.emplace_back(f, "train");
  files.emplace_back(data::test_batch_file(), "test");
  std::size_t train_records = 0, test_records = 0;
  for (const auto& [name, role] : files) {
    const fs::path p = dir / name;
    std::ifstream in(p, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Outcome o{name + ": size, labels, round-trip", false, ""};
    if (bytes.empty()) {
      o.detail = "missing or empty";
      out.push_back(o);
      continue;
    }
    try {
      const data::DatasetSplit s = data::read_batch_file(p, role);
      bool labels_ok = true;
      for (auto l : s.labels) labels_ok = labels_ok && l >= 0 && l < 10;
      std::size_t raw_bad = 0;
      for (std::size_t r = 0; r < bytes.size() / data::kRecordBytes; ++r)
        raw_bad += bytes[r * data::kRecordBytes] >= 10;
      const bool size_ok = bytes.size() % data::kRecordBytes == 0 && bytes.size() / data::kRecordBytes == 10000;
      const bool roundtrip = data::encode_records(s) == bytes;
      (role == "train" ? train_records : test_records) += s.size();
      o.pass = size_ok && labels_ok && raw_bad == 0 && roundtrip && s.size() == 10000;
      o.detail = std::to_string(bytes.size()) + " bytes, " + std::to_string(s.size()) + " records, labels " +
                 (labels_ok && raw_bad == 0 ? "ok" : "out of range") + ", round-trip " +
                 (roundtrip ? "identical" : "differs");
    } catch (const std::exception& e) {
      o.detail = e.what();
    }
    out.push_back(o);
  }
  Outcome counts{"record counts 50,000 / 10,000", false, ""};
  try {
    const data::Cifar10 c = data::load_cifar10(dir);
    counts.pass = c.train.size() == 50000 && c.test.size() == 10000 && train_records == 50000 && test_records == 10000;
    counts.detail = std::to_string(c.train.size()) + " / " + std::to_string(c.test.size());
  } catch (const std::exception& e) {
    counts.detail = e.what();
  }
  out.push_back(counts);

  // The loader must reject a truncated record and an out-of-range label.
  const fs::path tmp = fs::temp_directory_path() / "yynet_integrity_probe.bin";
  auto rejects = [&](const std::vector<std::uint8_t>& bytes) {
    std::ofstream(tmp, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));
    try {
      data::read_batch_file(tmp, "train");
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };
  std::vector<std::uint8_t> rec(data::kRecordBytes * 2, 7);
  const bool good_ok = !rejects(rec);
  std::vector<std::uint8_t> truncated(rec.begin(), rec.end() - 1);
  std::vector<std::uint8_t> bad_label = rec;
  bad_label[data::kRecordBytes] = 10;
  out.push_back({"loader rejects truncated records and labels >= 10", good_ok && rejects(truncated) && rejects(bad_label),
                 ""});
  fs::remove(tmp);
  return out;
}

Outcome reconcile_outcome() {
  const ReconcileResult r = reconcile_internals(target_cifar10_counts());
  const ReconcilePoint& best = r.best_point();
  std::ostringstream d;
  for (std::size_t i = 0; i < r.targets.size(); ++i) {
    d << (i ? ", " : "") << r.targets[i].channels << "ch " << best.counts[i] << "/" << r.targets[i].params;
  }
  d << "; " << r.exact_matches << " exact grid point(s) of " << r.points.size() << "; " << describe(best.internals);
  return {"parameter tri-point reconstruction", best.exact() && r.exact_matches >= 1, d.str()};
}

// ---------------------------------------------------------------------------

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.name = "tiny";
  mc.yy_start_channels = 4;
  mc.sp_start_channels = 6;
  mc.channels_per_mbconv = 2;
  mc.yy_layers = 1;
  mc.sp_layers = 1;
  mc.yy_mbconv_per_layer = 1;
  mc.sp_mbconv_per_layer = 1;
  mc.extra_sp_stride2 = true;
  mc.pre_classifier_neurons = 8;
  mc.num_classes = 10;
  mc.input_resolution = 32;
  mc.internals = reconciled_internals();
  mc.internals.se_ratio = 2;
  return mc;
}

data::DatasetSplit synthetic_split(std::size_t n, std::uint64_t seed, const std::string& role) {
  data::DatasetSplit s;
  s.role = role;
  s.pixels.resize(n * data::kImageBytes);
  s.labels.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  for (std::size_t i = 0; i < n; ++i) {
    s.labels[i] = static_cast<std::int32_t>(i % 10);
    // Class-dependent brightness so the task is learnable.
    for (std::size_t j = 0; j < data::kImageBytes; ++j) {
      const int base = static_cast<int>(s.labels[i]) * 20 + (j / data::kPlane) * 10;
      s.pixels[i * data::kImageBytes + j] = static_cast<std::uint8_t>(std::clamp(base + px(rng) / 4, 0, 255));
    }
  }
  return s;
}

data::ChannelStats unit_stats() {
  data::ChannelStats s;
  s.mean = {0.5, 0.5, 0.5};
  s.std = {0.25, 0.25, 0.25};
  return s;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::out_of_range("no column " + name);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

}  // namespace yynet::testing
