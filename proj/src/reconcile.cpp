#include <cstdlib>
#include <sstream>

#include "yynet/errors.hpp"
#include "yynet/model.hpp"

namespace yynet {

std::vector<ReconcileTarget> target_cifar10_counts() {
  return {{16, 52882}, {32, 191330}, {64, 726274}};
}

std::size_t ReconcileGrid::size() const {
  return expansion_factor.size() * se_ratio.size() * se_bias.size() * conv_bias.size() *
         head_bias.size() * resnet_norm.size() * mbconv_norm.size() * stride_shortcut.size() *
         se_placement.size();
}

bool ReconcilePoint::exact() const {
  if (!valid) return false;
  for (auto d : deltas)
    if (d != 0) return false;
  return true;
}

double ReconcileResult::worst_relative_delta() const {
  const auto& p = best_point();
  double worst = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double rel = std::abs(static_cast<double>(p.deltas[i])) / static_cast<double>(targets[i].params);
    worst = std::max(worst, rel);
  }
  return worst;
}

std::string describe(const BlockInternals& b) {
  std::ostringstream os;
  os << "expansion_factor=" << b.expansion_factor << " se_ratio=";
  if (b.se_ratio) os << b.se_ratio; else os << "none";
  os << " se_bias=" << b.se_bias << " conv_bias=" << b.conv_bias << " head_bias=" << b.head_bias
     << " resnet_norm=" << to_string(b.resnet_norm) << " mbconv_norm=" << to_string(b.mbconv_norm)
     << " stride_shortcut=" << to_string(b.stride_shortcut)
     << " se_placement=" << to_string(b.se_placement);
  return os.str();
}

std::string ReconcileResult::report() const {
  std::ostringstream os;
  os << "# targets:";
  for (const auto& t : targets) os << ' ' << t.channels << "ch=" << t.params;
  os << "\n# grid points: " << points.size() << ", exact matches: " << exact_matches << '\n';
  for (const auto& p : points) {
    os << describe(p.internals) << " |";
    if (!p.valid) {
      os << " invalid\n";
      continue;
    }
    for (auto c : p.counts) os << ' ' << c;
    os << " | deviation " << p.total_abs_deviation << (p.exact() ? " EXACT" : "") << '\n';
  }
  const auto& b = best_point();
  os << "# selected: " << describe(b.internals) << '\n';
  for (std::size_t i = 0; i < targets.size(); ++i) {
    os << "#   " << targets[i].channels << "ch: " << b.counts[i] << " (target " << targets[i].params
       << ", delta " << b.deltas[i] << ")\n";
  }
  return os.str();
}

ReconcileResult reconcile_internals(const std::vector<ReconcileTarget>& targets, const ReconcileGrid& grid) {
  if (targets.empty()) throw ConfigError("reconcile_internals needs at least one target");
  ReconcileResult result;
  result.targets = targets;

  auto evaluate = [&](const BlockInternals& b) {
    ReconcilePoint p;
    p.internals = b;
    try {
      for (const auto& t : targets) {
        ModelConfig c = cifar10_preset(t.channels);
        c.internals = b;
        const std::size_t n = count_parameters(c);
        p.counts.push_back(n);
        const long long d = static_cast<long long>(n) - static_cast<long long>(t.params);
        p.deltas.push_back(d);
        p.total_abs_deviation += std::llabs(d);
      }
    } catch (const ConfigError&) {
      p.valid = false;
      p.counts.clear();
      p.deltas.clear();
    }
    result.points.push_back(std::move(p));
  };

  for (auto e : grid.expansion_factor)
    for (auto r : grid.se_ratio)
      for (std::size_t sb = 0; sb < grid.se_bias.size(); ++sb)
        for (auto cb : grid.conv_bias)
          for (auto hb : grid.head_bias)
            for (auto rn : grid.resnet_norm)
              for (auto mn : grid.mbconv_norm)
                for (auto ss : grid.stride_shortcut)
                  for (std::size_t sp = 0; sp < grid.se_placement.size(); ++sp) {
                    // Without squeeze-excite its bias and placement are moot.
                    if (r == 0 && (sb > 0 || sp > 0)) continue;
                    BlockInternals b;
                    b.expansion_factor = e;
                    b.se_ratio = r;
                    b.se_bias = grid.se_bias[sb];
                    b.conv_bias = cb;
                    b.head_bias = hb;
                    b.resnet_norm = rn;
                    b.mbconv_norm = mn;
                    b.stride_shortcut = ss;
                    b.se_placement = grid.se_placement[sp];
                    evaluate(b);
                  }

  bool have_best = false;
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const auto& p = result.points[i];
    if (!p.valid) continue;
    if (p.exact()) ++result.exact_matches;
    if (!have_best || p.total_abs_deviation < result.points[result.best].total_abs_deviation) {
      result.best = i;
      have_best = true;
    }
  }
  if (!have_best) throw ConfigError("reconcile grid holds no buildable point");
  return result;
}

}  // namespace yynet
