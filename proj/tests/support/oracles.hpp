#pragma once

// Test-side oracles. These deliberately avoid the library's reverse-mode
// machinery: gradients are checked against central finite differences of
// plain forward evaluations, EMD against exhaustive assignment search, and
// densities against trapezoid quadrature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ganbench/nn.hpp"
#include "ganbench/tensor.hpp"

namespace oracle {

// Replace one coordinate of one named parameter.
inline ganbench::ParamSet with_coord(const ganbench::ParamSet& params, const std::string& name,
                                     std::size_t idx, double value) {
  ganbench::ParamSet out = params;
  for (auto& item : out.items) {
    if (item.name != name) continue;
    std::vector<double> data = item.value.data();
    data[idx] = value;
    item.value = ganbench::Tensor(item.value.shape(), std::move(data),
                                  item.value.requires_grad());
    return out;
  }
  throw ganbench::Error("with_coord: no parameter named '" + name + "'");
}

struct FdReport {
  double max_rel_err = 0.0;
  long checked = 0;
};

// Central finite differences against a gradient map. `sample_per_tensor`
// limits coordinates per tensor (<= 0 means all), drawn without replacement
// from a seeded stream. Relative error uses a 1e-4 denominator floor so that
// finite-difference roundoff (~1e-10 absolute) cannot dominate components
// whose true derivative is ~0.
template <class LossFn>
FdReport fd_check(LossFn&& loss, const ganbench::ParamSet& params,
                  const ganbench::GradientMap& grads, double h = 1e-5,
                  int sample_per_tensor = 0, std::uint64_t seed = 0) {
  FdReport report;
  ganbench::Rng rng(seed);
  for (const auto& item : params.items) {
    auto git = grads.find(item.name);
    if (git == grads.end())
      throw ganbench::Error("fd_check: no gradient for '" + item.name + "'");
    const auto& g = git->second.data();
    const std::size_t n = item.value.numel();
    std::vector<std::size_t> coords;
    if (sample_per_tensor <= 0 || static_cast<std::size_t>(sample_per_tensor) >= n) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      std::set<std::size_t> picked;
      while (picked.size() < static_cast<std::size_t>(sample_per_tensor))
        picked.insert(static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n))));
      coords.assign(picked.begin(), picked.end());
    }
    for (std::size_t idx : coords) {
      const double v = item.value.data()[idx];
      const double fp = loss(with_coord(params, item.name, idx, v + h));
      const double fm = loss(with_coord(params, item.name, idx, v - h));
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = g[idx];
      const double rel = std::abs(ad - fd) /
                         std::max({std::abs(ad), std::abs(fd), 1e-4});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
    }
  }
  return report;
}

// Exhaustive minimal-cost pairing between two equal-size 1-D samples
// (feasible for n <= ~8). The library's sorted-pairing EMD must match this.
inline double brute_force_emd_1d(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty())
    throw ganbench::Error("brute_force_emd: bad sizes");
  std::vector<int> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      cost += std::abs(x[i] - y[static_cast<std::size_t>(perm[i])]);
    best = std::min(best, cost / static_cast<double>(x.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Mean of per-dimension exhaustive EMD; mirrors the library's multi-d rule.
inline double brute_force_emd(const std::vector<std::vector<double>>& xcols,
                              const std::vector<std::vector<double>>& ycols) {
  if (xcols.size() != ycols.size() || xcols.empty())
    throw ganbench::Error("brute_force_emd: bad dimensionality");
  double total = 0.0;
  for (std::size_t j = 0; j < xcols.size(); ++j)
    total += brute_force_emd_1d(xcols[j], ycols[j]);
  return total / static_cast<double>(xcols.size());
}

// Trapezoid quadrature over a strictly increasing grid.
inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ganbench::Error("trapezoid: bad grid");
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    area += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return area;
}

// Smallest |pre-activation| across every ReLU/LeakyReLU unit of a forward
// pass. Finite differences are only trusted when this margin comfortably
// exceeds the step size (no kink crossing).
inline double kink_margin(const ganbench::Mlp& net, const ganbench::Tensor& x) {
  ganbench::Graph g;
  ganbench::Var h = g.input("x", x);
  double margin = std::numeric_limits<double>::infinity();
  int li = 0;
  for (const ganbench::LayerSpec& l : net.spec().all_layers()) {
    ganbench::Var w = g.input(net.weight_name(li), net.params().require(net.weight_name(li)));
    ganbench::Var b = g.input(net.bias_name(li), net.params().require(net.bias_name(li)));
    ganbench::Var pre = g.add(g.matmul(h, w), b);
    switch (l.act) {
      case ganbench::Activation::kRelu:
      case ganbench::Activation::kLeakyRelu:
        for (double v : g.value(pre).data()) margin = std::min(margin, std::abs(v));
        break;
      default:
        break;
    }
    switch (l.act) {
      case ganbench::Activation::kLinear: h = pre; break;
      case ganbench::Activation::kRelu: h = g.relu(pre); break;
      case ganbench::Activation::kLeakyRelu: h = g.leaky_relu(pre, l.slope); break;
      case ganbench::Activation::kTanh: h = g.tanh(pre); break;
      case ganbench::Activation::kSigmoid: h = g.sigmoid(pre); break;
      case ganbench::Activation::kSoftmax: h = g.softmax(pre); break;
    }
    ++li;
  }
  return margin;
}

}  // namespace oracle
