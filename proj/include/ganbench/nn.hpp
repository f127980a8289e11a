#pragma once

// Fully connected networks on the autodiff tape, plus the two optimizers the
// training loops use.
//
// Initialization is Glorot uniform (+-sqrt(6/(fan_in+fan_out))) with zero
// biases, drawn layer by layer from a dedicated seeded stream, so a given
// (spec, seed) pair always yields bit-identical parameters.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ganbench/common.hpp"
#include "ganbench/tensor.hpp"

namespace ganbench {

enum class Activation : std::uint8_t {
  kLinear, kRelu, kLeakyRelu, kTanh, kSigmoid, kSoftmax,
};

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

struct LayerSpec {
  int width = 0;
  Activation act = Activation::kLinear;
  double slope = 0.2;  // LeakyReLU only
};

struct MlpSpec {
  int input_dim = 0;
  std::vector<LayerSpec> hidden;
  LayerSpec output;
  std::uint64_t init_seed = 0;

  std::vector<LayerSpec> all_layers() const {
    std::vector<LayerSpec> out = hidden;
    out.push_back(output);
    return out;
  }

  // Weights plus biases across every layer.
  std::int64_t param_count() const {
    std::int64_t total = 0;
    int fan_in = input_dim;
    for (const LayerSpec& l : all_layers()) {
      total += static_cast<std::int64_t>(fan_in) * l.width + l.width;
      fan_in = l.width;
    }
    return total;
  }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ParamSet {
  std::vector<NamedTensor> items;

  const Tensor& require(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return it.value;
    throw Error("ParamSet: no parameter named '" + name + "'");
  }

  void set(const std::string& name, Tensor value) {
    for (auto& it : items) {
      if (it.name == name) {
        it.value = std::move(value);
        return;
      }
    }
    throw Error("ParamSet: no parameter named '" + name + "'");
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& it : items) n += it.value.numel();
    return n;
  }
};

// A reusable feed-forward network: immutable architecture plus the current
// parameter values. apply() re-emits the layer expressions onto any graph,
// so the same network can appear several times in one loss (its parameters
// bind once by name).
class Mlp {
 public:
  Mlp() = default;

  Mlp(MlpSpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
    validate();
    Rng rng(derive_seed(spec_.init_seed, "glorot"));
    int fan_in = spec_.input_dim;
    int li = 0;
    for (const LayerSpec& l : spec_.all_layers()) {
      const double limit = std::sqrt(6.0 / (fan_in + l.width));
      std::vector<double> w(static_cast<std::size_t>(fan_in) * l.width);
      for (double& v : w) v = rng.uniform(-limit, limit);
      params_.items.push_back({weight_name(li), Tensor(Shape{fan_in, l.width}, std::move(w), true)});
      params_.items.push_back({bias_name(li), Tensor::zeros(Shape{l.width}).with_requires_grad(true)});
      fan_in = l.width;
      ++li;
    }
  }

  // Rebuild from externally supplied parameters (checkpoint restore).
  Mlp(MlpSpec spec, std::string prefix, ParamSet params)
      : spec_(std::move(spec)), prefix_(std::move(prefix)), params_(std::move(params)) {
    validate();
    int fan_in = spec_.input_dim;
    int li = 0;
    for (const LayerSpec& l : spec_.all_layers()) {
      const Tensor& w = params_.require(weight_name(li));
      const Tensor& b = params_.require(bias_name(li));
      if (w.shape() != Shape{fan_in, l.width} || b.shape() != Shape{l.width})
        throw Error("Mlp: restored parameter shapes do not match the spec at layer " +
                    std::to_string(li));
      fan_in = l.width;
      ++li;
    }
  }

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return spec_.output.width; }

  std::string weight_name(int layer) const { return prefix_ + "/W" + std::to_string(layer); }
  std::string bias_name(int layer) const { return prefix_ + "/b" + std::to_string(layer); }

  // Emits the forward expressions for a 2-D batch. `trainable` controls
  // whether the bound parameters participate in backward().
  Var apply(Graph& g, Var x, bool trainable = true) const {
    if (g.shape_of(x).size() != 2 || g.shape_of(x)[1] != spec_.input_dim)
      throw GraphError("Mlp '" + prefix_ + "': input must be (n, " +
                       std::to_string(spec_.input_dim) + "), got " +
                       shape_str(g.shape_of(x)), x.i);
    Var h = x;
    int li = 0;
    for (const LayerSpec& l : spec_.all_layers()) {
      Var w = g.input(weight_name(li), params_.require(weight_name(li)).with_requires_grad(trainable));
      Var b = g.input(bias_name(li), params_.require(bias_name(li)).with_requires_grad(trainable));
      h = g.add(g.matmul(h, w), b);
      switch (l.act) {
        case Activation::kLinear: break;
        case Activation::kRelu: h = g.relu(h); break;
        case Activation::kLeakyRelu: h = g.leaky_relu(h, l.slope); break;
        case Activation::kTanh: h = g.tanh(h); break;
        case Activation::kSigmoid: h = g.sigmoid(h); break;
        case Activation::kSoftmax: h = g.softmax(h); break;
      }
      ++li;
    }
    return h;
  }

  // Plain forward pass outside any caller-owned graph.
  Tensor operator()(const Tensor& x) const {
    Graph g;
    Var in = g.input("x", x);
    return g.value(apply(g, in, false));
  }

 private:
  void validate() const {
    if (spec_.input_dim <= 0) throw Error("Mlp: input_dim must be positive");
    for (const LayerSpec& l : spec_.all_layers())
      if (l.width <= 0) throw Error("Mlp: every layer width must be positive");
    if (prefix_.empty()) throw Error("Mlp: empty parameter prefix");
  }

  MlpSpec spec_;
  std::string prefix_;
  ParamSet params_;
};

inline Mlp build_mlp(const MlpSpec& spec, const std::string& prefix) {
  return Mlp(spec, prefix);
}

// Gradient of a per-row scalar network output with respect to the input
// batch, returned as a graph node for further composition.
inline Var input_gradient(Graph& g, Var per_row_output, Var x) {
  const Shape& s = g.shape_of(per_row_output);
  bool per_row = (s.size() == 1) || (s.size() == 2 && s[1] == 1);
  if (!per_row)
    throw GraphError("input_gradient: output must be one scalar per row, got " +
                     shape_str(s), per_row_output.i);
  if (g.shape_of(x).empty() || g.shape_of(x)[0] != s[0])
    throw GraphError("input_gradient: row counts differ", x.i);
  return g.grad(g.sum_all(per_row_output), x);
}

// Standalone form: evaluates network(x) and returns dF/dx per batch row.
inline Tensor input_gradient(const Mlp& network, const Tensor& x) {
  Graph g;
  Var in = g.input("x", x.with_requires_grad(true));
  Var out = network.apply(g, in, false);
  return g.value(input_gradient(g, out, in));
}

// --- optimizers ------------------------------------------------------------

enum class Direction : std::uint8_t { kAscend, kDescend };

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;  // GAN-style default
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
  std::int64_t t = 0;
};

struct RmspropConfig {
  double lr = 5e-5;
  double decay = 0.9;
  double eps = 1e-8;
};

struct RmspropState {
  std::map<std::string, Tensor> mean_sq;
  std::int64_t t = 0;
};

namespace detail {
inline const Tensor& grad_for(const GradientMap& grads, const NamedTensor& p) {
  auto it = grads.find(p.name);
  if (it == grads.end())
    throw Error("optimizer: missing gradient for parameter '" + p.name + "'");
  if (it->second.shape() != p.value.shape())
    throw Error("optimizer: gradient shape mismatch for '" + p.name + "'");
  return it->second;
}
}  // namespace detail

// One Adam update with bias correction. kAscend moves along the gradient,
// kDescend against it; the two are exact mirrors (v accumulates g^2).
inline void adam_step(ParamSet& params, const GradientMap& grads, AdamState& state,
                      const AdamConfig& cfg, Direction dir) {
  state.t += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double sgn = dir == Direction::kDescend ? -1.0 : 1.0;
  for (auto& p : params.items) {
    const Tensor& g = detail::grad_for(grads, p);
    auto it = state.moments.find(p.name);
    if (it == state.moments.end())
      it = state.moments.emplace(p.name, std::make_pair(Tensor::zeros(p.value.shape()),
                                                        Tensor::zeros(p.value.shape()))).first;
    const auto& gd = g.data();
    std::vector<double> m = it->second.first.data();
    std::vector<double> v = it->second.second.data();
    std::vector<double> theta = p.value.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = sgn * gd[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / b1t;
      const double vhat = v[i] / b2t;
      theta[i] += cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    it->second.first = Tensor(p.value.shape(), std::move(m));
    it->second.second = Tensor(p.value.shape(), std::move(v));
    p.value = Tensor(p.value.shape(), std::move(theta), p.value.requires_grad());
  }
}

inline void rmsprop_step(ParamSet& params, const GradientMap& grads, RmspropState& state,
                         const RmspropConfig& cfg, Direction dir) {
  state.t += 1;
  const double sgn = dir == Direction::kDescend ? -1.0 : 1.0;
  for (auto& p : params.items) {
    const Tensor& g = detail::grad_for(grads, p);
    auto it = state.mean_sq.find(p.name);
    if (it == state.mean_sq.end())
      it = state.mean_sq.emplace(p.name, Tensor::zeros(p.value.shape())).first;
    const auto& gd = g.data();
    std::vector<double> v = it->second.data();
    std::vector<double> theta = p.value.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = cfg.decay * v[i] + (1.0 - cfg.decay) * gd[i] * gd[i];
      theta[i] += sgn * cfg.lr * gd[i] / (std::sqrt(v[i]) + cfg.eps);
    }
    it->second = Tensor(p.value.shape(), std::move(v));
    p.value = Tensor(p.value.shape(), std::move(theta), p.value.requires_grad());
  }
}

// Clamp every parameter element to [-c, c] (the WGAN Lipschitz surrogate).
inline void clip_weights(ParamSet& params, double c) {
  if (!(c > 0.0)) throw Error("clip_weights: c must be positive");
  for (auto& p : params.items) {
    std::vector<double> theta = p.value.data();
    bool changed = false;
    for (double& v : theta) {
      double clamped = std::min(std::max(v, -c), c);
      changed = changed || clamped != v;
      v = clamped;
    }
    if (changed) p.value = Tensor(p.value.shape(), std::move(theta), p.value.requires_grad());
  }
}

}  // namespace ganbench
