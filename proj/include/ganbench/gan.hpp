#pragma once

// Eight adversarial variants expressed as losses over plain MLPs, plus the
// alternating training loop: each epoch runs `critic_steps` discriminator
// updates (fresh noise and data batches every time) followed by exactly one
// generator update.
//
// Loss sign conventions, per variant (discriminator side, generator side):
//   VANILLA  ascend   mean log D(x) + mean log(1-D(G(z)))      descend mean log(1-D(G(z)))
//   CGAN     ascend   the same, input-conditioned on one-hot y descend the same
//   ACGAN    ascend   L_S - L_C over D and Q jointly           ascend  the reachable part of L_S + L_C
//   WGAN     ascend   mean F(x) - mean F(G(z)), clipped F      descend -mean F(G(z))
//   WGAN_GP  ascend   the WGAN objective minus the penalty     descend -mean F(G(z))
//   INFOGAN  ascend   mean log D(x) + mean log(1-D(G(z|c)))    descend mean log(1-D(G(z|c))) - lambda L_I
//   LSGAN    descend  (1/2)mean(D(x)-1)^2 + (1/2)mean D(G(z))^2 descend (1/2)mean(D(G(z))-1)^2
//   BIGAN    ascend   mean log D(x,E(x)) + mean log(1-D(G(z),z)) descend the same over G and E
// The generator keeps the literal saturating log(1-D) form; there is no
// non-saturating substitution.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ganbench/binio.hpp"
#include "ganbench/common.hpp"
#include "ganbench/metrics.hpp"
#include "ganbench/nn.hpp"
#include "ganbench/tensor.hpp"

namespace ganbench {

// --- variants ----------------------------------------------------------------

enum class GanVariant : std::uint8_t {
  kVanilla, kCgan, kAcgan, kWgan, kWganGp, kInfogan, kLsgan, kBigan,
};

inline const char* variant_name(GanVariant v) {
  switch (v) {
    case GanVariant::kVanilla: return "VANILLA";
    case GanVariant::kCgan: return "CGAN";
    case GanVariant::kAcgan: return "ACGAN";
    case GanVariant::kWgan: return "WGAN";
    case GanVariant::kWganGp: return "WGAN_GP";
    case GanVariant::kInfogan: return "INFOGAN";
    case GanVariant::kLsgan: return "LSGAN";
    case GanVariant::kBigan: return "BIGAN";
  }
  return "?";
}

inline const std::vector<GanVariant>& all_variants() {
  static const std::vector<GanVariant> v = {
      GanVariant::kVanilla, GanVariant::kCgan, GanVariant::kAcgan, GanVariant::kWgan,
      GanVariant::kWganGp,  GanVariant::kInfogan, GanVariant::kLsgan, GanVariant::kBigan,
  };
  return v;
}

inline std::string supported_variant_list() {
  std::string out;
  for (GanVariant v : all_variants()) {
    if (!out.empty()) out += ", ";
    out += variant_name(v);
  }
  return out;
}

// Case-insensitive; also accepts "WGAN-GP" for WGAN_GP.
inline GanVariant parse_variant(const std::string& name) {
  std::string up;
  for (char c : name) up += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (GanVariant v : all_variants())
    if (up == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "'; supported: " + supported_variant_list());
}

inline bool is_conditioned(GanVariant v) {
  return v == GanVariant::kCgan || v == GanVariant::kAcgan;
}

inline bool uses_codes(GanVariant v) { return v == GanVariant::kInfogan; }

inline bool has_aux_head(GanVariant v) {
  return v == GanVariant::kAcgan || v == GanVariant::kInfogan;
}

inline bool has_encoder(GanVariant v) { return v == GanVariant::kBigan; }

// Whether the discriminator head is a probability (sigmoid) or a raw score.
inline bool critic_like(GanVariant v) {
  return v == GanVariant::kWgan || v == GanVariant::kWganGp || v == GanVariant::kLsgan;
}

struct LossConvention {
  Direction disc;
  Direction gen;
};

inline LossConvention loss_convention(GanVariant v) {
  switch (v) {
    case GanVariant::kAcgan: return {Direction::kAscend, Direction::kAscend};
    case GanVariant::kLsgan: return {Direction::kDescend, Direction::kDescend};
    default: return {Direction::kAscend, Direction::kDescend};
  }
}

// --- priors and codes -----------------------------------------------------------

enum class PriorKind : std::uint8_t { kNormal, kUniform };

inline const char* prior_name(PriorKind k) {
  return k == PriorKind::kNormal ? "normal" : "uniform";
}

struct NoisePrior {
  PriorKind kind = PriorKind::kNormal;
  int dim = 100;
  std::string stream = "noise";  // seed-derivation tag
};

inline Tensor sample_prior(const NoisePrior& prior, int n, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n) * prior.dim);
  for (double& e : v)
    e = prior.kind == PriorKind::kNormal ? rng.normal() : rng.uniform(-1.0, 1.0);
  return Tensor(Shape{n, prior.dim}, std::move(v));
}

// One-hot rows; every row sums to exactly one.
inline Tensor one_hot(const std::vector<int>& ys, int k) {
  if (k < 2) throw Error("one_hot: need at least two categories");
  std::vector<double> v(ys.size() * static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] < 0 || ys[i] >= k)
      throw Error("one_hot: label " + std::to_string(ys[i]) + " outside [0, " +
                  std::to_string(k) + ")");
    v[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(ys[i])] = 1.0;
  }
  return Tensor(Shape{static_cast<int>(ys.size()), k}, std::move(v));
}

// --- model bundle -----------------------------------------------------------------

struct ArchOverrides {
  std::vector<int> g_hidden;  // empty -> {256, 512}
  std::vector<int> d_hidden;  // empty -> {512, 256}
  std::vector<int> q_hidden;  // empty -> the d_hidden default
  std::vector<int> e_hidden;  // empty -> the d_hidden default
  double slope = 0.2;
  int latent = 100;
  PriorKind prior = PriorKind::kNormal;
};

struct ModelBundle {
  GanVariant variant = GanVariant::kVanilla;
  Mlp generator;                // prefix "G"
  Mlp discriminator;            // prefix "D"; the critic F for WGAN variants
  std::optional<Mlp> aux;       // prefix "Q"; class/code head (ACGAN, INFOGAN)
  std::optional<Mlp> encoder;   // prefix "E"; BIGAN only
  NoisePrior prior;
  int data_dim = 0;
  int k_classes = 0;  // 0 when unconditioned
};

namespace detail {

inline MlpSpec stack(int in, const std::vector<int>& hidden, double slope, LayerSpec out,
                     std::uint64_t seed) {
  MlpSpec s;
  s.input_dim = in;
  for (int w : hidden) s.hidden.push_back({w, Activation::kLeakyRelu, slope});
  s.output = out;
  s.init_seed = seed;
  return s;
}

}  // namespace detail

inline ModelBundle build_model(GanVariant variant, int data_dim, int k_classes,
                               const ArchOverrides& arch = {}, std::uint64_t seed = 0) {
  if (data_dim < 1) throw Error("build_model: data_dim must be >= 1");
  if (arch.latent < 1) throw Error("build_model: latent dimension must be >= 1");
  const bool conditioned = is_conditioned(variant) || uses_codes(variant);
  if (conditioned && k_classes < 2)
    throw Error(std::string("build_model: ") + variant_name(variant) +
                " needs k_classes >= 2 (labeled data or a code size)");

  const std::vector<int> g_hidden = arch.g_hidden.empty() ? std::vector<int>{256, 512} : arch.g_hidden;
  const std::vector<int> d_hidden = arch.d_hidden.empty() ? std::vector<int>{512, 256} : arch.d_hidden;
  const std::vector<int> q_hidden = arch.q_hidden.empty() ? d_hidden : arch.q_hidden;
  const std::vector<int> e_hidden = arch.e_hidden.empty() ? d_hidden : arch.e_hidden;

  const int g_in = arch.latent + (conditioned ? k_classes : 0);
  int d_in = data_dim;
  if (variant == GanVariant::kCgan) d_in += k_classes;
  if (variant == GanVariant::kBigan) d_in += arch.latent;
  const Activation d_head = critic_like(variant) ? Activation::kLinear : Activation::kSigmoid;

  ModelBundle b;
  b.variant = variant;
  b.data_dim = data_dim;
  b.k_classes = conditioned ? k_classes : 0;
  b.prior = NoisePrior{arch.prior, arch.latent, "noise"};
  b.generator = Mlp(detail::stack(g_in, g_hidden, arch.slope, {data_dim, Activation::kTanh},
                                  derive_seed(seed, "G")), "G");
  b.discriminator = Mlp(detail::stack(d_in, d_hidden, arch.slope, {1, d_head},
                                      derive_seed(seed, "D")), "D");
  if (has_aux_head(variant))
    b.aux = Mlp(detail::stack(data_dim, q_hidden, arch.slope, {k_classes, Activation::kSoftmax},
                              derive_seed(seed, "Q")), "Q");
  if (has_encoder(variant))
    b.encoder = Mlp(detail::stack(data_dim, e_hidden, arch.slope, {arch.latent, Activation::kLinear},
                                  derive_seed(seed, "E")), "E");
  return b;
}

// --- batches ------------------------------------------------------------------------

// One step's worth of bound data. `y` conditions CGAN/ACGAN (for the
// discriminator step these are the real batch's labels), `codes` are the
// InfoGAN categorical draws, `rho` the per-row interpolation draws for the
// gradient penalty.
struct Batch {
  Tensor x;
  Tensor z;
  std::vector<int> y;
  std::vector<int> codes;
  Tensor rho;
};

namespace detail {

inline Var mean_log(Graph& g, Var v) { return g.mean_all(g.log(v)); }

inline Var one_minus(Graph& g, Var v) { return g.add_const(g.neg(v), 1.0); }

// mean over rows of log q[row, pick[row]].
inline Var mean_log_picked(Graph& g, Var q, const std::vector<int>& pick, int k) {
  Var mask = g.constant(one_hot(pick, k));
  return g.scale(g.sum_all(g.mul(g.log(q), mask)), 1.0 / static_cast<double>(pick.size()));
}

inline void require_rows(const Tensor& t, int rows, const char* who, const char* what) {
  if (t.ndim() != 2 || t.rows() != rows)
    throw Error(std::string(who) + ": " + what + " must have " + std::to_string(rows) + " rows");
}

inline Var generator_output(Graph& g, const ModelBundle& b, const Batch& batch, bool trainable) {
  Var z = g.input("z", batch.z);
  if (b.variant == GanVariant::kCgan || b.variant == GanVariant::kAcgan) {
    if (batch.y.size() != static_cast<std::size_t>(batch.z.rows()))
      throw Error("generator: conditioned variant needs one label per noise row");
    Var yh = g.constant(one_hot(batch.y, b.k_classes));
    return b.generator.apply(g, g.concat_cols({z, yh}), trainable);
  }
  if (b.variant == GanVariant::kInfogan) {
    if (batch.codes.size() != static_cast<std::size_t>(batch.z.rows()))
      throw Error("generator: INFOGAN needs one code per noise row");
    Var ch = g.constant(one_hot(batch.codes, b.k_classes));
    return b.generator.apply(g, g.concat_cols({z, ch}), trainable);
  }
  return b.generator.apply(g, z, trainable);
}

}  // namespace detail

// --- gradient penalty ------------------------------------------------------------------

// lambda * mean over rows of (||d F / d xhat||_2 - 1)^2 at the interpolates
// xhat = rho * x_fake + (1 - rho) * x_real, rho drawn uniform per row.
inline Var gradient_penalty(Graph& g, const Mlp& critic, const Tensor& x_real,
                            const Tensor& x_fake, double lambda_gp, const Tensor& rho,
                            bool trainable = true) {
  if (x_real.shape() != x_fake.shape() || x_real.ndim() != 2)
    throw Error("gradient_penalty: real and fake batches must share an (n, d) shape");
  const int n = x_real.rows(), d = x_real.cols();
  if (rho.numel() != n) throw Error("gradient_penalty: need one rho per row");
  std::vector<double> mix(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const double r = rho.data()[static_cast<std::size_t>(i)];
    if (r < 0.0 || r > 1.0) throw Error("gradient_penalty: rho outside [0, 1]");
    for (int j = 0; j < d; ++j)
      mix[static_cast<std::size_t>(i) * d + j] = r * x_fake.at(i, j) + (1.0 - r) * x_real.at(i, j);
  }
  Var xhat = g.input("xhat", Tensor(Shape{n, d}, std::move(mix)).with_requires_grad(true));
  Var fx = critic.apply(g, xhat, trainable);
  Var grad = input_gradient(g, fx, xhat);
  Var norm = g.sqrt(g.sum_cols(g.square(grad)));
  return g.scale(g.mean_all(g.square(g.add_const(norm, -1.0))), lambda_gp);
}

// --- information lower bound --------------------------------------------------------------

// Empirical mean of log Q(c|x) plus the analytic entropy of the uniform
// categorical code prior. Zero when Q is uniform; H(c) when Q is perfect.
inline Tensor info_lower_bound(const Tensor& q_output, const std::vector<int>& codes) {
  if (q_output.ndim() != 2 || q_output.rows() == 0)
    throw Error("info_lower_bound: q_output must be a nonempty (n, k) matrix");
  const int n = q_output.rows(), k = q_output.cols();
  if (codes.size() != static_cast<std::size_t>(n))
    throw Error("info_lower_bound: need one code per row");
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) row += q_output.at(i, j);
    if (std::abs(row - 1.0) > 1e-6)
      throw Error("info_lower_bound: row " + std::to_string(i) + " sums to " +
                  std::to_string(row) + ", not a distribution");
    const int c = codes[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k) throw Error("info_lower_bound: code outside [0, k)");
    mean += std::log(std::max(q_output.at(i, c), kLogFloor));
  }
  mean /= n;
  return Tensor::scalar(mean + std::log(static_cast<double>(k)));
}

namespace detail {

// Graph form of the bound for the INFOGAN generator step.
inline Var info_bound_term(Graph& g, Var q, const std::vector<int>& codes, int k) {
  Var picked = mean_log_picked(g, q, codes, k);
  return g.add_const(picked, std::log(static_cast<double>(k)));
}

}  // namespace detail

// --- losses --------------------------------------------------------------------------------

struct DiscLossBuild {
  Var loss;
  Var mean_d_real;  // convergence diagnostic, mean D(x) on the real batch
};

// Emits the discriminator-side objective onto `g`. Discriminator-side
// parameters (D, plus Q for ACGAN) bind trainable; generator-side networks
// bind frozen.
inline DiscLossBuild build_discriminator_loss(Graph& g, const ModelBundle& b, const Batch& batch,
                                              double lambda_gp = 10.0) {
  const int n = batch.z.ndim() == 2 ? batch.z.rows() : 0;
  detail::require_rows(batch.z, n, "discriminator_loss", "noise");
  detail::require_rows(batch.x, n, "discriminator_loss", "real batch");
  if (batch.x.cols() != b.data_dim)
    throw Error("discriminator_loss: real batch width does not match the model");

  Var x = g.input("x", batch.x);
  Var fake = detail::generator_output(g, b, batch, false);

  switch (b.variant) {
    case GanVariant::kVanilla:
    case GanVariant::kInfogan: {
      Var dx = b.discriminator.apply(g, x, true);
      Var dfake = b.discriminator.apply(g, fake, true);
      Var loss = g.add(detail::mean_log(g, dx), detail::mean_log(g, detail::one_minus(g, dfake)));
      return {loss, g.mean_all(dx)};
    }
    case GanVariant::kCgan: {
      Var yh = g.constant(one_hot(batch.y, b.k_classes));
      Var dx = b.discriminator.apply(g, g.concat_cols({x, yh}), true);
      Var dfake = b.discriminator.apply(g, g.concat_cols({fake, yh}), true);
      Var loss = g.add(detail::mean_log(g, dx), detail::mean_log(g, detail::one_minus(g, dfake)));
      return {loss, g.mean_all(dx)};
    }
    case GanVariant::kAcgan: {
      Var dx = b.discriminator.apply(g, x, true);
      Var dfake = b.discriminator.apply(g, fake, true);
      Var ls = g.add(detail::mean_log(g, dx), detail::mean_log(g, detail::one_minus(g, dfake)));
      Var qx = b.aux->apply(g, x, true);
      Var qfake = b.aux->apply(g, fake, true);
      Var lc = g.add(detail::mean_log_picked(g, qx, batch.y, b.k_classes),
                     detail::mean_log_picked(g, qfake, batch.y, b.k_classes));
      return {g.sub(ls, lc), g.mean_all(dx)};
    }
    case GanVariant::kWgan:
    case GanVariant::kWganGp: {
      Var fx = b.discriminator.apply(g, x, true);
      Var ffake = b.discriminator.apply(g, fake, true);
      Var loss = g.sub(g.mean_all(fx), g.mean_all(ffake));
      if (b.variant == GanVariant::kWganGp) {
        // the generator is frozen here, so its evaluated output is exact
        Var pen = gradient_penalty(g, b.discriminator, batch.x, g.value(fake), lambda_gp,
                                   batch.rho, true);
        loss = g.sub(loss, pen);
      }
      return {loss, g.mean_all(fx)};
    }
    case GanVariant::kLsgan: {
      Var dx = b.discriminator.apply(g, x, true);
      Var dfake = b.discriminator.apply(g, fake, true);
      Var real_term = g.mean_all(g.square(g.add_const(dx, -1.0)));
      Var fake_term = g.mean_all(g.square(dfake));
      Var loss = g.add(g.scale(real_term, 0.5), g.scale(fake_term, 0.5));
      return {loss, g.mean_all(dx)};
    }
    case GanVariant::kBigan: {
      Var ex = b.encoder->apply(g, x, false);
      Var dx = b.discriminator.apply(g, g.concat_cols({x, ex}), true);
      Var z = g.input("z", batch.z);
      Var dfake = b.discriminator.apply(g, g.concat_cols({fake, z}), true);
      Var loss = g.add(detail::mean_log(g, dx), detail::mean_log(g, detail::one_minus(g, dfake)));
      return {loss, g.mean_all(dx)};
    }
  }
  throw Error("discriminator_loss: unhandled variant");
}

// Emits the generator-side objective. Generator-side parameters (G, plus E
// for BIGAN and Q for INFOGAN) bind trainable; the discriminator binds
// frozen. BIGAN consumes a fresh real batch here (its objective's real term
// carries encoder gradients); every other variant ignores `batch.x`.
inline Var build_generator_loss(Graph& g, const ModelBundle& b, const Batch& batch,
                                double lambda_info = 1.0) {
  Var fake = detail::generator_output(g, b, batch, true);

  switch (b.variant) {
    case GanVariant::kVanilla: {
      Var dfake = b.discriminator.apply(g, fake, false);
      return detail::mean_log(g, detail::one_minus(g, dfake));
    }
    case GanVariant::kCgan: {
      Var yh = g.constant(one_hot(batch.y, b.k_classes));
      Var dfake = b.discriminator.apply(g, g.concat_cols({fake, yh}), false);
      return detail::mean_log(g, detail::one_minus(g, dfake));
    }
    case GanVariant::kAcgan: {
      // ascended: the generator-reachable terms of L_S + L_C
      Var dfake = b.discriminator.apply(g, fake, false);
      Var qfake = b.aux->apply(g, fake, false);
      return g.add(detail::mean_log(g, detail::one_minus(g, dfake)),
                   detail::mean_log_picked(g, qfake, batch.y, b.k_classes));
    }
    case GanVariant::kWgan:
    case GanVariant::kWganGp: {
      Var ffake = b.discriminator.apply(g, fake, false);
      return g.neg(g.mean_all(ffake));
    }
    case GanVariant::kInfogan: {
      Var dfake = b.discriminator.apply(g, fake, false);
      Var q = b.aux->apply(g, fake, true);
      Var bound = detail::info_bound_term(g, q, batch.codes, b.k_classes);
      return g.sub(detail::mean_log(g, detail::one_minus(g, dfake)), g.scale(bound, lambda_info));
    }
    case GanVariant::kLsgan: {
      Var dfake = b.discriminator.apply(g, fake, false);
      return g.scale(g.mean_all(g.square(g.add_const(dfake, -1.0))), 0.5);
    }
    case GanVariant::kBigan: {
      detail::require_rows(batch.x, batch.z.rows(), "generator_loss", "fresh real batch");
      Var x = g.input("x", batch.x);
      Var ex = b.encoder->apply(g, x, true);
      Var dx = b.discriminator.apply(g, g.concat_cols({x, ex}), false);
      Var z = g.input("z", batch.z);
      Var dfake = b.discriminator.apply(g, g.concat_cols({fake, z}), false);
      return g.add(detail::mean_log(g, dx), detail::mean_log(g, detail::one_minus(g, dfake)));
    }
  }
  throw Error("generator_loss: unhandled variant");
}

// Value-level forms of the two losses.
inline Tensor discriminator_loss(const ModelBundle& b, const Batch& batch,
                                 double lambda_gp = 10.0) {
  Graph g;
  return g.value(build_discriminator_loss(g, b, batch, lambda_gp).loss);
}

inline Tensor generator_loss(const ModelBundle& b, const Batch& batch,
                             double lambda_info = 1.0) {
  Graph g;
  return g.value(build_generator_loss(g, b, batch, lambda_info));
}

// --- training -----------------------------------------------------------------------------

enum class OptimizerKind : std::uint8_t { kAdam, kRmsprop };

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "rmsprop";
}

struct TrainConfig {
  int epochs = 5000;
  int critic_steps = 1;
  int batch = 64;
  int latent = 100;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  OptimizerKind opt_g = OptimizerKind::kAdam;
  OptimizerKind opt_d = OptimizerKind::kAdam;
  double adam_beta1 = 0.5;
  double clip_c = 0.01;       // WGAN weight clip
  double lambda_gp = 10.0;    // WGAN_GP penalty weight
  double lambda_info = 1.0;   // INFOGAN bound weight
  std::uint64_t seed = 0;
  int snapshot_every = 0;     // epochs between metric snapshots; 0 disables
};

// Defaults per variant: Adam(2e-4, beta1 0.5) except WGAN's RMSprop(5e-5);
// the two Wasserstein variants take five critic steps per epoch.
inline TrainConfig default_train_config(GanVariant v) {
  TrainConfig cfg;
  if (v == GanVariant::kWgan) {
    cfg.opt_g = cfg.opt_d = OptimizerKind::kRmsprop;
    cfg.lr_g = cfg.lr_d = 5e-5;
    cfg.critic_steps = 5;
  } else if (v == GanVariant::kWganGp) {
    cfg.critic_steps = 5;
  }
  return cfg;
}

struct EpochStats {
  double d_loss = 0.0;
  double g_loss = 0.0;
  double mean_d_real = 0.0;  // convergence diagnostic; 0.5 means D is blind
};

struct MetricSnapshot {
  int epoch = 0;
  double mmd2 = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::vector<MetricSnapshot> snapshots;
  std::int64_t disc_updates = 0;
  std::int64_t gen_updates = 0;
};

class TrainDiverged : public Error {
 public:
  TrainDiverged(const std::string& msg, int epoch, TrainHistory history)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + msg),
        epoch_(epoch),
        history_(std::move(history)) {}
  int epoch() const { return epoch_; }
  const TrainHistory& history() const { return history_; }

 private:
  int epoch_;
  TrainHistory history_;
};

// Called after every parameter update; `disc_step` tells the sides apart.
using StepObserver = std::function<void(const ModelBundle&, int epoch, int step, bool disc_step)>;

struct TrainResult {
  ModelBundle bundle;
  TrainHistory history;
};

inline SampleSet generate(const ModelBundle& b, int n, std::uint64_t seed,
                          const std::vector<int>& labels = {});

namespace detail {

struct OptStates {
  AdamState adam;
  RmspropState rms;
};

inline void optimizer_step(ParamSet& params, const GradientMap& grads, OptStates& st,
                           OptimizerKind kind, double lr, double beta1, Direction dir) {
  if (kind == OptimizerKind::kAdam) {
    AdamConfig cfg;
    cfg.lr = lr;
    cfg.beta1 = beta1;
    adam_step(params, grads, st.adam, cfg, dir);
  } else {
    RmspropConfig cfg;
    cfg.lr = lr;
    rmsprop_step(params, grads, st.rms, cfg, dir);
  }
}

}  // namespace detail

inline TrainResult train(ModelBundle bundle, const SampleSet& data, const TrainConfig& cfg,
                         const StepObserver& observer = {}) {
  if (data.rows.ndim() != 2 || data.rows.rows() == 0)
    throw Error("train: dataset is empty");
  if (data.rows.cols() != bundle.data_dim)
    throw Error("train: dataset width " + std::to_string(data.rows.cols()) +
                " does not match the model's " + std::to_string(bundle.data_dim));
  if (cfg.epochs < 0 || cfg.critic_steps < 1 || cfg.batch < 1 || cfg.latent < 1)
    throw Error("train: epochs >= 0, critic_steps, batch and latent >= 1 required");
  if (cfg.latent != bundle.prior.dim)
    throw Error("train: config latent " + std::to_string(cfg.latent) +
                " does not match the bundle prior dim " + std::to_string(bundle.prior.dim));
  if (bundle.generator.spec().output.act == Activation::kTanh) {
    for (double v : data.rows.data())
      if (std::abs(v) > 1.0 + 1e-9)
        throw Error("train: data leaves [-1, 1] but the generator head is tanh; "
                    "normalize the dataset first");
  }
  const int n = data.rows.rows();
  if (is_conditioned(bundle.variant)) {
    if (data.labels.size() != static_cast<std::size_t>(n))
      throw Error(std::string("train: ") + variant_name(bundle.variant) +
                  " needs one label per data row");
    for (int y : data.labels)
      if (y < 0 || y >= bundle.k_classes)
        throw Error("train: label outside [0, k_classes)");
  }

  TrainHistory history;
  if (cfg.epochs == 0) return {std::move(bundle), std::move(history)};

  Rng rng_noise(derive_seed(cfg.seed, bundle.prior.stream));
  Rng rng_batch(derive_seed(cfg.seed, "batch"));
  Rng rng_cond(derive_seed(cfg.seed, "cond"));
  Rng rng_rho(derive_seed(cfg.seed, "gp-rho"));
  const LossConvention conv = loss_convention(bundle.variant);

  detail::OptStates st_d, st_g, st_q, st_e;

  auto sample_real = [&]() {
    std::vector<double> rows(static_cast<std::size_t>(cfg.batch) * bundle.data_dim);
    std::vector<int> ys;
    for (int i = 0; i < cfg.batch; ++i) {
      const int r = rng_batch.uniform_int(n);
      for (int j = 0; j < bundle.data_dim; ++j)
        rows[static_cast<std::size_t>(i) * bundle.data_dim + j] = data.rows.at(r, j);
      if (is_conditioned(bundle.variant)) ys.push_back(data.labels[static_cast<std::size_t>(r)]);
    }
    return std::make_pair(Tensor(Shape{cfg.batch, bundle.data_dim}, std::move(rows)),
                          std::move(ys));
  };
  auto sample_codes = [&]() {
    std::vector<int> cs(static_cast<std::size_t>(cfg.batch));
    for (int& c : cs)
      c = rng_cond.uniform_int(bundle.k_classes);
    return cs;
  };
  auto sample_rho = [&]() {
    std::vector<double> r(static_cast<std::size_t>(cfg.batch));
    for (double& v : r) v = rng_rho.uniform();
    return Tensor(Shape{cfg.batch}, std::move(r));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    try {
      for (int step = 0; step < cfg.critic_steps; ++step) {
        Batch batch;
        batch.z = sample_prior(bundle.prior, cfg.batch, rng_noise);
        auto [x, ys] = sample_real();
        batch.x = std::move(x);
        batch.y = std::move(ys);
        if (uses_codes(bundle.variant)) batch.codes = sample_codes();
        if (bundle.variant == GanVariant::kWganGp) batch.rho = sample_rho();

        Graph g;
        DiscLossBuild built = build_discriminator_loss(g, bundle, batch, cfg.lambda_gp);
        GradientMap grads = g.backward(built.loss);
        detail::optimizer_step(bundle.discriminator.params(), grads, st_d, cfg.opt_d, cfg.lr_d,
                               cfg.adam_beta1, conv.disc);
        if (bundle.variant == GanVariant::kAcgan)
          detail::optimizer_step(bundle.aux->params(), grads, st_q, cfg.opt_d, cfg.lr_d,
                                 cfg.adam_beta1, conv.disc);
        if (bundle.variant == GanVariant::kWgan)
          clip_weights(bundle.discriminator.params(), cfg.clip_c);
        history.disc_updates += 1;
        if (observer) observer(bundle, epoch, step, true);
        stats.d_loss = g.value(built.loss).item();
        stats.mean_d_real = g.value(built.mean_d_real).item();
      }

      Batch gb;
      gb.z = sample_prior(bundle.prior, cfg.batch, rng_noise);
      if (is_conditioned(bundle.variant)) {
        std::vector<int> ys(static_cast<std::size_t>(cfg.batch));
        for (int& y : ys)
          y = rng_cond.uniform_int(bundle.k_classes);
        gb.y = std::move(ys);
      }
      if (uses_codes(bundle.variant)) gb.codes = sample_codes();
      if (bundle.variant == GanVariant::kBigan) gb.x = sample_real().first;

      Graph g;
      Var loss = build_generator_loss(g, bundle, gb, cfg.lambda_info);
      GradientMap grads = g.backward(loss);
      detail::optimizer_step(bundle.generator.params(), grads, st_g, cfg.opt_g, cfg.lr_g,
                             cfg.adam_beta1, conv.gen);
      if (bundle.variant == GanVariant::kInfogan)
        detail::optimizer_step(bundle.aux->params(), grads, st_q, cfg.opt_g, cfg.lr_g,
                               cfg.adam_beta1, conv.gen);
      if (bundle.variant == GanVariant::kBigan)
        detail::optimizer_step(bundle.encoder->params(), grads, st_e, cfg.opt_g, cfg.lr_g,
                               cfg.adam_beta1, conv.gen);
      history.gen_updates += 1;
      if (observer) observer(bundle, epoch, cfg.critic_steps, false);
      stats.g_loss = g.value(loss).item();
    } catch (const GraphError& e) {
      throw TrainDiverged(e.what(), epoch, std::move(history));
    }
    history.epochs.push_back(stats);

    if (cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0) {
      const int m = std::min(256, n);
      std::vector<int> labels;
      if (is_conditioned(bundle.variant))
        labels.assign(data.labels.begin(), data.labels.begin() + m);
      SampleSet fake = generate(bundle, m, derive_seed(cfg.seed, "snapshot",
                                                        static_cast<std::uint64_t>(epoch)),
                                labels);
      std::vector<double> sub(data.rows.data().begin(),
                              data.rows.data().begin() + static_cast<std::size_t>(m) * bundle.data_dim);
      Tensor real_sub(Shape{m, bundle.data_dim}, std::move(sub));
      try {
        history.snapshots.push_back({epoch + 1, mmd_squared(real_sub, fake.rows)});
      } catch (const Error&) {
        // degenerate bandwidth early in training; skip the snapshot
      }
    }
  }
  return {std::move(bundle), std::move(history)};
}

// --- sampling ------------------------------------------------------------------------------

// Pure function of (bundle, n, seed, labels). CGAN/ACGAN require one label
// per row; INFOGAN self-samples codes when none are given; unconditioned
// variants reject labels.
inline SampleSet generate(const ModelBundle& b, int n, std::uint64_t seed,
                          const std::vector<int>& labels) {
  if (n < 0) throw Error("generate: negative sample count");
  if (is_conditioned(b.variant)) {
    if (labels.size() != static_cast<std::size_t>(n))
      throw Error(std::string("generate: ") + variant_name(b.variant) +
                  " needs exactly one label per requested row");
  } else if (!uses_codes(b.variant) && !labels.empty()) {
    throw Error(std::string("generate: ") + variant_name(b.variant) + " is unconditioned");
  }
  if (n == 0) return SampleSet(Tensor(Shape{0, b.data_dim}, {}));

  Rng rng(derive_seed(seed, b.prior.stream));
  Tensor z = sample_prior(b.prior, n, rng);

  std::vector<int> conds = labels;
  if (uses_codes(b.variant) && conds.empty()) {
    Rng crng(derive_seed(seed, "gen-cond"));
    conds.resize(static_cast<std::size_t>(n));
    for (int& c : conds)
      c = crng.uniform_int(b.k_classes);
  }
  if (uses_codes(b.variant) && conds.size() != static_cast<std::size_t>(n))
    throw Error("generate: INFOGAN needs one code per requested row");

  Tensor g_in = z;
  if (is_conditioned(b.variant) || uses_codes(b.variant)) {
    for (int c : conds)
      if (c < 0 || c >= b.k_classes) throw Error("generate: label outside [0, k_classes)");
    Tensor oh = one_hot(conds, b.k_classes);
    std::vector<double> joined(static_cast<std::size_t>(n) * (b.prior.dim + b.k_classes));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < b.prior.dim; ++j)
        joined[static_cast<std::size_t>(i) * (b.prior.dim + b.k_classes) + j] = z.at(i, j);
      for (int j = 0; j < b.k_classes; ++j)
        joined[static_cast<std::size_t>(i) * (b.prior.dim + b.k_classes) + b.prior.dim + j] =
            oh.at(i, j);
    }
    g_in = Tensor(Shape{n, b.prior.dim + b.k_classes}, std::move(joined));
  }
  return SampleSet(b.generator(g_in), std::move(conds));
}

// BIGAN's learned inverse map: E(x), shape (rows, latent).
inline Tensor encode(const ModelBundle& b, const Tensor& x) {
  if (b.variant != GanVariant::kBigan)
    throw Error(std::string("encode: ") + variant_name(b.variant) + " has no encoder");
  return (*b.encoder)(x);
}

// --- checkpoints ------------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'G', 'B', 'C', 'K'};
inline constexpr std::uint64_t kCheckpointVersion = 1;

namespace detail {

inline void put_mlp(std::ostream& out, const std::string& role, const Mlp& net) {
  binio::put_str(out, role);
  binio::put_str(out, net.prefix());
  const MlpSpec& s = net.spec();
  binio::put_u64(out, static_cast<std::uint64_t>(s.input_dim));
  binio::put_u64(out, s.init_seed);
  const std::vector<LayerSpec> layers = s.all_layers();
  binio::put_u64(out, layers.size());
  for (const LayerSpec& l : layers) {
    binio::put_u64(out, static_cast<std::uint64_t>(l.width));
    binio::put_u64(out, static_cast<std::uint64_t>(l.act));
    binio::put_f64(out, l.slope);
  }
  for (const NamedTensor& p : net.params().items)
    for (double v : p.value.data()) binio::put_f64(out, v);
}

inline std::pair<std::string, Mlp> get_mlp(std::istream& in, const std::string& path) {
  const std::string role = binio::get_str(in, path, "network role");
  const std::string prefix = binio::get_str(in, path, "network prefix");
  MlpSpec s;
  s.input_dim = static_cast<int>(binio::get_u64(in, path, "input dim"));
  s.init_seed = binio::get_u64(in, path, "init seed");
  const std::uint64_t n_layers = binio::get_u64(in, path, "layer count");
  if (n_layers == 0 || n_layers > 64) throw IoError(path + ": implausible layer count");
  std::vector<LayerSpec> layers;
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    l.width = static_cast<int>(binio::get_u64(in, path, "layer width"));
    const std::uint64_t act = binio::get_u64(in, path, "activation");
    if (act > static_cast<std::uint64_t>(Activation::kSoftmax))
      throw IoError(path + ": unknown activation tag");
    l.act = static_cast<Activation>(act);
    l.slope = binio::get_f64(in, path, "slope");
    layers.push_back(l);
  }
  s.output = layers.back();
  layers.pop_back();
  s.hidden = std::move(layers);

  ParamSet params;
  int fan_in = s.input_dim;
  int li = 0;
  for (const LayerSpec& l : s.all_layers()) {
    std::vector<double> w(static_cast<std::size_t>(fan_in) * l.width);
    for (double& v : w) v = binio::get_f64(in, path, "weights");
    params.items.push_back({prefix + "/W" + std::to_string(li),
                            Tensor(Shape{fan_in, l.width}, std::move(w), true)});
    std::vector<double> bvec(static_cast<std::size_t>(l.width));
    for (double& v : bvec) v = binio::get_f64(in, path, "biases");
    params.items.push_back({prefix + "/b" + std::to_string(li),
                            Tensor(Shape{l.width}, std::move(bvec), true)});
    fan_in = l.width;
    ++li;
  }
  return {role, Mlp(s, prefix, std::move(params))};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelBundle& b,
                            const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(kCheckpointMagic, 4);
  binio::put_u64(out, kCheckpointVersion);
  binio::put_str(out, variant_name(b.variant));
  binio::put_u64(out, static_cast<std::uint64_t>(b.data_dim));
  binio::put_u64(out, static_cast<std::uint64_t>(b.k_classes));
  binio::put_u64(out, static_cast<std::uint64_t>(b.prior.kind));
  binio::put_u64(out, static_cast<std::uint64_t>(b.prior.dim));
  binio::put_str(out, b.prior.stream);

  binio::put_u64(out, static_cast<std::uint64_t>(cfg.epochs));
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.critic_steps));
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.batch));
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.latent));
  binio::put_f64(out, cfg.lr_g);
  binio::put_f64(out, cfg.lr_d);
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.opt_g));
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.opt_d));
  binio::put_f64(out, cfg.adam_beta1);
  binio::put_f64(out, cfg.clip_c);
  binio::put_f64(out, cfg.lambda_gp);
  binio::put_f64(out, cfg.lambda_info);
  binio::put_u64(out, cfg.seed);
  binio::put_u64(out, static_cast<std::uint64_t>(cfg.snapshot_every));

  std::uint64_t nets = 2;
  if (b.aux) ++nets;
  if (b.encoder) ++nets;
  binio::put_u64(out, nets);
  detail::put_mlp(out, "G", b.generator);
  detail::put_mlp(out, "D", b.discriminator);
  if (b.aux) detail::put_mlp(out, "Q", *b.aux);
  if (b.encoder) detail::put_mlp(out, "E", *b.encoder);
  if (!out) throw IoError("write failed for '" + path + "'");
}

struct Checkpoint {
  ModelBundle bundle;
  TrainConfig config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint (bad magic)");
  const std::uint64_t version = binio::get_u64(in, path, "version");
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ModelBundle& b = ck.bundle;
  b.variant = parse_variant(binio::get_str(in, path, "variant"));
  b.data_dim = static_cast<int>(binio::get_u64(in, path, "data dim"));
  b.k_classes = static_cast<int>(binio::get_u64(in, path, "class count"));
  const std::uint64_t prior_kind = binio::get_u64(in, path, "prior kind");
  if (prior_kind > static_cast<std::uint64_t>(PriorKind::kUniform))
    throw IoError(path + ": unknown prior kind");
  b.prior.kind = static_cast<PriorKind>(prior_kind);
  b.prior.dim = static_cast<int>(binio::get_u64(in, path, "prior dim"));
  b.prior.stream = binio::get_str(in, path, "prior stream");

  TrainConfig& cfg = ck.config;
  cfg.epochs = static_cast<int>(binio::get_u64(in, path, "epochs"));
  cfg.critic_steps = static_cast<int>(binio::get_u64(in, path, "critic steps"));
  cfg.batch = static_cast<int>(binio::get_u64(in, path, "batch"));
  cfg.latent = static_cast<int>(binio::get_u64(in, path, "latent"));
  cfg.lr_g = binio::get_f64(in, path, "lr_g");
  cfg.lr_d = binio::get_f64(in, path, "lr_d");
  const auto read_opt = [&](const char* what) {
    const std::uint64_t k = binio::get_u64(in, path, what);
    if (k > static_cast<std::uint64_t>(OptimizerKind::kRmsprop))
      throw IoError(path + ": unknown optimizer tag");
    return static_cast<OptimizerKind>(k);
  };
  cfg.opt_g = read_opt("opt_g");
  cfg.opt_d = read_opt("opt_d");
  cfg.adam_beta1 = binio::get_f64(in, path, "beta1");
  cfg.clip_c = binio::get_f64(in, path, "clip");
  cfg.lambda_gp = binio::get_f64(in, path, "lambda_gp");
  cfg.lambda_info = binio::get_f64(in, path, "lambda_info");
  cfg.seed = binio::get_u64(in, path, "seed");
  cfg.snapshot_every = static_cast<int>(binio::get_u64(in, path, "snapshot interval"));

  const std::uint64_t nets = binio::get_u64(in, path, "network count");
  if (nets < 2 || nets > 4) throw IoError(path + ": implausible network count");
  bool saw_g = false, saw_d = false;
  for (std::uint64_t i = 0; i < nets; ++i) {
    auto [role, net] = detail::get_mlp(in, path);
    if (role == "G") { b.generator = std::move(net); saw_g = true; }
    else if (role == "D") { b.discriminator = std::move(net); saw_d = true; }
    else if (role == "Q") b.aux = std::move(net);
    else if (role == "E") b.encoder = std::move(net);
    else throw IoError(path + ": unknown network role '" + role + "'");
  }
  char extra;
  if (in.read(&extra, 1)) throw IoError(path + ": trailing bytes after payload");

  if (!saw_g || !saw_d || has_aux_head(b.variant) != b.aux.has_value() ||
      has_encoder(b.variant) != b.encoder.has_value())
    throw IoError(path + ": network set does not match the variant");
  return ck;
}

}  // namespace ganbench
