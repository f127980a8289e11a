#pragma once

// Distribution-comparison metrics between two samples (typically real rows
// versus generated rows). Conventions shared by all of them:
//  - natural logarithms everywhere;
//  - samples are 2-D row-major tensors (n, d); 1-D convenience overloads
//    wrap a single column;
//  - the Gaussian kernel is k(u, v) = exp(-||u - v||^2 / (2 sigma^2));
//  - kernel density estimates carry the 1/(n * prod h_j) normalizer so they
//    integrate to one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ganbench/common.hpp"
#include "ganbench/nn.hpp"
#include "ganbench/tensor.hpp"

namespace ganbench {

struct SampleSet {
  Tensor rows;              // (n, d)
  std::vector<int> labels;  // optional, empty when unlabeled

  SampleSet() = default;
  SampleSet(Tensor r) : rows(std::move(r)) {}  // NOLINT: implicit by design
  SampleSet(Tensor r, std::vector<int> l) : rows(std::move(r)), labels(std::move(l)) {}
};

inline std::vector<double> column(const Tensor& t, int j) {
  if (t.ndim() != 2 || j < 0 || j >= t.cols())
    throw Error("column: index " + std::to_string(j) + " outside " + shape_str(t.shape()));
  std::vector<double> out(static_cast<std::size_t>(t.rows()));
  for (int i = 0; i < t.rows(); ++i) out[static_cast<std::size_t>(i)] = t.at(i, j);
  return out;
}

inline Tensor as_matrix(const std::vector<double>& xs) {
  std::vector<double> data = xs;
  return Tensor(Shape{static_cast<int>(xs.size()), 1}, std::move(data));
}

// --- histograms, KL, JSD ---------------------------------------------------

// A normalized histogram over ordered bin identifiers. Mass must be
// nonnegative and sum to one within 1e-9.
struct Histogram {
  std::vector<double> support;
  std::vector<double> mass;
};

inline Histogram make_histogram(std::vector<double> support, std::vector<double> mass) {
  if (support.size() != mass.size())
    throw Error("histogram: support and mass sizes differ");
  if (support.empty()) throw Error("histogram: empty support");
  for (std::size_t i = 1; i < support.size(); ++i)
    if (!(support[i] > support[i - 1]))
      throw Error("histogram: support must be strictly increasing");
  double total = 0.0;
  for (double m : mass) {
    if (m < 0.0) throw Error("histogram: negative mass");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error("histogram: mass sums to " + std::to_string(total) + ", expected 1");
  return Histogram{std::move(support), std::move(mass)};
}

// Bin 1-D samples onto `bins` equal-width bins over [lo, hi]; out-of-range
// values are clamped into the end bins. Support holds bin centers.
inline Histogram histogram_from_samples(const std::vector<double>& xs, double lo, double hi,
                                        int bins) {
  if (xs.empty()) throw Error("histogram: empty sample");
  if (bins < 1) throw Error("histogram: need at least one bin");
  if (!(hi > lo)) throw Error("histogram: hi must exceed lo");
  std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
  const double width = (hi - lo) / bins;
  for (double x : xs) {
    int b = static_cast<int>((x - lo) / width);
    b = std::min(std::max(b, 0), bins - 1);
    mass[static_cast<std::size_t>(b)] += 1.0;
  }
  std::vector<double> support(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) support[static_cast<std::size_t>(b)] = lo + (b + 0.5) * width;
  for (double& m : mass) m /= static_cast<double>(xs.size());
  return Histogram{std::move(support), std::move(mass)};
}

// Additive smoothing: add eps to every bin and renormalize. Used before KL
// when absolute continuity cannot be guaranteed.
inline Histogram smoothed(const Histogram& h, double eps) {
  if (!(eps > 0.0)) throw Error("smoothed: eps must be positive");
  Histogram out = h;
  double total = 0.0;
  for (double& m : out.mass) {
    m += eps;
    total += m;
  }
  for (double& m : out.mass) m /= total;
  return out;
}

namespace detail {
inline void require_shared_support(const Histogram& p, const Histogram& q,
                                   const char* who) {
  if (p.support != q.support)
    throw Error(std::string(who) + ": histograms do not share a support");
}
}  // namespace detail

// KL(p || q) = sum p_i log(p_i / q_i), with 0 log 0 := 0. Errors when q has
// a zero bin where p has mass (not absolutely continuous).
inline double kl_divergence(const Histogram& p, const Histogram& q) {
  detail::require_shared_support(p, q, "kl_divergence");
  double out = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double pi = p.mass[i];
    if (pi == 0.0) continue;
    const double qi = q.mass[i];
    if (qi == 0.0)
      throw Error("kl_divergence: p has mass where q is zero (bin " + std::to_string(i) + ")");
    out += pi * std::log(pi / qi);
  }
  return out;
}

// Jensen-Shannon divergence against the midpoint mixture; always defined on
// a shared support and bounded by log 2.
inline double jsd(const Histogram& p, const Histogram& q) {
  detail::require_shared_support(p, q, "jsd");
  double out = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double pi = p.mass[i];
    const double qi = q.mass[i];
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) out += 0.5 * pi * std::log(pi / mi);
    if (qi > 0.0) out += 0.5 * qi * std::log(qi / mi);
  }
  return out;
}

// --- kernel density estimation ----------------------------------------------

// Per-dimension Silverman bandwidths: h_j = sd_j * (4 / ((d + 2) n))^(1/(d+4)).
inline std::vector<double> silverman_bandwidths(const Tensor& samples) {
  if (samples.ndim() != 2) throw Error("silverman: samples must be (n, d)");
  const int n = samples.rows(), d = samples.cols();
  if (n < 2) throw Error("silverman: need at least two samples to infer a bandwidth");
  std::vector<double> out(static_cast<std::size_t>(d));
  const double factor = std::pow(4.0 / ((d + 2.0) * n), 1.0 / (d + 4.0));
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += samples.at(i, j);
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dv = samples.at(i, j) - mean;
      ss += dv * dv;
    }
    const double sd = std::sqrt(ss / (n - 1));
    if (!(sd > 0.0))
      throw Error("silverman: column " + std::to_string(j) +
                  " is constant; supply an explicit bandwidth");
    out[static_cast<std::size_t>(j)] = sd * factor;
  }
  return out;
}

// Product-Gaussian KDE evaluated at the given points:
//   p(x) = 1/(n prod_j h_j) * sum_i prod_j phi((x_j - x_ij) / h_j).
inline std::vector<double> kde_density(const Tensor& samples, const std::vector<double>& h,
                                       const Tensor& eval_points) {
  if (samples.ndim() != 2 || eval_points.ndim() != 2)
    throw Error("kde: samples and eval points must be (n, d)");
  const int n = samples.rows(), d = samples.cols();
  if (n == 0) throw Error("kde: empty sample");
  if (eval_points.cols() != d) throw Error("kde: dimension mismatch");
  if (static_cast<int>(h.size()) != d) throw Error("kde: need one bandwidth per dimension");
  double norm = static_cast<double>(n);
  for (double hj : h) {
    if (!(hj > 0.0)) throw Error("kde: bandwidth must be positive");
    norm *= hj * 2.5066282746310005024;  // sqrt(2 pi)
  }
  const int m = eval_points.rows();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int e = 0; e < m; ++e) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double expo = 0.0;
      for (int j = 0; j < d; ++j) {
        const double z = (eval_points.at(e, j) - samples.at(i, j)) / h[static_cast<std::size_t>(j)];
        expo += z * z;
      }
      acc += std::exp(-0.5 * expo);
    }
    out[static_cast<std::size_t>(e)] = acc / norm;
  }
  return out;
}

// 1-D conveniences (scalar bandwidth; 0 selects Silverman).
inline std::vector<double> kde_density(const std::vector<double>& samples, double h,
                                       const std::vector<double>& eval_points) {
  Tensor s = as_matrix(samples);
  if (h == 0.0) h = silverman_bandwidths(s)[0];
  return kde_density(s, {h}, as_matrix(eval_points));
}

// Strictly increasing uniform grid; widens a degenerate span.
inline std::vector<double> make_grid(double lo, double hi, int points) {
  if (points < 2) throw Error("make_grid: need at least two points");
  if (!(hi - lo > 1e-12)) {
    lo -= 1.0;
    hi += 1.0;
  }
  std::vector<double> out(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
  return out;
}

// --- empirical Wasserstein-1 --------------------------------------------------

// Exact 1-D W1 by sorted pairing, averaged over dimensions for d > 1.
// Requires equal sample counts; callers subsample beforehand.
inline double emd(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2) throw Error("emd: samples must be (n, d)");
  if (x.cols() != y.cols()) throw Error("emd: dimension mismatch");
  if (x.rows() != y.rows())
    throw Error("emd: sample counts differ (" + std::to_string(x.rows()) + " vs " +
                std::to_string(y.rows()) + "); subsample to equal sizes first");
  if (x.rows() == 0) throw Error("emd: empty sample");
  const int n = x.rows(), d = x.cols();
  double total = 0.0;
  for (int j = 0; j < d; ++j) {
    std::vector<double> a = column(x, j);
    std::vector<double> b = column(y, j);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::abs(a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]);
    total += s / n;
  }
  return total / d;
}

inline double emd(const std::vector<double>& x, const std::vector<double>& y) {
  return emd(as_matrix(x), as_matrix(y));
}

// --- critic-based Wasserstein estimate -------------------------------------

// Trains a weight-clipped MLP critic to maximize mean F(x) - mean F(y)
// (RMSprop ascent, minibatches), then reports that difference over the full
// sets. Weight clipping keeps the critic family's Lipschitz constant small,
// so the estimate under-approximates the true distance by construction.
struct CriticEmdConfig {
  std::vector<int> hidden = {64, 64};
  double slope = 0.2;
  double clip_c = 0.01;
  int steps = 300;
  int batch = 256;
  double lr = 5e-5;
  double decay = 0.9;
  std::uint64_t seed = 0;
};

inline double critic_emd(const Tensor& x, const Tensor& y, const CriticEmdConfig& cfg = {}) {
  if (x.ndim() != 2 || y.ndim() != 2) throw Error("critic_emd: samples must be (n, d)");
  if (x.cols() != y.cols()) throw Error("critic_emd: dimension mismatch");
  if (x.rows() == 0 || y.rows() == 0) throw Error("critic_emd: empty sample");
  if (cfg.steps < 0 || cfg.batch <= 0) throw Error("critic_emd: bad step/batch config");

  MlpSpec spec;
  spec.input_dim = x.cols();
  for (int w : cfg.hidden) spec.hidden.push_back({w, Activation::kLeakyRelu, cfg.slope});
  spec.output = {1, Activation::kLinear};
  spec.init_seed = derive_seed(cfg.seed, "critic-emd-init");
  Mlp critic(spec, "critic");
  clip_weights(critic.params(), cfg.clip_c);

  Rng pick(derive_seed(cfg.seed, "critic-emd-batch"));
  RmspropState state;
  RmspropConfig opt{cfg.lr, cfg.decay, 1e-8};

  auto take = [&](const Tensor& src, int count) {
    std::vector<double> data(static_cast<std::size_t>(count) * src.cols());
    for (int i = 0; i < count; ++i) {
      const int r = pick.uniform_int(src.rows());
      for (int j = 0; j < src.cols(); ++j)
        data[static_cast<std::size_t>(i) * src.cols() + j] = src.at(r, j);
    }
    return Tensor(Shape{count, src.cols()}, std::move(data));
  };

  const int bx = std::min(cfg.batch, x.rows());
  const int by = std::min(cfg.batch, y.rows());
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor xb = take(x, bx);
    Tensor yb = take(y, by);
    try {
      Graph g;
      Var fx = critic.apply(g, g.input("xb", xb), true);
      Var fy = critic.apply(g, g.input("yb", yb), true);
      Var obj = g.sub(g.mean_all(fx), g.mean_all(fy));
      GradientMap grads = g.backward(obj);
      rmsprop_step(critic.params(), grads, state, opt, Direction::kAscend);
    } catch (const GraphError& e) {
      throw Error("critic_emd: non-finite objective after " + std::to_string(step) +
                  " steps (" + e.what() + ")");
    }
    clip_weights(critic.params(), cfg.clip_c);
  }

  Graph g;
  Var fx = critic.apply(g, g.input("x", x), false);
  Var fy = critic.apply(g, g.input("y", y), false);
  return g.value(g.sub(g.mean_all(fx), g.mean_all(fy))).item();
}

// --- kernel MMD ---------------------------------------------------------------

// Median pairwise Euclidean distance over the pooled rows (strided down to
// at most max_rows rows for tractability). Errors when the median is zero.
inline double median_heuristic_bandwidth(const Tensor& x, const Tensor& y, int max_rows = 2000) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols())
    throw Error("median_heuristic: samples must be (n, d) with matching d");
  const int total = x.rows() + y.rows();
  if (total < 2) throw Error("median_heuristic: need at least two rows");
  const int take = std::min(total, max_rows);
  const int d = x.cols();
  std::vector<double> rows(static_cast<std::size_t>(take) * d);
  for (int i = 0; i < take; ++i) {
    const int src = static_cast<int>(static_cast<std::int64_t>(i) * total / take);
    for (int j = 0; j < d; ++j)
      rows[static_cast<std::size_t>(i) * d + j] =
          src < x.rows() ? x.at(src, j) : y.at(src - x.rows(), j);
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(take) * (take - 1) / 2);
  for (int i = 0; i < take; ++i) {
    for (int k = i + 1; k < take; ++k) {
      double ss = 0.0;
      for (int j = 0; j < d; ++j) {
        const double dv = rows[static_cast<std::size_t>(i) * d + j] -
                          rows[static_cast<std::size_t>(k) * d + j];
        ss += dv * dv;
      }
      dist.push_back(std::sqrt(ss));
    }
  }
  std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
  double med = dist[dist.size() / 2];
  if (dist.size() % 2 == 0) {
    auto lower = std::max_element(dist.begin(), dist.begin() + dist.size() / 2);
    med = 0.5 * (med + *lower);
  }
  if (!(med > 0.0))
    throw Error("median_heuristic: degenerate (zero) median distance; supply an explicit bandwidth");
  return med;
}

// Squared maximum mean discrepancy with the Gaussian kernel. The default is
// the biased V-statistic; `unbiased` drops the diagonal self-similarities.
// bandwidth <= 0 selects the median heuristic.
inline double mmd_squared(const Tensor& x, const Tensor& y, double bandwidth = 0.0,
                          bool unbiased = false) {
  if (x.ndim() != 2 || y.ndim() != 2) throw Error("mmd: samples must be (n, d)");
  if (x.cols() != y.cols()) throw Error("mmd: dimension mismatch");
  const int n = x.rows(), m = y.rows(), d = x.cols();
  if (n == 0 || m == 0) throw Error("mmd: empty sample");
  if (unbiased && (n < 2 || m < 2)) throw Error("mmd: unbiased form needs at least two rows per side");
  const double sigma = bandwidth > 0.0 ? bandwidth : median_heuristic_bandwidth(x, y);
  const double gamma = 1.0 / (2.0 * sigma * sigma);

  auto k = [&](const Tensor& a, int i, const Tensor& b, int j) {
    double ss = 0.0;
    for (int c = 0; c < d; ++c) {
      const double dv = a.at(i, c) - b.at(j, c);
      ss += dv * dv;
    }
    return std::exp(-gamma * ss);
  };

  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (unbiased && i == j) continue;
      kxx += k(x, i, x, j);
    }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (unbiased && i == j) continue;
      kyy += k(y, i, y, j);
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) kxy += k(x, i, y, j);

  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  if (unbiased)
    return kxx / (nn * (nn - 1.0)) + kyy / (mm * (mm - 1.0)) - 2.0 * kxy / (nn * mm);
  return kxx / (nn * nn) + kyy / (mm * mm) - 2.0 * kxy / (nn * mm);
}

inline double mmd_squared(const std::vector<double>& x, const std::vector<double>& y,
                          double bandwidth = 0.0, bool unbiased = false) {
  return mmd_squared(as_matrix(x), as_matrix(y), bandwidth, unbiased);
}

// --- quantile-quantile pairs ---------------------------------------------------

namespace detail {
// Type-7 quantile: linear interpolation on the sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}
}  // namespace detail

// Matched quantiles of two 1-D samples at p_i = i/(q+1), i = 1..q.
inline std::vector<std::pair<double, double>> qq_points(const std::vector<double>& x,
                                                        const std::vector<double>& y, int q) {
  if (x.empty() || y.empty()) throw Error("qq_points: empty sample");
  if (q < 1) throw Error("qq_points: need at least one quantile");
  std::vector<double> sx = x, sy = y;
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(q));
  for (int i = 1; i <= q; ++i) {
    const double p = static_cast<double>(i) / (q + 1.0);
    out.emplace_back(detail::quantile_sorted(sx, p), detail::quantile_sorted(sy, p));
  }
  return out;
}

}  // namespace ganbench
