#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "ganbench/metrics.hpp"
#include "support/oracles.hpp"

using namespace ganbench;

namespace {

Histogram hist(std::vector<double> mass) {
  std::vector<double> support(mass.size());
  for (std::size_t i = 0; i < support.size(); ++i) support[i] = static_cast<double>(i);
  return make_histogram(std::move(support), std::move(mass));
}

Histogram random_hist(Rng& rng, int bins) {
  std::vector<double> mass(static_cast<std::size_t>(bins));
  double total = 0.0;
  for (double& m : mass) {
    m = rng.uniform() + 1e-3;
    total += m;
  }
  for (double& m : mass) m /= total;
  return hist(std::move(mass));
}

Tensor normal_matrix(Rng& rng, int n, int d, double mean = 0.0, double sd = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (double& e : v) e = rng.normal(mean, sd);
  return Tensor(Shape{n, d}, std::move(v));
}

}  // namespace

TEST_CASE("histogram validation", "[metrics]") {
  CHECK_THROWS_AS(make_histogram({0, 1}, {1.0}), Error);
  CHECK_THROWS_AS(make_histogram({}, {}), Error);
  CHECK_THROWS_AS(make_histogram({0, 0}, {0.5, 0.5}), Error);   // not increasing
  CHECK_THROWS_AS(make_histogram({0, 1}, {1.5, -0.5}), Error);  // negative mass
  CHECK_THROWS_AS(make_histogram({0, 1}, {0.6, 0.6}), Error);   // sums to 1.2

  Histogram h = histogram_from_samples({0.1, 0.4, 0.6, 2.5}, 0.0, 1.0, 2);
  CHECK(h.support == std::vector<double>{0.25, 0.75});
  CHECK(h.mass == std::vector<double>{0.5, 0.5});  // 2.5 clamps into the top bin

  Histogram s = smoothed(hist({1.0, 0.0}), 1e-9);
  CHECK(s.mass[1] > 0.0);
  CHECK(s.mass[0] + s.mass[1] == Catch::Approx(1.0).margin(1e-15));
  CHECK_THROWS_AS(smoothed(h, 0.0), Error);
}

TEST_CASE("kl divergence on closed-form cases", "[metrics]") {
  // sum p log(p/q) expanded by hand for two bins
  const double expected = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(kl_divergence(hist({0.5, 0.5}), hist({0.25, 0.75})) ==
        Catch::Approx(expected).margin(1e-15));
  CHECK(expected == Catch::Approx(0.14384).margin(1e-5));

  CHECK(kl_divergence(hist({1.0, 0.0}), hist({0.5, 0.5})) ==
        Catch::Approx(std::log(2.0)).margin(1e-15));

  // 0 log 0 contributes nothing
  CHECK(kl_divergence(hist({0.0, 1.0}), hist({0.5, 0.5})) ==
        Catch::Approx(std::log(2.0)).margin(1e-15));

  Histogram p = hist({0.25, 0.25, 0.5});
  CHECK(kl_divergence(p, p) == 0.0);

  CHECK_THROWS_WITH(kl_divergence(hist({0.5, 0.5}), hist({1.0, 0.0})),
                    Catch::Matchers::ContainsSubstring("mass where q is zero"));
  CHECK_THROWS_AS(kl_divergence(hist({0.5, 0.5}), make_histogram({5, 6}, {0.5, 0.5})), Error);
}

TEST_CASE("jsd is symmetric, nonnegative and bounded by log 2", "[metrics]") {
  CHECK(jsd(hist({1.0, 0.0}), hist({0.0, 1.0})) == Catch::Approx(std::log(2.0)).margin(1e-15));
  Histogram p = hist({0.2, 0.3, 0.5});
  CHECK(jsd(p, p) == 0.0);

  Rng rng(404);
  for (int it = 0; it < 200; ++it) {
    Histogram a = random_hist(rng, 16);
    Histogram b = random_hist(rng, 16);
    const double ab = jsd(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= std::log(2.0) + 1e-12);
    CHECK(ab == Catch::Approx(jsd(b, a)).margin(1e-15));
  }

  // jsd never needs absolute continuity
  CHECK_NOTHROW(jsd(hist({1.0, 0.0}), hist({0.0, 1.0})));
}

TEST_CASE("silverman bandwidth follows the plug-in formula", "[metrics]") {
  Tensor two(Shape{2, 1}, {0.0, 1.0});
  const double sd = std::sqrt(0.5);  // sample sd with n-1 denominator
  const double factor = std::pow(4.0 / (3.0 * 2.0), 0.2);
  CHECK(silverman_bandwidths(two)[0] == Catch::Approx(sd * factor).margin(1e-15));

  CHECK_THROWS_AS(silverman_bandwidths(Tensor(Shape{1, 1}, {0.0})), Error);
  CHECK_THROWS_WITH(silverman_bandwidths(Tensor(Shape{3, 1}, {2.0, 2.0, 2.0})),
                    Catch::Matchers::ContainsSubstring("constant"));
}

TEST_CASE("kde closed forms and normalization", "[metrics]") {
  // a single sample with h=1 is a standard normal bump
  std::vector<double> at_zero = kde_density({0.0}, 1.0, {0.0});
  CHECK(at_zero[0] == Catch::Approx(1.0 / std::sqrt(2.0 * M_PI)).margin(1e-15));
  CHECK(at_zero[0] == Catch::Approx(0.39894).margin(1e-5));

  // product form in 2-D: the origin density of one origin sample is 1/(2 pi)
  Tensor origin(Shape{1, 2}, {0.0, 0.0});
  CHECK(kde_density(origin, {1.0, 1.0}, origin)[0] ==
        Catch::Approx(1.0 / (2.0 * M_PI)).margin(1e-15));

  // translation equivariance
  Rng rng(31);
  std::vector<double> xs(40), grid = make_grid(-3, 3, 21), shifted_grid;
  for (double& e : xs) e = rng.normal();
  std::vector<double> shifted = xs;
  for (double& e : shifted) e += 5.0;
  for (double gpt : grid) shifted_grid.push_back(gpt + 5.0);
  std::vector<double> base = kde_density(xs, 0.5, grid);
  std::vector<double> moved = kde_density(shifted, 0.5, shifted_grid);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(base[i] == Catch::Approx(moved[i]).margin(1e-12));

  // the density integrates to ~1 over a wide grid
  std::vector<double> sample(500);
  Rng rng2(77);
  for (double& e : sample) e = rng2.normal();
  std::vector<double> wide = make_grid(-6.0, 6.0, 1201);
  std::vector<double> dens = kde_density(sample, 0.0, wide);
  CHECK(oracle::trapezoid(wide, dens) == Catch::Approx(1.0).margin(1e-3));

  CHECK_THROWS_AS(kde_density({1.0}, -0.5, {0.0}), Error);
  CHECK_THROWS_AS(kde_density(Tensor(Shape{1, 2}, {0, 0}), {1.0}, origin), Error);
  CHECK_THROWS_AS(kde_density(Tensor(Shape{0, 1}, {}), {1.0}, Tensor(Shape{1, 1}, {0.0})), Error);
}

TEST_CASE("make_grid spans the interval", "[metrics]") {
  std::vector<double> g = make_grid(-2.0, 2.0, 5);
  CHECK(g == std::vector<double>{-2, -1, 0, 1, 2});
  std::vector<double> widened = make_grid(3.0, 3.0, 3);
  CHECK(widened.front() == Catch::Approx(2.0));
  CHECK(widened.back() == Catch::Approx(4.0));
  CHECK_THROWS_AS(make_grid(0, 1, 1), Error);
}

TEST_CASE("exact emd closed forms", "[metrics]") {
  CHECK(emd({0.0, 1.0}, {1.0, 2.0}) == Catch::Approx(1.0).margin(1e-15));
  CHECK(emd({3.0, 1.0, 2.0}, {2.0, 3.0, 1.0}) == 0.0);  // same multiset
  CHECK(emd({0.0}, {5.0}) == Catch::Approx(5.0));

  // multi-d averages the per-dimension costs
  Tensor x(Shape{2, 2}, {0, 0, 1, 0});
  Tensor y(Shape{2, 2}, {0, 2, 1, 2});
  CHECK(emd(x, y) == Catch::Approx(1.0));  // dim 0 cost 0, dim 1 cost 2

  CHECK_THROWS_WITH(emd(Tensor(Shape{2, 1}, {0, 1}), Tensor(Shape{3, 1}, {0, 1, 2})),
                    Catch::Matchers::ContainsSubstring("subsample"));
  CHECK_THROWS_AS(emd(Tensor(Shape{2, 1}, {0, 1}), Tensor(Shape{2, 2}, {0, 1, 2, 3})), Error);
}

TEST_CASE("exact emd agrees with brute-force assignment", "[metrics]") {
  Rng rng(2024);
  for (int it = 0; it < 60; ++it) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));  // up to 6 rows
    const int d = 1 + static_cast<int>(rng.uniform_int(3));
    Tensor x = normal_matrix(rng, n, d, rng.uniform(-2, 2), 0.5 + rng.uniform());
    Tensor y = normal_matrix(rng, n, d, rng.uniform(-2, 2), 0.5 + rng.uniform());
    std::vector<std::vector<double>> xc, yc;
    for (int j = 0; j < d; ++j) {
      xc.push_back(column(x, j));
      yc.push_back(column(y, j));
    }
    CHECK(emd(x, y) == Catch::Approx(oracle::brute_force_emd(xc, yc)).margin(1e-9));
  }
}

TEST_CASE("exact emd satisfies the metric axioms", "[metrics]") {
  Rng rng(99);
  for (int it = 0; it < 40; ++it) {
    const int n = 2 + static_cast<int>(rng.uniform_int(7));
    Tensor x = normal_matrix(rng, n, 1);
    Tensor y = normal_matrix(rng, n, 1, 1.0);
    Tensor z = normal_matrix(rng, n, 1, -1.0, 2.0);
    const double xy = emd(x, y), yx = emd(y, x), xz = emd(x, z), yz = emd(y, z);
    CHECK(xy >= 0.0);
    CHECK(xy == Catch::Approx(yx).margin(1e-12));
    CHECK(xz <= xy + yz + 1e-9);  // triangle inequality
    CHECK(emd(x, x) == 0.0);
  }
}

TEST_CASE("critic emd is zero on identical sets and deterministic", "[metrics]") {
  Rng rng(7);
  Tensor x = normal_matrix(rng, 64, 2);
  CriticEmdConfig cfg;
  cfg.steps = 25;
  cfg.batch = 32;
  cfg.hidden = {16, 16};
  CHECK(critic_emd(x, x, cfg) == 0.0);

  Tensor y = normal_matrix(rng, 64, 2, 2.0);
  const double a = critic_emd(x, y, cfg);
  const double b = critic_emd(x, y, cfg);
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);

  cfg.seed = 999;
  CHECK_NOTHROW(critic_emd(x, y, cfg));  // reseeding stays finite

  CHECK_THROWS_AS(critic_emd(x, normal_matrix(rng, 8, 3), cfg), Error);
  CHECK_THROWS_AS(critic_emd(Tensor(Shape{0, 2}, {}), x, cfg), Error);
}

TEST_CASE("critic emd separates distant distributions", "[metrics]") {
  Rng rng(41);
  Tensor x = normal_matrix(rng, 300, 1, 0.0, 0.1);
  Tensor y = normal_matrix(rng, 300, 1, 3.0, 0.1);
  CriticEmdConfig cfg;
  cfg.steps = 500;
  cfg.batch = 128;
  const double w = critic_emd(x, y, cfg);
  // clipping caps the critic family, so the estimate sits well under the
  // true distance (~3) but must come out clearly positive
  CHECK(w > 0.005);
  CHECK(w < 3.0);
}

TEST_CASE("median heuristic bandwidth", "[metrics]") {
  Tensor a(Shape{1, 1}, {0.0});
  Tensor b(Shape{1, 1}, {1.0});
  CHECK(median_heuristic_bandwidth(a, b) == Catch::Approx(1.0));

  // pooled {0,1,2,3}: distances {1,1,1,2,2,3}, median = (1+2)/2
  Tensor c(Shape{2, 1}, {0.0, 1.0});
  Tensor d(Shape{2, 1}, {2.0, 3.0});
  CHECK(median_heuristic_bandwidth(c, d) == Catch::Approx(1.5));

  Tensor same(Shape{3, 1}, {2.0, 2.0, 2.0});
  CHECK_THROWS_WITH(median_heuristic_bandwidth(same, same),
                    Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("mmd closed forms", "[metrics]") {
  // singletons {0} vs {1} at sigma=1: kxx=kyy=1, kxy=exp(-1/2)
  const double expected = 2.0 - 2.0 * std::exp(-0.5);
  CHECK(mmd_squared({0.0}, {1.0}, 1.0) == Catch::Approx(expected).margin(1e-15));
  CHECK(expected == Catch::Approx(0.78694).margin(1e-5));

  // unbiased 2x2 case expanded by hand: x={0,1}, y={2,3}
  const double kxy = std::exp(-2.0) + std::exp(-4.5) + std::exp(-0.5) + std::exp(-2.0);
  const double byhand = std::exp(-0.5) + std::exp(-0.5) - 0.5 * kxy;
  CHECK(mmd_squared({0.0, 1.0}, {2.0, 3.0}, 1.0, true) == Catch::Approx(byhand).margin(1e-15));

  CHECK_THROWS_AS(mmd_squared({0.0}, {1.0}, 1.0, true), Error);  // needs 2 rows per side
}

TEST_CASE("mmd properties on random samples", "[metrics]") {
  Rng rng(555);
  for (int it = 0; it < 20; ++it) {
    const int n = 3 + static_cast<int>(rng.uniform_int(10));
    const int m = 3 + static_cast<int>(rng.uniform_int(10));
    Tensor x = normal_matrix(rng, n, 2);
    Tensor y = normal_matrix(rng, m, 2, 1.0);
    const double v = mmd_squared(x, y);
    CHECK(v >= 0.0);  // biased V-statistic never goes negative
    CHECK(v == Catch::Approx(mmd_squared(y, x)).margin(1e-12));
  }

  Tensor x = normal_matrix(rng, 30, 3);
  CHECK(std::abs(mmd_squared(x, x, 1.0)) <= 1e-12);

  // row order is irrelevant
  std::vector<double> fwd = x.data(), rev;
  for (int i = 29; i >= 0; --i)
    for (int j = 0; j < 3; ++j) rev.push_back(x.at(i, j));
  Tensor xr(Shape{30, 3}, std::move(rev));
  Tensor y = normal_matrix(rng, 25, 3, 0.5);
  CHECK(mmd_squared(x, y, 0.7) == Catch::Approx(mmd_squared(xr, y, 0.7)).margin(1e-12));

  // a huge bandwidth flattens the kernel and the discrepancy vanishes
  CHECK(mmd_squared(x, y, 1e9) == Catch::Approx(0.0).margin(1e-9));

  // degenerate data cannot use the median heuristic
  Tensor same(Shape{4, 1}, {1.0, 1.0, 1.0, 1.0});
  CHECK_THROWS_AS(mmd_squared(same, same), Error);
}

TEST_CASE("qq points match quantiles", "[metrics]") {
  // q=2 on three points probes p=1/3 and p=2/3 of the type-7 interpolant
  auto pts = qq_points({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 2);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].first == Catch::Approx(5.0 / 3));
  CHECK(pts[1].first == Catch::Approx(7.0 / 3));
  CHECK(pts[0].first == pts[0].second);
  CHECK(pts[1].first == pts[1].second);

  // monotone affine maps act directly on the quantiles
  Rng rng(13);
  std::vector<double> xs(50);
  for (double& e : xs) e = rng.normal();
  std::vector<double> ys = xs;
  for (double& e : ys) e = 2.0 * e + 3.0;
  for (const auto& [qx, qy] : qq_points(xs, ys, 9))
    CHECK(qy == Catch::Approx(2.0 * qx + 3.0).margin(1e-12));

  // identical samples sit on the diagonal
  for (const auto& [qx, qy] : qq_points(xs, xs, 7)) CHECK(qx == qy);

  CHECK_THROWS_AS(qq_points({}, {1.0}, 3), Error);
  CHECK_THROWS_AS(qq_points({1.0}, {1.0}, 0), Error);
}

TEST_CASE("column extraction and matrix wrapping", "[metrics]") {
  Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(column(t, 1) == std::vector<double>{2, 5});
  CHECK_THROWS_AS(column(t, 3), Error);
  Tensor m = as_matrix({7, 8, 9});
  CHECK(m.shape() == Shape{3, 1});
  CHECK(m.at(2, 0) == 9.0);
}
