#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "ganbench/nn.hpp"

using namespace ganbench;

namespace {

MlpSpec wide_spec() {
  MlpSpec s;
  s.input_dim = 7;
  s.hidden = {{256, Activation::kLeakyRelu, 0.2}, {512, Activation::kLeakyRelu, 0.2}};
  s.output = {7, Activation::kTanh};
  s.init_seed = 42;
  return s;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

GradientMap unit_grads(const ParamSet& params, double value) {
  GradientMap g;
  for (const auto& p : params.items) g.emplace(p.name, Tensor::full(p.value.shape(), value));
  return g;
}

}  // namespace

TEST_CASE("parameter count matches the layer arithmetic", "[nn]") {
  // counted layer by layer: weights are fan_in*width, biases add width
  const std::int64_t expected = (7 * 256 + 256) + (256 * 512 + 512) + (512 * 7 + 7);
  CHECK(expected == 137223);
  CHECK(wide_spec().param_count() == expected);
  CHECK(Mlp(wide_spec(), "g").params().total_count() == expected);

  MlpSpec tiny;
  tiny.input_dim = 2;
  tiny.hidden = {{3, Activation::kRelu}};
  tiny.output = {1, Activation::kLinear};
  CHECK(tiny.param_count() == 2 * 3 + 3 + 3 * 1 + 1);
}

TEST_CASE("glorot initialization is bounded, centered and reproducible", "[nn]") {
  MlpSpec s;
  s.input_dim = 9;
  s.hidden = {{16, Activation::kLeakyRelu, 0.2}};
  s.output = {4, Activation::kLinear};
  s.init_seed = 123;
  Mlp net(s, "net");

  const double lim0 = std::sqrt(6.0 / (9 + 16));
  for (double v : net.params().require("net/W0").data()) {
    CHECK(v >= -lim0);
    CHECK(v <= lim0);
  }
  const double lim1 = std::sqrt(6.0 / (16 + 4));
  for (double v : net.params().require("net/W1").data()) {
    CHECK(v >= -lim1);
    CHECK(v <= lim1);
  }
  for (double v : net.params().require("net/b0").data()) CHECK(v == 0.0);
  for (double v : net.params().require("net/b1").data()) CHECK(v == 0.0);

  // same (spec, seed) yields the same bits; the prefix only names things
  Mlp again(s, "net");
  Mlp renamed(s, "other");
  for (std::size_t i = 0; i < net.params().items.size(); ++i) {
    CHECK(same_bits(net.params().items[i].value, again.params().items[i].value));
    CHECK(same_bits(net.params().items[i].value, renamed.params().items[i].value));
  }

  MlpSpec reseeded = s;
  reseeded.init_seed = 124;
  CHECK(!same_bits(Mlp(reseeded, "net").params().require("net/W0"),
                   net.params().require("net/W0")));
}

TEST_CASE("forward pass matches hand computation with fixed weights", "[nn]") {
  MlpSpec s;
  s.input_dim = 2;
  s.output = {1, Activation::kLinear};
  ParamSet fixed;
  fixed.items.push_back({"f/W0", Tensor(Shape{2, 1}, {2.0, -1.0}, true)});
  fixed.items.push_back({"f/b0", Tensor(Shape{1}, {0.5}, true)});
  Mlp f(s, "f", fixed);

  Tensor y = f(Tensor(Shape{2, 2}, {3, 4, -1, 0.5}));
  CHECK(y.at(0, 0) == Catch::Approx(3 * 2.0 - 4 + 0.5));
  CHECK(y.at(1, 0) == Catch::Approx(-2.0 - 0.5 + 0.5));

  MlpSpec sig = s;
  sig.output.act = Activation::kSigmoid;
  Mlp fs(sig, "f", f.params());
  CHECK(fs(Tensor(Shape{1, 2}, {3, 4})).item() == Catch::Approx(1.0 / (1.0 + std::exp(-2.5))));
}

TEST_CASE("restore constructor validates shapes", "[nn]") {
  Mlp original(wide_spec(), "g");
  Mlp restored(wide_spec(), "g", original.params());
  Tensor x = Tensor::full(Shape{3, 7}, 0.25);
  CHECK(same_bits(original(x), restored(x)));

  ParamSet bad = original.params();
  bad.set("g/W1", Tensor::zeros(Shape{256, 100}).with_requires_grad(true));
  CHECK_THROWS_WITH(Mlp(wide_spec(), "g", bad),
                    Catch::Matchers::ContainsSubstring("layer 1"));

  ParamSet renamed = original.params();
  renamed.items[0].name = "h/W0";
  CHECK_THROWS_AS(Mlp(wide_spec(), "g", renamed), Error);
}

TEST_CASE("adam first step matches the hand-derived update", "[nn]") {
  // at t=1 the bias corrections cancel the decay exactly: mhat = g, vhat = g^2,
  // so theta moves by lr * g / (|g| + eps) against the gradient
  ParamSet p;
  p.items.push_back({"w", Tensor(Shape{1}, {1.0}, true)});
  GradientMap g;
  g.emplace("w", Tensor(Shape{1}, {0.4}));
  AdamState st;
  adam_step(p, g, st, AdamConfig{}, Direction::kDescend);

  const double expected = 1.0 - 2e-4 * 0.4 / (0.4 + 1e-8);
  CHECK(p.require("w").item() == Catch::Approx(expected).margin(1e-15));
  CHECK(p.require("w").item() == Catch::Approx(0.9998).margin(1e-9));
  CHECK(st.t == 1);
}

TEST_CASE("adam multi-step agrees with the scalar recursion", "[nn]") {
  // independent transcription of the update equations, one scalar at a time
  const double lr = 2e-4, b1 = 0.5, b2 = 0.999, eps = 1e-8;
  double theta = 0.7, m = 0.0, v = 0.0;
  const std::vector<double> gs = {0.3, -1.2, 0.05, 0.0, 2.4};
  for (std::size_t t = 1; t <= gs.size(); ++t) {
    const double gi = -gs[t - 1];  // descend
    m = b1 * m + (1 - b1) * gi;
    v = b2 * v + (1 - b2) * gi * gi;
    const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    theta += lr * mhat / (std::sqrt(vhat) + eps);
  }

  ParamSet p;
  p.items.push_back({"w", Tensor(Shape{1}, {0.7}, true)});
  AdamState st;
  for (double gval : gs) {
    GradientMap g;
    g.emplace("w", Tensor(Shape{1}, {gval}));
    adam_step(p, g, st, AdamConfig{}, Direction::kDescend);
  }
  CHECK(p.require("w").item() == Catch::Approx(theta).margin(1e-15));
  CHECK(st.t == 5);
}

TEST_CASE("rmsprop first step matches the hand-derived update", "[nn]") {
  ParamSet p;
  p.items.push_back({"w", Tensor(Shape{1}, {0.0}, true)});
  GradientMap g;
  g.emplace("w", Tensor(Shape{1}, {1.0}));
  RmspropState st;
  rmsprop_step(p, g, st, RmspropConfig{}, Direction::kDescend);

  const double expected = -5e-5 / (std::sqrt(0.1) + 1e-8);
  CHECK(p.require("w").item() == Catch::Approx(expected).margin(1e-18));
  CHECK(p.require("w").item() == Catch::Approx(-1.5811e-4).margin(1e-8));
  CHECK(st.t == 1);
}

TEST_CASE("rmsprop multi-step agrees with the scalar recursion", "[nn]") {
  const double lr = 5e-5, decay = 0.9, eps = 1e-8;
  double theta = -0.2, v = 0.0;
  const std::vector<double> gs = {1.0, -0.5, 0.25};
  for (double gval : gs) {
    v = decay * v + (1 - decay) * gval * gval;
    theta -= lr * gval / (std::sqrt(v) + eps);
  }

  ParamSet p;
  p.items.push_back({"w", Tensor(Shape{1}, {-0.2}, true)});
  RmspropState st;
  for (double gval : gs) {
    GradientMap g;
    g.emplace("w", Tensor(Shape{1}, {gval}));
    rmsprop_step(p, g, st, RmspropConfig{}, Direction::kDescend);
  }
  CHECK(p.require("w").item() == Catch::Approx(theta).margin(1e-15));
}

TEST_CASE("zero gradient leaves parameters unchanged but advances time", "[nn]") {
  Mlp net(wide_spec(), "g");
  ParamSet before = net.params();

  AdamState adam;
  adam_step(net.params(), unit_grads(net.params(), 0.0), adam, AdamConfig{}, Direction::kDescend);
  for (std::size_t i = 0; i < before.items.size(); ++i)
    CHECK(same_bits(net.params().items[i].value, before.items[i].value));
  CHECK(adam.t == 1);

  RmspropState rms;
  rmsprop_step(net.params(), unit_grads(net.params(), 0.0), rms, RmspropConfig{},
               Direction::kAscend);
  for (std::size_t i = 0; i < before.items.size(); ++i)
    CHECK(same_bits(net.params().items[i].value, before.items[i].value));
  CHECK(rms.t == 1);
}

TEST_CASE("ascending a gradient equals descending its negation", "[nn]") {
  Rng rng(77);
  auto make = [&] {
    ParamSet p;
    std::vector<double> v(12);
    for (double& e : v) e = rng.normal();
    p.items.push_back({"w", Tensor(Shape{3, 4}, v, true)});
    return p;
  };
  ParamSet pa = make();
  ParamSet pd = pa;
  std::vector<double> gv(12);
  for (double& e : gv) e = rng.normal();
  GradientMap ga, gd;
  ga.emplace("w", Tensor(Shape{3, 4}, gv));
  for (double& e : gv) e = -e;
  gd.emplace("w", Tensor(Shape{3, 4}, gv));

  AdamState sa, sd;
  adam_step(pa, ga, sa, AdamConfig{}, Direction::kAscend);
  adam_step(pd, gd, sd, AdamConfig{}, Direction::kDescend);
  CHECK(same_bits(pa.require("w"), pd.require("w")));

  RmspropState ra, rd;
  rmsprop_step(pa, ga, ra, RmspropConfig{}, Direction::kAscend);
  rmsprop_step(pd, gd, rd, RmspropConfig{}, Direction::kDescend);
  CHECK(same_bits(pa.require("w"), pd.require("w")));
}

TEST_CASE("weight clipping clamps into the box and is idempotent", "[nn]") {
  ParamSet p;
  p.items.push_back({"w", Tensor(Shape{5}, {-5.0, -0.005, 0.0, 0.005, 5.0}, true)});
  clip_weights(p, 0.01);
  CHECK(p.require("w").data() == std::vector<double>{-0.01, -0.005, 0.0, 0.005, 0.01});

  Tensor snapshot = p.require("w");
  clip_weights(p, 0.01);
  CHECK(p.require("w").same_storage(snapshot));  // untouched when already inside

  CHECK_THROWS_AS(clip_weights(p, 0.0), Error);
  CHECK_THROWS_AS(clip_weights(p, -1.0), Error);
}

TEST_CASE("optimizer errors name the offending parameter", "[nn]") {
  MlpSpec s;
  s.input_dim = 2;
  s.output = {1, Activation::kLinear};
  Mlp net(s, "net");
  GradientMap partial;
  partial.emplace("net/W0", Tensor::zeros(Shape{2, 1}));
  AdamState st;
  CHECK_THROWS_WITH(adam_step(net.params(), partial, st, AdamConfig{}, Direction::kDescend),
                    Catch::Matchers::ContainsSubstring("net/b0"));

  GradientMap wrong;
  wrong.emplace("net/W0", Tensor::zeros(Shape{1, 2}));
  wrong.emplace("net/b0", Tensor::zeros(Shape{1}));
  RmspropState rst;
  CHECK_THROWS_WITH(rmsprop_step(net.params(), wrong, rst, RmspropConfig{}, Direction::kAscend),
                    Catch::Matchers::ContainsSubstring("shape mismatch"));
}

TEST_CASE("a network applied twice shares one set of parameter bindings", "[nn]") {
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {{5, Activation::kTanh}};
  s.output = {1, Activation::kLinear};
  s.init_seed = 31;
  Mlp net(s, "net");

  Rng rng(5);
  auto batch = [&](int n) {
    std::vector<double> v(static_cast<std::size_t>(n) * 3);
    for (double& e : v) e = rng.normal();
    return Tensor(Shape{n, 3}, std::move(v));
  };
  Tensor x1 = batch(4), x2 = batch(6);

  Graph g;
  Var y1 = net.apply(g, g.input("x1", x1), true);
  Var y2 = net.apply(g, g.input("x2", x2), true);
  GradientMap shared = g.backward(g.add(g.mean_all(g.square(y1)), g.mean_all(g.square(y2))));

  auto solo = [&](const Tensor& x) {
    Graph gg;
    Var y = net.apply(gg, gg.input("x", x), true);
    return gg.backward(gg.mean_all(gg.square(y)));
  };
  GradientMap g1 = solo(x1), g2 = solo(x2);
  for (const auto& p : net.params().items) {
    const auto& s1 = g1[p.name].data();
    const auto& s2 = g2[p.name].data();
    const auto& sh = shared[p.name].data();
    for (std::size_t i = 0; i < sh.size(); ++i)
      CHECK(sh[i] == Catch::Approx(s1[i] + s2[i]).margin(1e-12));
  }
}

TEST_CASE("frozen application keeps parameters out of the gradient map", "[nn]") {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden = {{3, Activation::kTanh}};
  s.output = {1, Activation::kLinear};
  s.init_seed = 9;
  Mlp net(s, "net");

  Graph g;
  Var x = g.input("x", Tensor(Shape{2, 2}, {1, 2, 3, 4}).with_requires_grad(true));
  Var y = net.apply(g, x, false);
  GradientMap grads = g.backward(g.mean_all(g.square(y)));
  CHECK(grads.size() == 1);
  CHECK(grads.count("x") == 1);
}
