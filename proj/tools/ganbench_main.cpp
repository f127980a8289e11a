// ganbench: train a grid of GAN variants on tabular datasets and score the
// generated samples.
//
//   ganbench run --config grid.cfg [--out dir] [--seed n] [--workers n]
//   ganbench metrics --real a.csv --fake b.csv [--bandwidth h] [--critic]
//   ganbench inspect --checkpoint model.bin
//
// Exit codes: 0 on success, 1 on a configuration or I/O error, 2 when the
// run finished but one or more grid cells failed.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ganbench/bench.hpp"
#include "ganbench/datasets.hpp"
#include "ganbench/gan.hpp"
#include "ganbench/metrics.hpp"

namespace {

using namespace ganbench;

// both metric inputs accept a saved tensor or a delimited text table
Tensor load_samples(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0) {
    const Tensor t = load_tensor(path);
    return t.ndim() == 2 ? t : flatten(t);
  }
  return load_tabular(path).data;
}

Tensor head_rows(const Tensor& t, int n) {
  if (n <= 0 || n >= t.rows()) return t;
  std::vector<double> v(static_cast<std::size_t>(n) * t.cols());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t.cols(); ++j)
      v[static_cast<std::size_t>(i) * t.cols() + j] = t.at(i, j);
  return Tensor(Shape{n, t.cols()}, std::move(v));
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            std::uint64_t seed_override, bool seed_set, int workers) {
  ExperimentConfig cfg = parse_config_file(config_path);
  if (!out_override.empty()) cfg.out = out_override;
  if (seed_set) cfg.seed = seed_override;

  const RunResult res = run_experiment(cfg, workers);
  for (const ReportRow& row : res.report.rows) {
    if (row.ok) {
      std::printf("ok      %-12s %-8s mmd2=%.6g emd=%.6g\n", row.dataset.c_str(),
                  variant_name(row.variant), row.mmd2, row.emd);
    } else {
      std::printf("failed  %-12s %-8s %s\n", row.dataset.c_str(), variant_name(row.variant),
                  row.detail.c_str());
    }
  }
  std::printf("report written to %s\n", res.out_dir.c_str());
  if (res.failures > 0) {
    std::fprintf(stderr, "ganbench: %d of %zu cells failed\n", res.failures,
                 res.report.rows.size());
    return 2;
  }
  return 0;
}

int cmd_metrics(const std::string& real_path, const std::string& fake_path, double bandwidth,
                bool critic, int sample, int critic_steps) {
  Tensor real = head_rows(load_samples(real_path), sample);
  Tensor fake = head_rows(load_samples(fake_path), sample);
  std::printf("real  %dx%d  %s\n", real.rows(), real.cols(), real_path.c_str());
  std::printf("fake  %dx%d  %s\n", fake.rows(), fake.cols(), fake_path.c_str());
  std::printf("mmd2 = %.17g\n", mmd_squared(real, fake, bandwidth));
  std::printf("emd = %.17g\n", emd(real, fake));
  if (critic) {
    CriticEmdConfig cc;
    cc.steps = critic_steps;
    std::printf("critic_emd = %.17g\n", critic_emd(real, fake, cc));
  }
  return 0;
}

void print_net(const char* role, const Mlp& net) {
  const MlpSpec& spec = net.spec();
  std::printf("  %-13s %d", role, spec.input_dim);
  for (const LayerSpec& l : spec.all_layers())
    std::printf(" -> %d(%s)", l.width, activation_name(l.act));
  std::printf("   params=%lld\n", static_cast<long long>(spec.param_count()));
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const ModelBundle& b = ck.bundle;
  std::printf("variant       %s\n", variant_name(b.variant));
  std::printf("data_dim      %d\n", b.data_dim);
  std::printf("k_classes     %d\n", b.k_classes);
  std::printf("prior         %s dim=%d stream=%s\n", prior_name(b.prior.kind), b.prior.dim,
              b.prior.stream.c_str());
  print_net("generator", b.generator);
  print_net("discriminator", b.discriminator);
  if (b.aux) print_net("aux head", *b.aux);
  if (b.encoder) print_net("encoder", *b.encoder);
  const TrainConfig& tc = ck.config;
  std::printf("trained with  epochs=%d critic_steps=%d batch=%d latent=%d\n", tc.epochs,
              tc.critic_steps, tc.batch, tc.latent);
  std::printf("              lr_g=%g(%s) lr_d=%g(%s) adam_beta1=%g\n", tc.lr_g,
              optimizer_name(tc.opt_g), tc.lr_d, optimizer_name(tc.opt_d), tc.adam_beta1);
  std::printf("              clip_c=%g lambda_gp=%g lambda_info=%g seed=%llu\n", tc.clip_c,
              tc.lambda_gp, tc.lambda_info, static_cast<unsigned long long>(tc.seed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN variant benchmark for tabular data"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::uint64_t seed_override = 0;
  int workers = 1;
  CLI::App* run = app.add_subcommand("run", "train a config-described grid and score it");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_override, "output directory (overrides the config)");
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "master seed override");
  run->add_option("--workers", workers, "worker threads; 1 is bit-reproducible")
      ->default_val(1);

  std::string real_path, fake_path;
  double bandwidth = 0.0;
  bool critic = false;
  int sample = 0, critic_steps = 300;
  CLI::App* metrics = app.add_subcommand("metrics", "score one sample file against another");
  metrics->add_option("--real", real_path, "reference samples (.bin tensor or delimited text)")
      ->required();
  metrics->add_option("--fake", fake_path, "candidate samples")->required();
  metrics->add_option("--bandwidth", bandwidth, "kernel bandwidth; 0 = median heuristic");
  metrics->add_flag("--critic", critic, "also train a clipped critic for its distance bound");
  metrics->add_option("--critic-steps", critic_steps, "critic training steps");
  metrics->add_option("--sample", sample, "score only the first n rows");

  std::string checkpoint_path;
  CLI::App* inspect = app.add_subcommand("inspect", "describe a saved checkpoint");
  inspect->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help and version stay 0, bad usage is 1
  }

  try {
    if (*run) return cmd_run(config_path, out_override, seed_override, seed_opt->count() > 0,
                             workers);
    if (*metrics) return cmd_metrics(real_path, fake_path, bandwidth, critic, sample,
                                     critic_steps);
    if (*inspect) return cmd_inspect(checkpoint_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ganbench: %s\n", e.what());
    return 1;
  }
  return 1;
}
