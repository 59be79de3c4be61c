// Experiment CLI: train the primal-dual learners on the power-control
// environment, compute the capped water-filling baseline, re-emit policy
// curves from a checkpoint, and run quick invariant checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdlearn/checkpoint.hpp"
#include "pdlearn/config.hpp"
#include "pdlearn/metrics.hpp"
#include "pdlearn/nn.hpp"
#include "pdlearn/problem.hpp"
#include "pdlearn/trainer.hpp"
#include "pdlearn/waterfilling.hpp"

namespace fs = std::filesystem;
using namespace pdlearn;

namespace {

constexpr int kCurvePoints = 400;
// 99.9th percentile of the unit-mean exponential channel gain.
const double kCurveMaxChannel = -std::log(0.001);

std::vector<double> channel_grid() {
  std::vector<double> grid(kCurvePoints);
  for (int i = 0; i < kCurvePoints; ++i)
    grid[static_cast<std::size_t>(i)] =
        kCurveMaxChannel * i / (kCurvePoints - 1);
  return grid;
}

std::unique_ptr<ConstrainedProblem> make_env(const ExperimentConfig& cfg) {
  const double noise = cfg.resolved_noise_watts();
  switch (cfg.mode) {
    case TrainMode::kModelBased:
      return std::make_unique<PowerControlEnv>(noise, cfg.p_max, cfg.p_bar,
                                               /*analytic_gradients=*/true);
    case TrainMode::kModelFreeDet:
      return std::make_unique<PowerControlEnv>(noise, cfg.p_max, cfg.p_bar,
                                               /*analytic_gradients=*/false);
    case TrainMode::kModelFreeStoch:
      return std::make_unique<DiscreteToyEnv>(cfg.action_levels, noise,
                                              cfg.p_bar, cfg.p_max,
                                              /*fixed_state=*/std::nullopt);
  }
  throw std::logic_error("make_env: unknown mode");
}

// Mean learned power over rounds at a given channel gain. For the
// stochastic mode this is the expected power of the categorical policy.
double learned_power(const ExperimentConfig& cfg,
                     const std::vector<RoundResult>& results, double h) {
  const std::vector<double> input{h};
  double sum = 0.0;
  for (const RoundResult& r : results) {
    const std::vector<double> out = r.state.policy.net.forward(input);
    if (cfg.mode == TrainMode::kModelFreeStoch) {
      const std::vector<double> probs = softmax(out);
      double mean = 0.0;
      for (std::size_t k = 0; k < probs.size(); ++k)
        mean += probs[k] * cfg.action_levels[k];
      sum += mean;
    } else {
      sum += out[0];
    }
  }
  return sum / static_cast<double>(results.size());
}

void write_policy_curve(const fs::path& path, const ExperimentConfig& cfg,
                        const std::vector<RoundResult>& results,
                        const WaterFillingSolution& sol) {
  std::vector<PolicyCurvePoint> points;
  points.reserve(kCurvePoints);
  for (double h : channel_grid())
    points.push_back(
        {h, learned_power(cfg, results, h), optimal_power(sol, h)});
  write_policy_curve_csv(path, points);
}

int cmd_baseline(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const double noise = cfg.resolved_noise_watts();
  const WaterFillingSolution sol =
      solve_xi(noise, cfg.p_max, cfg.p_bar, cfg.xi_tol);
  const double mean_power = expected_power(sol);
  const double mean_rate = expected_rate(sol);
  std::printf("noise N            : %.10g W\n", noise);
  std::printf("xi*                : %.10g\n", sol.xi_star);
  std::printf("E[P*]              : %.10g W\n", mean_power);
  std::printf("E[R(P*,h)]         : %.10g bit/s/Hz\n", mean_rate);
  std::printf("zero-power below h : %.10g\n", sol.lower_threshold());
  std::printf("saturated above h  : %.10g\n", sol.upper_threshold());

  fs::create_directories(out_dir);
  std::vector<PolicyCurvePoint> points;
  points.reserve(kCurvePoints);
  for (double h : channel_grid()) {
    const double p = optimal_power(sol, h);
    points.push_back({h, p, p});
  }
  const fs::path curve = out_dir / "policy_curve.csv";
  write_policy_curve_csv(curve, points);
  std::printf("wrote %s\n", curve.string().c_str());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::unique_ptr<ConstrainedProblem> env = make_env(cfg);
  const std::vector<RoundResult> results =
      run_training(cfg.run_config(), *env);

  std::vector<std::vector<MetricRecord>> raw;
  raw.reserve(results.size());
  std::vector<std::vector<WindowPoint>> windowed;
  windowed.reserve(results.size());
  for (const RoundResult& r : results) {
    raw.push_back(r.records);
    windowed.push_back(window_average(r.records, cfg.window));
  }
  const std::vector<CrossRoundPoint> averaged = cross_round_average(windowed);

  fs::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config_echo");
    echo << config_to_text(cfg);
  }
  write_raw_csv(out_dir / "metrics_raw.csv", raw);
  write_windowed_csv(out_dir / "metrics_windowed.csv", averaged);

  const WaterFillingSolution sol = solve_xi(
      cfg.resolved_noise_watts(), cfg.p_max, cfg.p_bar, cfg.xi_tol);
  write_policy_curve(out_dir / "policy_curve.csv", cfg, results, sol);
  save_checkpoint(out_dir / "checkpoint", results.front().state);

  if (!averaged.empty()) {
    const CrossRoundPoint& last = averaged.back();
    std::printf("final window (ending at iteration %ld, %d rounds):\n",
                last.iter_end, cfg.rounds);
    std::printf("  rate        : %.6g +/- %.2g bit/s/Hz\n", last.rate.mean,
                last.rate.se);
    std::printf("  inst viol   : %.6g W (lo %.3g, hi %.3g)\n",
                last.viol_lo.mean + last.viol_hi.mean, last.viol_lo.mean,
                last.viol_hi.mean);
    std::printf("  E[P]        : %.6g W (c = %.4g)\n", last.power.mean,
                last.avg_constraint.mean);
    if (cfg.mode != TrainMode::kModelFreeStoch) {
      const double opt_rate = expected_rate(sol);
      std::printf("  optimal rate: %.6g bit/s/Hz (gap %.2f%%)\n", opt_rate,
                  100.0 * (opt_rate - last.rate.mean) / opt_rate);
    }
  } else {
    std::printf("no complete metrics window (iters < window)\n");
  }
  const auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
  std::printf("wrote %s/{config_echo,metrics_raw.csv,metrics_windowed.csv,"
              "policy_curve.csv,checkpoint} in %.1fs\n",
              out_dir.string().c_str(), elapsed);
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const fs::path& out_dir,
             const fs::path& checkpoint_path) {
  const TrainerState state = load_checkpoint(checkpoint_path);
  const WaterFillingSolution sol = solve_xi(
      cfg.resolved_noise_watts(), cfg.p_max, cfg.p_bar, cfg.xi_tol);

  fs::create_directories(out_dir);
  std::vector<PolicyCurvePoint> points;
  points.reserve(kCurvePoints);
  for (double h : channel_grid()) {
    const std::vector<double> input{h};
    const std::vector<double> out = state.policy.net.forward(input);
    double learned = out[0];
    if (cfg.mode == TrainMode::kModelFreeStoch) {
      const std::vector<double> probs = softmax(out);
      learned = 0.0;
      for (std::size_t k = 0; k < probs.size(); ++k)
        learned += probs[k] * cfg.action_levels[k];
    }
    points.push_back({h, learned, optimal_power(sol, h)});
  }
  const fs::path curve = out_dir / "policy_curve.csv";
  write_policy_curve_csv(curve, points);

  // Monte Carlo readout of the loaded (noiseless) policy.
  Rng rng(cfg.seed, 0x9e37);
  const double noise = cfg.resolved_noise_watts();
  double mean_rate = 0.0, mean_power = 0.0;
  constexpr int kSamples = 200000;
  for (int i = 1; i <= kSamples; ++i) {
    const std::vector<double> input{rng.exponential(1.0)};
    const double h = input[0];
    const double p = state.policy.net.forward(input)[0];
    mean_rate += (std::log2(1.0 + h * p / noise) - mean_rate) / i;
    mean_power += (p - mean_power) / i;
  }
  std::printf("checkpoint iteration : %ld\n", state.iteration);
  std::printf("learned E[R]         : %.6g bit/s/Hz (optimal %.6g)\n",
              mean_rate, expected_rate(sol));
  std::printf("learned E[P]         : %.6g W (budget %.6g)\n", mean_power,
              cfg.p_bar);
  std::printf("wrote %s\n", curve.string().c_str());
  return 0;
}

bool report(const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name,
              detail.empty() ? "" : ": ", detail.c_str());
  return ok;
}

// Quick self-contained invariant suites (a desk-scale subset of the test
// suite, runnable from a deployed binary).
int cmd_check(const ExperimentConfig& cfg) {
  bool all = true;
  Rng rng(cfg.seed, 0xC0FFEE);

  {  // gradient engine vs central finite differences
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      const int in = 1 + static_cast<int>(rng.below(4));
      const int out = 1 + static_cast<int>(rng.below(3));
      const std::vector<int> hidden{2 + static_cast<int>(rng.below(6)),
                                    2 + static_cast<int>(rng.below(6))};
      const nn::Activation acts[] = {nn::Activation::kIdentity,
                                     nn::Activation::kRelu,
                                     nn::Activation::kSigmoid};
      nn::Mlp net(in, hidden, out, acts[rng.below(3)], acts[rng.below(3)]);
      nn::init_he_uniform(net, rng);
      std::vector<double> x(static_cast<std::size_t>(in));
      for (double& v : x) v = rng.uniform(-2.0, 2.0);
      std::vector<double> upstream(static_cast<std::size_t>(out));
      for (double& v : upstream) v = rng.uniform(-1.0, 1.0);
      const nn::Gradients g = net.backward(x, upstream);
      const auto scalar = [&](const std::vector<double>& input) {
        const std::vector<double> y = net.forward(input);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
        return s;
      };
      for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> xp = x, xm = x;
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        const double fd = (scalar(xp) - scalar(xm)) / 2e-6;
        worst = std::max(worst, std::abs(fd - g.d_input[i]) /
                                    std::max({1.0, std::abs(fd),
                                              std::abs(g.d_input[i])}));
      }
    }
    all &= report("input gradients vs finite differences", worst < 1e-6,
                  "max rel err " + std::to_string(worst));
  }

  {  // multiplier clamp
    bool ok = true;
    for (int i = 0; i < 10000; ++i) {
      std::vector<double> v{rng.uniform(-5, 5), rng.uniform(-5, 5)};
      nn::clamp_nonnegative(v);
      ok &= v[0] >= 0.0 && v[1] >= 0.0;
    }
    all &= report("multiplier output clamp nonnegative", ok, "");
  }

  {  // analytic baseline + KKT
    const double noise = cfg.resolved_noise_watts();
    const WaterFillingSolution sol =
        solve_xi(noise, cfg.p_max, cfg.p_bar, cfg.xi_tol);
    std::vector<double> hs(10000);
    for (double& h : hs) h = rng.exponential(1.0);
    const KktReport rep = kkt_check(sol, hs);
    const bool ok = sol.xi_star > 0 &&
                    std::abs(expected_power(sol) - cfg.p_bar) <= cfg.xi_tol &&
                    rep.max_complementary_slackness < 1e-10 &&
                    rep.min_multiplier >= -1e-12 &&
                    rep.max_primal_violation <= 0.0;
    all &= report("water-filling KKT residuals", ok,
                  "xi*=" + std::to_string(sol.xi_star));
  }

  {  // projection invariants under aggressive learning rates
    PowerControlEnv env(cfg.resolved_noise_watts(), cfg.p_max, cfg.p_bar);
    NetworkArch arch;
    arch.policy_hidden = {8, 8};
    arch.multiplier_hidden = {8, 8};
    TrainerOptions opts;
    opts.batch = 8;
    opts.lr_policy = 5.0;
    opts.lr_multiplier = 5.0;
    opts.lr_xi = 5.0;
    TrainerState st = make_deterministic_state(env, arch, false, rng);
    bool ok = true;
    std::vector<double> batch(8);
    for (int t = 0; t < 200; ++t) {
      for (double& h : batch) h = rng.exponential(1.0);
      model_based_step(st, env, batch, opts);
      for (double x : st.xi) ok &= x >= 0.0;
      const std::vector<double> probe{rng.exponential(1.0)};
      const std::vector<double> lam = st.multiplier_values(probe);
      for (double l : lam) ok &= l >= 0.0;
    }
    all &= report("xi and lambda stay nonnegative", ok, "");
  }

  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"primal-dual unsupervised learning for constrained "
               "functional optimization"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string preset;
  std::string out_dir = "out";
  std::string mode_flag;
  std::uint64_t seed_flag = 0;
  bool seed_given = false;

  app.add_option("--config", config_path, "configuration file (key = value)");
  app.add_option("--preset", preset, "quick | paper");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed_flag, "RNG seed");
  app.add_option("--mode", mode_flag,
                 "model-based | model-free-det | model-free-stoch");

  CLI::App* train = app.add_subcommand("train", "run the selected trainer");
  CLI::App* baseline =
      app.add_subcommand("baseline", "capped water-filling solution");
  CLI::App* eval = app.add_subcommand("eval", "re-emit curves from a checkpoint");
  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path,
                   "checkpoint file (default <out>/checkpoint)");
  CLI::App* check = app.add_subcommand("check", "run invariant suites");

  CLI11_PARSE(app, argc, argv);
  seed_given = seed_opt->count() > 0;

  try {
    ExperimentConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    if (!config_path.empty()) cfg = load_config(config_path, std::move(cfg));
    apply_env_overrides(cfg);
    if (!mode_flag.empty()) cfg.mode = parse_mode(mode_flag);
    if (seed_given) cfg.seed = seed_flag;
    cfg.validate();

    if (train->parsed()) return cmd_train(cfg, out_dir);
    if (baseline->parsed()) return cmd_baseline(cfg, out_dir);
    if (eval->parsed()) {
      const fs::path ck = checkpoint_path.empty()
                              ? fs::path(out_dir) / "checkpoint"
                              : fs::path(checkpoint_path);
      return cmd_eval(cfg, out_dir, ck);
    }
    if (check->parsed()) return cmd_check(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
