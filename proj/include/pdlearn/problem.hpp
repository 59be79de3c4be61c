#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdlearn/rng.hpp"

namespace pdlearn {

// A constrained functional optimization environment. States h are drawn
// i.i.d.; executing action x at state h yields the objective J(x, h),
// instantaneous constraint values g(x, h) (feasible iff g <= 0
// elementwise) and average constraint values c(x, h) (feasible iff
// E[c] <= 0). Evaluation never rejects an infeasible action: violations
// show up as positive g/c entries and it is the trainer's job to observe
// and penalize them.
class ConstrainedProblem {
 public:
  virtual ~ConstrainedProblem() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int n_inst_constraints() const = 0;
  virtual int n_avg_constraints() const = 0;
  virtual bool has_value_gradients() const { return false; }

  virtual void sample_state(Rng& rng, std::span<double> h) const = 0;

  // Returns J; writes g (n_inst entries) and c (n_avg entries).
  virtual double evaluate(std::span<const double> x, std::span<const double> h,
                          std::span<double> g, std::span<double> c) const = 0;

  // d/dx of (J, g, c) at (x, h). Layout: dg[i * action_dim + j] = dg_i/dx_j.
  virtual void value_gradient(std::span<const double> x,
                              std::span<const double> h, std::span<double> dj,
                              std::span<double> dg, std::span<double> dc) const {
    (void)x;
    (void)h;
    (void)dj;
    (void)dg;
    (void)dc;
    throw std::logic_error("value gradients unavailable for this environment");
  }

  // Projects a proposed action onto the physically executable set (what a
  // real system could actually do). Default: every action is executable.
  virtual void clip_executable(std::span<double> x) const { (void)x; }
};

// Receiver noise power referred through the large-scale channel gain, in
// watts: PSD (dBm/Hz) over the given bandwidth, divided by the
// 35.3 + 37.6 log10(d) dB path loss.
inline double noise_budget_watts(double psd_dbm_per_hz, double bandwidth_hz,
                                 double distance_m) {
  if (!(bandwidth_hz > 0.0))
    throw std::invalid_argument("noise_budget: bandwidth must be positive");
  if (!(distance_m > 0.0))
    throw std::invalid_argument("noise_budget: distance must be positive");
  const double noise_dbm = psd_dbm_per_hz + 10.0 * std::log10(bandwidth_hz);
  const double noise_watts = std::pow(10.0, (noise_dbm - 30.0) / 10.0);
  const double path_loss_db = 35.3 + 37.6 * std::log10(distance_m);
  return noise_watts * std::pow(10.0, path_loss_db / 10.0);
}

// Point-to-point power control. The state is the small-scale channel
// power gain (exponential, unit mean — Rayleigh amplitude), the action is
// the transmit power in watts, and the objective is the spectral
// efficiency log2(1 + h P / N). Constraints: 0 <= P <= p_max
// instantaneous (packed as g = [-P, P - p_max]) and E[P] <= p_bar on
// average (c = [P - p_bar]).
class PowerControlEnv final : public ConstrainedProblem {
 public:
  PowerControlEnv(double noise_watts, double p_max, double p_bar,
                  bool analytic_gradients = true)
      : noise_(noise_watts),
        p_max_(p_max),
        p_bar_(p_bar),
        analytic_gradients_(analytic_gradients) {
    if (!(noise_ > 0.0))
      throw std::invalid_argument("PowerControlEnv: noise must be positive");
    if (!(p_bar_ > 0.0 && p_bar_ < p_max_))
      throw std::invalid_argument("PowerControlEnv: requires 0 < p_bar < p_max");
  }

  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  int n_inst_constraints() const override { return 2; }
  int n_avg_constraints() const override { return 1; }
  bool has_value_gradients() const override { return analytic_gradients_; }

  void sample_state(Rng& rng, std::span<double> h) const override {
    h[0] = rng.exponential(1.0);
  }

  double evaluate(std::span<const double> x, std::span<const double> h,
                  std::span<double> g, std::span<double> c) const override {
    const double p = x[0];
    const double gain = h[0];
    g[0] = -p;
    g[1] = p - p_max_;
    c[0] = p - p_bar_;
    return std::log2(1.0 + gain * p / noise_);
  }

  void value_gradient(std::span<const double> x, std::span<const double> h,
                      std::span<double> dj, std::span<double> dg,
                      std::span<double> dc) const override {
    if (!analytic_gradients_)
      throw std::logic_error(
          "PowerControlEnv: value gradients disabled (model-free mode)");
    const double p = x[0];
    const double gain = h[0];
    dj[0] = gain / ((noise_ + gain * p) * std::numbers::ln2);
    dg[0] = -1.0;
    dg[1] = 1.0;
    dc[0] = 1.0;
  }

  // Transmit power cannot be negative; the upper design limit stays
  // unclipped so overshoot remains observable as a violation.
  void clip_executable(std::span<double> x) const override {
    if (x[0] < 0.0) x[0] = 0.0;
  }

  double noise_watts() const { return noise_; }
  double p_max() const { return p_max_; }
  double p_bar() const { return p_bar_; }

 private:
  double noise_;
  double p_max_;
  double p_bar_;
  bool analytic_gradients_;
};

// A problem whose action set is a finite list of vectors; used by the
// stochastic (score-function) trainer.
class DiscreteActionProblem : public ConstrainedProblem {
 public:
  virtual int n_actions() const = 0;
  virtual void action_value(int k, std::span<double> x) const = 0;
};

// Finite power levels with the power-control semantics. Instantaneous
// feasibility is built into the level set, so only the average-power
// constraint remains. With a fixed state this is a bandit with an
// optimum enumerable by brute force.
class DiscreteToyEnv final : public DiscreteActionProblem {
 public:
  DiscreteToyEnv(std::vector<double> levels, double noise_watts, double p_bar,
                 double p_max, std::optional<double> fixed_state = 1.0)
      : levels_(std::move(levels)),
        noise_(noise_watts),
        p_bar_(p_bar),
        p_max_(p_max),
        fixed_state_(fixed_state) {
    if (levels_.empty())
      throw std::invalid_argument("DiscreteToyEnv: empty level set");
    for (double v : levels_)
      if (v < 0.0 || v > p_max_)
        throw std::invalid_argument("DiscreteToyEnv: level outside [0, p_max]");
    if (!(noise_ > 0.0))
      throw std::invalid_argument("DiscreteToyEnv: noise must be positive");
  }

  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  int n_inst_constraints() const override { return 0; }
  int n_avg_constraints() const override { return 1; }

  void sample_state(Rng& rng, std::span<double> h) const override {
    h[0] = fixed_state_ ? *fixed_state_ : rng.exponential(1.0);
  }

  double evaluate(std::span<const double> x, std::span<const double> h,
                  std::span<double> g, std::span<double> c) const override {
    (void)g;
    c[0] = x[0] - p_bar_;
    return std::log2(1.0 + h[0] * x[0] / noise_);
  }

  int n_actions() const override { return static_cast<int>(levels_.size()); }
  void action_value(int k, std::span<double> x) const override {
    x[0] = levels_[static_cast<std::size_t>(k)];
  }

  const std::vector<double>& levels() const { return levels_; }
  double p_bar() const { return p_bar_; }

 private:
  std::vector<double> levels_;
  double noise_;
  double p_bar_;
  double p_max_;
  std::optional<double> fixed_state_;
};

}  // namespace pdlearn
