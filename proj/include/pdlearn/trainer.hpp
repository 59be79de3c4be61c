#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pdlearn/metrics.hpp"
#include "pdlearn/nn.hpp"
#include "pdlearn/problem.hpp"
#include "pdlearn/replay.hpp"
#include "pdlearn/rng.hpp"

namespace pdlearn {

// Exploration noise scale: held constant, then decayed linearly to zero.
struct NoiseSchedule {
  double eps_initial = 10.0;
  long hold_iters = 5000;
  long decay_iters = 15000;

  // t counts iterations from 1. Exactly zero once the decay completes.
  double value(long t) const {
    if (t <= hold_iters) return eps_initial;
    const long into = t - hold_iters;
    if (decay_iters <= 0 || into >= decay_iters) return 0.0;
    return eps_initial *
           (1.0 - static_cast<double>(into) / static_cast<double>(decay_iters));
  }
};

struct TrainerOptions {
  double lr_policy = 1e-3;
  double lr_multiplier = 1e-3;
  double lr_value = 5e-3;
  double lr_xi = 3e-5;
  int batch = 32;
  NoiseSchedule noise{};
  std::size_t replay_capacity = 100000;
  // Model-free warm-up: value networks train as soon as the replay holds
  // a batch, but policy/dual updates stay frozen for this many iterations
  // (the untrained approximators' input gradients are noise and can drive
  // the ReLU policy into its absorbing dead region). -1 follows the
  // exploration hold phase.
  long policy_warmup_iters = -1;
  double prob_floor = 1e-12;  // stochastic trainer: log-prob clamp floor
  bool use_baselines = true;
};

struct NetworkArch {
  std::vector<int> policy_hidden{50, 40, 30};
  std::vector<int> multiplier_hidden{50, 40, 30};
  std::vector<int> value_hidden{200, 150};
  nn::Activation policy_output = nn::Activation::kRelu;
  double policy_initial_output = 10.0;
};

struct NetAndOpt {
  nn::Mlp net;
  nn::AdamState opt;

  NetAndOpt() = default;
  explicit NetAndOpt(nn::Mlp n) : net(std::move(n)), opt(net.param_count()) {}
};

// Everything one primal-dual iteration owns: the primal policy, the dual
// multiplier network and xi, and whichever approximators the selected
// algorithm needs.
struct TrainerState {
  NetAndOpt policy;
  std::optional<NetAndOpt> multiplier;  // absent when n_inst_constraints == 0
  std::vector<double> xi;
  std::optional<NetAndOpt> value_j, value_g, value_c;  // model-free det
  std::optional<NetAndOpt> baseline_j, baseline_g, baseline_c;  // stochastic
  long iteration = 0;

  // lambda(h): multiplier network output through the nonnegative clamp.
  std::vector<double> multiplier_values(std::span<const double> h) const {
    if (!multiplier) return {};
    std::vector<double> lam = multiplier->net.forward(h);
    nn::clamp_nonnegative(lam);
    return lam;
  }
};

// Initialization order is fixed (policy, multiplier, then value nets) so
// states built with and without value networks share the same
// policy/multiplier draws for a given rng stream.
inline TrainerState make_deterministic_state(const ConstrainedProblem& env,
                                             const NetworkArch& arch,
                                             bool with_value_nets, Rng& rng) {
  const int n = env.state_dim();
  const int m = env.action_dim();
  const int k1 = env.n_inst_constraints();
  const int k2 = env.n_avg_constraints();

  TrainerState st;
  st.policy = NetAndOpt(nn::Mlp(n, arch.policy_hidden, m,
                                nn::Activation::kRelu, arch.policy_output));
  nn::init_he_uniform(st.policy.net, rng);
  nn::init_final_layer_constant(st.policy.net, arch.policy_initial_output);

  if (k1 > 0) {
    st.multiplier = NetAndOpt(nn::Mlp(n, arch.multiplier_hidden, k1,
                                      nn::Activation::kRelu,
                                      nn::Activation::kIdentity));
    nn::init_he_uniform(st.multiplier->net, rng);
    nn::init_final_layer_constant(st.multiplier->net, 0.0);
  }
  st.xi.assign(static_cast<std::size_t>(k2), 0.0);

  if (with_value_nets) {
    const auto make_value_net = [&](int outputs) {
      NetAndOpt v(nn::Mlp(m + n, arch.value_hidden, outputs,
                          nn::Activation::kRelu, nn::Activation::kIdentity));
      nn::init_he_uniform(v.net, rng);
      return v;
    };
    st.value_j = make_value_net(1);
    if (k1 > 0) st.value_g = make_value_net(k1);
    if (k2 > 0) st.value_c = make_value_net(k2);
  }
  return st;
}

inline TrainerState make_stochastic_state(const DiscreteActionProblem& env,
                                          const NetworkArch& arch, Rng& rng) {
  const int n = env.state_dim();
  const int k1 = env.n_inst_constraints();
  const int k2 = env.n_avg_constraints();

  TrainerState st;
  st.policy = NetAndOpt(nn::Mlp(n, arch.policy_hidden, env.n_actions(),
                                nn::Activation::kRelu,
                                nn::Activation::kIdentity));
  nn::init_he_uniform(st.policy.net, rng);

  if (k1 > 0) {
    st.multiplier = NetAndOpt(nn::Mlp(n, arch.multiplier_hidden, k1,
                                      nn::Activation::kRelu,
                                      nn::Activation::kIdentity));
    nn::init_he_uniform(st.multiplier->net, rng);
    nn::init_final_layer_constant(st.multiplier->net, 0.0);
  }
  st.xi.assign(static_cast<std::size_t>(k2), 0.0);

  const auto make_baseline_net = [&](int outputs) {
    NetAndOpt v(nn::Mlp(n, arch.value_hidden, outputs, nn::Activation::kRelu,
                        nn::Activation::kIdentity));
    nn::init_he_uniform(v.net, rng);
    return v;
  };
  st.baseline_j = make_baseline_net(1);
  if (k1 > 0) st.baseline_g = make_baseline_net(k1);
  if (k2 > 0) st.baseline_c = make_baseline_net(k2);
  return st;
}

// Where the policy update obtains dJ/dx, dg/dx, dc/dx: the environment
// model, or the input gradients of learned value networks.
class ValueGradientSource {
 public:
  virtual ~ValueGradientSource() = default;
  virtual void gradients(std::span<const double> x, std::span<const double> h,
                         std::span<double> dj, std::span<double> dg,
                         std::span<double> dc) const = 0;
};

class AnalyticGradients final : public ValueGradientSource {
 public:
  explicit AnalyticGradients(const ConstrainedProblem& env) : env_(&env) {}
  void gradients(std::span<const double> x, std::span<const double> h,
                 std::span<double> dj, std::span<double> dg,
                 std::span<double> dc) const override {
    env_->value_gradient(x, h, dj, dg, dc);
  }

 private:
  const ConstrainedProblem* env_;
};

// Input gradients of the value networks with respect to the action slice
// of their (x, h) input.
class LearnedGradients final : public ValueGradientSource {
 public:
  LearnedGradients(const TrainerState& state, int action_dim)
      : state_(&state), m_(action_dim) {}

  void gradients(std::span<const double> x, std::span<const double> h,
                 std::span<double> dj, std::span<double> dg,
                 std::span<double> dc) const override {
    std::vector<double> xh(x.begin(), x.end());
    xh.insert(xh.end(), h.begin(), h.end());
    const auto action_grad_rows = [&](const nn::Mlp& net,
                                      std::span<double> rows) {
      const int outputs = net.output_dim();
      std::vector<double> upstream(static_cast<std::size_t>(outputs), 0.0);
      for (int r = 0; r < outputs; ++r) {
        upstream[static_cast<std::size_t>(r)] = 1.0;
        const nn::Gradients grad = net.backward(xh, upstream);
        upstream[static_cast<std::size_t>(r)] = 0.0;
        for (int j = 0; j < m_; ++j)
          rows[static_cast<std::size_t>(r) * m_ + j] = grad.d_input[j];
      }
    };
    action_grad_rows(state_->value_j->net, dj);
    if (state_->value_g) action_grad_rows(state_->value_g->net, dg);
    if (state_->value_c) action_grad_rows(state_->value_c->net, dc);
  }

 private:
  const TrainerState* state_;
  int m_;
};

struct StepMetrics {
  double rate = 0.0;
  double viol_lo = 0.0;
  double viol_hi = 0.0;
  double avg_constraint = 0.0;
  double power = 0.0;
  double channel = 0.0;
};

namespace detail {

inline void accumulate(std::vector<double>& acc, std::span<const double> inc) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inc[i];
}

// Upstream signal for the multiplier-network update. The dual ascent
// passes through the nonnegative clamp on lambda: where the clamp is
// active (pre-clamp <= 0) a negative push is absorbed, exactly as the
// pointwise projected update [lambda + delta g]+ would absorb it, while a
// positive push passes so the multiplier can leave zero. Without the
// masking the pre-clamp output integrates slack (g < 0) without bound
// and the multiplier can never re-activate.
inline std::vector<double> masked_dual_upstream(
    std::span<const double> pre_clamp, std::span<const double> g) {
  std::vector<double> u(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    u[i] = (pre_clamp[i] > 0.0 || g[i] > 0.0) ? g[i] : 0.0;
  return u;
}

inline void scale(std::vector<double>& v, double s) {
  for (double& x : v) x *= s;
}

inline StepMetrics summarize_batch(std::span<const Transition* const> batch) {
  StepMetrics ms;
  for (const Transition* tr : batch) {
    ms.rate += tr->J;
    if (!tr->g.empty()) ms.viol_lo += std::max(tr->g[0], 0.0);
    if (tr->g.size() > 1) ms.viol_hi += std::max(tr->g[1], 0.0);
    if (!tr->c.empty()) ms.avg_constraint += tr->c[0];
    ms.power += tr->x[0];
    ms.channel += tr->h[0];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  ms.rate *= inv;
  ms.viol_lo *= inv;
  ms.viol_hi *= inv;
  ms.avg_constraint *= inv;
  ms.power *= inv;
  ms.channel *= inv;
  return ms;
}

}  // namespace detail

// One simultaneous primal-dual update from a prepared batch:
//   policy     += lr_f  * mean_B (df/dtheta)[dJ/dx - (dg/dx)^T lambda - (dc/dx)^T xi]
//   multiplier += lr_l  * mean_B (dlambda/dtheta) g_measured
//   xi          = [xi + lr_xi * mean_B c_measured]+
// The policy line evaluates the value-gradient source at the noiseless
// policy output; g and c are the measured values stored in the batch.
// All gradients are computed against the pre-update variables.
inline void primal_dual_update(TrainerState& state,
                               const ConstrainedProblem& env,
                               std::span<const Transition* const> batch,
                               const ValueGradientSource& values,
                               const TrainerOptions& opts) {
  if (batch.empty())
    throw std::invalid_argument("primal_dual_update: empty batch");
  const int m = env.action_dim();
  const int k1 = env.n_inst_constraints();
  const int k2 = env.n_avg_constraints();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  std::vector<double> grad_policy(state.policy.net.param_count(), 0.0);
  std::vector<double> grad_mult(
      state.multiplier ? state.multiplier->net.param_count() : 0, 0.0);
  std::vector<double> mean_c(static_cast<std::size_t>(k2), 0.0);

  std::vector<double> dj(static_cast<std::size_t>(m));
  std::vector<double> dg(static_cast<std::size_t>(k1) * m);
  std::vector<double> dc(static_cast<std::size_t>(k2) * m);
  std::vector<double> upstream(static_cast<std::size_t>(m));

  for (const Transition* tr : batch) {
    const std::vector<double> x_pi = state.policy.net.forward(tr->h);
    values.gradients(x_pi, tr->h, dj, dg, dc);
    std::vector<double> lam;
    std::vector<double> pre_clamp;
    if (state.multiplier) {
      pre_clamp = state.multiplier->net.forward(tr->h);
      lam = pre_clamp;
      nn::clamp_nonnegative(lam);
    }
    for (int j = 0; j < m; ++j) {
      double u = dj[static_cast<std::size_t>(j)];
      for (int i = 0; i < k1; ++i)
        u -= lam[static_cast<std::size_t>(i)] *
             dg[static_cast<std::size_t>(i) * m + j];
      for (int q = 0; q < k2; ++q)
        u -= state.xi[static_cast<std::size_t>(q)] *
             dc[static_cast<std::size_t>(q) * m + j];
      upstream[static_cast<std::size_t>(j)] = u;
    }
    const nn::Gradients pol = state.policy.net.backward(tr->h, upstream);
    detail::accumulate(grad_policy, pol.d_params);
    if (state.multiplier) {
      const std::vector<double> du =
          detail::masked_dual_upstream(pre_clamp, tr->g);
      const nn::Gradients mul = state.multiplier->net.backward(tr->h, du);
      detail::accumulate(grad_mult, mul.d_params);
    }
    for (int q = 0; q < k2; ++q)
      mean_c[static_cast<std::size_t>(q)] += tr->c[static_cast<std::size_t>(q)];
  }

  detail::scale(grad_policy, inv_batch);
  nn::adam_step(state.policy.net.params(), state.policy.opt, grad_policy,
                opts.lr_policy, nn::Direction::kAscent);
  if (state.multiplier) {
    detail::scale(grad_mult, inv_batch);
    nn::adam_step(state.multiplier->net.params(), state.multiplier->opt,
                  grad_mult, opts.lr_multiplier, nn::Direction::kAscent);
  }
  for (int q = 0; q < k2; ++q) {
    const std::size_t qi = static_cast<std::size_t>(q);
    state.xi[qi] = std::max(0.0, state.xi[qi] + opts.lr_xi * mean_c[qi] * inv_batch);
  }
}

// One model-based update on a fresh batch of states (flattened, batch
// major). Requires analytic value gradients from the environment.
inline StepMetrics model_based_step(TrainerState& state,
                                    const ConstrainedProblem& env,
                                    std::span<const double> batch_h,
                                    const TrainerOptions& opts) {
  if (!env.has_value_gradients())
    throw std::logic_error("model_based_step: environment has no gradients");
  const int n = env.state_dim();
  if (batch_h.empty() || batch_h.size() % static_cast<std::size_t>(n) != 0)
    throw std::invalid_argument("model_based_step: bad batch size");
  const std::size_t count = batch_h.size() / static_cast<std::size_t>(n);

  std::vector<Transition> transitions(count);
  std::vector<const Transition*> ptrs(count);
  for (std::size_t i = 0; i < count; ++i) {
    Transition& tr = transitions[i];
    tr.h.assign(batch_h.begin() + static_cast<std::ptrdiff_t>(i * n),
                batch_h.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    tr.x = state.policy.net.forward(tr.h);
    tr.g.resize(static_cast<std::size_t>(env.n_inst_constraints()));
    tr.c.resize(static_cast<std::size_t>(env.n_avg_constraints()));
    tr.J = env.evaluate(tr.x, tr.h, tr.g, tr.c);
    ptrs[i] = &tr;
  }
  primal_dual_update(state, env, ptrs, AnalyticGradients(env), opts);
  ++state.iteration;
  return detail::summarize_batch(ptrs);
}

// Online model-free loop over a replay memory: act with exploration
// noise, record the observed (h, x, J, g, c), fit the value networks on a
// sampled batch, then run the primal-dual update with their input
// gradients. Until the memory holds one full batch the trainer only
// collects experience.
class ModelFreeDetTrainer {
 public:
  ModelFreeDetTrainer(const ConstrainedProblem& env, TrainerState state,
                      TrainerOptions opts)
      : env_(&env),
        state_(std::move(state)),
        opts_(opts),
        replay_(opts.replay_capacity) {}

  // Substitute the environment's analytic gradients for the learned
  // ones; value networks are neither consulted nor trained.
  void set_oracle_values(bool enabled) {
    if (enabled && !env_->has_value_gradients())
      throw std::logic_error("oracle values need an environment model");
    oracle_values_ = enabled;
  }

  StepMetrics step(Rng& rng) {
    std::vector<double> h(static_cast<std::size_t>(env_->state_dim()));
    env_->sample_state(rng, h);
    std::vector<double> x = state_.policy.net.forward(h);
    const double eps = opts_.noise.value(state_.iteration + 1);
    for (double& xi_j : x) xi_j += eps * rng.normal01();
    env_->clip_executable(x);

    Transition tr;
    tr.h = std::move(h);
    tr.x = std::move(x);
    tr.g.resize(static_cast<std::size_t>(env_->n_inst_constraints()));
    tr.c.resize(static_cast<std::size_t>(env_->n_avg_constraints()));
    tr.J = env_->evaluate(tr.x, tr.h, tr.g, tr.c);

    StepMetrics ms;
    ms.rate = tr.J;
    if (!tr.g.empty()) ms.viol_lo = std::max(tr.g[0], 0.0);
    if (tr.g.size() > 1) ms.viol_hi = std::max(tr.g[1], 0.0);
    if (!tr.c.empty()) ms.avg_constraint = tr.c[0];
    ms.power = tr.x[0];
    ms.channel = tr.h[0];

    replay_.push(std::move(tr));
    if (replay_.size() >= static_cast<std::size_t>(opts_.batch)) {
      const std::vector<std::size_t> idx =
          replay_.sample_indices(static_cast<std::size_t>(opts_.batch), rng);
      std::vector<const Transition*> batch(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = &replay_[idx[i]];
      const long warmup = opts_.policy_warmup_iters >= 0
                              ? opts_.policy_warmup_iters
                              : opts_.noise.hold_iters;
      if (!oracle_values_ && state_.iteration + 1 <= warmup) {
        train_value_nets(batch);  // identification only
        ++state_.iteration;
      } else {
        update_from_batch(batch);
      }
    } else {
      ++state_.iteration;  // warm-up: collect only
    }
    return ms;
  }

  // The update half of step(), driven by an explicitly assembled batch.
  void update_from_batch(std::span<const Transition* const> batch) {
    if (oracle_values_) {
      primal_dual_update(state_, *env_, batch, AnalyticGradients(*env_), opts_);
    } else {
      if (!state_.value_j)
        throw std::logic_error(
            "ModelFreeDetTrainer: state has no value networks");
      train_value_nets(batch);
      primal_dual_update(state_, *env_, batch,
                         LearnedGradients(state_, env_->action_dim()), opts_);
    }
    ++state_.iteration;
  }

  const TrainerState& state() const { return state_; }
  TrainerState& state() { return state_; }
  const ReplayMemory& replay() const { return replay_; }

 private:
  // L2 regression of each value network onto the measured values at the
  // executed (noisy) actions, one Adam descent step on the batch mean.
  void train_value_nets(std::span<const Transition* const> batch) {
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const auto fit = [&](NetAndOpt& vnet, auto target_of) {
      std::vector<double> grad(vnet.net.param_count(), 0.0);
      std::vector<double> xh;
      std::vector<double> upstream(
          static_cast<std::size_t>(vnet.net.output_dim()));
      for (const Transition* tr : batch) {
        xh.assign(tr->x.begin(), tr->x.end());
        xh.insert(xh.end(), tr->h.begin(), tr->h.end());
        const std::vector<double> pred = vnet.net.forward(xh);
        const std::span<const double> target = target_of(*tr);
        for (std::size_t r = 0; r < upstream.size(); ++r)
          upstream[r] = 2.0 * (pred[r] - target[r]);
        const nn::Gradients g = vnet.net.backward(xh, upstream);
        detail::accumulate(grad, g.d_params);
      }
      detail::scale(grad, inv_batch);
      nn::adam_step(vnet.net.params(), vnet.opt, grad, opts_.lr_value,
                    nn::Direction::kDescent);
    };
    fit(*state_.value_j, [](const Transition& tr) {
      return std::span<const double>(&tr.J, 1);
    });
    if (state_.value_g)
      fit(*state_.value_g, [](const Transition& tr) {
        return std::span<const double>(tr.g);
      });
    if (state_.value_c)
      fit(*state_.value_c, [](const Transition& tr) {
        return std::span<const double>(tr.c);
      });
  }

  const ConstrainedProblem* env_;
  TrainerState state_;
  TrainerOptions opts_;
  ReplayMemory replay_;
  bool oracle_values_ = false;
};

// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

// d log pi(k) / d logits for a categorical softmax policy.
inline std::vector<double> log_prob_gradient(int k,
                                             std::span<const double> probs) {
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = -probs[i];
  g[static_cast<std::size_t>(k)] += 1.0;
  return g;
}

// Per-sample score-function trainer over a finite action set. The policy
// network outputs logits; baselines are h-conditioned networks whose
// values are subtracted from the measured J, g, c before the policy
// update. Dual updates use the measured values directly.
class ModelFreeStochTrainer {
 public:
  ModelFreeStochTrainer(const DiscreteActionProblem& env, TrainerState state,
                        TrainerOptions opts)
      : env_(&env), state_(std::move(state)), opts_(opts) {
    if (state_.policy.net.output_dim() != env.n_actions())
      throw std::invalid_argument(
          "ModelFreeStochTrainer: policy outputs != action count");
  }

  std::vector<double> action_probabilities(std::span<const double> h) const {
    return softmax(state_.policy.net.forward(h));
  }

  // Advantage-weighted score-function gradient for one observed sample.
  std::vector<double> score_gradient(std::span<const double> h, int action,
                                     double advantage) const {
    const std::vector<double> probs = action_probabilities(h);
    const std::vector<double> dlogp = log_prob_gradient(action, probs);
    nn::Gradients g = state_.policy.net.backward(h, dlogp);
    for (double& v : g.d_params) v *= advantage;
    return std::move(g.d_params);
  }

  // (J - jb) - lambda(h)^T (g - gb) - xi^T (c - cb); pass zero baselines
  // for the plain score-function update.
  double advantage(std::span<const double> h, double J,
                   std::span<const double> g, std::span<const double> c,
                   double jb, std::span<const double> gb,
                   std::span<const double> cb) const {
    const std::vector<double> lam = state_.multiplier_values(h);
    double adv = J - jb;
    for (std::size_t i = 0; i < lam.size(); ++i) adv -= lam[i] * (g[i] - gb[i]);
    for (std::size_t q = 0; q < state_.xi.size(); ++q)
      adv -= state_.xi[q] * (c[q] - cb[q]);
    return adv;
  }

  StepMetrics step(Rng& rng) {
    std::vector<double> h(static_cast<std::size_t>(env_->state_dim()));
    env_->sample_state(rng, h);
    const std::vector<double> probs = action_probabilities(h);
    const int k = rng.categorical(probs);
    std::vector<double> x(static_cast<std::size_t>(env_->action_dim()));
    env_->action_value(k, x);

    std::vector<double> g(static_cast<std::size_t>(env_->n_inst_constraints()));
    std::vector<double> c(static_cast<std::size_t>(env_->n_avg_constraints()));
    const double J = env_->evaluate(x, h, g, c);

    if (probs[static_cast<std::size_t>(k)] <= opts_.prob_floor)
      ++prob_floor_hits_;

    // Baseline values at the pre-update parameters.
    double jb = 0.0;
    std::vector<double> gb(g.size(), 0.0), cb(c.size(), 0.0);
    if (opts_.use_baselines) {
      jb = state_.baseline_j->net.forward(h)[0];
      if (state_.baseline_g) {
        const std::vector<double> v = state_.baseline_g->net.forward(h);
        gb.assign(v.begin(), v.end());
      }
      if (state_.baseline_c) {
        const std::vector<double> v = state_.baseline_c->net.forward(h);
        cb.assign(v.begin(), v.end());
      }
      train_baselines(h, J, g, c);
    }

    const double adv = advantage(h, J, g, c, jb, gb, cb);
    const std::vector<double> grad = score_gradient(h, k, adv);
    nn::adam_step(state_.policy.net.params(), state_.policy.opt, grad,
                  opts_.lr_policy, nn::Direction::kAscent);

    if (state_.multiplier) {
      const std::vector<double> pre = state_.multiplier->net.forward(h);
      const std::vector<double> du = detail::masked_dual_upstream(pre, g);
      const nn::Gradients mg = state_.multiplier->net.backward(h, du);
      nn::adam_step(state_.multiplier->net.params(), state_.multiplier->opt,
                    mg.d_params, opts_.lr_multiplier, nn::Direction::kAscent);
    }
    for (std::size_t q = 0; q < state_.xi.size(); ++q)
      state_.xi[q] = std::max(0.0, state_.xi[q] + opts_.lr_xi * c[q]);

    ++state_.iteration;

    StepMetrics ms;
    ms.rate = J;
    if (!g.empty()) ms.viol_lo = std::max(g[0], 0.0);
    if (g.size() > 1) ms.viol_hi = std::max(g[1], 0.0);
    if (!c.empty()) ms.avg_constraint = c[0];
    ms.power = x[0];
    ms.channel = h[0];
    return ms;
  }

  long prob_floor_hits() const { return prob_floor_hits_; }
  const TrainerState& state() const { return state_; }
  TrainerState& state() { return state_; }

 private:
  // Per-sample L2 descent of each baseline net onto the measured values.
  void train_baselines(std::span<const double> h, double J,
                       std::span<const double> g, std::span<const double> c) {
    const auto fit = [&](NetAndOpt& bnet, std::span<const double> target) {
      const std::vector<double> pred = bnet.net.forward(h);
      std::vector<double> upstream(pred.size());
      for (std::size_t r = 0; r < pred.size(); ++r)
        upstream[r] = 2.0 * (pred[r] - target[r]);
      const nn::Gradients grad = bnet.net.backward(h, upstream);
      nn::adam_step(bnet.net.params(), bnet.opt, grad.d_params, opts_.lr_value,
                    nn::Direction::kDescent);
    };
    fit(*state_.baseline_j, std::span<const double>(&J, 1));
    if (state_.baseline_g) fit(*state_.baseline_g, g);
    if (state_.baseline_c) fit(*state_.baseline_c, c);
  }

  const DiscreteActionProblem* env_;
  TrainerState state_;
  TrainerOptions opts_;
  long prob_floor_hits_ = 0;
};

enum class TrainMode { kModelBased, kModelFreeDet, kModelFreeStoch };

struct RunConfig {
  TrainMode mode = TrainMode::kModelBased;
  long iterations = 100000;
  int rounds = 50;
  std::uint64_t seed = 1;
  int workers = 0;  // 0 = hardware concurrency
  NetworkArch arch{};
  TrainerOptions options{};
};

struct RoundResult {
  TrainerState state;
  std::vector<MetricRecord> records;
};

namespace detail {

inline MetricRecord to_record(int round, long iteration, const StepMetrics& m) {
  return {round,     iteration, m.rate,  m.viol_lo,
          m.viol_hi, m.avg_constraint, m.power, m.channel};
}

inline RoundResult run_round(const RunConfig& cfg,
                             const ConstrainedProblem& env, int round) {
  Rng rng(cfg.seed, static_cast<std::uint64_t>(round));
  RoundResult result;
  result.records.reserve(static_cast<std::size_t>(cfg.iterations));

  const auto guarded = [&](long t, auto&& body) {
    try {
      return body();
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(round) +
                               ", iteration " + std::to_string(t) + ": " +
                               e.what());
    }
  };

  switch (cfg.mode) {
    case TrainMode::kModelBased: {
      result.state = make_deterministic_state(env, cfg.arch, false, rng);
      const int n = env.state_dim();
      std::vector<double> batch(
          static_cast<std::size_t>(cfg.options.batch) * n);
      for (long t = 1; t <= cfg.iterations; ++t) {
        for (int b = 0; b < cfg.options.batch; ++b)
          env.sample_state(
              rng, std::span<double>(batch).subspan(
                       static_cast<std::size_t>(b) * n, static_cast<std::size_t>(n)));
        const StepMetrics ms = guarded(t, [&] {
          return model_based_step(result.state, env, batch, cfg.options);
        });
        result.records.push_back(detail::to_record(round, t, ms));
      }
      return result;
    }
    case TrainMode::kModelFreeDet: {
      TrainerState st = make_deterministic_state(env, cfg.arch, true, rng);
      ModelFreeDetTrainer trainer(env, std::move(st), cfg.options);
      for (long t = 1; t <= cfg.iterations; ++t) {
        const StepMetrics ms = guarded(t, [&] { return trainer.step(rng); });
        result.records.push_back(detail::to_record(round, t, ms));
      }
      result.state = std::move(trainer.state());
      return result;
    }
    case TrainMode::kModelFreeStoch: {
      const auto* denv = dynamic_cast<const DiscreteActionProblem*>(&env);
      if (denv == nullptr)
        throw std::invalid_argument(
            "stochastic mode requires a discrete-action environment");
      TrainerState st = make_stochastic_state(*denv, cfg.arch, rng);
      ModelFreeStochTrainer trainer(*denv, std::move(st), cfg.options);
      for (long t = 1; t <= cfg.iterations; ++t) {
        const StepMetrics ms = guarded(t, [&] { return trainer.step(rng); });
        result.records.push_back(detail::to_record(round, t, ms));
      }
      result.state = std::move(trainer.state());
      return result;
    }
  }
  throw std::logic_error("run_round: unknown mode");
}

}  // namespace detail

// Runs independent training rounds with per-round RNG streams on a
// bounded worker pool. Results are slotted by round id, so the output is
// identical regardless of scheduling; a sink, when given, receives each
// round's records as that round finishes.
inline std::vector<RoundResult> run_training(const RunConfig& cfg,
                                             const ConstrainedProblem& env,
                                             MetricSink* sink = nullptr) {
  if (cfg.rounds < 1)
    throw std::invalid_argument("run_training: rounds must be >= 1");
  std::vector<RoundResult> results(static_cast<std::size_t>(cfg.rounds));

  int workers = cfg.workers > 0
                    ? cfg.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, cfg.rounds);

  std::atomic<int> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;

  const auto worker = [&] {
    while (true) {
      const int r = next.fetch_add(1);
      if (r >= cfg.rounds) return;
      try {
        results[static_cast<std::size_t>(r)] = detail::run_round(cfg, env, r);
        if (sink)
          sink->append(r, results[static_cast<std::size_t>(r)].records);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace pdlearn
