#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>

#include "pdlearn/problem.hpp"
#include "pdlearn/rng.hpp"

namespace pdlearn {

namespace detail {

// Adaptive Simpson with Richardson correction; tol is absolute.
template <class F>
double adaptive_simpson_rec(const F& f, double a, double b, double fa,
                            double fm, double fb, double whole, double tol,
                            int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-11,
                        int max_depth = 48) {
  if (!(b > a)) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// Past lower + kTailCutoff the exp(-h) weight is below ~3e-33; truncating
// there keeps every integral used here accurate to well under 1e-12.
inline constexpr double kExpTailCutoff = 75.0;

}  // namespace detail

// The capped water-filling policy: power is zero below the channel
// threshold xi*N, follows the water-filling curve 1/xi - N/h in between,
// and saturates at p_max at and above N / (1/xi - p_max). When the water
// level 1/xi does not exceed p_max the saturation region is empty and the
// upper threshold is +inf.
struct WaterFillingSolution {
  double xi_star = 0.0;
  double noise_watts = 0.0;
  double p_max = 0.0;
  double p_bar = 0.0;

  double lower_threshold() const { return xi_star * noise_watts; }

  double upper_threshold() const {
    const double level = 1.0 / xi_star;
    if (!(level > p_max)) return std::numeric_limits<double>::infinity();
    return noise_watts / (level - p_max);
  }
};

inline double optimal_power(const WaterFillingSolution& sol, double h) {
  if (h <= sol.lower_threshold()) return 0.0;
  if (h >= sol.upper_threshold()) return sol.p_max;
  return std::clamp(1.0 / sol.xi_star - sol.noise_watts / h, 0.0, sol.p_max);
}

// E[P*(h)] under the unit-mean exponential channel law: adaptive Simpson
// over the water-filling region plus the closed-form saturated tail.
inline double expected_power(const WaterFillingSolution& sol) {
  const double a = sol.lower_threshold();
  const double b = sol.upper_threshold();
  const double level = 1.0 / sol.xi_star;
  const auto integrand = [&](double h) {
    return (level - sol.noise_watts / h) * std::exp(-h);
  };
  if (std::isfinite(b))
    return detail::adaptive_simpson(integrand, a, b) + sol.p_max * std::exp(-b);
  return detail::adaptive_simpson(integrand, a, a + detail::kExpTailCutoff);
}

// E[log2(1 + h P*(h) / N)]. In the water-filling region the SNR term
// collapses to h / (xi N), so the integrand is log2(h / lower_threshold).
inline double expected_rate(const WaterFillingSolution& sol) {
  const double a = sol.lower_threshold();
  const double b = sol.upper_threshold();
  const auto middle = [&](double h) {
    return std::log2(h / a) * std::exp(-h);
  };
  if (!std::isfinite(b))
    return detail::adaptive_simpson(middle, a, a + detail::kExpTailCutoff);
  const auto saturated = [&](double h) {
    return std::log2(1.0 + h * sol.p_max / sol.noise_watts) * std::exp(-h);
  };
  return detail::adaptive_simpson(middle, a, b) +
         detail::adaptive_simpson(saturated, b, b + detail::kExpTailCutoff);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

template <class F>
MonteCarloEstimate monte_carlo_expectation(const F& f, std::size_t n, Rng& rng) {
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double v = f(rng.exponential(1.0));
    const double d = v - mean;
    mean += d / static_cast<double>(i);
    m2 += d * (v - mean);
  }
  const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

inline MonteCarloEstimate expected_power_mc(const WaterFillingSolution& sol,
                                            std::size_t n, Rng& rng) {
  return monte_carlo_expectation(
      [&](double h) { return optimal_power(sol, h); }, n, rng);
}

inline MonteCarloEstimate expected_rate_mc(const WaterFillingSolution& sol,
                                           std::size_t n, Rng& rng) {
  return monte_carlo_expectation(
      [&](double h) {
        return std::log2(1.0 + h * optimal_power(sol, h) / sol.noise_watts);
      },
      n, rng);
}

// Bisection on xi: E[P*] is monotone non-increasing in xi, and the
// expectation is evaluated by deterministic quadrature, so repeated
// solves are bit-identical. Terminates when |E[P*] - p_bar| <= tol.
inline WaterFillingSolution solve_xi(double noise_watts, double p_max,
                                     double p_bar, double tol = 1e-4) {
  if (!(noise_watts > 0.0))
    throw std::invalid_argument("solve_xi: noise must be positive");
  if (!(p_bar > 0.0 && p_bar < p_max))
    throw std::invalid_argument("solve_xi: requires 0 < p_bar < p_max");
  if (!(tol > 0.0)) throw std::invalid_argument("solve_xi: tol must be > 0");

  const auto mean_power = [&](double xi) {
    return expected_power({xi, noise_watts, p_max, p_bar});
  };

  double lo = 1e-8;
  if (mean_power(lo) < p_bar)
    throw std::runtime_error(
        "solve_xi: p_bar unreachable (E[P*] below target at the bracket floor)");
  double hi = lo;
  while (mean_power(hi) > p_bar) {
    hi *= 2.0;
    if (hi > 1e12)
      throw std::runtime_error("solve_xi: failed to bracket xi");
  }

  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double ep = mean_power(mid);
    if (std::abs(ep - p_bar) <= tol)
      return {mid, noise_watts, p_max, p_bar};
    (ep > p_bar ? lo : hi) = mid;
  }
  throw std::runtime_error("solve_xi: bisection did not reach tolerance");
}

inline WaterFillingSolution solve_xi(const PowerControlEnv& env,
                                     double tol = 1e-4) {
  return solve_xi(env.noise_watts(), env.p_max(), env.p_bar(), tol);
}

// Worst-case KKT residuals over sampled channel states. The pointwise
// multipliers are reconstructed from the stationarity condition
// 1/(N/h + P) + lambda1 - lambda2 - xi = 0 given P*(h) and xi*.
struct KktReport {
  double max_stationarity_residual = 0.0;  // water-filling region only
  double max_complementary_slackness = 0.0;
  double min_multiplier = std::numeric_limits<double>::infinity();
  double max_primal_violation = 0.0;
};

inline KktReport kkt_check(const WaterFillingSolution& sol,
                           std::span<const double> h_samples) {
  KktReport rep;
  const double lower = sol.lower_threshold();
  const double upper = sol.upper_threshold();
  for (const double h : h_samples) {
    const double p = optimal_power(sol, h);
    const double r = 1.0 / (sol.noise_watts / h + p);
    double lambda1 = 0.0, lambda2 = 0.0;
    if (h <= lower) {
      lambda1 = sol.xi_star - r;
    } else if (h >= upper) {
      lambda2 = r - sol.xi_star;
    } else {
      rep.max_stationarity_residual =
          std::max(rep.max_stationarity_residual, std::abs(r - sol.xi_star));
    }
    rep.max_complementary_slackness =
        std::max({rep.max_complementary_slackness, std::abs(lambda1 * p),
                  std::abs(lambda2 * (p - sol.p_max))});
    rep.min_multiplier = std::min({rep.min_multiplier, lambda1, lambda2});
    rep.max_primal_violation =
        std::max({rep.max_primal_violation, -p, p - sol.p_max});
  }
  rep.max_primal_violation = std::max(rep.max_primal_violation, 0.0);
  return rep;
}

}  // namespace pdlearn
