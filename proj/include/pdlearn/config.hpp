#pragma once

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pdlearn/problem.hpp"
#include "pdlearn/trainer.hpp"

namespace pdlearn {

// Resolved experiment configuration. Defaults reproduce the power-control
// setup: P_max 40 W, mean power budget 30 W, -174 dBm/Hz noise over
// 20 MHz at 500 m, [50,40,30] policy/multiplier nets, [200,150] value
// nets, Adam rates 1e-3 (policy, multiplier) and 5e-3 (value), batch 32,
// policy initialized at 10 W, exploration noise 10 held for 5e3
// iterations then decayed over 1.5e4, 50 rounds of 1e5 iterations with a
// 500-iteration metrics window.
struct ExperimentConfig {
  TrainMode mode = TrainMode::kModelBased;

  // environment
  double p_max = 40.0;
  double p_bar = 30.0;
  double psd_dbm_per_hz = -174.0;
  double bandwidth_hz = 20e6;
  double distance_m = 500.0;
  double noise_watts = 0.0;  // > 0 bypasses the psd/bandwidth/distance budget
  std::vector<double> action_levels{0, 5, 10, 15, 20, 25, 30, 35, 40};

  // networks
  std::vector<int> policy_hidden{50, 40, 30};
  std::vector<int> multiplier_hidden{50, 40, 30};
  std::vector<int> value_hidden{200, 150};
  double policy_init = 10.0;

  // optimization
  double lr_policy = 1e-3;
  double lr_multiplier = 1e-3;
  double lr_value = 5e-3;
  double lr_xi = 3e-5;
  int batch = 32;
  double noise_eps = 10.0;
  long noise_hold = 5000;
  long noise_decay = 15000;
  long iters = 100000;
  int rounds = 50;
  std::uint64_t seed = 1;
  int window = 500;
  std::size_t replay_capacity = 100000;
  int workers = 0;
  double prob_floor = 1e-12;
  bool use_baselines = true;
  double xi_tol = 1e-4;  // bisection tolerance for the analytic baseline

  double resolved_noise_watts() const {
    return noise_watts > 0.0
               ? noise_watts
               : noise_budget_watts(psd_dbm_per_hz, bandwidth_hz, distance_m);
  }

  void validate() const {
    const auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument("config: " + key + " " + why);
    };
    if (!(p_max > 0)) fail("p_max", "must be positive");
    if (!(p_bar > 0 && p_bar < p_max)) fail("p_bar", "must satisfy 0 < p_bar < p_max");
    if (noise_watts < 0) fail("noise_watts", "must be >= 0");
    if (noise_watts == 0 && !(bandwidth_hz > 0)) fail("bandwidth_hz", "must be positive");
    if (noise_watts == 0 && !(distance_m > 0)) fail("distance_m", "must be positive");
    for (double lvl : action_levels)
      if (lvl < 0 || lvl > p_max) fail("action_levels", "entries must lie in [0, p_max]");
    if (action_levels.empty()) fail("action_levels", "must be non-empty");
    for (int w : policy_hidden)
      if (w <= 0) fail("policy_hidden", "widths must be positive");
    for (int w : multiplier_hidden)
      if (w <= 0) fail("multiplier_hidden", "widths must be positive");
    for (int w : value_hidden)
      if (w <= 0) fail("value_hidden", "widths must be positive");
    if (!(lr_policy > 0)) fail("lr_policy", "must be positive");
    if (!(lr_multiplier > 0)) fail("lr_multiplier", "must be positive");
    if (!(lr_value > 0)) fail("lr_value", "must be positive");
    if (!(lr_xi > 0)) fail("lr_xi", "must be positive");
    if (batch < 1) fail("batch", "must be >= 1");
    if (noise_eps < 0) fail("noise_eps", "must be >= 0");
    if (noise_hold < 0) fail("noise_hold", "must be >= 0");
    if (noise_decay < 0) fail("noise_decay", "must be >= 0");
    if (iters < 0) fail("iters", "must be >= 0");
    if (rounds < 1) fail("rounds", "must be >= 1");
    if (window < 1) fail("window", "must be >= 1");
    if (replay_capacity < static_cast<std::size_t>(batch))
      fail("replay_capacity", "must be >= batch");
    if (workers < 0) fail("workers", "must be >= 0");
    if (!(prob_floor > 0)) fail("prob_floor", "must be positive");
    if (!(xi_tol > 0)) fail("xi_tol", "must be positive");
  }

  RunConfig run_config() const {
    RunConfig rc;
    rc.mode = mode;
    rc.iterations = iters;
    rc.rounds = rounds;
    rc.seed = seed;
    rc.workers = workers;
    rc.arch.policy_hidden = policy_hidden;
    rc.arch.multiplier_hidden = multiplier_hidden;
    rc.arch.value_hidden = value_hidden;
    rc.arch.policy_initial_output = policy_init;
    rc.options.lr_policy = lr_policy;
    rc.options.lr_multiplier = lr_multiplier;
    rc.options.lr_value = lr_value;
    rc.options.lr_xi = lr_xi;
    rc.options.batch = batch;
    rc.options.noise = {noise_eps, noise_hold, noise_decay};
    rc.options.replay_capacity = replay_capacity;
    rc.options.prob_floor = prob_floor;
    rc.options.use_baselines = use_baselines;
    return rc;
  }
};

inline std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kModelBased: return "model-based";
    case TrainMode::kModelFreeDet: return "model-free-det";
    case TrainMode::kModelFreeStoch: return "model-free-stoch";
  }
  return "model-based";
}

inline TrainMode parse_mode(std::string_view s) {
  if (s == "model-based") return TrainMode::kModelBased;
  if (s == "model-free-det") return TrainMode::kModelFreeDet;
  if (s == "model-free-stoch") return TrainMode::kModelFreeStoch;
  throw std::invalid_argument("config: unknown mode '" + std::string(s) + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof())
    throw std::invalid_argument("config: bad value for " + key + ": '" +
                                value + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::invalid_argument("config: empty list entry in " + key);
    out.push_back(parse_number<T>(key, item));
  }
  if (out.empty())
    throw std::invalid_argument("config: empty list for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" +
                              value + "'");
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << v[i];
  }
  return out.str();
}

inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Applies one key=value pair; unknown keys are an error (strict mode).
inline void apply_key_value(ExperimentConfig& cfg, const std::string& key,
                            const std::string& value) {
  using detail::parse_bool;
  using detail::parse_list;
  using detail::parse_number;
  if (key == "mode") cfg.mode = parse_mode(value);
  else if (key == "p_max") cfg.p_max = parse_number<double>(key, value);
  else if (key == "p_bar") cfg.p_bar = parse_number<double>(key, value);
  else if (key == "psd_dbm_per_hz") cfg.psd_dbm_per_hz = parse_number<double>(key, value);
  else if (key == "bandwidth_hz") cfg.bandwidth_hz = parse_number<double>(key, value);
  else if (key == "distance_m") cfg.distance_m = parse_number<double>(key, value);
  else if (key == "noise_watts") cfg.noise_watts = parse_number<double>(key, value);
  else if (key == "action_levels") cfg.action_levels = parse_list<double>(key, value);
  else if (key == "policy_hidden") cfg.policy_hidden = parse_list<int>(key, value);
  else if (key == "multiplier_hidden") cfg.multiplier_hidden = parse_list<int>(key, value);
  else if (key == "value_hidden") cfg.value_hidden = parse_list<int>(key, value);
  else if (key == "policy_init") cfg.policy_init = parse_number<double>(key, value);
  else if (key == "lr_policy") cfg.lr_policy = parse_number<double>(key, value);
  else if (key == "lr_multiplier") cfg.lr_multiplier = parse_number<double>(key, value);
  else if (key == "lr_value") cfg.lr_value = parse_number<double>(key, value);
  else if (key == "lr_xi") cfg.lr_xi = parse_number<double>(key, value);
  else if (key == "batch") cfg.batch = parse_number<int>(key, value);
  else if (key == "noise_eps") cfg.noise_eps = parse_number<double>(key, value);
  else if (key == "noise_hold") cfg.noise_hold = parse_number<long>(key, value);
  else if (key == "noise_decay") cfg.noise_decay = parse_number<long>(key, value);
  else if (key == "iters") cfg.iters = parse_number<long>(key, value);
  else if (key == "rounds") cfg.rounds = parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "window") cfg.window = parse_number<int>(key, value);
  else if (key == "replay_capacity") cfg.replay_capacity = parse_number<std::size_t>(key, value);
  else if (key == "workers") cfg.workers = parse_number<int>(key, value);
  else if (key == "prob_floor") cfg.prob_floor = parse_number<double>(key, value);
  else if (key == "use_baselines") cfg.use_baselines = parse_bool(key, value);
  else if (key == "xi_tol") cfg.xi_tol = parse_number<double>(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "mode", "p_max", "p_bar", "psd_dbm_per_hz", "bandwidth_hz",
      "distance_m", "noise_watts", "action_levels", "policy_hidden",
      "multiplier_hidden", "value_hidden", "policy_init", "lr_policy",
      "lr_multiplier", "lr_value", "lr_xi", "batch", "noise_eps",
      "noise_hold", "noise_decay", "iters", "rounds", "seed", "window",
      "replay_capacity", "workers", "prob_floor", "use_baselines", "xi_tol"};
  return keys;
}

// The echoed form parses back into an identical config.
inline std::string config_to_text(const ExperimentConfig& cfg) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream out;
  out << "mode = " << to_string(cfg.mode) << '\n';
  out << "p_max = " << format_double(cfg.p_max) << '\n';
  out << "p_bar = " << format_double(cfg.p_bar) << '\n';
  out << "psd_dbm_per_hz = " << format_double(cfg.psd_dbm_per_hz) << '\n';
  out << "bandwidth_hz = " << format_double(cfg.bandwidth_hz) << '\n';
  out << "distance_m = " << format_double(cfg.distance_m) << '\n';
  out << "noise_watts = " << format_double(cfg.noise_watts) << '\n';
  out << "action_levels = " << format_list(cfg.action_levels) << '\n';
  out << "policy_hidden = " << format_list(cfg.policy_hidden) << '\n';
  out << "multiplier_hidden = " << format_list(cfg.multiplier_hidden) << '\n';
  out << "value_hidden = " << format_list(cfg.value_hidden) << '\n';
  out << "policy_init = " << format_double(cfg.policy_init) << '\n';
  out << "lr_policy = " << format_double(cfg.lr_policy) << '\n';
  out << "lr_multiplier = " << format_double(cfg.lr_multiplier) << '\n';
  out << "lr_value = " << format_double(cfg.lr_value) << '\n';
  out << "lr_xi = " << format_double(cfg.lr_xi) << '\n';
  out << "batch = " << cfg.batch << '\n';
  out << "noise_eps = " << format_double(cfg.noise_eps) << '\n';
  out << "noise_hold = " << cfg.noise_hold << '\n';
  out << "noise_decay = " << cfg.noise_decay << '\n';
  out << "iters = " << cfg.iters << '\n';
  out << "rounds = " << cfg.rounds << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "window = " << cfg.window << '\n';
  out << "replay_capacity = " << cfg.replay_capacity << '\n';
  out << "workers = " << cfg.workers << '\n';
  out << "prob_floor = " << format_double(cfg.prob_floor) << '\n';
  out << "use_baselines = " << (cfg.use_baselines ? "true" : "false") << '\n';
  out << "xi_tol = " << format_double(cfg.xi_tol) << '\n';
  return out.str();
}

// Flat key = value lines; '#' starts a comment; unspecified keys keep
// their defaults; unknown keys are an error.
inline ExperimentConfig parse_config(std::string_view text,
                                     ExperimentConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    apply_key_value(base, key, value);
  }
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig cfg = parse_config(text.str(), std::move(base));
  cfg.validate();
  return cfg;
}

// quick: desk-scale run for CI; paper: the full-scale experiment.
inline void apply_preset(ExperimentConfig& cfg, std::string_view name) {
  if (name == "quick") {
    cfg.rounds = 5;
    cfg.iters = 20000;
    cfg.noise_hold = 1000;
    cfg.noise_decay = 3000;
  } else if (name == "paper") {
    cfg.rounds = 50;
    cfg.iters = 100000;
    cfg.noise_hold = 5000;
    cfg.noise_decay = 15000;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
}

// Environment variables override file values: PDLEARN_<KEY-in-caps>.
inline void apply_env_overrides(ExperimentConfig& cfg,
                                const std::string& prefix = "PDLEARN_") {
  for (const std::string& key : config_keys()) {
    std::string env_name = prefix;
    for (char c : key)
      env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* value = std::getenv(env_name.c_str()))
      apply_key_value(cfg, key, value);
  }
}

}  // namespace pdlearn
