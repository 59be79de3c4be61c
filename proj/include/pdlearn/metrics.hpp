#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace pdlearn {

// One training iteration as seen by the metrics pipeline. Violation
// entries are the clamped positive parts of the two instantaneous
// constraints; for batched trainers every field is a batch mean.
struct MetricRecord {
  int round = 0;
  long iteration = 0;
  double rate = 0.0;
  double viol_lo = 0.0;
  double viol_hi = 0.0;
  double avg_constraint = 0.0;
  double power = 0.0;
  double channel = 0.0;
};

// Thread-safe collection point for parallel rounds; records are keyed by
// round id so retrieval order is independent of scheduling.
class MetricSink {
 public:
  void append(int round, std::vector<MetricRecord> records) {
    std::lock_guard lock(mu_);
    auto& dst = rounds_[round];
    dst.insert(dst.end(), records.begin(), records.end());
  }

  // Rounds in ascending id order.
  std::vector<std::vector<MetricRecord>> take() {
    std::lock_guard lock(mu_);
    std::vector<std::vector<MetricRecord>> out;
    out.reserve(rounds_.size());
    for (auto& [id, recs] : rounds_) out.push_back(std::move(recs));
    rounds_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::map<int, std::vector<MetricRecord>> rounds_;
};

struct WindowPoint {
  long iter_end = 0;
  double rate = 0.0;
  double viol_lo = 0.0;
  double viol_hi = 0.0;
  double avg_constraint = 0.0;
  double power = 0.0;
  double channel = 0.0;
};

// Non-overlapping window means over one round's records; a trailing
// partial window is dropped.
inline std::vector<WindowPoint> window_average(
    std::span<const MetricRecord> records, int window) {
  if (window < 1)
    throw std::invalid_argument("window_average: window must be >= 1");
  std::vector<WindowPoint> out;
  const std::size_t w = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start + w <= records.size(); start += w) {
    WindowPoint p;
    for (std::size_t i = start; i < start + w; ++i) {
      const auto& r = records[i];
      p.rate += r.rate;
      p.viol_lo += r.viol_lo;
      p.viol_hi += r.viol_hi;
      p.avg_constraint += r.avg_constraint;
      p.power += r.power;
      p.channel += r.channel;
    }
    const double inv = 1.0 / static_cast<double>(w);
    p.rate *= inv;
    p.viol_lo *= inv;
    p.viol_hi *= inv;
    p.avg_constraint *= inv;
    p.power *= inv;
    p.channel *= inv;
    p.iter_end = records[start + w - 1].iteration;
    out.push_back(p);
  }
  return out;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

struct CrossRoundPoint {
  long iter_end = 0;
  MeanSe rate, viol_lo, viol_hi, avg_constraint, power, channel;
};

// Pointwise mean and standard error across rounds. All rounds must share
// the same iteration alignment.
inline std::vector<CrossRoundPoint> cross_round_average(
    const std::vector<std::vector<WindowPoint>>& rounds) {
  if (rounds.empty()) return {};
  const std::size_t len = rounds.front().size();
  for (std::size_t r = 1; r < rounds.size(); ++r) {
    if (rounds[r].size() != len)
      throw std::runtime_error("cross_round_average: round " +
                               std::to_string(r) + " has mismatched length");
    for (std::size_t i = 0; i < len; ++i)
      if (rounds[r][i].iter_end != rounds.front()[i].iter_end)
        throw std::runtime_error("cross_round_average: round " +
                                 std::to_string(r) +
                                 " is misaligned at window " +
                                 std::to_string(i));
  }

  const double n = static_cast<double>(rounds.size());
  std::vector<CrossRoundPoint> out(len);
  for (std::size_t i = 0; i < len; ++i) {
    out[i].iter_end = rounds.front()[i].iter_end;
    const auto stat = [&](auto member) {
      double mean = 0.0;
      for (const auto& r : rounds) mean += r[i].*member;
      mean /= n;
      double ss = 0.0;
      for (const auto& r : rounds) {
        const double d = r[i].*member - mean;
        ss += d * d;
      }
      const double se =
          rounds.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
      return MeanSe{mean, se};
    };
    out[i].rate = stat(&WindowPoint::rate);
    out[i].viol_lo = stat(&WindowPoint::viol_lo);
    out[i].viol_hi = stat(&WindowPoint::viol_hi);
    out[i].avg_constraint = stat(&WindowPoint::avg_constraint);
    out[i].power = stat(&WindowPoint::power);
    out[i].channel = stat(&WindowPoint::channel);
  }
  return out;
}

namespace detail {

// Shortest round-trip representation.
inline void append_double(std::string& s, double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, res.ptr);
}

inline double parse_double(std::string_view tok, const char* context) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string(context) + ": bad number '" +
                             std::string(tok) + "'");
  return v;
}

inline long parse_long(std::string_view tok, const char* context) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string(context) + ": bad integer '" +
                             std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

}  // namespace detail

inline constexpr const char* kRawCsvHeader =
    "round,iter,rate,viol_lo,viol_hi,c,power,h";

inline void write_raw_csv(const std::filesystem::path& path,
                          const std::vector<std::vector<MetricRecord>>& rounds) {
  auto out = detail::open_for_write(path);
  out << kRawCsvHeader << '\n';
  std::string line;
  for (const auto& round : rounds) {
    for (const auto& r : round) {
      line.clear();
      line += std::to_string(r.round);
      line += ',';
      line += std::to_string(r.iteration);
      for (double v : {r.rate, r.viol_lo, r.viol_hi, r.avg_constraint, r.power,
                       r.channel}) {
        line += ',';
        detail::append_double(line, v);
      }
      line += '\n';
      out << line;
    }
  }
}

inline std::vector<MetricRecord> read_raw_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRawCsvHeader)
    throw std::runtime_error("read_raw_csv: unexpected header in " +
                             path.string());
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tok = detail::split(line, ',');
    if (tok.size() != 8)
      throw std::runtime_error("read_raw_csv: expected 8 columns");
    MetricRecord r;
    r.round = static_cast<int>(detail::parse_long(tok[0], "round"));
    r.iteration = detail::parse_long(tok[1], "iter");
    r.rate = detail::parse_double(tok[2], "rate");
    r.viol_lo = detail::parse_double(tok[3], "viol_lo");
    r.viol_hi = detail::parse_double(tok[4], "viol_hi");
    r.avg_constraint = detail::parse_double(tok[5], "c");
    r.power = detail::parse_double(tok[6], "power");
    r.channel = detail::parse_double(tok[7], "h");
    out.push_back(r);
  }
  return out;
}

inline void write_windowed_csv(const std::filesystem::path& path,
                               const std::vector<CrossRoundPoint>& points) {
  auto out = detail::open_for_write(path);
  out << "iter,rate,rate_se,viol_lo,viol_lo_se,viol_hi,viol_hi_se,"
         "c,c_se,power,power_se,h,h_se\n";
  std::string line;
  for (const auto& p : points) {
    line.clear();
    line += std::to_string(p.iter_end);
    for (const MeanSe& m :
         {p.rate, p.viol_lo, p.viol_hi, p.avg_constraint, p.power, p.channel}) {
      line += ',';
      detail::append_double(line, m.mean);
      line += ',';
      detail::append_double(line, m.se);
    }
    line += '\n';
    out << line;
  }
}

struct PolicyCurvePoint {
  double channel = 0.0;
  double learned = 0.0;
  double optimal = 0.0;
};

inline void write_policy_curve_csv(const std::filesystem::path& path,
                                   std::span<const PolicyCurvePoint> points) {
  auto out = detail::open_for_write(path);
  out << "h,p_learned,p_optimal\n";
  std::string line;
  for (const auto& p : points) {
    line.clear();
    detail::append_double(line, p.channel);
    line += ',';
    detail::append_double(line, p.learned);
    line += ',';
    detail::append_double(line, p.optimal);
    line += '\n';
    out << line;
  }
}

inline std::vector<PolicyCurvePoint> read_policy_curve_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "h,p_learned,p_optimal")
    throw std::runtime_error("read_policy_curve_csv: unexpected header");
  std::vector<PolicyCurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tok = detail::split(line, ',');
    if (tok.size() != 3)
      throw std::runtime_error("read_policy_curve_csv: expected 3 columns");
    out.push_back({detail::parse_double(tok[0], "h"),
                   detail::parse_double(tok[1], "p_learned"),
                   detail::parse_double(tok[2], "p_optimal")});
  }
  return out;
}

}  // namespace pdlearn
