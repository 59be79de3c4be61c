#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdlearn/nn.hpp"
#include "pdlearn/trainer.hpp"

namespace pdlearn {

// Flat text dump of a TrainerState: topology, parameters, optimizer
// moments, xi, and the iteration counter. Doubles are written in
// shortest round-trip form, so a reloaded state resumes bit-identically.

namespace detail {

inline void ck_write_double(std::ostream& out, double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(&in) {}

  std::string word(const char* what) {
    std::string tok;
    if (!(*in_ >> tok))
      throw std::runtime_error(std::string("checkpoint: missing ") + what);
    return tok;
  }

  void expect(const std::string& literal) {
    const std::string tok = word(literal.c_str());
    if (tok != literal)
      throw std::runtime_error("checkpoint: expected '" + literal +
                               "', found '" + tok + "'");
  }

  long integer(const char* what) {
    const std::string tok = word(what);
    long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
      throw std::runtime_error(std::string("checkpoint: bad integer for ") +
                               what);
    return v;
  }

  double real(const char* what) {
    const std::string tok = word(what);
    double v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
      throw std::runtime_error(std::string("checkpoint: bad number for ") +
                               what);
    return v;
  }

 private:
  std::istream* in_;
};

inline void write_net(std::ostream& out, const std::string& name,
                      const NetAndOpt* slot) {
  if (slot == nullptr) {
    out << "net " << name << " absent\n";
    return;
  }
  const nn::Mlp& net = slot->net;
  out << "net " << name << " present " << net.input_dim() << ' '
      << net.layers().size();
  for (const auto& layer : net.layers())
    out << ' ' << layer.out << ' ' << static_cast<int>(layer.act);
  out << '\n';
  out << "params " << net.param_count();
  for (double v : net.params()) {
    out << ' ';
    ck_write_double(out, v);
  }
  out << '\n';
  const nn::AdamState& adam = slot->opt;
  out << "adam " << adam.step_count << ' ';
  ck_write_double(out, adam.beta1);
  out << ' ';
  ck_write_double(out, adam.beta2);
  out << ' ';
  ck_write_double(out, adam.epsilon);
  for (double v : adam.m) {
    out << ' ';
    ck_write_double(out, v);
  }
  for (double v : adam.v) {
    out << ' ';
    ck_write_double(out, v);
  }
  out << '\n';
}

inline std::optional<NetAndOpt> read_net(TokenReader& reader,
                                         const std::string& name) {
  reader.expect("net");
  reader.expect(name);
  const std::string presence = reader.word("presence");
  if (presence == "absent") return std::nullopt;
  if (presence != "present")
    throw std::runtime_error("checkpoint: bad presence flag for " + name);

  const int input_dim = static_cast<int>(reader.integer("input dim"));
  const long layer_count = reader.integer("layer count");
  std::vector<nn::LayerSpec> specs;
  int prev = input_dim;
  for (long l = 0; l < layer_count; ++l) {
    const int out = static_cast<int>(reader.integer("layer width"));
    const int act = static_cast<int>(reader.integer("activation"));
    if (act < 0 || act > 2)
      throw std::runtime_error("checkpoint: bad activation code");
    specs.push_back({prev, out, static_cast<nn::Activation>(act)});
    prev = out;
  }
  NetAndOpt slot{nn::Mlp(std::move(specs))};

  reader.expect("params");
  const long n = reader.integer("param count");
  if (n != static_cast<long>(slot.net.param_count()))
    throw std::runtime_error("checkpoint: param count mismatch for " + name);
  for (double& v : slot.net.params()) v = reader.real("param");

  reader.expect("adam");
  slot.opt.step_count = reader.integer("adam step");
  slot.opt.beta1 = reader.real("beta1");
  slot.opt.beta2 = reader.real("beta2");
  slot.opt.epsilon = reader.real("epsilon");
  for (double& v : slot.opt.m) v = reader.real("adam m");
  for (double& v : slot.opt.v) v = reader.real("adam v");
  return slot;
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "pdlearn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path,
                            const TrainerState& state) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "iteration " << state.iteration << '\n';
  out << "xi " << state.xi.size();
  for (double v : state.xi) {
    out << ' ';
    detail::ck_write_double(out, v);
  }
  out << '\n';
  const auto maybe = [](const std::optional<NetAndOpt>& slot) {
    return slot ? &*slot : nullptr;
  };
  detail::write_net(out, "policy", &state.policy);
  detail::write_net(out, "multiplier", maybe(state.multiplier));
  detail::write_net(out, "value_j", maybe(state.value_j));
  detail::write_net(out, "value_g", maybe(state.value_g));
  detail::write_net(out, "value_c", maybe(state.value_c));
  detail::write_net(out, "baseline_j", maybe(state.baseline_j));
  detail::write_net(out, "baseline_g", maybe(state.baseline_g));
  detail::write_net(out, "baseline_c", maybe(state.baseline_c));
  if (!out)
    throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  detail::TokenReader reader(in);
  reader.expect(kCheckpointMagic);
  if (reader.integer("version") != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");

  TrainerState state;
  reader.expect("iteration");
  state.iteration = reader.integer("iteration");
  reader.expect("xi");
  const long xi_n = reader.integer("xi size");
  state.xi.resize(static_cast<std::size_t>(xi_n));
  for (double& v : state.xi) v = reader.real("xi");

  auto policy = detail::read_net(reader, "policy");
  if (!policy) throw std::runtime_error("checkpoint: missing policy net");
  state.policy = std::move(*policy);
  state.multiplier = detail::read_net(reader, "multiplier");
  state.value_j = detail::read_net(reader, "value_j");
  state.value_g = detail::read_net(reader, "value_g");
  state.value_c = detail::read_net(reader, "value_c");
  state.baseline_j = detail::read_net(reader, "baseline_j");
  state.baseline_g = detail::read_net(reader, "baseline_g");
  state.baseline_c = detail::read_net(reader, "baseline_c");
  return state;
}

}  // namespace pdlearn
