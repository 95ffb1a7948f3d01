#pragma once

// Experiment configuration: a JSON document with a fixed, documented key set.
// Unknown keys and out-of-range values are rejected with the line number of
// the offending key. Missing keys take their defaults, and the canonical form
// (every key present, sorted, two-space indent) is what run artifacts echo.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trelab/envs.hpp"
#include "trelab/ppo.hpp"
#include "trelab/regularizers.hpp"
#include "trelab/selectors.hpp"

namespace trelab {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, std::size_t line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ExperimentConfig {
  EnvSpec env;
  PPOConfig ppo;
  RegularizerSpec regularizer;
  SelectorSpec selector;
  std::size_t iterations = 200;
  std::vector<std::uint64_t> seeds{0};
  std::size_t eval_rollouts = 8;
  std::string output_dir = "runs";

  void validate() const {
    env.validate();
    ppo.validate();
    regularizer.validate();
    selector.validate();
    if (seeds.empty()) throw DomainError("config: seeds must not be empty");
  }
};

namespace detail {

/// 1-based line of the key at `path` (e.g. {"regularizer", "alpha"}), found by
/// scanning for each quoted key in turn. 0 if it cannot be located.
inline std::size_t line_of_key(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    const std::string needle = "\"" + key + "\"";
    for (;;) {
      pos = text.find(needle, pos);
      if (pos == std::string::npos) return 0;
      std::size_t after = pos + needle.size();
      while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
      if (after < text.size() && text[after] == ':') break;
      pos += needle.size();
    }
    pos += needle.size();
  }
  std::size_t line = 1;
  for (std::size_t i = 0; i < pos && i < text.size(); ++i) line += text[i] == '\n' ? 1 : 0;
  return line;
}

/// Reads typed fields out of one JSON object and remembers which keys were
/// consumed, so leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& obj, std::vector<std::string> path, const std::string& text)
      : obj_(obj), path_(std::move(path)), text_(text) {
    if (!obj_.is_object()) fail("expected an object", path_);
  }

  [[noreturn]] void fail(const std::string& msg, const std::vector<std::string>& at) const {
    std::string where;
    for (const auto& p : at) where += "/" + p;
    throw ConfigError((where.empty() ? "" : where + ": ") + msg, line_of_key(text_, at));
  }

  std::vector<std::string> at(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number()) fail("expected a number", at(key));
    return v.get<double>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_unsigned()) {
      if (v.is_number_integer()) fail("expected a non-negative integer", at(key));
      fail("expected an integer", at(key));
    }
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_string()) fail("expected a string", at(key));
    return v.get<std::string>();
  }

  void reject_unknown() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) fail("unknown key '" + item.key() + "'", at(item.key()));
    }
  }

 private:
  const nlohmann::json& obj_;
  std::vector<std::string> path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

// Runs a validator and re-raises its DomainError at the given key.
template <typename F>
void check_at(const ObjectReader& r, const std::string& key, F&& validator) {
  try {
    validator();
  } catch (const DomainError& e) {
    r.fail(e.what(), r.at(key));
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // byte offset -> line
    std::size_t line = 1;
    for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) line += text[i] == '\n' ? 1 : 0;
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line);
  }

  ExperimentConfig cfg;
  detail::ObjectReader top(doc, {}, text);

  if (top.has("env")) {
    detail::ObjectReader r(top.raw("env"), {"env"}, text);
    const auto kind = r.string("kind", "sparse_chain");
    cfg.env.seed = r.unsigned_int("seed", 0);
    if (kind == "sparse_chain") {
      SparseChainSpec c;
      c.vocab_size = r.unsigned_int("vocab_size", c.vocab_size);
      c.valid_per_step = r.unsigned_int("valid_per_step", c.valid_per_step);
      c.horizon = r.unsigned_int("horizon", c.horizon);
      c.init_bias = r.number("init_bias", c.init_bias);
      cfg.env.kind = c;
    } else if (kind == "exploration_tree") {
      ExplorationTreeSpec t;
      t.vocab_size = r.unsigned_int("vocab_size", t.vocab_size);
      t.depth = r.unsigned_int("depth", t.depth);
      t.trap_reward = r.number("trap_reward", t.trap_reward);
      t.optimal_reward = r.number("optimal_reward", t.optimal_reward);
      t.trap_bias = r.number("trap_bias", t.trap_bias);
      cfg.env.kind = t;
    } else {
      r.fail("unknown env kind '" + kind + "' (expected sparse_chain or exploration_tree)", r.at("kind"));
    }
    r.reject_unknown();
    detail::check_at(top, "env", [&] { cfg.env.validate(); });
  }

  if (top.has("ppo")) {
    detail::ObjectReader r(top.raw("ppo"), {"ppo"}, text);
    auto& p = cfg.ppo;
    p.clip_range = r.number("clip_range", p.clip_range);
    p.gae_gamma = r.number("gae_gamma", p.gae_gamma);
    p.gae_lambda = r.number("gae_lambda", p.gae_lambda);
    p.actor_lr = r.number("actor_lr", p.actor_lr);
    p.critic_lr = r.number("critic_lr", p.critic_lr);
    p.rollouts_per_iter = r.unsigned_int("rollouts_per_iter", p.rollouts_per_iter);
    p.minibatch_size = r.unsigned_int("minibatch_size", p.minibatch_size);
    p.epochs_per_iter = r.unsigned_int("epochs_per_iter", p.epochs_per_iter);
    p.kl_coef_base = r.number("kl_coef_base", p.kl_coef_base);
    r.reject_unknown();
    detail::check_at(top, "ppo", [&] { p.validate(); });
  }

  if (top.has("regularizer")) {
    detail::ObjectReader r(top.raw("regularizer"), {"regularizer"}, text);
    auto& g = cfg.regularizer;
    const auto kind = r.string("kind", "none");
    const auto parsed = regularizer_kind_from_string(kind);
    if (!parsed) r.fail("unknown regularizer kind '" + kind + "'", r.at("kind"));
    g.kind = *parsed;
    g.alpha = r.number("alpha", g.alpha);
    g.k = r.unsigned_int("k", g.k);
    g.p = r.number("p", g.p);
    r.reject_unknown();
    detail::check_at(r, "alpha", [&] {
      if (!(g.alpha >= 0.0)) throw DomainError("alpha must be >= 0");
    });
    detail::check_at(r, "k", [&] {
      if (g.k == 0) throw DomainError("k must be >= 1");
    });
    detail::check_at(r, "p", [&] {
      if (!(g.p > 0.0 && g.p <= 1.0)) throw DomainError("p must lie in (0, 1]");
    });
  }

  if (top.has("selector")) {
    detail::ObjectReader r(top.raw("selector"), {"selector"}, text);
    auto& s = cfg.selector;
    const auto kind = r.string("kind", "none");
    const auto parsed = selector_kind_from_string(kind);
    if (!parsed) r.fail("unknown selector kind '" + kind + "'", r.at("kind"));
    s.kind = *parsed;
    s.fraction = r.number("fraction", s.fraction);
    s.kl_coeff = r.number("kl_coeff", s.kl_coeff);
    r.reject_unknown();
    detail::check_at(r, "fraction", [&] {
      if (!(s.fraction > 0.0 && s.fraction <= 1.0)) throw DomainError("fraction must lie in (0, 1]");
    });
    detail::check_at(r, "kl_coeff", [&] {
      if (!(s.kl_coeff >= 0.0)) throw DomainError("kl_coeff must be >= 0");
    });
  }

  cfg.iterations = top.unsigned_int("iterations", cfg.iterations);
  cfg.eval_rollouts = top.unsigned_int("eval_rollouts", cfg.eval_rollouts);
  cfg.output_dir = top.string("output_dir", cfg.output_dir);
  if (top.has("seeds")) {
    const auto& v = top.raw("seeds");
    if (!v.is_array()) top.fail("expected an array of integers", top.at("seeds"));
    if (v.empty()) top.fail("seeds must not be empty", top.at("seeds"));
    cfg.seeds.clear();
    for (const auto& s : v) {
      if (!s.is_number_unsigned()) top.fail("seeds must be non-negative integers", top.at("seeds"));
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  top.reject_unknown();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline nlohmann::json env_to_json(const EnvSpec& env) {
  nlohmann::json j;
  j["seed"] = env.seed;
  if (const auto* c = std::get_if<SparseChainSpec>(&env.kind)) {
    j["kind"] = "sparse_chain";
    j["vocab_size"] = c->vocab_size;
    j["valid_per_step"] = c->valid_per_step;
    j["horizon"] = c->horizon;
    j["init_bias"] = c->init_bias;
  } else {
    const auto& t = std::get<ExplorationTreeSpec>(env.kind);
    j["kind"] = "exploration_tree";
    j["vocab_size"] = t.vocab_size;
    j["depth"] = t.depth;
    j["trap_reward"] = t.trap_reward;
    j["optimal_reward"] = t.optimal_reward;
    j["trap_bias"] = t.trap_bias;
  }
  return j;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["env"] = env_to_json(cfg.env);
  j["ppo"] = {{"clip_range", cfg.ppo.clip_range},
              {"gae_gamma", cfg.ppo.gae_gamma},
              {"gae_lambda", cfg.ppo.gae_lambda},
              {"actor_lr", cfg.ppo.actor_lr},
              {"critic_lr", cfg.ppo.critic_lr},
              {"rollouts_per_iter", cfg.ppo.rollouts_per_iter},
              {"minibatch_size", cfg.ppo.minibatch_size},
              {"epochs_per_iter", cfg.ppo.epochs_per_iter},
              {"kl_coef_base", cfg.ppo.kl_coef_base}};
  j["regularizer"] = {{"kind", to_string(cfg.regularizer.kind)},
                      {"alpha", cfg.regularizer.alpha},
                      {"k", cfg.regularizer.k},
                      {"p", cfg.regularizer.p}};
  j["selector"] = {{"kind", to_string(cfg.selector.kind)},
                   {"fraction", cfg.selector.fraction},
                   {"kl_coeff", cfg.selector.kl_coeff}};
  j["iterations"] = cfg.iterations;
  j["seeds"] = cfg.seeds;
  j["eval_rollouts"] = cfg.eval_rollouts;
  j["output_dir"] = cfg.output_dir;
  return j;
}

/// Canonical text: all keys, sorted, two-space indent, trailing newline.
inline std::string canonical_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

/// Short label used to group runs: "vanilla", "ent(a=0.01)", "tre_k(a=0.001,k=2)", ...
inline std::string method_label(const RegularizerSpec& reg, const SelectorSpec& sel) {
  auto num = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  std::string reg_part;
  if (reg.kind != RegularizerKind::None) {
    reg_part = std::string(to_string(reg.kind)) + "(a=" + num(reg.alpha);
    if (reg.kind == RegularizerKind::TreK) reg_part += ",k=" + std::to_string(reg.k);
    if (reg.kind == RegularizerKind::TreP) reg_part += ",p=" + num(reg.p);
    reg_part += ")";
  }
  std::string sel_part;
  if (sel.kind == SelectorKind::ForkingTokens) sel_part = "forking(f=" + num(sel.fraction) + ")";
  if (sel.kind == SelectorKind::KlCov) sel_part = "kl_cov(f=" + num(sel.fraction) + ",b=" + num(sel.kl_coeff) + ")";
  if (reg_part.empty() && sel_part.empty()) return "vanilla";
  if (reg_part.empty()) return sel_part;
  if (sel_part.empty()) return reg_part;
  return reg_part + "+" + sel_part;
}

/// Compact environment key, e.g. "sparse_chain(V=64,m=4,T=8,b=8,seed=0)".
inline std::string env_label(const EnvSpec& env) {
  std::ostringstream os;
  if (const auto* c = std::get_if<SparseChainSpec>(&env.kind)) {
    os << "sparse_chain(V=" << c->vocab_size << ",m=" << c->valid_per_step << ",T=" << c->horizon
       << ",b=" << c->init_bias << ",seed=" << env.seed << ")";
  } else {
    const auto& t = std::get<ExplorationTreeSpec>(env.kind);
    os << "exploration_tree(V=" << t.vocab_size << ",D=" << t.depth << ",r_trap=" << t.trap_reward
       << ",r_opt=" << t.optimal_reward << ",b=" << t.trap_bias << ",seed=" << env.seed << ")";
  }
  return os.str();
}

}  // namespace trelab
