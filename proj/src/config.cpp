#include "scrl/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "scrl/dataset.hpp"

namespace scrl::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw InvalidArgument("expected a number, got '" + v + "'");
  }
  return out;
}

template <class Int>
Int to_int(const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidArgument("expected an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("expected true or false, got '" + v + "'");
}

std::array<size_t, 3> to_triple(const std::string& v) {
  std::array<size_t, 3> out{};
  std::stringstream ss(v);
  std::string item;
  size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 3) throw InvalidArgument("expected three comma-separated integers");
    out[n++] = to_int<size_t>(trim(item));
  }
  if (n != 3) throw InvalidArgument("expected three comma-separated integers");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::array<size_t, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Registry = std::map<std::string, std::vector<std::pair<std::string, Field>>>;

#define SCRL_NUM(section, member, conv)                                                      \
  {#member, Field{[](RunConfig& c, const std::string& v) { c.section.member = conv(v); }, \
                  [](const RunConfig& c) { return fmt_any(c.section.member); }}}

template <class V>
std::string fmt_any(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return fmt(v);
  } else if constexpr (std::is_floating_point_v<V>) {
    return fmt(v);
  } else if constexpr (std::is_integral_v<V>) {
    return std::to_string(v);
  } else if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else {
    return fmt(v);
  }
}

std::string as_string(const std::string& v) { return v; }

const Registry& registry() {
  static const Registry r = {
      {"env",
       {SCRL_NUM(env, kind, as_string), SCRL_NUM(env, width, to_int<int>),
        SCRL_NUM(env, height, to_int<int>), SCRL_NUM(env, slip, to_double),
        SCRL_NUM(env, dim, to_int<int>), SCRL_NUM(env, max_step, to_double),
        SCRL_NUM(env, noise, to_double), SCRL_NUM(env, image_size, to_int<size_t>),
        SCRL_NUM(env, channels, to_int<size_t>), SCRL_NUM(env, horizon, to_int<int>)}},
      {"data",
       {SCRL_NUM(data, behavior, as_string), SCRL_NUM(data, num_transitions, to_int<size_t>),
        SCRL_NUM(data, seed, to_int<uint64_t>), SCRL_NUM(data, path, as_string)}},
      {"train",
       {SCRL_NUM(train, gamma, to_double),
        SCRL_NUM(train, batch_size, to_int<size_t>),
        SCRL_NUM(train, repr_dim, to_int<size_t>),
        SCRL_NUM(train, lr, to_double),
        SCRL_NUM(train, lambda, to_double),
        {"critic_mode",
         Field{[](RunConfig& c, const std::string& v) { c.train.critic_mode = algo::parse_critic_mode(v); },
               [](const RunConfig& c) { return algo::to_string(c.train.critic_mode); }}},
        SCRL_NUM(train, cold_init_range, to_double),
        SCRL_NUM(train, use_layer_norm, to_bool),
        SCRL_NUM(train, aug_prob, to_double),
        SCRL_NUM(train, augment_critic, to_bool),
        SCRL_NUM(train, td_weight_clip, to_double),
        {"td_next_action",
         Field{[](RunConfig& c, const std::string& v) {
                 c.train.td_next_action = algo::parse_next_action_source(v);
               },
               [](const RunConfig& c) { return algo::to_string(c.train.td_next_action); }}},
        SCRL_NUM(train, target_period, to_int<uint64_t>),
        SCRL_NUM(train, total_steps, to_int<uint64_t>),
        SCRL_NUM(train, steps_per_epoch, to_int<uint64_t>),
        SCRL_NUM(train, seed, to_int<uint64_t>),
        SCRL_NUM(train, mlp_width, to_int<size_t>),
        SCRL_NUM(train, mlp_depth, to_int<size_t>),
        SCRL_NUM(train, cnn.channels, to_triple),
        SCRL_NUM(train, cnn.kernels, to_triple),
        SCRL_NUM(train, cnn.strides, to_triple),
        SCRL_NUM(train, cnn.pads, to_triple),
        SCRL_NUM(train, policy_std, to_double),
        SCRL_NUM(train, train_actor, to_bool)}},
      {"eval",
       {SCRL_NUM(eval, num_goals, to_int<size_t>), SCRL_NUM(eval, horizon, to_int<int>),
        SCRL_NUM(eval, criterion, as_string), SCRL_NUM(eval, seed, to_int<uint64_t>)}},
  };
  return r;
}

#undef SCRL_NUM

const Field* find_field(const std::string& section, const std::string& key) {
  const auto& r = registry();
  auto it = r.find(section);
  if (it == r.end()) return nullptr;
  for (const auto& [name, field] : it->second) {
    if (name == key) return &field;
  }
  return nullptr;
}

void validate(const RunConfig& c) {
  make_process(c.env);
  data::Behavior::parse(c.data.behavior);
  c.train.validate();
  if (c.eval.num_goals == 0) throw InvalidArgument("eval.num_goals must be positive");
  if (c.eval.horizon < 0) throw InvalidArgument("eval.horizon must be non-negative");
  if (c.eval.criterion != "default" && c.eval.criterion != "exact" &&
      c.eval.criterion.rfind("l2:", 0) != 0) {
    throw InvalidArgument("eval.criterion must be default, exact, or l2:<radius>");
  }
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig config;
  std::string section;
  std::set<std::string> seen;
  std::string raw;
  size_t line_no = 0;
  size_t last_line = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    last_line = line_no;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!registry().count(section)) {
        throw ConfigError(source, line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(source, line_no, "key '" + key + "' outside a section");
    const Field* field = find_field(section, key);
    if (!field) throw ConfigError(source, line_no, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(source, line_no, "duplicate key '" + key + "' in [" + section + "]");
    }
    try {
      field->set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError(source, line_no, section + "." + key + ": " + e.what());
    }
  }
  try {
    validate(config);
  } catch (const std::exception& e) {
    throw ConfigError(source, last_line, e.what());
  }
  return config;
}

RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  return parse_config(in, path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const char* section : {"env", "data", "train", "eval"}) {
    if (!out.empty()) out += "\n";
    out += std::string("[") + section + "]\n";
    for (const auto& [key, field] : registry().at(section)) {
      out += key + " = " + field.get(config) + "\n";
    }
  }
  return out;
}

std::string env_id(const EnvSection& env) {
  std::string id;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  if (env.kind == "grid") {
    id = "grid" + std::to_string(env.width) + "x" + std::to_string(env.height);
    if (env.slip != 0.0) id += ",slip=" + num(env.slip);
  } else if (env.kind == "point" || env.kind == "pixelpoint") {
    if (env.kind == "point") {
      id = "point2,dim=" + std::to_string(env.dim);
    } else {
      id = "pixelpoint,size=" + std::to_string(env.image_size) +
           ",channels=" + std::to_string(env.channels);
    }
    id += ",max_step=" + num(env.max_step) + ",noise=" + num(env.noise);
  } else {
    throw InvalidArgument("env.kind must be grid, point, or pixelpoint, got '" + env.kind + "'");
  }
  if (env.horizon != 0) id += ",horizon=" + std::to_string(env.horizon);
  return id;
}

env::ProcessPtr make_process(const EnvSection& env) { return env::make_process(env_id(env)); }

env::SuccessCriterion resolve_criterion(const std::string& text, const env::GoalProcess& process) {
  if (text == "default") return process.default_criterion();
  if (text == "exact") return {env::SuccessCriterion::Kind::exact_match, 0.0};
  if (text.rfind("l2:", 0) == 0) {
    const double r = to_double(text.substr(3));
    if (!(r >= 0.0)) throw InvalidArgument("l2 radius must be non-negative");
    return {env::SuccessCriterion::Kind::l2_ball, r};
  }
  throw InvalidArgument("criterion must be default, exact, or l2:<radius>, got '" + text + "'");
}

}  // namespace scrl::config
