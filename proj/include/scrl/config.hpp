#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "scrl/algorithm.hpp"
#include "scrl/env.hpp"
#include "scrl/errors.hpp"

namespace scrl::config {

// Parse failure; what() is "<source>:<line>: <message>".
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& source, size_t line, const std::string& message)
      : InvalidArgument(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

  size_t line() const { return line_; }

 private:
  size_t line_;
};

struct EnvSection {
  std::string kind = "grid";  // grid | point | pixelpoint
  int width = 9, height = 9;  // grid
  double slip = 0.0;          // grid
  int dim = 2;                // point
  double max_step = 0.05;     // point, pixelpoint
  double noise = 0.0;         // point, pixelpoint
  size_t image_size = 48;     // pixelpoint
  size_t channels = 1;        // pixelpoint
  int horizon = 0;            // 0: the process default
};

struct DataSection {
  std::string behavior = "scripted";  // scripted | random | mix:<eps>
  size_t num_transitions = 250000;
  uint64_t seed = 0;
  std::string path;
};

struct EvalSection {
  size_t num_goals = 10;
  int horizon = 0;                    // 0: the process horizon
  std::string criterion = "default";  // default | exact | l2:<radius>
  uint64_t seed = 0;
};

struct RunConfig {
  EnvSection env;
  DataSection data;
  algo::TrainConfig train;
  EvalSection eval;
};

// Sections [env] [data] [train] [eval]; "key = value" lines; '#' starts a
// comment line. Unknown sections or keys, duplicates, and malformed values
// are errors.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig parse_config_string(const std::string& text);
// Throws IoError naming the path if it cannot be read.
RunConfig load_config(const std::filesystem::path& path);

// Every key with its value; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

// Id accepted by env::make_process.
std::string env_id(const EnvSection& env);
env::ProcessPtr make_process(const EnvSection& env);

env::SuccessCriterion resolve_criterion(const std::string& text, const env::GoalProcess& process);

}  // namespace scrl::config
