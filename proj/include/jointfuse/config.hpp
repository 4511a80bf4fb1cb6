#pragma once

#include "jointfuse/model.hpp"
#include "jointfuse/sampler.hpp"
#include "jointfuse/simulate.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace jointfuse::config {

using Json = nlohmann::json;

struct RunConfig {
  ModelSpec spec;
  sampler::McmcConfig mcmc;
  std::optional<simulate::SimScenario> simulation;
  double rhat_threshold = 1.1;
  bool split_rhat = false;
};

/// Parses a run configuration. Unknown keys and malformed values throw ConfigError naming the
/// field, e.g. "simulation.grid".
RunConfig parse(const Json& root);

/// Reads and parses a JSON file. Throws ConfigError.
RunConfig load(const std::string& path);

ModelSpec parse_model(const Json& root);
sampler::McmcConfig parse_mcmc(const Json& node);

/// Parameter state in JSON. Random effects and classes are included only when present.
Json state_to_json(const ParamState& state);
ParamState state_from_json(const Json& node);

}  // namespace jointfuse::config
