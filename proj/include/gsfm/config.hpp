#pragma once

#include <cstdint>
#include <istream>
#include <set>
#include <string>

#include <json.hpp>

#include "gsfm/error.hpp"
#include "gsfm/model.hpp"
#include "gsfm/nuts.hpp"
#include "gsfm/simgen.hpp"

namespace gsfm {

inline constexpr const char* kVersion = "0.1.0";

/// Settings readable from a JSON config file. Command-line flags are applied
/// on top, so a flag always wins over the file.
struct RunSettings {
  Hyperparams hyper;
  NutsConfig nuts;
  int replications = 30;
};

/// Reads keys L, M, beta_sd, atom_sd, scale_prior_scale, seed, chains,
/// warmup, draws, target_accept, max_tree_depth, replications. Unknown keys
/// are rejected so typos do not pass silently.
inline RunSettings read_settings(std::istream& in, RunSettings s = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error("config: top level must be an object");
  static const std::set<std::string> known{"L",     "M",      "beta_sd", "atom_sd",       "scale_prior_scale",
                                           "seed",  "chains", "warmup",  "draws",         "target_accept",
                                           "max_tree_depth", "replications"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("L", s.hyper.L);
    get("M", s.hyper.M);
    get("beta_sd", s.hyper.beta_sd);
    get("atom_sd", s.hyper.atom_sd);
    get("scale_prior_scale", s.hyper.scale_prior_scale);
    get("seed", s.nuts.seed);
    get("chains", s.nuts.chains);
    get("warmup", s.nuts.warmup);
    get("draws", s.nuts.draws);
    get("target_accept", s.nuts.target_accept);
    get("max_tree_depth", s.nuts.max_tree_depth);
    get("replications", s.replications);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  check_hyperparams(s.hyper);
  check_config(s.nuts);
  return s;
}

inline nlohmann::json settings_json(const RunSettings& s) {
  return {{"L", s.hyper.L},
          {"M", s.hyper.M},
          {"beta_sd", s.hyper.beta_sd},
          {"atom_sd", s.hyper.atom_sd},
          {"scale_prior_scale", s.hyper.scale_prior_scale},
          {"seed", s.nuts.seed},
          {"chains", s.nuts.chains},
          {"warmup", s.nuts.warmup},
          {"draws", s.nuts.draws},
          {"target_accept", s.nuts.target_accept},
          {"max_tree_depth", s.nuts.max_tree_depth},
          {"replications", s.replications}};
}

}  // namespace gsfm
