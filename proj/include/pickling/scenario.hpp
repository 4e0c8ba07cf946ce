#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pickling/env.hpp"

namespace pickling::env {

// One episode's inputs: strip queue, initial conditions, disturbance seed.
struct Scenario {
  std::string id;
  std::string source = "manual";  // generated | historical | manual
  std::uint64_t disturbance_seed = 0;
  GradeVocabulary vocabulary;
  std::vector<Strip> strips;
  InitialConditions ic;

  bool operator==(const Scenario&) const = default;
};

inline constexpr int kScenarioVersion = 1;

// Canonical JSON text ("format": "pickling-scenario", "version": 1).
std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);
void write_scenario(const std::filesystem::path& path, const Scenario& s);
Scenario read_scenario(const std::filesystem::path& path);
// FNV-1a over the canonical text.
std::uint64_t scenario_hash(const Scenario& s);
std::string hash_hex(std::uint64_t h);

// Resets with the scenario queue and IC; the disturbance seed replaces base.seed.
const LineState& reset(Environment& env, const Scenario& s, const DisturbanceModel& base);

// Draws initial conditions for a queue until `accept` approves the reset state.
// Looper volumes start between their midpoints and the sync levels; about one episode in
// five starts mid-weld and one in five mid-cut.
InitialConditions sample_initial_conditions(Environment& env, std::span<const Strip> queue,
                                            const GradeVocabulary& vocab, const DisturbanceModel& disturbance,
                                            Rng& rng, const std::function<bool(const LineState&)>& accept,
                                            std::size_t max_attempts = 1000);

}  // namespace pickling::env
