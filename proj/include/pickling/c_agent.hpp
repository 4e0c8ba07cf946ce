#pragma once

#include <cstddef>

#include "pickling/env.hpp"

namespace pickling::control {

struct CAgentConfig {
  double margin = 15.0;           // m inside each looper bound
  std::size_t horizon = 300;      // s
  double safety_factor = 1.2;     // applied to predicted and nominal stop times
  double ramp = 10.0;             // m/min per s
  double grid_step = 1.0;         // m/min

  void validate() const;
};

// Extremal looper volumes over the horizon at a constant STU speed.
env::LooperForecast project_loopers(const env::LineState& s, double candidate, std::size_t horizon,
                                    double safety_factor);

// Total margined bound excess of a forecast; 0 when feasible.
double projected_violation(const env::LooperForecast& f, const env::PlantConfig& plant, double margin);

struct CandidateRange {
  double lo = 0.0;
  double hi = 0.0;
};
// Integer speeds between the floor and cap that the ramp can reach in one step.
CandidateRange candidate_range(const env::LineState& s, const CAgentConfig& config);

// Largest feasible candidate; otherwise the least-violating one (lowest on ties).
double recommend_speed(const env::LineState& s, const CAgentConfig& config);

}  // namespace pickling::control
