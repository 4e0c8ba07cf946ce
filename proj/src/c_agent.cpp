#include "pickling/c_agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pickling/errors.hpp"

namespace pickling::control {

void CAgentConfig::validate() const {
  if (!(margin >= 0.0)) throw ConfigError("c-agent margin must be >= 0");
  if (horizon == 0) throw ConfigError("c-agent horizon must be positive");
  if (!(safety_factor > 0.0)) throw ConfigError("c-agent safety factor must be positive");
  if (!(ramp > 0.0) || !(grid_step > 0.0)) throw ConfigError("c-agent ramp and grid step must be positive");
}

env::LooperForecast project_loopers(const env::LineState& s, double candidate, std::size_t horizon,
                                    double safety_factor) {
  return env::forecast_loopers(s, candidate, horizon, safety_factor);
}

double projected_violation(const env::LooperForecast& f, const env::PlantConfig& plant, double margin) {
  return std::max(0.0, plant.looper1.lower + margin - f.min_looper1) +
         std::max(0.0, f.max_looper2 - (plant.looper2.upper - margin));
}

CandidateRange candidate_range(const env::LineState& s, const CAgentConfig& config) {
  const SpeedLimits lim = s.stu_limits();
  const double cap = std::floor(lim.v_max);
  const double floor_v = std::ceil(lim.v_min);
  CandidateRange r;
  r.hi = std::min(cap, std::floor(s.stu_speed + config.ramp));
  r.lo = std::max(floor_v, std::ceil(s.stu_speed - config.ramp));
  if (r.lo > r.hi) r.lo = r.hi = cap < s.stu_speed - config.ramp ? cap : std::min(floor_v, cap);
  return r;
}

double recommend_speed(const env::LineState& s, const CAgentConfig& config) {
  if (s.terminal) throw ProtocolError("recommend_speed on a terminal state");
  const CandidateRange r = candidate_range(s, config);
  double best = r.lo;
  double best_violation = std::numeric_limits<double>::infinity();
  const auto n = static_cast<long>(std::floor((r.hi - r.lo) / config.grid_step + 1e-9));
  for (long k = n; k >= 0; --k) {
    const double v = r.lo + static_cast<double>(k) * config.grid_step;
    const double violation =
        projected_violation(project_loopers(s, v, config.horizon, config.safety_factor), s.plant(), config.margin);
    if (violation == 0.0) return v;
    if (violation <= best_violation) {
      best_violation = violation;
      best = v;
    }
  }
  return best;
}

}  // namespace pickling::control
