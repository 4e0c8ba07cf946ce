#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pickling/rng.hpp"
#include "pickling/strip.hpp"

namespace pickling::env {

enum class Stage : std::uint8_t { boost = 0, sync = 1, slowdown = 2, stopped = 3 };
enum class TerminalCause : std::uint8_t { none, death, complete };

std::string to_string(TerminalCause cause);
TerminalCause parse_terminal_cause(std::string_view text);

// FTU stage digit followed by the TTU stage digit, e.g. "03".
struct StageCombination {
  Stage ftu = Stage::boost;
  Stage ttu = Stage::boost;

  std::size_t index() const { return 4 * static_cast<std::size_t>(ftu) + static_cast<std::size_t>(ttu); }
  std::string code() const;
  bool has_stop() const { return ftu == Stage::stopped || ttu == Stage::stopped; }
  static StageCombination from_index(std::size_t k);
  static StageCombination from_code(std::string_view code);
  bool operator==(const StageCombination&) const = default;
};
inline constexpr std::size_t kCombinationCount = 16;

struct TruncatedNormal {
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;

  void validate(const char* what) const;
  // Rejection sampling from N(mean, sd) restricted to [min, inf).
  double sample(Rng& rng) const;
};

struct DisturbanceModel {
  TruncatedNormal weld{180.0, 30.0, 120.0};  // s
  TruncatedNormal cut{60.0, 15.0, 30.0};     // s
  double prediction_sd = 10.0;               // s
  std::uint64_t seed = 0;

  void validate() const;
};

struct LooperBounds {
  double lower = 0.0;  // m
  double upper = 0.0;  // m
  double span() const { return upper - lower; }
  double midpoint() const { return 0.5 * (lower + upper); }
  bool operator==(const LooperBounds&) const = default;
};

struct PlantConfig {
  LooperBounds looper1{20.0, 400.0};
  LooperBounds looper2{10.0, 200.0};
  double sync_fraction = 0.1;     // of each looper span
  double sync_hysteresis = 1.0;   // m
  double ftu_max_speed = 250.0;   // m/min
  double ttu_max_speed = 250.0;   // m/min
  double ramp = 10.0;             // m/min per s, every unit
  double slowdown_residual = 50.0;  // m
  double crawl_speed = 60.0;      // m/min, end-of-strip speed
  double stu_length = 300.0;      // m
  std::size_t braking_horizon = 30;  // s
  std::size_t strips_per_episode = 20;

  void validate() const;
  // FTU syncs at or above this volume, TTU at or below the looper2 level.
  double looper1_sync_level() const { return looper1.upper - sync_fraction * looper1.span(); }
  double looper2_sync_level() const { return looper2.lower + sync_fraction * looper2.span(); }
};

struct UnitState {
  double speed = 0.0;     // m/min
  Stage stage = Stage::boost;
  double residual = 0.0;  // m left to unroll (FTU) or before the blades (TTU)
  double timer = 0.0;     // s of weld/cut left when stopped
  double elapsed = 0.0;   // s spent in the current stop
  double predicted_total = 0.0;  // predicted duration of the current stop
  std::size_t strip = 0;  // strip being unrolled / recoiled; the finished one while stopped

  bool operator==(const UnitState&) const = default;
};

// Fixed, per-episode data shared by every copy of a line state.
struct EpisodeContext {
  PlantConfig plant;
  std::vector<double> strip_starts;  // material coordinate of each head, plus the queue end
  std::vector<SpeedLimits> limits;   // per strip
  double nominal_weld = 0.0;         // s, used for stops not yet started
  double nominal_cut = 0.0;

  std::size_t strip_count() const { return limits.size(); }
  double strip_length(std::size_t i) const { return strip_starts[i + 1] - strip_starts[i]; }
};

struct LineState {
  double time = 0.0;  // s
  std::size_t steps = 0;
  std::size_t horizon = 0;  // steps in a complete episode
  UnitState ftu;
  UnitState ttu;
  double stu_speed = 0.0;
  double looper1 = 0.0;
  double looper2 = 0.0;
  // Material coordinates (m from the head of the first queued strip).
  double ftu_position = 0.0;
  double ttu_position = 0.0;
  std::vector<std::size_t> strips_in_stu;
  double t_w_pred = 0.0;
  double t_c_pred = 0.0;
  bool terminal = false;
  TerminalCause cause = TerminalCause::none;
  std::shared_ptr<const EpisodeContext> context;

  const PlantConfig& plant() const { return context->plant; }
  // Speed cap (min v_max) and floor (max v_min, never above the cap) over strips in the STU.
  SpeedLimits stu_limits() const;
};

StageCombination stage_combination(const LineState& s);

// max(0, predicted total - elapsed) while stopped, else 0.
double predicted_time_left(const UnitState& u);

// t = 60 L / v + t_stop; infinite when v = 0.
double cycle_time(double residual, double speed, double stop_time);
struct CycleTimes {
  double ftu = 0.0;
  double ttu = 0.0;
};
// Stopped units report their predicted remaining stop; moving units use the nominal stop time.
CycleTimes cycle_times(const LineState& s);

struct LooperForecast {
  double min_looper1 = 0.0;
  double max_looper2 = 0.0;
};
// Rolls both units forward `horizon` seconds at a constant STU speed. Stops use predicted
// durations (in progress) or nominal ones (future), scaled by `safety_factor`.
LooperForecast forecast_loopers(const LineState& s, double stu_speed, std::size_t horizon,
                                double safety_factor);

struct InitialConditions {
  double looper1 = 0.0;
  double looper2 = 0.0;
  double ftu_speed = 0.0;
  double stu_speed = 0.0;
  double ttu_speed = 0.0;
  double ttu_position = 0.0;        // m of the queue already past the blades
  double ftu_stop_remaining = 0.0;  // > 0: FTU welding at a seam
  double ttu_stop_remaining = 0.0;  // > 0: TTU cutting at a seam

  bool operator==(const InitialConditions&) const = default;
};

struct StepEvents {
  double command = 0.0;
  double ftu_speed = 0.0;  // applied during the step
  double stu_speed = 0.0;
  double ttu_speed = 0.0;
  SpeedLimits limits;
  StageCombination combination;  // stages in force during the step
  bool ramp_limited = false;
  bool capped = false;
  bool floored = false;
  bool braked = false;
  bool weld_started = false;
  bool weld_finished = false;
  bool cut_started = false;
  bool cut_finished = false;
  TerminalCause cause = TerminalCause::none;
};

class Environment {
 public:
  Environment(PlantConfig plant, SpeedTable table);

  // Pre-samples every weld and cut (true and predicted) from the disturbance seed.
  const LineState& reset(std::span<const Strip> queue, const GradeVocabulary& vocab,
                         const DisturbanceModel& disturbance, const InitialConditions& ic);
  StepEvents step(double command);

  const LineState& state() const { return state_; }
  const PlantConfig& plant() const { return plant_; }
  const SpeedTable& speed_table() const { return table_; }
  const std::vector<double>& true_weld_times() const { return weld_true_; }
  const std::vector<double>& predicted_weld_times() const { return weld_pred_; }
  const std::vector<double>& true_cut_times() const { return cut_true_; }
  const std::vector<double>& predicted_cut_times() const { return cut_pred_; }

 private:
  PlantConfig plant_;
  SpeedTable table_;
  LineState state_;
  std::vector<double> weld_true_, weld_pred_, cut_true_, cut_pred_;
};

// Human-readable dump of every state field; equal states give equal text.
void write_state(std::ostream& out, const LineState& s);

}  // namespace pickling::env
