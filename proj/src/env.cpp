#include "pickling/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "pickling/errors.hpp"
#include "pickling/text.hpp"

namespace pickling::env {

namespace {

constexpr double kEps = 1e-9;
constexpr double kSeamTolerance = 1e-6;

struct UnitLimits {
  double max_speed;
  double ramp;
  double slowdown_residual;
  double crawl;
};

UnitLimits ftu_limits(const PlantConfig& p) { return {p.ftu_max_speed, p.ramp, p.slowdown_residual, p.crawl_speed}; }
UnitLimits ttu_limits(const PlantConfig& p) { return {p.ttu_max_speed, p.ramp, p.slowdown_residual, p.crawl_speed}; }

// In the sync zone a slowing unit never outruns the STU.
double stage_speed(const UnitState& u, const UnitLimits& l, double stu, bool sync_zone) {
  switch (u.stage) {
    case Stage::boost: return std::min(l.max_speed, u.speed + l.ramp);
    case Stage::slowdown: {
      const double v =
          u.speed > l.crawl ? std::max(l.crawl, u.speed - l.ramp) : std::min(l.crawl, u.speed + l.ramp);
      return sync_zone ? std::min(v, stu) : v;
    }
    case Stage::sync: return stu;
    case Stage::stopped: return 0.0;
  }
  return 0.0;
}

// One second of motion. Leaves the applied speed in u.speed and returns the distance (m).
double move(UnitState& u, const UnitLimits& l, double stu, bool sync_zone) {
  if (u.stage == Stage::stopped) {
    u.timer -= 1.0;
    u.elapsed += 1.0;
    u.speed = 0.0;
    return 0.0;
  }
  const double v = stage_speed(u, l, stu, sync_zone);
  const double full = v / 60.0;
  if (full <= u.residual) {
    u.residual -= full;
    u.speed = v;
    return full;
  }
  const double d = u.residual;
  u.residual = 0.0;
  u.speed = d * 60.0;
  return d;
}

bool ftu_sync_zone(Stage stage, double v1, const PlantConfig& p) {
  const double level = p.looper1_sync_level();
  return v1 >= level || (stage == Stage::sync && v1 >= level - p.sync_hysteresis);
}

bool ttu_sync_zone(Stage stage, double v2, const PlantConfig& p) {
  const double level = p.looper2_sync_level();
  return v2 <= level || (stage == Stage::sync && v2 <= level + p.sync_hysteresis);
}

// End-of-strip slowdown outranks sync; sync outranks boost.
void classify(UnitState& u, const UnitLimits& l, bool sync_zone, double stu) {
  if (u.residual < l.slowdown_residual) {
    u.stage = Stage::slowdown;
    if (sync_zone) u.speed = std::min(u.speed, stu);
  } else if (sync_zone) {
    u.stage = Stage::sync;
    u.speed = stu;
  } else {
    u.stage = Stage::boost;
  }
}

enum class UnitEvent { none, stop_started, stop_finished };

// End-of-step stage logic. next_length <= 0 means the queue has no further strip.
UnitEvent transition(UnitState& u, const UnitLimits& l, bool sync_zone, double stu, double next_length,
                     double stop_duration) {
  UnitEvent ev = UnitEvent::none;
  if (u.stage == Stage::stopped) {
    if (u.timer > kEps || next_length <= 0.0) return ev;
    u.strip += 1;
    u.residual = next_length;
    u.speed = 0.0;
    u.timer = 0.0;
    u.elapsed = 0.0;
    u.predicted_total = 0.0;
    u.stage = Stage::boost;
    ev = UnitEvent::stop_finished;
  } else if (u.residual <= kEps) {
    u.residual = 0.0;
    u.stage = Stage::stopped;
    u.speed = 0.0;
    u.timer = stop_duration;
    u.elapsed = 0.0;
    return UnitEvent::stop_started;
  }
  classify(u, l, sync_zone, stu);
  return ev;
}

double next_length(const EpisodeContext& ctx, std::size_t strip, bool extend) {
  if (strip + 1 < ctx.strip_count()) return ctx.strip_length(strip + 1);
  return extend ? ctx.strip_length(ctx.strip_count() - 1) : 0.0;
}

void update_membership(LineState& s) {
  const EpisodeContext& ctx = *s.context;
  const double lo = s.ttu_position + s.looper2;
  const double hi = lo + ctx.plant.stu_length;
  s.strips_in_stu.clear();
  for (std::size_t i = 0; i < ctx.strip_count(); ++i) {
    if (ctx.strip_starts[i] < hi && ctx.strip_starts[i + 1] > lo) s.strips_in_stu.push_back(i);
  }
}

// Index of the strip whose tail is the next seam strictly ahead of `x`.
std::size_t strip_at(const EpisodeContext& ctx, double x) {
  for (std::size_t i = 0; i < ctx.strip_count(); ++i) {
    if (ctx.strip_starts[i + 1] > x + kEps) return i;
  }
  throw ConfigError("initial position lies beyond the strip queue");
}

std::size_t seam_at(const EpisodeContext& ctx, double x, const char* what) {
  for (std::size_t i = 0; i < ctx.strip_count(); ++i) {
    if (std::abs(ctx.strip_starts[i + 1] - x) <= kSeamTolerance) return i;
  }
  throw ConfigError(std::string(what) + " in progress requires the unit to sit on a seam");
}

std::size_t steps_for(double seconds) {
  return static_cast<std::size_t>(std::max(0.0, std::ceil(seconds - 1e-6)));
}

}  // namespace

std::string to_string(TerminalCause cause) {
  switch (cause) {
    case TerminalCause::none: return "none";
    case TerminalCause::death: return "death";
    case TerminalCause::complete: return "complete";
  }
  return "none";
}

TerminalCause parse_terminal_cause(std::string_view text) {
  if (text == "none") return TerminalCause::none;
  if (text == "death") return TerminalCause::death;
  if (text == "complete") return TerminalCause::complete;
  throw InputError("unknown terminal cause '" + std::string(text) + "'");
}

std::string StageCombination::code() const {
  return {static_cast<char>('0' + static_cast<int>(ftu)), static_cast<char>('0' + static_cast<int>(ttu))};
}

StageCombination StageCombination::from_index(std::size_t k) {
  if (k >= kCombinationCount) throw InputError("stage combination index out of range");
  return {static_cast<Stage>(k / 4), static_cast<Stage>(k % 4)};
}

StageCombination StageCombination::from_code(std::string_view code) {
  if (code.size() != 2 || code[0] < '0' || code[0] > '3' || code[1] < '0' || code[1] > '3') {
    throw InputError("bad stage combination code '" + std::string(code) + "'");
  }
  return {static_cast<Stage>(code[0] - '0'), static_cast<Stage>(code[1] - '0')};
}

void TruncatedNormal::validate(const char* what) const {
  if (!std::isfinite(mean) || !std::isfinite(sd) || !std::isfinite(min) || sd < 0.0 || min < 0.0) {
    throw ConfigError(std::string(what) + ": distribution parameters must be finite, sd and min >= 0");
  }
  if (sd == 0.0 ? mean <= 0.0 : min > mean + 4.0 * sd) {
    throw ConfigError(std::string(what) + ": truncation point leaves almost no mass");
  }
}

double TruncatedNormal::sample(Rng& rng) const {
  if (sd == 0.0) return std::max(mean, min);
  std::normal_distribution<double> n(mean, sd);
  for (;;) {
    const double x = n(rng);
    if (x >= min) return x;
  }
}

void DisturbanceModel::validate() const {
  weld.validate("weld time");
  cut.validate("cut time");
  if (!std::isfinite(prediction_sd) || prediction_sd < 0.0) throw ConfigError("prediction sd must be >= 0");
}

void PlantConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!std::isfinite(v) || v <= 0.0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(ftu_max_speed, "FTU max speed");
  positive(ttu_max_speed, "TTU max speed");
  positive(ramp, "ramp limit");
  positive(stu_length, "STU length");
  positive(crawl_speed, "crawl speed");
  if (slowdown_residual < 0.0) throw ConfigError("slowdown residual must be >= 0");
  if (sync_hysteresis < 0.0) throw ConfigError("sync hysteresis must be >= 0");
  if (!(sync_fraction > 0.0 && sync_fraction < 0.5)) throw ConfigError("sync fraction must lie in (0, 0.5)");
  for (const LooperBounds* b : {&looper1, &looper2}) {
    if (!(b->lower >= 0.0 && b->lower < b->upper)) throw ConfigError("looper bounds need 0 <= lower < upper");
  }
  if (!(looper2.span() < looper1.span())) {
    throw ConfigError("the second looper must hold less than the first");
  }
  if (strips_per_episode == 0) throw ConfigError("strips per episode must be positive");
}

SpeedLimits LineState::stu_limits() const {
  SpeedLimits l{0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t i : strips_in_stu) {
    l.v_max = std::min(l.v_max, context->limits[i].v_max);
    l.v_min = std::max(l.v_min, context->limits[i].v_min);
  }
  l.v_min = std::min(l.v_min, l.v_max);
  return l;
}

StageCombination stage_combination(const LineState& s) { return {s.ftu.stage, s.ttu.stage}; }

double predicted_time_left(const UnitState& u) {
  if (u.stage != Stage::stopped) return 0.0;
  return std::max(0.0, u.predicted_total - u.elapsed);
}

double cycle_time(double residual, double speed, double stop_time) {
  if (speed <= 0.0) return std::numeric_limits<double>::infinity();
  return 60.0 * residual / speed + stop_time;
}

CycleTimes cycle_times(const LineState& s) {
  CycleTimes c;
  c.ftu = s.ftu.stage == Stage::stopped ? predicted_time_left(s.ftu)
                                        : cycle_time(s.ftu.residual, s.ftu.speed, s.context->nominal_weld);
  c.ttu = s.ttu.stage == Stage::stopped ? predicted_time_left(s.ttu)
                                        : cycle_time(s.ttu.residual, s.ttu.speed, s.context->nominal_cut);
  return c;
}

LooperForecast forecast_loopers(const LineState& s, double stu_speed, std::size_t horizon, double safety_factor) {
  const EpisodeContext& ctx = *s.context;
  const PlantConfig& p = ctx.plant;
  const UnitLimits lf = ftu_limits(p), lt = ttu_limits(p);
  UnitState f = s.ftu, t = s.ttu;
  for (UnitState* u : {&f, &t}) {
    if (u->stage == Stage::stopped) u->timer = std::max(0.0, u->predicted_total * safety_factor - u->elapsed);
  }
  double v1 = s.looper1, v2 = s.looper2;
  if (horizon == 0) return {v1, v2};
  LooperForecast out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  const double weld = ctx.nominal_weld * safety_factor;
  const double cut = ctx.nominal_cut * safety_factor;
  for (std::size_t k = 0; k < horizon; ++k) {
    move(f, lf, stu_speed, ftu_sync_zone(f.stage, v1, p));
    move(t, lt, stu_speed, ttu_sync_zone(t.stage, v2, p));
    v1 += (f.speed - stu_speed) / 60.0;
    v2 += (stu_speed - t.speed) / 60.0;
    out.min_looper1 = std::min(out.min_looper1, v1);
    out.max_looper2 = std::max(out.max_looper2, v2);
    transition(f, lf, ftu_sync_zone(f.stage, v1, p), stu_speed, next_length(ctx, f.strip, true), weld);
    transition(t, lt, ttu_sync_zone(t.stage, v2, p), stu_speed, next_length(ctx, t.strip, true), cut);
  }
  return out;
}

Environment::Environment(PlantConfig plant, SpeedTable table) : plant_(std::move(plant)), table_(std::move(table)) {
  plant_.validate();
}

const LineState& Environment::reset(std::span<const Strip> queue, const GradeVocabulary& vocab,
                                    const DisturbanceModel& disturbance, const InitialConditions& ic) {
  disturbance.validate();
  if (queue.size() != plant_.strips_per_episode) {
    throw InputError("strip queue holds " + std::to_string(queue.size()) + " strips, expected " +
                     std::to_string(plant_.strips_per_episode));
  }
  auto ctx = std::make_shared<EpisodeContext>();
  ctx->plant = plant_;
  ctx->nominal_weld = disturbance.weld.mean;
  ctx->nominal_cut = disturbance.cut.mean;
  ctx->strip_starts.push_back(0.0);
  for (const Strip& s : queue) {
    if (!(s.length > 0.0) || !std::isfinite(s.length)) throw InputError("strip length must be positive");
    ctx->strip_starts.push_back(ctx->strip_starts.back() + s.length);
    ctx->limits.push_back(table_.speed_cap(s, vocab));
  }
  const std::size_t n = queue.size();

  Rng times = make_rng(disturbance.seed, Stream::disturbance);
  Rng noise = make_rng(disturbance.seed, Stream::noise);
  std::normal_distribution<double> err(0.0, 1.0);
  auto predict = [&](double truth) { return std::max(0.0, truth + disturbance.prediction_sd * err(noise)); };
  weld_true_.assign(n, 0.0);
  cut_true_.assign(n, 0.0);
  weld_pred_.assign(n, 0.0);
  cut_pred_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    weld_true_[i] = disturbance.weld.sample(times);
    cut_true_[i] = disturbance.cut.sample(times);
  }
  for (std::size_t i = 0; i < n; ++i) {
    weld_pred_[i] = predict(weld_true_[i]);
    cut_pred_[i] = predict(cut_true_[i]);
  }

  const PlantConfig& p = plant_;
  auto within = [](double v, const LooperBounds& b) { return std::isfinite(v) && v >= b.lower && v <= b.upper; };
  if (!within(ic.looper1, p.looper1) || !within(ic.looper2, p.looper2)) {
    throw ConfigError("initial looper volumes outside their bounds");
  }
  auto speed_ok = [](double v, double max) { return std::isfinite(v) && v >= 0.0 && v <= max; };
  if (!speed_ok(ic.ftu_speed, p.ftu_max_speed) || !speed_ok(ic.ttu_speed, p.ttu_max_speed) ||
      !(std::isfinite(ic.stu_speed) && ic.stu_speed > 0.0)) {
    throw ConfigError("initial unit speeds out of range");
  }
  if (!(ic.ttu_position >= 0.0) || !(ic.ftu_stop_remaining >= 0.0) || !(ic.ttu_stop_remaining >= 0.0)) {
    throw ConfigError("initial position and stop times must be non-negative");
  }

  LineState s;
  s.context = ctx;
  s.looper1 = ic.looper1;
  s.looper2 = ic.looper2;
  s.stu_speed = ic.stu_speed;
  s.ttu_position = ic.ttu_position;
  s.ftu_position = ic.ttu_position + ic.looper2 + p.stu_length + ic.looper1;
  if (s.ftu_position > ctx->strip_starts.back() + kSeamTolerance) {
    throw ConfigError("initial line contents exceed the strip queue");
  }

  std::size_t horizon = 0;
  if (ic.ftu_stop_remaining > 0.0) {
    const std::size_t k = seam_at(*ctx, s.ftu_position, "weld");
    weld_true_[k] = ic.ftu_stop_remaining;
    weld_pred_[k] = predict(ic.ftu_stop_remaining);
    s.ftu = {0.0, Stage::stopped, 0.0, ic.ftu_stop_remaining, 0.0, weld_pred_[k], k};
    horizon += steps_for(ic.ftu_stop_remaining);
  } else {
    const std::size_t k = strip_at(*ctx, s.ftu_position);
    s.ftu = {ic.ftu_speed, Stage::boost, ctx->strip_starts[k + 1] - s.ftu_position, 0.0, 0.0, 0.0, k};
    classify(s.ftu, ftu_limits(p), ftu_sync_zone(Stage::boost, s.looper1, p), s.stu_speed);
    horizon += steps_for(s.ftu.residual * 60.0 / p.ftu_max_speed) + steps_for(weld_true_[k]);
  }
  for (std::size_t i = s.ftu.strip + 1; i < n; ++i) {
    horizon += steps_for(ctx->strip_length(i) * 60.0 / p.ftu_max_speed) + steps_for(weld_true_[i]);
  }
  s.horizon = horizon;

  if (ic.ttu_stop_remaining > 0.0) {
    const std::size_t j = seam_at(*ctx, s.ttu_position, "cut");
    cut_true_[j] = ic.ttu_stop_remaining;
    cut_pred_[j] = predict(ic.ttu_stop_remaining);
    s.ttu = {0.0, Stage::stopped, 0.0, ic.ttu_stop_remaining, 0.0, cut_pred_[j], j};
  } else {
    const std::size_t j = strip_at(*ctx, s.ttu_position);
    s.ttu = {ic.ttu_speed, Stage::boost, ctx->strip_starts[j + 1] - s.ttu_position, 0.0, 0.0, 0.0, j};
    classify(s.ttu, ttu_limits(p), ttu_sync_zone(Stage::boost, s.looper2, p), s.stu_speed);
  }

  update_membership(s);
  const SpeedLimits lim = s.stu_limits();
  if (s.stu_speed > lim.v_max + kEps || s.stu_speed < lim.v_min - kEps) {
    throw ConfigError("initial STU speed outside the speed-table range of the strips in the STU");
  }
  s.t_w_pred = predicted_time_left(s.ftu);
  s.t_c_pred = predicted_time_left(s.ttu);
  state_ = std::move(s);
  return state_;
}

StepEvents Environment::step(double command) {
  LineState& s = state_;
  if (!s.context) throw ProtocolError("step before reset");
  if (s.terminal) throw ProtocolError("step on a terminal state");
  if (!std::isfinite(command) || command < 0.0) throw InputError("STU command must be finite and >= 0");
  const PlantConfig& p = plant_;
  StepEvents ev;
  ev.command = command;
  ev.combination = stage_combination(s);
  ev.limits = s.stu_limits();

  const double prev = s.stu_speed;
  double v = std::clamp(command, prev - p.ramp, prev + p.ramp);
  ev.ramp_limited = v != command;
  if (v > ev.limits.v_max) {
    v = ev.limits.v_max;
    ev.capped = true;
  }
  if (v < ev.limits.v_min) {
    v = ev.limits.v_min;
    ev.floored = true;
  }
  const LooperForecast f = forecast_loopers(s, v, p.braking_horizon, 1.0);
  if (f.min_looper1 < p.looper1.lower || f.max_looper2 > p.looper2.upper) {
    const double brake = std::max(ev.limits.v_min, prev - p.ramp);
    if (brake < v) {
      v = brake;
      ev.braked = true;
    }
  }
  s.stu_speed = v;

  const UnitLimits lf = ftu_limits(p), lt = ttu_limits(p);
  s.ftu_position += move(s.ftu, lf, v, ftu_sync_zone(s.ftu.stage, s.looper1, p));
  s.ttu_position += move(s.ttu, lt, v, ttu_sync_zone(s.ttu.stage, s.looper2, p));
  ev.ftu_speed = s.ftu.speed;
  ev.stu_speed = v;
  ev.ttu_speed = s.ttu.speed;
  s.looper1 += (ev.ftu_speed - v) / 60.0;
  s.looper2 += (v - ev.ttu_speed) / 60.0;
  s.time += 1.0;
  s.steps += 1;

  if (s.looper1 < p.looper1.lower || s.looper2 > p.looper2.upper) {
    s.terminal = true;
    s.cause = TerminalCause::death;
  } else if (s.steps >= s.horizon) {
    s.terminal = true;
    s.cause = TerminalCause::complete;
  } else {
    const EpisodeContext& ctx = *s.context;
    const std::size_t fi = s.ftu.strip, ti = s.ttu.strip;
    switch (transition(s.ftu, lf, ftu_sync_zone(s.ftu.stage, s.looper1, p), v, next_length(ctx, fi, false),
                       weld_true_[fi])) {
      case UnitEvent::stop_started:
        s.ftu.predicted_total = weld_pred_[fi];
        ev.weld_started = true;
        break;
      case UnitEvent::stop_finished: ev.weld_finished = true; break;
      case UnitEvent::none: break;
    }
    switch (transition(s.ttu, lt, ttu_sync_zone(s.ttu.stage, s.looper2, p), v, next_length(ctx, ti, false),
                       cut_true_[ti])) {
      case UnitEvent::stop_started:
        s.ttu.predicted_total = cut_pred_[ti];
        ev.cut_started = true;
        break;
      case UnitEvent::stop_finished: ev.cut_finished = true; break;
      case UnitEvent::none: break;
    }
  }
  ev.cause = s.cause;
  update_membership(s);
  s.t_w_pred = predicted_time_left(s.ftu);
  s.t_c_pred = predicted_time_left(s.ttu);
  return ev;
}

void write_state(std::ostream& out, const LineState& s) {
  using text::format_double;
  auto unit = [&](const char* name, const UnitState& u) {
    out << name << ' ' << format_double(u.speed) << ' ' << static_cast<int>(u.stage) << ' '
        << format_double(u.residual) << ' ' << format_double(u.timer) << ' ' << format_double(u.elapsed) << ' '
        << format_double(u.predicted_total) << ' ' << u.strip << '\n';
  };
  out << "time " << format_double(s.time) << " steps " << s.steps << " horizon " << s.horizon << '\n';
  unit("ftu", s.ftu);
  unit("ttu", s.ttu);
  out << "stu " << format_double(s.stu_speed) << '\n'
      << "loopers " << format_double(s.looper1) << ' ' << format_double(s.looper2) << '\n'
      << "positions " << format_double(s.ftu_position) << ' ' << format_double(s.ttu_position) << '\n'
      << "stu_strips";
  for (std::size_t i : s.strips_in_stu) out << ' ' << i;
  out << "\npredictions " << format_double(s.t_w_pred) << ' ' << format_double(s.t_c_pred) << '\n'
      << "terminal " << s.terminal << ' ' << to_string(s.cause) << '\n';
}

}  // namespace pickling::env
