#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "line_fixtures.hpp"
#include "pickling/errors.hpp"

using namespace fixtures;

namespace {

std::string dump(const LineState& s) {
  std::ostringstream out;
  write_state(out, s);
  return out.str();
}

struct RandomEpisode {
  Dataset ds = synthetic_history(400, 31);
  Environment env{PlantConfig{}, SpeedTable::synthetic_default()};
  DisturbanceModel dist;

  std::span<const Strip> queue(std::size_t k) const { return std::span(ds.strips).subspan(20 * k, 20); }

  void reset(std::size_t k, Rng& rng) {
    dist.seed = 500 + k;
    const auto ic = sample_initial_conditions(env, queue(k), ds.vocabulary, dist, rng,
                                              [](const LineState&) { return true; });
    env.reset(queue(k), ds.vocabulary, dist, ic);
  }
};

}  // namespace

TEST_CASE("stage combination codes") {
  CHECK(StageCombination{Stage::boost, Stage::stopped}.code() == "03");
  CHECK(StageCombination{Stage::stopped, Stage::stopped}.code() == "33");
  std::set<std::string> codes;
  for (std::size_t k = 0; k < kCombinationCount; ++k) {
    const StageCombination c = StageCombination::from_index(k);
    CHECK(c.index() == k);
    CHECK(StageCombination::from_code(c.code()) == c);
    codes.insert(c.code());
  }
  CHECK(codes.size() == 16);
  CHECK_THROWS_AS(StageCombination::from_code("40"), InputError);
  CHECK_THROWS_AS(StageCombination::from_index(16), InputError);
}

TEST_CASE("plant configuration validation") {
  PlantConfig p;
  CHECK_NOTHROW(p.validate());
  p.looper2 = {10.0, 500.0};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = PlantConfig{};
  p.looper1 = {50.0, 40.0};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = PlantConfig{};
  CHECK(p.looper1_sync_level() == doctest::Approx(362.0));
  CHECK(p.looper2_sync_level() == doctest::Approx(29.0));
  CHECK(p.looper1.lower < p.looper1_sync_level());
  CHECK(p.looper2_sync_level() < p.looper2.upper);
}

TEST_CASE("reset echoes a midpoint IC and is deterministic") {
  const PlantConfig p;
  Environment env(p, SpeedTable::synthetic_default());
  const auto q = uniform_queue(20, 700.0);
  const InitialConditions ic = mid_ic(p);
  const DisturbanceModel d;
  const LineState& s = env.reset(q, plain_vocabulary(), d, ic);
  CHECK(s.looper1 == ic.looper1);
  CHECK(s.looper2 == ic.looper2);
  CHECK(s.ftu.speed == ic.ftu_speed);
  CHECK(s.stu_speed == ic.stu_speed);
  CHECK(s.ttu.speed == ic.ttu_speed);
  CHECK(s.ttu_position == ic.ttu_position);
  CHECK(s.ftu.stage == Stage::boost);
  CHECK(s.ttu.stage == Stage::boost);
  CHECK(s.ttu.residual == doctest::Approx(690.0));
  CHECK(s.ftu_position == doctest::Approx(10.0 + 105.0 + 300.0 + 210.0));
  CHECK_FALSE(s.strips_in_stu.empty());
  const std::string first = dump(s);
  const auto welds = env.true_weld_times();
  Environment other(p, SpeedTable::synthetic_default());
  CHECK(dump(other.reset(q, plain_vocabulary(), d, ic)) == first);
  CHECK(other.true_weld_times() == welds);
  CHECK(other.predicted_cut_times() == env.predicted_cut_times());
}

TEST_CASE("reset rejects malformed input") {
  const PlantConfig p;
  Environment env(p, SpeedTable::synthetic_default());
  const auto q = uniform_queue(20, 700.0);
  const DisturbanceModel d;
  CHECK_THROWS_AS(env.reset(uniform_queue(19, 700.0), plain_vocabulary(), d, mid_ic(p)), InputError);
  InitialConditions ic = mid_ic(p);
  ic.looper1 = 401.0;
  CHECK_THROWS_AS(env.reset(q, plain_vocabulary(), d, ic), ConfigError);
  ic = mid_ic(p);
  ic.looper2 = 5.0;
  CHECK_THROWS_AS(env.reset(q, plain_vocabulary(), d, ic), ConfigError);
  ic = mid_ic(p, 230.0);
  CHECK_THROWS_AS(env.reset(q, plain_vocabulary(), d, ic), ConfigError);
  ic = mid_ic(p);
  ic.ftu_stop_remaining = 30.0;
  CHECK_THROWS_AS(env.reset(q, plain_vocabulary(), d, ic), ConfigError);
  CHECK_THROWS_AS(env.step(50.0), ProtocolError);
}

TEST_CASE("pre-sampled weld and cut times") {
  const PlantConfig p;
  Environment env(p, SpeedTable::synthetic_default());
  const auto q = uniform_queue(20, 700.0);
  DisturbanceModel d;
  double weld = 0.0, cut = 0.0, abs_err = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    d.seed = seed;
    env.reset(q, plain_vocabulary(), d, mid_ic(p));
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(env.true_weld_times()[i] >= 120.0);
      CHECK(env.true_cut_times()[i] >= 30.0);
      weld += env.true_weld_times()[i];
      cut += env.true_cut_times()[i];
      abs_err += std::abs(env.predicted_weld_times()[i] - env.true_weld_times()[i]);
      ++n;
    }
  }
  CHECK(n == 10000);
  CHECK(std::abs(weld / n / 180.0 - 1.0) < 0.02);
  CHECK(std::abs(cut / n / 60.0 - 1.0) < 0.02);
  const double folded = 10.0 * std::sqrt(2.0 / std::numbers::pi);
  const double mean_err = abs_err / 1000.0 / 10.0;
  CHECK(std::abs(mean_err / folded - 1.0) < 0.1);
}

TEST_CASE("balanced flow keeps both loopers constant") {
  PlantConfig p;
  p.ftu_max_speed = p.ttu_max_speed = 100.0;
  Environment env(p, SpeedTable::synthetic_default());
  InitialConditions ic = mid_ic(p);
  ic.ftu_speed = ic.ttu_speed = 100.0;
  env.reset(uniform_queue(20, 1500.0), plain_vocabulary(), exact_disturbance(), ic);
  // 480 s moves 800 m, short of the FTU slowdown point.
  for (int t = 0; t < 480; ++t) {
    const StepEvents ev = env.step(100.0);
    REQUIRE(ev.ftu_speed == 100.0);
    REQUIRE(ev.ttu_speed == 100.0);
  }
  CHECK(env.state().looper1 == ic.looper1);
  CHECK(env.state().looper2 == ic.looper2);
}

TEST_CASE("linear drain during a weld ends in death exactly past the bound") {
  PlantConfig p;
  p.braking_horizon = 0;
  Environment env(p, SpeedTable::synthetic_default());
  const auto q = uniform_queue(20, 700.0);
  env.reset(q, plain_vocabulary(), exact_disturbance(), welding_ic(p, q, 1, p.looper1.lower + 1.0, 60.0, 100.0));
  CHECK(env.state().ftu.stage == Stage::stopped);
  StepEvents ev = env.step(60.0);
  CHECK(env.state().looper1 == doctest::Approx(p.looper1.lower));
  CHECK(ev.cause == TerminalCause::none);
  ev = env.step(60.0);
  CHECK(ev.cause == TerminalCause::death);
  CHECK(env.state().looper1 == doctest::Approx(p.looper1.lower - 1.0));
  CHECK(env.state().steps == 2);
  CHECK_THROWS_AS(env.step(60.0), ProtocolError);

  env.reset(q, plain_vocabulary(), exact_disturbance(), welding_ic(p, q, 1, p.looper1.lower + 0.5, 60.0, 100.0));
  CHECK(env.step(60.0).cause == TerminalCause::death);
  CHECK(env.state().steps == 1);
}

TEST_CASE("emergency braking ramps the STU down on a projected violation") {
  const PlantConfig p;
  Environment env(p, SpeedTable::synthetic_default());
  const auto q = uniform_queue(20, 700.0);
  env.reset(q, plain_vocabulary(), exact_disturbance(), welding_ic(p, q, 1, 60.0, 150.0, 170.0));
  double prev = 150.0;
  int braked = 0;
  for (int t = 0; t < 12 && !env.state().terminal; ++t) {
    const StepEvents ev = env.step(200.0);
    if (ev.braked) {
      ++braked;
      CHECK(ev.stu_speed == std::max(ev.limits.v_min, prev - p.ramp));
    }
    prev = ev.stu_speed;
  }
  CHECK(braked > 0);
  CHECK(prev == 30.0);
  CHECK(env.state().cause != TerminalCause::death);
}

TEST_CASE("random-command rollouts: conservation, clamps, stage invariants") {
  RandomEpisode r;
  Rng rng(3);
  const PlantConfig& p = r.env.plant();
  std::uniform_real_distribution<double> cmd(0.0, 260.0);
  std::size_t steps = 0, violations = 0;
  for (std::size_t k = 0; k < 10; ++k) {
    r.reset(k, rng);
    double v1 = r.env.state().looper1, v2 = r.env.state().looper2;
    double acc1 = 0.0, acc2 = 0.0;
    double prev_stu = r.env.state().stu_speed;
    for (int t = 0; t < 500 && !r.env.state().terminal; ++t, ++steps) {
      const StepEvents ev = r.env.step(cmd(rng));
      const LineState& s = r.env.state();
      acc1 += (ev.ftu_speed - ev.stu_speed) / 60.0;
      acc2 += (ev.stu_speed - ev.ttu_speed) / 60.0;
      if (std::abs(s.looper1 - (v1 + acc1)) > 1e-9 || std::abs(s.looper2 - (v2 + acc2)) > 1e-9) ++violations;
      CHECK(ev.stu_speed <= ev.limits.v_max);
      CHECK(ev.stu_speed >= ev.limits.v_min);
      CHECK(ev.stu_speed > 0.0);
      CHECK(std::abs(ev.stu_speed - prev_stu) <= p.ramp + 1e-12);
      prev_stu = ev.stu_speed;
      const bool death = s.looper1 < p.looper1.lower || s.looper2 > p.looper2.upper;
      CHECK(death == (s.cause == TerminalCause::death));
      CHECK_FALSE(s.strips_in_stu.empty());
      if (s.terminal) break;
      for (const UnitState* u : {&s.ftu, &s.ttu}) {
        CHECK(u->speed >= 0.0);
        CHECK(u->residual >= 0.0);
        CHECK((u->stage == Stage::stopped) == (u->timer > 0.0));
        if (u->stage == Stage::stopped) CHECK(u->speed == 0.0);
      }
      if (s.looper1 >= p.looper1_sync_level() && s.ftu.stage != Stage::stopped) {
        CHECK((s.ftu.stage == Stage::sync || s.ftu.stage == Stage::slowdown));
        if (s.ftu.stage == Stage::sync) CHECK(s.ftu.speed == s.stu_speed);
        CHECK(s.ftu.speed <= s.stu_speed);
      }
      if (s.looper2 <= p.looper2_sync_level() && s.ttu.stage != Stage::stopped) {
        CHECK((s.ttu.stage == Stage::sync || s.ttu.stage == Stage::slowdown));
        if (s.ttu.stage == Stage::sync) CHECK(s.ttu.speed == s.stu_speed);
        CHECK(s.ttu.speed <= s.stu_speed);
      }
    }
  }
  CHECK(steps > 1000);
  CHECK(violations == 0);
}

TEST_CASE("strips_in_stu matches an independent interval oracle") {
  RandomEpisode r;
  Rng rng(4);
  r.reset(0, rng);
  const auto q = r.queue(0);
  for (int t = 0; t < 800 && !r.env.state().terminal; ++t) {
    r.env.step(90.0);
    const LineState& s = r.env.state();
    const double lo = s.ttu_position + s.looper2, hi = lo + 300.0;
    std::vector<std::size_t> expect;
    double start = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (start < hi && start + q[i].length > lo) expect.push_back(i);
      start += q[i].length;
    }
    CHECK(s.strips_in_stu == expect);
    SpeedLimits cap{0.0, 1e9};
    for (std::size_t i : expect) {
      const SpeedLimits l = r.env.speed_table().speed_cap(q[i], r.ds.vocabulary);
      cap.v_max = std::min(cap.v_max, l.v_max);
      cap.v_min = std::max(cap.v_min, l.v_min);
    }
    CHECK(s.stu_limits().v_max == cap.v_max);
  }
}

TEST_CASE("identical inputs give identical trajectories") {
  RandomEpisode a, b;
  Rng ra(5), rb(5);
  a.reset(1, ra);
  b.reset(1, rb);
  Rng ca(6), cb(6);
  std::uniform_real_distribution<double> cmd(20.0, 200.0);
  for (int t = 0; t < 400 && !a.env.state().terminal; ++t) {
    a.env.step(cmd(ca));
    b.env.step(cmd(cb));
    REQUIRE(dump(a.env.state()) == dump(b.env.state()));
  }
}

TEST_CASE("cycle times follow t = L / v + t_stop") {
  CHECK(cycle_time(600.0, 120.0, 120.0) == doctest::Approx(420.0));
  CHECK(cycle_time(600.0, 120.0, 0.0) == doctest::Approx(300.0));
  CHECK(std::isinf(cycle_time(600.0, 0.0, 10.0)));
  Rng rng(7);
  std::uniform_real_distribution<double> len(0.0, 2000.0), v(1.0, 250.0), t(0.0, 300.0);
  for (int i = 0; i < 1000; ++i) {
    const double l = len(rng), s = v(rng), w = t(rng);
    CHECK(std::abs(cycle_time(l, s, w) - (l / (s / 60.0) + w)) < 1e-9);
  }
  const PlantConfig p;
  Environment env(p, SpeedTable::synthetic_default());
  env.reset(uniform_queue(20, 700.0), plain_vocabulary(), DisturbanceModel{}, mid_ic(p));
  const CycleTimes c = cycle_times(env.state());
  CHECK(c.ftu == doctest::Approx(60.0 * env.state().ftu.residual / 120.0 + 180.0));
  CHECK(c.ttu == doctest::Approx(60.0 * 690.0 / 110.0 + 60.0));
}

TEST_CASE("predicted time left") {
  UnitState u;
  u.stage = Stage::stopped;
  u.timer = 5.0;
  u.predicted_total = 100.0;
  u.elapsed = 40.0;
  CHECK(predicted_time_left(u) == 60.0);
  u.elapsed = 120.0;
  CHECK(predicted_time_left(u) == 0.0);
  u.stage = Stage::boost;
  CHECK(predicted_time_left(u) == 0.0);

  // Noiseless predictions track the true remaining time.
  RandomEpisode r;
  r.dist.prediction_sd = 0.0;
  Rng rng(8);
  r.reset(2, rng);
  std::size_t stopped = 0;
  for (int t = 0; t < 3000 && !r.env.state().terminal; ++t) {
    r.env.step(80.0);
    const LineState& s = r.env.state();
    if (s.ftu.stage == Stage::stopped) {
      ++stopped;
      CHECK(std::abs(s.t_w_pred - s.ftu.timer) < 1e-9);
    } else {
      CHECK(s.t_w_pred == 0.0);
    }
    if (s.ttu.stage == Stage::stopped) CHECK(std::abs(s.t_c_pred - s.ttu.timer) < 1e-9);
  }
  CHECK(stopped > 0);
}

TEST_CASE("scenario files round trip byte for byte") {
  Scenario s;
  s.id = "g0001";
  s.source = "generated";
  s.disturbance_seed = 18446744073709551557ULL;
  s.vocabulary = plain_vocabulary();
  s.strips = uniform_queue(20, 712.3456789);
  s.strips[3].grade = 1;
  s.ic = mid_ic(PlantConfig{}, 97.125);
  const std::string text = scenario_to_json(s);
  const Scenario back = scenario_from_json(text);
  CHECK(back == s);
  CHECK(scenario_to_json(back) == text);
  CHECK(scenario_hash(back) == scenario_hash(s));
  s.ic.looper1 += 1e-9;
  CHECK(scenario_hash(back) != scenario_hash(s));
  CHECK_THROWS_AS(scenario_from_json("{\"format\":\"other\"}"), IoError);
  CHECK_THROWS_AS(scenario_from_json("not json"), IoError);
  CHECK(hash_hex(0xabcULL) == "0000000000000abc");
}
