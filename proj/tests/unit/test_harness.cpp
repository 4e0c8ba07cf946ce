#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

using namespace pickling;
using namespace pickling::harness;

namespace {

HarnessConfig small_config() {
  HarnessConfig c = HarnessConfig::desk();
  c.grades.hidden_units = 8;
  c.grades.epochs = 3;
  c.cgan.noise_length = 4;
  c.cgan.window_length = 4;
  c.cgan.hidden = {8};
  c.cgan.epochs = 20;
  c.cgan.batch_size = 16;
  c.cgan.window_stride = 4;
  return c;
}

struct Models {
  Dataset history;
  grades::GradeModel grades;
  cgan::CganModel cgan;
};

const Models& models() {
  static const Models m = [] {
    const HarnessConfig c = small_config();
    Dataset ds = synthetic_history(300, 5);
    Rng r1(11), r2(12);
    auto g = grades::train_grade_model(grades::build_training_sequences(ds.strips, ds.vocabulary), ds.vocabulary,
                                       c.grades, r1);
    auto cg = cgan::train_strip_cgan(ds, c.cgan, r2);
    return Models{std::move(ds), std::move(g), std::move(cg)};
  }();
  return m;
}

ScenarioModels scenario_models() { return {&models().history, &models().grades, &models().cgan}; }

std::vector<env::Scenario> historical(std::size_t n, std::uint64_t seed, const HarnessConfig& c = small_config()) {
  return precompute_scenarios(n, ScenarioSource::historical, scenario_models(), c, seed, 1);
}

std::string bank_bytes(const rl::QNetworkBank& b) {
  std::ostringstream out;
  rl::save_bank(out, b);
  return out.str();
}

EpisodeLog synthetic_log(std::string hash, const std::vector<std::pair<std::string, std::vector<double>>>& speeds,
                         bool death = false) {
  EpisodeLog l;
  l.scenario_hash = std::move(hash);
  l.cause = death ? env::TerminalCause::death : env::TerminalCause::complete;
  for (const auto& [code, vs] : speeds) {
    const std::size_t k = env::StageCombination::from_code(code).index();
    for (double v : vs) {
      l.combination_speed_sum[k] += v;
      ++l.combination_steps[k];
      l.sum_speed += v;
      ++l.steps;
    }
  }
  l.mean_speed = l.sum_speed / static_cast<double>(l.steps);
  if (death) l.death_combination = env::StageCombination::from_code(speeds.back().first);
  return l;
}

std::size_t csv_columns(const std::string& line) {
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST_CASE("config text round trip and rejections") {
  HarnessConfig c = HarnessConfig::desk();
  c.seed = 42;
  c.plant.strips_per_episode = 7;
  c.p_coop.gamma = 0.9;
  c.f_coop.reward.proximity_weight = 2.5;
  c.disturbance.prediction_sd = 4.0;
  std::istringstream in(to_text(c));
  const auto kv = text::parse_key_values(in);
  const HarnessConfig back = apply_config(HarnessConfig::paper(), kv);
  CHECK(to_text(back) == to_text(c));
  CHECK(back.p_coop == c.p_coop);
  CHECK(back.f_coop == c.f_coop);

  const std::vector<std::pair<std::string, std::string>> bad{{"plant.no_such_key", "1"}};
  CHECK_THROWS_AS(apply_config(HarnessConfig::desk(), bad), ConfigError);
  const std::vector<std::pair<std::string, std::string>> bad_value{{"schedule.phase1_episodes", "many"}};
  CHECK_THROWS_AS(apply_config(HarnessConfig::desk(), bad_value), ConfigError);
  const std::vector<std::pair<std::string, std::string>> profile{{"profile", "paper"}};
  CHECK(apply_config(HarnessConfig::desk(), profile).phase1_episodes == 800);
}

TEST_CASE("looper bounds propagate into the state ranges") {
  const std::vector<std::pair<std::string, std::string>> kv{{"plant.looper1.upper", "500"}};
  const HarnessConfig c = apply_config(HarnessConfig::desk(), kv);
  CHECK(c.p_coop.ranges[static_cast<std::size_t>(rl::StateField::looper1)].hi == 500.0);
  CHECK(c.f_coop.ranges[static_cast<std::size_t>(rl::StateField::looper1)].hi == 500.0);
}

TEST_CASE("epsilon schedule") {
  HarnessConfig c = HarnessConfig::desk();
  CHECK(epsilon_at(c, 0) == doctest::Approx(0.9));
  CHECK(epsilon_at(c, c.phase1_episodes - 1) == doctest::Approx(0.05));
  CHECK(epsilon_at(c, c.phase1_episodes) == 0.0);
  CHECK(epsilon_at(c, c.phase1_episodes + 10) == 0.0);
}

TEST_CASE("scenario sets are deterministic and byte identical on disk") {
  const auto a = historical(4, 9);
  const auto b = historical(4, 9);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(env::scenario_to_json(a[i]) == env::scenario_to_json(b[i]));
  CHECK(env::scenario_to_json(historical(1, 10)[0]) != env::scenario_to_json(a[0]));

  const auto dir = std::filesystem::temp_directory_path() / "pickling_test_scenarios";
  std::filesystem::remove_all(dir);
  write_scenario_set(dir, a);
  const auto back = read_scenario_set(dir);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(back[i] == a[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("historical queues are contiguous windows of the dataset") {
  Dataset small = models().history;
  small.strips.resize(40);
  const ScenarioModels m{&small, nullptr, nullptr};
  const auto set = precompute_scenarios(30, ScenarioSource::historical, m, small_config(), 3, 0);
  for (const env::Scenario& s : set) {
    REQUIRE(s.strips.size() == 20);
    const auto it = std::search(small.strips.begin(), small.strips.end(), s.strips.begin(), s.strips.end());
    CHECK(it != small.strips.end());
    CHECK(s.source == "historical");
  }
  HarnessConfig too_long = small_config();
  too_long.plant.strips_per_episode = 41;
  CHECK_THROWS_AS(precompute_scenarios(1, ScenarioSource::historical, m, too_long, 3, 0), InputError);
  CHECK_THROWS_AS(precompute_scenarios(1, ScenarioSource::historical, {}, small_config(), 3, 0), InputError);
  CHECK_THROWS_AS(precompute_scenarios(1, ScenarioSource::generated, m, small_config(), 3, 0), InputError);
}

TEST_CASE("generated scenarios hold only valid strips") {
  const auto set = precompute_scenarios(5, ScenarioSource::generated, scenario_models(), small_config(), 4, 0);
  for (const env::Scenario& s : set) {
    CHECK(s.strips.size() == 20);
    CHECK(s.source == "generated");
    for (const Strip& strip : s.strips) CHECK_FALSE(validate_strip(strip, s.vocabulary).has_value());
  }
}

TEST_CASE("C agent without prediction error completes") {
  HarnessConfig c = small_config();
  c.disturbance.prediction_sd = 0.0;
  for (const env::Scenario& s : historical(10, 21, c)) {
    const EpisodeLog log = run_episode(s, c, {});
    CHECK(env::to_string(log.cause) == "complete");
    CHECK(log.clamp_violations == 0);
  }
}

TEST_CASE("episode logs are consistent and reproducible") {
  const HarnessConfig c = small_config();
  const env::Scenario s = historical(1, 22)[0];
  const rl::QNetworkBank bank = initial_bank(c, rl::Variant::p_coop, 3);
  EpisodeOptions o;
  o.agent = AgentKind::p_coop;
  o.bank = &bank;
  o.keep_rows = true;
  const EpisodeLog a = run_episode(s, c, o);
  const EpisodeLog b = run_episode(s, c, o);
  REQUIRE(a.rows.size() == a.steps);
  CHECK(a.rows == b.rows);

  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    sum += a.rows[i].stu_speed;
    CHECK(a.rows[i].time == doctest::Approx(static_cast<double>(i)));
  }
  CHECK(sum == doctest::Approx(a.sum_speed).epsilon(1e-12));
  CHECK(a.mean_speed == a.sum_speed / static_cast<double>(a.steps));

  std::stringstream csv;
  write_episode_csv(csv, a);
  CHECK(read_episode_csv(csv) == a.rows);
  CHECK(episode_summary_json(a).find("\"terminal_cause\"") != std::string::npos);

  o.agent = AgentKind::f_coop;
  CHECK_THROWS_AS(run_episode(s, c, o), InputError);
  o.bank = nullptr;
  CHECK_THROWS_AS(run_episode(s, c, o), InputError);
}

TEST_CASE("P-Coop follows the per-stage baseline in stop combinations") {
  const HarnessConfig c = small_config();
  const rl::QNetworkBank bank = initial_bank(c, rl::Variant::p_coop, 8);
  for (const env::Scenario& s : historical(3, 23)) {
    EpisodeOptions o;
    o.agent = AgentKind::p_coop;
    o.bank = &bank;
    o.epsilon = 0.5;
    o.seed = 4;
    o.keep_rows = true;
    const EpisodeLog p = run_episode(s, c, o);
    o.agent = AgentKind::c_per_stage;
    o.bank = nullptr;
    const EpisodeLog base = run_episode(s, c, o);
    CHECK(p.restriction_violations == 0);
    // Identical until the first acting instant outside a stop.
    for (std::size_t i = 0; i < std::min(p.rows.size(), base.rows.size()); ++i) {
      if (p.rows[i].rl_delta != 0.0) break;
      CHECK(p.rows[i].stu_speed == base.rows[i].stu_speed);
    }
  }
}

TEST_CASE("an empty schedule returns the untrained bank") {
  HarnessConfig c = small_config();
  c.phase1_episodes = 0;
  c.phase2_episodes = 0;
  c.report_window = 0;
  const TrainResult r = train(c, rl::Variant::p_coop, {}, {}, 5);
  CHECK(r.curves.empty());
  CHECK_FALSE(r.aborted);
  CHECK(bank_bytes(r.bank) == bank_bytes(initial_bank(c, rl::Variant::p_coop, 5)));

  c.phase1_episodes = 3;
  CHECK_THROWS_AS(train(c, rl::Variant::p_coop, {}, {}, 5), InputError);
}

TEST_CASE("micro schedule improves P-Coop on short deterministic scenarios") {
  HarnessConfig c = small_config();
  c.plant.strips_per_episode = 3;
  c.disturbance.prediction_sd = 0.0;
  c.phase1_episodes = 50;
  c.phase2_episodes = 0;
  c.report_window = 0;
  double gain = 0.0;
  int improved = 0;
  for (std::uint64_t seed = 31; seed < 36; ++seed) {
    const std::vector<env::Scenario> same(50, historical(1, seed, c)[0]);
    const TrainResult r = train(c, rl::Variant::p_coop, same, {}, 6);
    REQUIRE(r.curves.size() == 50);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      first += r.curves[i].mean_speed / 10.0;
      last += r.curves[40 + i].mean_speed / 10.0;
    }
    gain += last - first;
    improved += last >= first ? 1 : 0;
  }
  CHECK(gain >= 0.0);
  CHECK(improved >= 3);
}

TEST_CASE("training is reproducible") {
  HarnessConfig c = small_config();
  c.plant.strips_per_episode = 3;
  c.phase1_episodes = 10;
  c.phase2_episodes = 2;
  c.report_window = 2;
  const auto gen = historical(10, 50, c);
  const auto hist = historical(2, 51, c);
  for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
    const TrainResult r = train(c, v, gen, hist, 6);
    const TrainResult again = train(c, v, gen, hist, 6);
    REQUIRE(r.curves.size() == 12);
    CHECK(r.curves.back().phase == 2);
    CHECK(r.curves.back().epsilon == 0.0);
    CHECK(bank_bytes(again.bank) == bank_bytes(r.bank));
    CHECK(bank_bytes(r.bank) != bank_bytes(initial_bank(c, v, 6)));
    std::ostringstream a, b;
    write_curves_csv(a, r.curves);
    write_curves_csv(b, again.curves);
    CHECK(a.str() == b.str());
  }
}

TEST_CASE("quartiles interpolate linearly") {
  const SpeedStats s = describe({4.0, 1.0, 3.0, 2.0});
  CHECK(s.count == 4);
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
  CHECK(s.q1 == doctest::Approx(1.75));
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.q3 == doctest::Approx(3.25));
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(describe({}).count == 0);
}

TEST_CASE("death rate arithmetic") {
  std::vector<EpisodeLog> logs;
  for (int i = 0; i < 100; ++i) logs.push_back(synthetic_log("h", {{"11", {100.0}}, {"31", {90.0}}}, i < 26));
  const AgentMetrics m = summarize("p-coop", logs);
  CHECK(m.deaths == 26);
  CHECK(m.death_rate == doctest::Approx(0.26));
  CHECK(m.deaths_by_combination[env::StageCombination::from_code("31").index()] == 26);
}

TEST_CASE("surplus against itself is zero and matches a hand oracle") {
  const std::vector<EpisodeLog> base{synthetic_log("a", {{"02", {100, 110}}, {"21", {80}}}),
                                     synthetic_log("b", {{"02", {90}}, {"21", {70, 90}}})};
  const std::vector<EpisodeLog> agent{synthetic_log("a", {{"02", {120, 120}}, {"21", {88}}}),
                                      synthetic_log("b", {{"02", {99}}, {"21", {77, 99}}})};
  const AgentMetrics mb = summarize("c-per-stage", base), ma = summarize("p-coop", agent);
  for (env::StageCombination k : slowdown_combinations()) {
    if (const auto p = surplus_percent(ma, ma, k)) CHECK(*p == 0.0);
  }
  // Per-episode means: base 02 {105, 90} -> 97.5, agent {120, 99} -> 109.5.
  CHECK(*surplus_percent(ma, mb, env::StageCombination::from_code("02")) ==
        doctest::Approx(100.0 * 12.0 / 97.5).epsilon(1e-6));
  // base 21 {80, 80} -> 80, agent {88, 88} -> 88.
  CHECK(*surplus_percent(ma, mb, env::StageCombination::from_code("21")) == doctest::Approx(10.0).epsilon(1e-6));
  CHECK_FALSE(surplus_percent(ma, mb, env::StageCombination::from_code("22")).has_value());

  const std::vector<std::string> names{"c-per-stage", "p-coop"};
  const std::vector<std::vector<EpisodeLog>> logs{base, agent};
  const MetricsReport r = build_report(names, logs);
  REQUIRE(r.surplus.size() == 2);
  CHECK(std::abs(r.surplus[0].percent - 12.3077) < 0.01);
  CHECK(std::abs(r.surplus[1].percent - 10.0) < 0.01);
  CHECK(r.scenario_hashes == std::vector<std::string>{"a", "b"});

  const std::vector<std::vector<EpisodeLog>> mismatched{base, {agent[1], agent[0]}};
  CHECK_THROWS_AS(build_report(names, mismatched), ProtocolError);
}

TEST_CASE("report export round trips and matches the schema") {
  const std::vector<std::string> names{"c", "p-coop"};
  const std::vector<std::vector<EpisodeLog>> logs{
      {synthetic_log("a", {{"02", {100.25, 110}}, {"12", {80}}}), synthetic_log("b", {{"20", {90}}})},
      {synthetic_log("a", {{"02", {101}}, {"12", {85.5}}}), synthetic_log("b", {{"20", {95}}, {"33", {1}}}, true)}};
  const MetricsReport r = build_report(names, logs);
  CHECK(report_from_csv(report_csv(r)) == r);
  CHECK(report_from_json(report_json(r)) == r);

  std::istringstream csv(report_csv(r));
  std::string line;
  while (std::getline(csv, line)) CHECK(csv_columns(line) == kMetricsColumns.size());

  const MetricsReport empty = build_report({}, {});
  CHECK(report_csv(empty) == "agent,baseline,combination,statistic,value\n");
  CHECK(report_from_csv(report_csv(empty)) == empty);
  CHECK(report_from_json(report_json(empty)) == empty);

  const auto dir = std::filesystem::temp_directory_path() / "pickling_test_report";
  std::filesystem::remove_all(dir);
  export_report(r, dir);
  std::ifstream in(dir / "metrics.csv");
  std::stringstream body;
  body << in.rdbuf();
  CHECK(body.str() == report_csv(r));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(report_from_csv("a,b\n"), IoError);
  CHECK_THROWS_AS(report_from_json("{}"), IoError);
}

TEST_CASE("evaluation is deterministic and shares scenarios") {
  HarnessConfig c = small_config();
  const auto set = historical(4, 41);
  const rl::QNetworkBank p = initial_bank(c, rl::Variant::p_coop, 1);
  const rl::QNetworkBank f = initial_bank(c, rl::Variant::f_coop, 1);
  const std::vector<EvaluationAgent> agents{
      {AgentKind::c, nullptr}, {AgentKind::c_per_stage, nullptr}, {AgentKind::p_coop, &p}, {AgentKind::f_coop, &f}};
  const Evaluation a = evaluate(set, agents, c, 7);
  c.threads = 3;
  const Evaluation b = evaluate(set, agents, c, 7);
  CHECK(report_json(a.report) == report_json(b.report));
  CHECK(report_csv(a.report) == report_csv(b.report));
  CHECK(a.report.scenario_hashes.size() == set.size());
  CHECK(objective_equivalence(a.logs));

  // A death never outlasts the completed C-Agent run on the same scenario.
  for (std::size_t agent = 1; agent < a.logs.size(); ++agent) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (a.logs[agent][i].cause == env::TerminalCause::death) CHECK(a.logs[agent][i].steps < a.logs[0][i].steps);
      if (a.logs[agent][i].cause == env::TerminalCause::complete) CHECK(a.logs[agent][i].steps == a.logs[0][i].steps);
    }
  }
}

TEST_CASE("objective equivalence detects disagreement") {
  EpisodeLog x = synthetic_log("a", {{"11", {100, 100}}});
  EpisodeLog y = synthetic_log("a", {{"11", {90, 90}}});
  const std::vector<std::vector<EpisodeLog>> ok{{x}, {y}};
  CHECK(objective_equivalence(ok));
  y.sum_speed = 300.0;
  const std::vector<std::vector<EpisodeLog>> bad{{x}, {y}};
  CHECK_FALSE(objective_equivalence(bad));
}
