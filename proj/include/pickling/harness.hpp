#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pickling/c_agent.hpp"
#include "pickling/cgan.hpp"
#include "pickling/env.hpp"
#include "pickling/grade_model.hpp"
#include "pickling/rl_agent.hpp"
#include "pickling/scenario.hpp"
#include "pickling/strip.hpp"

namespace pickling::harness {

enum class Profile : std::uint8_t { desk, paper };
enum class AgentKind : std::uint8_t { c, c_per_stage, f_coop, p_coop };
enum class ScenarioSource : std::uint8_t { generated, historical };

std::string to_string(Profile p);
Profile parse_profile(std::string_view text);
std::string to_string(AgentKind a);  // "c", "c-per-stage", "f-coop", "p-coop"
AgentKind parse_agent(std::string_view text);
std::string to_string(ScenarioSource s);
ScenarioSource parse_source(std::string_view text);
bool is_rl(AgentKind a);

// Every tunable default in one place; serialised as key=value text.
struct HarnessConfig {
  Profile profile = Profile::desk;
  std::uint64_t seed = 1;

  std::size_t history_strips = 500;
  grades::GradeModelConfig grades;
  cgan::CganConfig cgan;

  env::PlantConfig plant;
  std::string speed_table;  // rules file; empty selects the built-in synthetic table
  env::DisturbanceModel disturbance;
  control::CAgentConfig c_agent;
  rl::AgentVariantConfig p_coop = rl::AgentVariantConfig::p_coop();
  rl::AgentVariantConfig f_coop = rl::AgentVariantConfig::f_coop();
  // Whose acting instants the C-Agent-per-stage baseline follows.
  rl::Variant per_stage_variant = rl::Variant::p_coop;

  std::size_t phase1_episodes = 200;
  std::size_t phase2_episodes = 50;
  std::size_t report_window = 50;
  std::size_t eval_episodes = 100;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  std::size_t threads = 1;

  static HarnessConfig desk();
  static HarnessConfig paper();
  static HarnessConfig of(Profile p);

  void validate() const;
  const rl::AgentVariantConfig& variant(rl::Variant v) const { return v == rl::Variant::f_coop ? f_coop : p_coop; }
  rl::AgentVariantConfig& variant(rl::Variant v) { return v == rl::Variant::f_coop ? f_coop : p_coop; }
};

std::string to_text(const HarnessConfig& c);
// Applies key=value settings; "profile" (when present) selects the base defaults first.
HarnessConfig apply_config(HarnessConfig base, std::span<const std::pair<std::string, std::string>> kv);
HarnessConfig read_config(const std::filesystem::path& path, std::optional<Profile> profile = std::nullopt);

SpeedTable load_speed_table(const HarnessConfig& c);

// Linear from start to end over phase 1, then 0.
double epsilon_at(const HarnessConfig& c, std::size_t episode);

// ---- scenarios ----

struct ScenarioModels {
  const Dataset* history = nullptr;
  const grades::GradeModel* grades = nullptr;
  const cgan::CganModel* cgan = nullptr;
};

// Fits on the history with generators derived from `seed`.
grades::GradeModel fit_grade_model(const Dataset& history, const HarnessConfig& config, std::uint64_t seed);
cgan::CganModel fit_cgan(const Dataset& history, const HarnessConfig& config, std::uint64_t seed);

// Scenario set `set_index` of `count` episodes. Historical queues are contiguous windows of the
// dataset; generated queues come from grade sampling plus CGAN strips. Seeds derive from `seed`.
std::vector<env::Scenario> precompute_scenarios(std::size_t count, ScenarioSource source,
                                                const ScenarioModels& models, const HarnessConfig& config,
                                                std::uint64_t seed, std::size_t set_index);

// Set 0: phase 1 (generated); set 1: phase 2 (historical); set 2: evaluation (historical).
struct ScenarioSets {
  std::vector<env::Scenario> generated;
  std::vector<env::Scenario> historical;
  std::vector<env::Scenario> evaluation;
};
ScenarioSets standard_sets(const ScenarioModels& models, const HarnessConfig& config, std::uint64_t seed);

// Directory layout: one <id>.json per scenario plus manifest.csv (id,source,hash).
void write_scenario_set(const std::filesystem::path& dir, std::span<const env::Scenario> set);
std::vector<env::Scenario> read_scenario_set(const std::filesystem::path& dir);

// ---- episodes ----

struct LogRow {
  double time = 0.0;
  env::StageCombination combination;
  double ftu_speed = 0.0;
  double stu_speed = 0.0;
  double ttu_speed = 0.0;
  double looper1 = 0.0;
  double looper2 = 0.0;
  double c_speed = 0.0;
  double rl_delta = 0.0;
  double reward = 0.0;

  bool operator==(const LogRow&) const = default;
};

inline constexpr std::array<const char*, 10> kLogColumns{"time", "combination", "v_f", "v_s", "v_t",
                                                         "V1", "V2", "c_speed", "rl_delta", "reward"};

struct EpisodeLog {
  std::string agent;
  std::string scenario_id;
  std::string scenario_hash;
  std::uint64_t seed = 0;
  env::TerminalCause cause = env::TerminalCause::none;
  std::size_t steps = 0;
  double sum_speed = 0.0;
  double mean_speed = 0.0;
  // Combination active during the fatal step.
  std::optional<env::StageCombination> death_combination;
  std::array<double, env::kCombinationCount> combination_speed_sum{};
  std::array<std::size_t, env::kCombinationCount> combination_steps{};
  // Steps where the applied STU speed left [floor, cap] of the pre-step state.
  std::size_t clamp_violations = 0;
  // P-Coop steps in stop combinations whose command differed from the held C-Agent speed.
  std::size_t restriction_violations = 0;
  std::size_t stop_combination_steps = 0;
  double loss_sum = 0.0;
  std::size_t updates = 0;
  std::vector<LogRow> rows;  // empty unless requested
};

struct EpisodeOptions {
  AgentKind agent = AgentKind::c;
  const rl::QNetworkBank* bank = nullptr;  // RL agents
  rl::QNetworkBank* learner = nullptr;     // training: takes precedence over bank
  double epsilon = 0.0;
  std::uint64_t seed = 0;  // exploration stream
  bool keep_rows = false;
};

EpisodeLog run_episode(const env::Scenario& scenario, const HarnessConfig& config, const EpisodeOptions& options);

void write_episode_csv(std::ostream& out, const EpisodeLog& log);
std::vector<LogRow> read_episode_csv(std::istream& in);
std::string episode_summary_json(const EpisodeLog& log);

// ---- training ----

struct EpisodeCurve {
  std::size_t episode = 0;
  int phase = 1;
  double epsilon = 0.0;
  std::string scenario_id;
  env::TerminalCause cause = env::TerminalCause::none;
  std::size_t steps = 0;
  double sum_speed = 0.0;
  double mean_speed = 0.0;
  double mean_loss = 0.0;
  std::size_t updates = 0;
};

struct TrainResult {
  rl::QNetworkBank bank;
  std::vector<EpisodeCurve> curves;
  bool aborted = false;  // bank is then the last good state
  std::string error;
};

using Progress = std::function<void(const EpisodeCurve&)>;

// Phase 1 on `generated` with decaying epsilon, then phase 2 on `historical` greedily.
TrainResult train(const HarnessConfig& config, rl::Variant variant, std::span<const env::Scenario> generated,
                  std::span<const env::Scenario> historical, std::uint64_t seed, const Progress& progress = {});
// The untrained bank `train` starts from.
rl::QNetworkBank initial_bank(const HarnessConfig& config, rl::Variant variant, std::uint64_t seed);

void write_curves_csv(std::ostream& out, std::span<const EpisodeCurve> curves);

// ---- evaluation ----

struct SpeedStats {
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;

  bool operator==(const SpeedStats&) const = default;
};

// Linear-interpolated quartiles.
SpeedStats describe(std::vector<double> values);

struct AgentMetrics {
  std::string agent;
  std::size_t episodes = 0;
  std::size_t deaths = 0;
  double death_rate = 0.0;
  std::array<std::size_t, env::kCombinationCount> deaths_by_combination{};
  // Distribution over episodes of the per-episode mean STU speed within each combination.
  std::array<SpeedStats, env::kCombinationCount> speed{};
  double mean_episode_sum = 0.0;
  double mean_episode_mean = 0.0;
  std::size_t clamp_violations = 0;
  std::size_t restriction_violations = 0;

  bool operator==(const AgentMetrics&) const = default;
};

struct SurplusEntry {
  std::string agent;
  std::string baseline;
  std::string combination;
  double percent = 0.0;

  bool operator==(const SurplusEntry&) const = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  int schema_version = kReportSchemaVersion;
  std::vector<std::string> scenario_hashes;
  std::vector<AgentMetrics> agents;
  std::vector<SurplusEntry> surplus;

  const AgentMetrics* find(std::string_view agent) const;
  bool operator==(const MetricsReport&) const = default;
};

// Combinations containing a slowdown stage that the surplus table reports.
std::vector<env::StageCombination> slowdown_combinations();

AgentMetrics summarize(std::string agent, std::span<const EpisodeLog> logs);
// 100 (agent - baseline) / baseline of the per-combination mean speed; nullopt without data.
std::optional<double> surplus_percent(const AgentMetrics& agent, const AgentMetrics& baseline,
                                      env::StageCombination c);

struct EvaluationAgent {
  AgentKind kind = AgentKind::c;
  const rl::QNetworkBank* bank = nullptr;
};

struct Evaluation {
  MetricsReport report;
  // logs[a][i]: agent a on scenario i, rows dropped.
  std::vector<std::vector<EpisodeLog>> logs;
};

// Every agent runs every scenario; throws ProtocolError if their scenario hashes differ.
Evaluation evaluate(std::span<const env::Scenario> scenarios, std::span<const EvaluationAgent> agents,
                    const HarnessConfig& config, std::uint64_t seed);
MetricsReport build_report(std::span<const std::string> agents, std::span<const std::vector<EpisodeLog>> logs);

// For each scenario where every agent completed, whether argmax of sum and of mean agree.
bool objective_equivalence(std::span<const std::vector<EpisodeLog>> logs);

// metrics.csv (agent,baseline,combination,statistic,value) and report.json.
inline constexpr std::array<const char*, 5> kMetricsColumns{"agent", "baseline", "combination", "statistic",
                                                            "value"};
void export_report(const MetricsReport& report, const std::filesystem::path& dir);
std::string report_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
std::string report_csv(const MetricsReport& report);
MetricsReport report_from_csv(const std::string& text);

}  // namespace pickling::harness
