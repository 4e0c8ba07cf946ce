#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace pickling::harness {

namespace {

double quantile(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

constexpr std::array<const char*, 7> kStatNames{"count", "min", "q1", "median", "q3", "max", "mean"};

std::array<double, 7> stat_values(const SpeedStats& s) {
  return {static_cast<double>(s.count), s.min, s.q1, s.median, s.q3, s.max, s.mean};
}

void set_stat(SpeedStats& s, std::size_t i, double v) {
  switch (i) {
    case 0: s.count = static_cast<std::size_t>(v); break;
    case 1: s.min = v; break;
    case 2: s.q1 = v; break;
    case 3: s.median = v; break;
    case 4: s.q3 = v; break;
    case 5: s.max = v; break;
    default: s.mean = v; break;
  }
}

std::string csv_row(const std::string& agent, const std::string& baseline, const std::string& combination,
                    const std::string& statistic, const std::string& value) {
  return agent + ',' + baseline + ',' + combination + ',' + statistic + ',' + value + '\n';
}

}  // namespace

SpeedStats describe(std::vector<double> v) {
  SpeedStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  return s;
}

std::vector<env::StageCombination> slowdown_combinations() {
  return {env::StageCombination::from_code("02"), env::StageCombination::from_code("12"),
          env::StageCombination::from_code("20"), env::StageCombination::from_code("21"),
          env::StageCombination::from_code("22")};
}

const AgentMetrics* MetricsReport::find(std::string_view agent) const {
  for (const AgentMetrics& a : agents) {
    if (a.agent == agent) return &a;
  }
  return nullptr;
}

AgentMetrics summarize(std::string agent, std::span<const EpisodeLog> logs) {
  AgentMetrics m;
  m.agent = std::move(agent);
  m.episodes = logs.size();
  std::array<std::vector<double>, env::kCombinationCount> per_combination;
  for (const EpisodeLog& log : logs) {
    if (log.cause == env::TerminalCause::death) {
      ++m.deaths;
      if (log.death_combination) ++m.deaths_by_combination[log.death_combination->index()];
    }
    for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
      if (log.combination_steps[k] > 0) {
        per_combination[k].push_back(log.combination_speed_sum[k] / static_cast<double>(log.combination_steps[k]));
      }
    }
    m.mean_episode_sum += log.sum_speed;
    m.mean_episode_mean += log.mean_speed;
    m.clamp_violations += log.clamp_violations;
    m.restriction_violations += log.restriction_violations;
  }
  if (m.episodes > 0) {
    const double n = static_cast<double>(m.episodes);
    m.death_rate = static_cast<double>(m.deaths) / n;
    m.mean_episode_sum /= n;
    m.mean_episode_mean /= n;
  }
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) m.speed[k] = describe(std::move(per_combination[k]));
  return m;
}

std::optional<double> surplus_percent(const AgentMetrics& agent, const AgentMetrics& baseline,
                                      env::StageCombination c) {
  const SpeedStats& a = agent.speed[c.index()];
  const SpeedStats& b = baseline.speed[c.index()];
  if (a.count == 0 || b.count == 0 || b.mean == 0.0) return std::nullopt;
  return 100.0 * (a.mean - b.mean) / b.mean;
}

MetricsReport build_report(std::span<const std::string> agents, std::span<const std::vector<EpisodeLog>> logs) {
  if (agents.size() != logs.size()) throw InputError("agent names and log sets differ in count");
  MetricsReport r;
  if (!logs.empty()) {
    for (const EpisodeLog& log : logs[0]) r.scenario_hashes.push_back(log.scenario_hash);
    for (std::size_t a = 1; a < logs.size(); ++a) {
      bool same = logs[a].size() == r.scenario_hashes.size();
      for (std::size_t i = 0; same && i < logs[a].size(); ++i) same = logs[a][i].scenario_hash == r.scenario_hashes[i];
      if (!same) throw ProtocolError("agent " + agents[a] + " faced different scenarios");
    }
  }
  for (std::size_t a = 0; a < agents.size(); ++a) r.agents.push_back(summarize(agents[a], logs[a]));
  for (const char* base : {"c", "c-per-stage"}) {
    const AgentMetrics* b = r.find(base);
    if (!b) continue;
    for (const AgentMetrics& m : r.agents) {
      if (m.agent == base) continue;
      for (env::StageCombination c : slowdown_combinations()) {
        if (const auto p = surplus_percent(m, *b, c)) r.surplus.push_back({m.agent, base, c.code(), *p});
      }
    }
  }
  return r;
}

Evaluation evaluate(std::span<const env::Scenario> scenarios, std::span<const EvaluationAgent> agents,
                    const HarnessConfig& config, std::uint64_t seed) {
  config.validate();
  Evaluation out;
  std::vector<std::string> names;
  for (const EvaluationAgent& a : agents) names.push_back(to_string(a.kind));
  out.logs.assign(agents.size(), std::vector<EpisodeLog>(scenarios.size()));

  const std::size_t jobs = agents.size() * scenarios.size();
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const std::size_t a = j / scenarios.size();
      const std::size_t i = j % scenarios.size();
      try {
        EpisodeOptions o;
        o.agent = agents[a].kind;
        o.bank = agents[a].bank;
        o.seed = derive_seed(seed, Stream::exploration, i);
        out.logs[a][i] = run_episode(scenarios[i], config, o);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, jobs));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  out.report = build_report(names, out.logs);
  return out;
}

bool objective_equivalence(std::span<const std::vector<EpisodeLog>> logs) {
  if (logs.empty()) return true;
  for (std::size_t i = 0; i < logs[0].size(); ++i) {
    bool all_complete = true;
    for (const auto& agent : logs) all_complete = all_complete && agent[i].cause == env::TerminalCause::complete;
    if (!all_complete) continue;
    std::size_t by_sum = 0, by_mean = 0;
    for (std::size_t a = 1; a < logs.size(); ++a) {
      if (logs[a][i].sum_speed > logs[by_sum][i].sum_speed) by_sum = a;
      if (logs[a][i].mean_speed > logs[by_mean][i].mean_speed) by_mean = a;
    }
    if (by_sum != by_mean) return false;
  }
  return true;
}

std::string report_csv(const MetricsReport& r) {
  std::string out;
  for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) out += std::string(i ? "," : "") + kMetricsColumns[i];
  out += '\n';
  if (r.agents.empty() && r.scenario_hashes.empty() && r.surplus.empty()) return out;
  using text::format_double;
  out += csv_row("", "", "", "schema_version", std::to_string(r.schema_version));
  for (const std::string& h : r.scenario_hashes) out += csv_row("", "", "", "scenario_hash", h);
  for (const AgentMetrics& m : r.agents) {
    out += csv_row(m.agent, "", "", "episodes", std::to_string(m.episodes));
    out += csv_row(m.agent, "", "", "deaths", std::to_string(m.deaths));
    out += csv_row(m.agent, "", "", "death_rate", format_double(m.death_rate));
    out += csv_row(m.agent, "", "", "mean_episode_sum", format_double(m.mean_episode_sum));
    out += csv_row(m.agent, "", "", "mean_episode_mean", format_double(m.mean_episode_mean));
    out += csv_row(m.agent, "", "", "clamp_violations", std::to_string(m.clamp_violations));
    out += csv_row(m.agent, "", "", "restriction_violations", std::to_string(m.restriction_violations));
    for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
      const std::string code = env::StageCombination::from_index(k).code();
      out += csv_row(m.agent, "", code, "deaths", std::to_string(m.deaths_by_combination[k]));
      const auto v = stat_values(m.speed[k]);
      for (std::size_t s = 0; s < v.size(); ++s) {
        out += csv_row(m.agent, "", code, std::string("speed_") + kStatNames[s], format_double(v[s]));
      }
    }
  }
  for (const SurplusEntry& e : r.surplus) {
    out += csv_row(e.agent, e.baseline, e.combination, "surplus_percent", format_double(e.percent));
  }
  return out;
}

MetricsReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty metrics file");
  const auto header = text::split(text::trim(line), ',');
  if (header.size() != kMetricsColumns.size()) throw IoError("metrics header has the wrong column count");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != kMetricsColumns[i]) throw IoError("unexpected metrics column " + header[i]);
  }
  MetricsReport r;
  const auto agent_for = [&](const std::string& name) -> AgentMetrics& {
    for (AgentMetrics& m : r.agents) {
      if (m.agent == name) return m;
    }
    r.agents.emplace_back().agent = name;
    return r.agents.back();
  };
  const auto count = [](const std::string& s) { return static_cast<std::size_t>(text::parse_long(s)); };
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != kMetricsColumns.size()) throw IoError("metrics row has the wrong column count: " + line);
    const std::string& stat = f[3];
    try {
      if (stat == "schema_version") {
        r.schema_version = text::parse_int(f[4]);
        if (r.schema_version != kReportSchemaVersion) throw IoError("unsupported metrics schema " + f[4]);
      } else if (stat == "scenario_hash") {
        r.scenario_hashes.push_back(f[4]);
      } else if (stat == "surplus_percent") {
        r.surplus.push_back({f[0], f[1], f[2], text::parse_double(f[4])});
      } else if (f[2].empty()) {
        AgentMetrics& m = agent_for(f[0]);
        if (stat == "episodes") m.episodes = count(f[4]);
        else if (stat == "deaths") m.deaths = count(f[4]);
        else if (stat == "death_rate") m.death_rate = text::parse_double(f[4]);
        else if (stat == "mean_episode_sum") m.mean_episode_sum = text::parse_double(f[4]);
        else if (stat == "mean_episode_mean") m.mean_episode_mean = text::parse_double(f[4]);
        else if (stat == "clamp_violations") m.clamp_violations = count(f[4]);
        else if (stat == "restriction_violations") m.restriction_violations = count(f[4]);
        else throw IoError("unknown metrics statistic " + stat);
      } else {
        AgentMetrics& m = agent_for(f[0]);
        const std::size_t k = env::StageCombination::from_code(f[2]).index();
        if (stat == "deaths") {
          m.deaths_by_combination[k] = count(f[4]);
        } else {
          const auto it = std::find_if(kStatNames.begin(), kStatNames.end(),
                                       [&](const char* n) { return stat == std::string("speed_") + n; });
          if (it == kStatNames.end()) throw IoError("unknown metrics statistic " + stat);
          set_stat(m.speed[k], static_cast<std::size_t>(it - kStatNames.begin()), text::parse_double(f[4]));
        }
      }
    } catch (const InputError& e) {
      throw IoError(std::string("bad metrics row: ") + e.what());
    }
  }
  return r;
}

std::string report_json(const MetricsReport& r) {
  using nlohmann::ordered_json;
  ordered_json agents = ordered_json::array();
  for (const AgentMetrics& m : r.agents) {
    ordered_json deaths = ordered_json::object();
    ordered_json speed = ordered_json::object();
    for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
      const std::string code = env::StageCombination::from_index(k).code();
      deaths[code] = m.deaths_by_combination[k];
      ordered_json s = ordered_json::object();
      const auto v = stat_values(m.speed[k]);
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i == 0) s[kStatNames[i]] = m.speed[k].count;
        else s[kStatNames[i]] = v[i];
      }
      speed[code] = s;
    }
    agents.push_back({{"agent", m.agent},
                      {"episodes", m.episodes},
                      {"deaths", m.deaths},
                      {"death_rate", m.death_rate},
                      {"mean_episode_sum", m.mean_episode_sum},
                      {"mean_episode_mean", m.mean_episode_mean},
                      {"clamp_violations", m.clamp_violations},
                      {"restriction_violations", m.restriction_violations},
                      {"deaths_by_combination", deaths},
                      {"speed", speed}});
  }
  ordered_json surplus = ordered_json::array();
  for (const SurplusEntry& e : r.surplus) {
    surplus.push_back({{"agent", e.agent}, {"baseline", e.baseline}, {"combination", e.combination},
                       {"percent", e.percent}});
  }
  const ordered_json j{{"format", "pickling-report"},
                       {"schema_version", r.schema_version},
                       {"scenario_hashes", r.scenario_hashes},
                       {"agents", agents},
                       {"surplus", surplus}};
  return j.dump(1) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "pickling-report") throw IoError("not a metrics report");
    MetricsReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) throw IoError("unsupported report schema");
    r.scenario_hashes = j.at("scenario_hashes").get<std::vector<std::string>>();
    for (const auto& a : j.at("agents")) {
      AgentMetrics m;
      m.agent = a.at("agent").get<std::string>();
      m.episodes = a.at("episodes").get<std::size_t>();
      m.deaths = a.at("deaths").get<std::size_t>();
      m.death_rate = a.at("death_rate").get<double>();
      m.mean_episode_sum = a.at("mean_episode_sum").get<double>();
      m.mean_episode_mean = a.at("mean_episode_mean").get<double>();
      m.clamp_violations = a.at("clamp_violations").get<std::size_t>();
      m.restriction_violations = a.at("restriction_violations").get<std::size_t>();
      for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
        const std::string code = env::StageCombination::from_index(k).code();
        m.deaths_by_combination[k] = a.at("deaths_by_combination").at(code).get<std::size_t>();
        const auto& s = a.at("speed").at(code);
        m.speed[k].count = s.at("count").get<std::size_t>();
        for (std::size_t i = 1; i < kStatNames.size(); ++i) set_stat(m.speed[k], i, s.at(kStatNames[i]).get<double>());
      }
      r.agents.push_back(std::move(m));
    }
    for (const auto& e : j.at("surplus")) {
      r.surplus.push_back({e.at("agent").get<std::string>(), e.at("baseline").get<std::string>(),
                           e.at("combination").get<std::string>(), e.at("percent").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad report JSON: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("bad report JSON: ") + e.what());
  }
}

void export_report(const MetricsReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto write = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << body;
    if (!out) throw IoError("write failed: " + (dir / name).string());
  };
  write("metrics.csv", report_csv(report));
  write("report.json", report_json(report));
}

}  // namespace pickling::harness
