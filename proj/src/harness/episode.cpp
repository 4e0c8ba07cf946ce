#include <optional>
#include <sstream>

#include "json.hpp"
#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace pickling::harness {

std::string to_string(AgentKind a) {
  switch (a) {
    case AgentKind::c: return "c";
    case AgentKind::c_per_stage: return "c-per-stage";
    case AgentKind::f_coop: return "f-coop";
    case AgentKind::p_coop: return "p-coop";
  }
  return "?";
}

AgentKind parse_agent(std::string_view t) {
  if (t == "c") return AgentKind::c;
  if (t == "c-per-stage" || t == "c_per_stage") return AgentKind::c_per_stage;
  if (t == "f-coop" || t == "f_coop") return AgentKind::f_coop;
  if (t == "p-coop" || t == "p_coop") return AgentKind::p_coop;
  throw InputError("unknown agent: " + std::string(t));
}

bool is_rl(AgentKind a) { return a == AgentKind::f_coop || a == AgentKind::p_coop; }

EpisodeLog run_episode(const env::Scenario& scenario, const HarnessConfig& config, const EpisodeOptions& o) {
  env::Environment env(config.plant, load_speed_table(config));
  env::reset(env, scenario, config.disturbance);
  Rng explore(o.seed);

  std::optional<rl::Controller> ctl;
  const rl::AgentVariantConfig* variant = nullptr;
  if (is_rl(o.agent)) {
    const rl::QNetworkBank* bank = o.learner ? o.learner : o.bank;
    if (!bank) throw InputError(to_string(o.agent) + " needs a Q-network bank");
    const rl::Variant want = o.agent == AgentKind::f_coop ? rl::Variant::f_coop : rl::Variant::p_coop;
    if (bank->config().variant != want) throw InputError("bank variant does not match agent " + to_string(o.agent));
    if (o.learner) {
      ctl.emplace(*o.learner, config.c_agent, o.epsilon, explore);
    } else {
      ctl.emplace(o.bank, o.bank->config(), config.c_agent, o.epsilon, explore);
    }
    ctl->set_c_schedule(config.variant(config.per_stage_variant).acting);
    variant = &bank->config();
  } else if (o.agent == AgentKind::c_per_stage) {
    ctl.emplace(nullptr, config.variant(config.per_stage_variant), config.c_agent, 0.0, explore);
  }

  EpisodeLog log;
  log.agent = to_string(o.agent);
  log.scenario_id = scenario.id;
  log.scenario_hash = env::hash_hex(env::scenario_hash(scenario));
  log.seed = o.seed;
  while (!env.state().terminal) {
    const env::LineState& s = env.state();
    const env::StageCombination k = env::stage_combination(s);
    const SpeedLimits lim = s.stu_limits();
    const double time = s.time;
    rl::Decision d;
    if (ctl) {
      d = ctl->decide(s);
    } else {
      d.c_speed = d.command = control::recommend_speed(s, config.c_agent);
    }
    const env::StepEvents ev = env.step(d.command);
    const env::LineState& next = env.state();
    double reward = 0.0;
    if (ctl) ctl->observe(ev, next);
    if (variant) {
      const rl::StepRecord r{ev.stu_speed - d.c_speed, rl::proximity(next, variant->reward.proximity_margin),
                             next.cause == env::TerminalCause::death};
      reward = rl::step_reward(r, variant->reward);
    }

    const double v = ev.stu_speed;
    ++log.steps;
    log.sum_speed += v;
    log.combination_speed_sum[k.index()] += v;
    ++log.combination_steps[k.index()];
    if (v > lim.v_max + 1e-9 || v < lim.v_min - 1e-9) ++log.clamp_violations;
    if (k.has_stop()) {
      ++log.stop_combination_steps;
      if (o.agent == AgentKind::p_coop && d.command != d.c_speed) ++log.restriction_violations;
    }
    if (next.cause == env::TerminalCause::death) log.death_combination = k;
    if (o.keep_rows) {
      log.rows.push_back({time, k, ev.ftu_speed, v, ev.ttu_speed, next.looper1, next.looper2, d.c_speed, d.delta,
                          reward});
    }
  }
  log.cause = env.state().cause;
  log.mean_speed = log.steps ? log.sum_speed / static_cast<double>(log.steps) : 0.0;
  if (ctl) {
    log.loss_sum = ctl->loss_sum();
    log.updates = ctl->update_count();
  }
  return log;
}

void write_episode_csv(std::ostream& out, const EpisodeLog& log) {
  for (std::size_t i = 0; i < kLogColumns.size(); ++i) out << (i ? "," : "") << kLogColumns[i];
  out << '\n';
  using text::format_double;
  for (const LogRow& r : log.rows) {
    out << format_double(r.time) << ',' << r.combination.code() << ',' << format_double(r.ftu_speed) << ','
        << format_double(r.stu_speed) << ',' << format_double(r.ttu_speed) << ',' << format_double(r.looper1) << ','
        << format_double(r.looper2) << ',' << format_double(r.c_speed) << ',' << format_double(r.rl_delta) << ','
        << format_double(r.reward) << '\n';
  }
}

std::vector<LogRow> read_episode_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty episode log");
  const auto header = text::split(text::trim(line), ',');
  if (header.size() != kLogColumns.size()) throw IoError("episode log header has the wrong column count");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != kLogColumns[i]) throw IoError("unexpected episode log column " + header[i]);
  }
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != kLogColumns.size()) throw IoError("episode log row has the wrong column count");
    try {
      rows.push_back({text::parse_double(f[0]), env::StageCombination::from_code(f[1]), text::parse_double(f[2]),
                      text::parse_double(f[3]), text::parse_double(f[4]), text::parse_double(f[5]),
                      text::parse_double(f[6]), text::parse_double(f[7]), text::parse_double(f[8]),
                      text::parse_double(f[9])});
    } catch (const InputError& e) {
      throw IoError(std::string("bad episode log row: ") + e.what());
    }
  }
  return rows;
}

std::string episode_summary_json(const EpisodeLog& log) {
  nlohmann::ordered_json j{{"agent", log.agent},
                           {"scenario_id", log.scenario_id},
                           {"scenario_hash", log.scenario_hash},
                           {"seed", log.seed},
                           {"terminal_cause", env::to_string(log.cause)},
                           {"steps", log.steps},
                           {"sum_stu_speed", log.sum_speed},
                           {"mean_stu_speed", log.mean_speed},
                           {"death_combination", log.death_combination ? log.death_combination->code() : ""},
                           {"clamp_violations", log.clamp_violations},
                           {"restriction_violations", log.restriction_violations}};
  return j.dump(1) + "\n";
}

}  // namespace pickling::harness
