#include <cmath>
#include <ostream>

#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace pickling::harness {

rl::QNetworkBank initial_bank(const HarnessConfig& config, rl::Variant variant, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::init, static_cast<std::uint64_t>(variant));
  return rl::QNetworkBank(config.variant(variant), rng);
}

TrainResult train(const HarnessConfig& config, rl::Variant variant, std::span<const env::Scenario> generated,
                  std::span<const env::Scenario> historical, std::uint64_t seed, const Progress& progress) {
  config.validate();
  if (generated.size() < config.phase1_episodes) {
    throw InputError("phase 1 needs " + std::to_string(config.phase1_episodes) + " generated scenarios, got " +
                     std::to_string(generated.size()));
  }
  if (historical.size() < config.phase2_episodes) {
    throw InputError("phase 2 needs " + std::to_string(config.phase2_episodes) + " historical scenarios, got " +
                     std::to_string(historical.size()));
  }
  TrainResult result{initial_bank(config, variant, seed), {}, false, {}};
  const AgentKind agent = variant == rl::Variant::f_coop ? AgentKind::f_coop : AgentKind::p_coop;
  const std::size_t total = config.phase1_episodes + config.phase2_episodes;
  for (std::size_t e = 0; e < total; ++e) {
    const bool phase1 = e < config.phase1_episodes;
    const env::Scenario& s = phase1 ? generated[e] : historical[e - config.phase1_episodes];
    EpisodeOptions o;
    o.agent = agent;
    o.epsilon = epsilon_at(config, e);
    o.seed = derive_seed(seed, Stream::exploration, e);
    rl::QNetworkBank backup = result.bank;
    o.learner = &result.bank;
    EpisodeLog log;
    try {
      log = run_episode(s, config, o);
    } catch (const TrainingError& err) {
      result.bank = std::move(backup);
      result.aborted = true;
      result.error = "episode " + std::to_string(e) + ": " + err.what();
      break;
    }
    EpisodeCurve c;
    c.episode = e;
    c.phase = phase1 ? 1 : 2;
    c.epsilon = o.epsilon;
    c.scenario_id = s.id;
    c.cause = log.cause;
    c.steps = log.steps;
    c.sum_speed = log.sum_speed;
    c.mean_speed = log.mean_speed;
    c.mean_loss = log.updates ? log.loss_sum / static_cast<double>(log.updates) : 0.0;
    c.updates = log.updates;
    result.curves.push_back(c);
    if (progress) progress(c);
  }
  return result;
}

void write_curves_csv(std::ostream& out, std::span<const EpisodeCurve> curves) {
  out << "episode,phase,epsilon,scenario_id,terminal_cause,steps,sum_stu_speed,mean_stu_speed,mean_loss,updates\n";
  using text::format_double;
  for (const EpisodeCurve& c : curves) {
    out << c.episode << ',' << c.phase << ',' << format_double(c.epsilon) << ',' << c.scenario_id << ','
        << env::to_string(c.cause) << ',' << c.steps << ',' << format_double(c.sum_speed) << ','
        << format_double(c.mean_speed) << ',' << format_double(c.mean_loss) << ',' << c.updates << '\n';
  }
}

}  // namespace pickling::harness
