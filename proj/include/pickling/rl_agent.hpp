#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pickling/c_agent.hpp"
#include "pickling/env.hpp"
#include "pickling/nn/network.hpp"

namespace pickling::rl {

enum class Variant : std::uint8_t { f_coop, p_coop };
enum class Aggregation : std::uint8_t { sum, mean };
enum class ActingPolicy : std::uint8_t { switches_except_stops, switches_and_period };

// Observable line quantities an agent may see.
enum class StateField : std::uint8_t {
  looper1,       // V_f
  looper2,       // V_s
  ftu_speed,     // v_f
  stu_speed,     // v_s
  ttu_speed,     // v_t
  weld_left,     // t_W_pred
  cut_left,      // t_C_pred
  ftu_residual,  // L_f
  ttu_residual,  // L_t
};

std::string to_string(Variant v);
Variant parse_variant(std::string_view text);  // "f-coop" | "p-coop" (underscores accepted)
std::string to_string(Aggregation a);
std::string to_string(ActingPolicy p);
std::string symbol(StateField f);
StateField parse_state_field(std::string_view symbol);

struct FieldRange {
  double lo = 0.0;
  double hi = 1.0;

  bool operator==(const FieldRange&) const = default;
};

struct RewardSpec {
  double action_weight = 1.0;
  double death_penalty = -1000.0;
  double proximity_weight = 0.0;
  double proximity_margin = 30.0;  // m

  void validate(std::span<const int> actions) const;

  bool operator==(const RewardSpec&) const = default;
};

struct AgentVariantConfig {
  Variant variant = Variant::p_coop;
  std::vector<std::size_t> hidden;
  std::vector<StateField> fields;
  std::vector<int> actions;  // ascending m/min deltas
  RewardSpec reward;
  Aggregation aggregation = Aggregation::sum;
  ActingPolicy acting = ActingPolicy::switches_except_stops;
  double act_period = 30.0;  // s
  double gamma = 0.95;
  double alpha = 0.01;
  double alpha_decay = 0.003;
  double alpha_floor = 1e-4;
  double q_scale = 100.0;  // network outputs are Q / q_scale; the P-Coop preset uses 1e4

  // Physical normalisation range per state field.
  std::array<FieldRange, 9> ranges{};

  static AgentVariantConfig p_coop(const env::PlantConfig& plant = {});
  static AgentVariantConfig f_coop(const env::PlantConfig& plant = {});
  static AgentVariantConfig of(Variant v, const env::PlantConfig& plant = {});

  void validate() const;
  // Whether the RL component acts in a combination at all (P-Coop sits out stops).
  bool acts_in(env::StageCombination c) const;
  std::size_t action_index(int delta) const;

  bool operator==(const AgentVariantConfig&) const = default;
};

// Default ranges: loopers over their bounds, speeds over [0, unit max], stop times
// over [0, 2 x nominal], residuals over [0, 3000] m.
std::array<FieldRange, 9> default_ranges(const env::PlantConfig& plant);

// key=value text, one line per setting, prefix "rl.".
std::string to_text(const AgentVariantConfig& c);
// Applies recognised "rl." keys onto `base`; unknown rl keys throw ConfigError.
AgentVariantConfig apply_text(AgentVariantConfig base, std::span<const std::pair<std::string, std::string>> kv);

double field_value(const env::LineState& s, StateField f);

struct NormalizationStats {
  std::size_t rows = 0;
  std::size_t clamped = 0;
};

// Each selected field mapped affinely into [0, 1] and clamped.
std::vector<double> normalize_state(const env::LineState& s, const AgentVariantConfig& c,
                                    NormalizationStats* stats = nullptr);

// Q-value approximator for one stage combination.
class QApproximator {
 public:
  virtual ~QApproximator() = default;
  virtual nn::Vector values(std::span<const double> state) const = 0;
  // Moves Q(state, action) toward target with step size alpha.
  virtual void step(std::span<const double> state, std::size_t action, double target, double alpha) = 0;
  virtual std::unique_ptr<QApproximator> clone() const = 0;
};

class NetworkQ final : public QApproximator {
 public:
  NetworkQ(nn::Network net, double q_scale);
  nn::Vector values(std::span<const double> state) const override;
  void step(std::span<const double> state, std::size_t action, double target, double alpha) override;
  std::unique_ptr<QApproximator> clone() const override;
  const nn::Network& network() const { return net_; }

 private:
  nn::Network net_;
  double q_scale_;
};

// Lookup table keyed by the integer in state[0].
class TableQ final : public QApproximator {
 public:
  TableQ(std::size_t states, std::size_t actions);
  nn::Vector values(std::span<const double> state) const override;
  void step(std::span<const double> state, std::size_t action, double target, double alpha) override;
  std::unique_ptr<QApproximator> clone() const override;
  const nn::Matrix& table() const { return table_; }
  nn::Matrix& table() { return table_; }

 private:
  std::size_t row(std::span<const double> state) const;
  nn::Matrix table_;
};

struct Transition {
  env::StageCombination combination;
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  env::StageCombination next_combination;
  std::vector<double> next_state;
  bool terminal = false;
};

struct BankEntry {
  std::unique_ptr<QApproximator> q;
  double alpha = 0.01;
  double active_time = 0.0;  // T^k, s
  std::size_t updates = 0;
};

class QNetworkBank {
 public:
  QNetworkBank() = default;
  // Sixteen freshly initialised networks.
  QNetworkBank(const AgentVariantConfig& config, Rng& rng);
  // Sixteen caller-supplied approximators.
  QNetworkBank(const AgentVariantConfig& config, std::vector<std::unique_ptr<QApproximator>> approximators);

  QNetworkBank(const QNetworkBank& other);
  QNetworkBank& operator=(const QNetworkBank& other);
  QNetworkBank(QNetworkBank&&) noexcept = default;
  QNetworkBank& operator=(QNetworkBank&&) noexcept = default;

  const AgentVariantConfig& config() const { return config_; }
  BankEntry& entry(env::StageCombination c) { return entries_[c.index()]; }
  const BankEntry& entry(env::StageCombination c) const { return entries_[c.index()]; }
  double total_active_time() const;
  void reset_active_time();

 private:
  AgentVariantConfig config_;
  std::vector<BankEntry> entries_;
};

inline constexpr std::uint32_t kBankVersion = 1;
// "PKLB", version, config text, per-entry alpha/time/updates, then 16 network checkpoints.
void save_bank(std::ostream& out, const QNetworkBank& bank);
QNetworkBank load_bank(std::istream& in);

// Uniform with probability epsilon, else argmax; ties go to the smallest delta. Returns the index.
std::size_t select_action(const QNetworkBank& bank, std::span<const double> state, env::StageCombination c,
                          double epsilon, Rng& rng);

inline double compose_action(double delta, double c_agent_speed) { return c_agent_speed + delta; }

struct StepRecord {
  double applied_delta = 0.0;  // applied STU speed minus the C component
  double proximity = 0.0;      // summed max(0, 1 - distance / margin) over both loopers
  bool death = false;
};

double proximity(const env::LineState& s, double margin);
double step_reward(const StepRecord& r, const RewardSpec& spec);
// Per-step rewards (penalty included on the death step), then summed or averaged.
double accumulate_reward(std::span<const StepRecord> window, const RewardSpec& spec, Aggregation aggregation);

// One semi-gradient step for the transition's combination. Returns the pre-update squared error.
double q_update(QNetworkBank& bank, const Transition& t, double gamma);

struct Decision {
  double command = 0.0;
  double c_speed = 0.0;  // held C component
  double delta = 0.0;
  bool acted = false;
};

// Drives one episode: samples the C-Agent at acting instants, holds its speed, adds the RL
// delta, assembles transitions and (when learning) applies q_update.
class Controller {
 public:
  // Learns into `bank` (T^k and q_update).
  Controller(QNetworkBank& bank, control::CAgentConfig c_agent, double epsilon, Rng& rng);
  // Acts only; bank == nullptr runs the C-Agent-per-stage baseline at the variant's acting instants.
  Controller(const QNetworkBank* bank, AgentVariantConfig config, control::CAgentConfig c_agent, double epsilon,
             Rng& rng);

  Decision decide(const env::LineState& s);
  void observe(const env::StepEvents& ev, const env::LineState& next);

  double loss_sum() const { return loss_sum_; }
  std::size_t update_count() const { return updates_; }
  const std::array<double, env::kCombinationCount>& active_time() const { return active_time_; }
  const std::vector<Transition>& transitions() const { return log_; }
  void record_transitions(bool on) { record_ = on; }
  // Schedule of the C-Agent component; switches_except_stops resamples it only at combination switches.
  void set_c_schedule(ActingPolicy p) { c_schedule_ = p; }

 private:
  struct Window {
    env::StageCombination combination;
    std::vector<double> state;
    std::size_t action = 0;
    std::vector<StepRecord> steps;
  };

  void close_window(const env::LineState& s, env::StageCombination now);
  void finish(const Transition& t);

  const QNetworkBank* bank_;
  QNetworkBank* learner_ = nullptr;
  AgentVariantConfig config_;
  control::CAgentConfig c_agent_;
  double epsilon_;
  Rng* rng_;
  bool record_ = false;
  ActingPolicy c_schedule_ = ActingPolicy::switches_and_period;

  std::optional<env::StageCombination> current_;
  double last_act_ = 0.0;
  double c_speed_ = 0.0;
  double delta_ = 0.0;
  std::optional<Window> open_;
  std::array<std::optional<Transition>, env::kCombinationCount> pending_;
  std::optional<env::StageCombination> last_closed_;
  std::array<double, env::kCombinationCount> active_time_{};
  double loss_sum_ = 0.0;
  std::size_t updates_ = 0;
  std::vector<Transition> log_;
};

}  // namespace pickling::rl
