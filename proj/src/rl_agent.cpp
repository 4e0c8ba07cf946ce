#include "pickling/rl_agent.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "pickling/binary_io.hpp"
#include "pickling/errors.hpp"
#include "pickling/text.hpp"

namespace pickling::rl {

using env::LineState;
using env::StageCombination;

namespace {

constexpr std::array<StateField, 9> kAllFields{StateField::looper1,   StateField::looper2,      StateField::ftu_speed,
                                               StateField::stu_speed, StateField::ttu_speed,    StateField::weld_left,
                                               StateField::cut_left,  StateField::ftu_residual, StateField::ttu_residual};

template <typename T>
std::string join(const std::vector<T>& xs, const auto& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::f_coop ? "f-coop" : "p-coop"; }

Variant parse_variant(std::string_view text) {
  if (text == "f-coop" || text == "f_coop") return Variant::f_coop;
  if (text == "p-coop" || text == "p_coop") return Variant::p_coop;
  throw InputError("unknown agent variant: " + std::string(text));
}

std::string to_string(Aggregation a) { return a == Aggregation::sum ? "sum" : "mean"; }

std::string to_string(ActingPolicy p) {
  return p == ActingPolicy::switches_except_stops ? "switches_except_stops" : "switches_and_period";
}

std::string symbol(StateField f) {
  switch (f) {
    case StateField::looper1: return "V_f";
    case StateField::looper2: return "V_s";
    case StateField::ftu_speed: return "v_f";
    case StateField::stu_speed: return "v_s";
    case StateField::ttu_speed: return "v_t";
    case StateField::weld_left: return "t_W_pred";
    case StateField::cut_left: return "t_C_pred";
    case StateField::ftu_residual: return "L_f";
    case StateField::ttu_residual: return "L_t";
  }
  return "?";
}

StateField parse_state_field(std::string_view s) {
  for (StateField f : kAllFields) {
    if (symbol(f) == s) return f;
  }
  throw InputError("unknown state field: " + std::string(s));
}

void RewardSpec::validate(std::span<const int> actions) const {
  if (!std::isfinite(action_weight) || !(death_penalty < 0.0)) {
    throw ConfigError("reward: action weight must be finite and the death penalty negative");
  }
  if (!(proximity_weight >= 0.0) || !(proximity_margin > 0.0)) {
    throw ConfigError("reward: proximity weight must be >= 0 and its margin positive");
  }
  int largest = 0;
  for (int a : actions) largest = std::max(largest, std::abs(a));
  const double per_step = std::abs(action_weight) * largest + proximity_weight * 2.0;
  if (per_step > 0.0 && std::abs(death_penalty) < 100.0 * per_step) {
    throw ConfigError("reward: death penalty must be at least 100x the largest per-step reward");
  }
}

std::array<FieldRange, 9> default_ranges(const env::PlantConfig& p) {
  std::array<FieldRange, 9> r{};
  r[static_cast<std::size_t>(StateField::looper1)] = {p.looper1.lower, p.looper1.upper};
  r[static_cast<std::size_t>(StateField::looper2)] = {p.looper2.lower, p.looper2.upper};
  r[static_cast<std::size_t>(StateField::ftu_speed)] = {0.0, p.ftu_max_speed};
  r[static_cast<std::size_t>(StateField::stu_speed)] = {0.0, std::max(p.ftu_max_speed, p.ttu_max_speed)};
  r[static_cast<std::size_t>(StateField::ttu_speed)] = {0.0, p.ttu_max_speed};
  r[static_cast<std::size_t>(StateField::weld_left)] = {0.0, 360.0};
  r[static_cast<std::size_t>(StateField::cut_left)] = {0.0, 120.0};
  r[static_cast<std::size_t>(StateField::ftu_residual)] = {0.0, 3000.0};
  r[static_cast<std::size_t>(StateField::ttu_residual)] = {0.0, 3000.0};
  return r;
}

AgentVariantConfig AgentVariantConfig::p_coop(const env::PlantConfig& plant) {
  AgentVariantConfig c;
  c.variant = Variant::p_coop;
  c.hidden = {8, 8};
  c.fields = {StateField::looper1,   StateField::looper2,      StateField::ftu_speed,   StateField::ttu_speed,
              StateField::weld_left, StateField::ftu_residual, StateField::ttu_residual};
  for (int a = 0; a <= 9; ++a) c.actions.push_back(a);
  c.aggregation = Aggregation::sum;
  c.q_scale = 1e4;
  c.acting = ActingPolicy::switches_except_stops;
  c.ranges = default_ranges(plant);
  return c;
}

AgentVariantConfig AgentVariantConfig::f_coop(const env::PlantConfig& plant) {
  AgentVariantConfig c;
  c.variant = Variant::f_coop;
  c.hidden = {32, 64, 16};
  c.fields = {StateField::looper1, StateField::looper2, StateField::weld_left, StateField::ftu_residual,
              StateField::ttu_residual};
  for (int a = -5; a <= 5; ++a) c.actions.push_back(a);
  c.reward.proximity_weight = 1.0;
  c.aggregation = Aggregation::mean;
  c.acting = ActingPolicy::switches_and_period;
  c.ranges = default_ranges(plant);
  return c;
}

AgentVariantConfig AgentVariantConfig::of(Variant v, const env::PlantConfig& plant) {
  return v == Variant::f_coop ? f_coop(plant) : p_coop(plant);
}

void AgentVariantConfig::validate() const {
  if (fields.empty()) throw ConfigError("rl: no state fields");
  if (actions.empty()) throw ConfigError("rl: empty action set");
  if (!std::is_sorted(actions.begin(), actions.end()) ||
      std::adjacent_find(actions.begin(), actions.end()) != actions.end()) {
    throw ConfigError("rl: actions must be strictly ascending");
  }
  if (std::find(actions.begin(), actions.end(), 0) == actions.end()) throw ConfigError("rl: action set lacks 0");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("rl: hidden layer of width 0");
  }
  for (const FieldRange& r : ranges) {
    if (!(r.hi > r.lo)) throw ConfigError("rl: empty normalisation range");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("rl: gamma must lie in [0, 1]");
  if (!(alpha > 0.0) || !(alpha_floor > 0.0) || !(alpha_decay >= 0.0 && alpha_decay < 1.0)) {
    throw ConfigError("rl: invalid step size schedule");
  }
  if (!(act_period > 0.0)) throw ConfigError("rl: act period must be positive");
  if (!(q_scale > 0.0)) throw ConfigError("rl: q scale must be positive");
  reward.validate(actions);
}

bool AgentVariantConfig::acts_in(StageCombination c) const {
  return acting == ActingPolicy::switches_and_period || !c.has_stop();
}

std::size_t AgentVariantConfig::action_index(int delta) const {
  const auto it = std::find(actions.begin(), actions.end(), delta);
  if (it == actions.end()) throw InputError("delta " + std::to_string(delta) + " not in the action set");
  return static_cast<std::size_t>(it - actions.begin());
}

std::string to_text(const AgentVariantConfig& c) {
  using text::format_double;
  std::ostringstream out;
  out << "rl.variant=" << to_string(c.variant) << '\n';
  out << "rl.hidden=" << join(c.hidden, [](std::size_t h) { return std::to_string(h); }) << '\n';
  out << "rl.fields=" << join(c.fields, [](StateField f) { return symbol(f); }) << '\n';
  out << "rl.actions=" << join(c.actions, [](int a) { return std::to_string(a); }) << '\n';
  out << "rl.reward.action_weight=" << format_double(c.reward.action_weight) << '\n';
  out << "rl.reward.death_penalty=" << format_double(c.reward.death_penalty) << '\n';
  out << "rl.reward.proximity_weight=" << format_double(c.reward.proximity_weight) << '\n';
  out << "rl.reward.proximity_margin=" << format_double(c.reward.proximity_margin) << '\n';
  out << "rl.aggregation=" << to_string(c.aggregation) << '\n';
  out << "rl.acting=" << to_string(c.acting) << '\n';
  out << "rl.act_period=" << format_double(c.act_period) << '\n';
  out << "rl.gamma=" << format_double(c.gamma) << '\n';
  out << "rl.alpha=" << format_double(c.alpha) << '\n';
  out << "rl.alpha_decay=" << format_double(c.alpha_decay) << '\n';
  out << "rl.alpha_floor=" << format_double(c.alpha_floor) << '\n';
  out << "rl.q_scale=" << format_double(c.q_scale) << '\n';
  for (StateField f : kAllFields) {
    const FieldRange& r = c.ranges[static_cast<std::size_t>(f)];
    out << "rl.range." << symbol(f) << '=' << format_double(r.lo) << ',' << format_double(r.hi) << '\n';
  }
  return out.str();
}

AgentVariantConfig apply_text(AgentVariantConfig c, std::span<const std::pair<std::string, std::string>> kv) {
  // The variant key resets to that variant's defaults, so apply it first.
  for (const auto& [key, value] : kv) {
    if (key == "rl.variant") {
      const auto ranges = c.ranges;
      c = AgentVariantConfig::of(parse_variant(value));
      c.ranges = ranges;
    }
  }
  for (const auto& [key, value] : kv) {
    if (key.rfind("rl.", 0) != 0 || key == "rl.variant") continue;
    const std::string k = key.substr(3);
    const auto items = text::split(value, ',');
    if (k == "hidden") {
      c.hidden.clear();
      for (const auto& x : items) c.hidden.push_back(static_cast<std::size_t>(text::parse_long(text::trim(x))));
    } else if (k == "fields") {
      c.fields.clear();
      for (const auto& x : items) c.fields.push_back(parse_state_field(text::trim(x)));
    } else if (k == "actions") {
      c.actions.clear();
      for (const auto& x : items) c.actions.push_back(text::parse_int(text::trim(x)));
    } else if (k == "reward.action_weight") {
      c.reward.action_weight = text::parse_double(value);
    } else if (k == "reward.death_penalty") {
      c.reward.death_penalty = text::parse_double(value);
    } else if (k == "reward.proximity_weight") {
      c.reward.proximity_weight = text::parse_double(value);
    } else if (k == "reward.proximity_margin") {
      c.reward.proximity_margin = text::parse_double(value);
    } else if (k == "aggregation") {
      if (value == "sum") c.aggregation = Aggregation::sum;
      else if (value == "mean") c.aggregation = Aggregation::mean;
      else throw ConfigError("rl.aggregation must be sum or mean");
    } else if (k == "acting") {
      if (value == "switches_except_stops") c.acting = ActingPolicy::switches_except_stops;
      else if (value == "switches_and_period") c.acting = ActingPolicy::switches_and_period;
      else throw ConfigError("rl.acting must be switches_except_stops or switches_and_period");
    } else if (k == "act_period") {
      c.act_period = text::parse_double(value);
    } else if (k == "gamma") {
      c.gamma = text::parse_double(value);
    } else if (k == "alpha") {
      c.alpha = text::parse_double(value);
    } else if (k == "alpha_decay") {
      c.alpha_decay = text::parse_double(value);
    } else if (k == "alpha_floor") {
      c.alpha_floor = text::parse_double(value);
    } else if (k == "q_scale") {
      c.q_scale = text::parse_double(value);
    } else if (k.rfind("range.", 0) == 0) {
      if (items.size() != 2) throw ConfigError(key + " needs lo,hi");
      c.ranges[static_cast<std::size_t>(parse_state_field(k.substr(6)))] = {text::parse_double(text::trim(items[0])),
                                                                          text::parse_double(text::trim(items[1]))};
    } else {
      throw ConfigError("unknown setting " + key);
    }
  }
  return c;
}

double field_value(const LineState& s, StateField f) {
  switch (f) {
    case StateField::looper1: return s.looper1;
    case StateField::looper2: return s.looper2;
    case StateField::ftu_speed: return s.ftu.speed;
    case StateField::stu_speed: return s.stu_speed;
    case StateField::ttu_speed: return s.ttu.speed;
    case StateField::weld_left: return s.t_w_pred;
    case StateField::cut_left: return s.t_c_pred;
    case StateField::ftu_residual: return s.ftu.residual;
    case StateField::ttu_residual: return s.ttu.residual;
  }
  return 0.0;
}

std::vector<double> normalize_state(const LineState& s, const AgentVariantConfig& c, NormalizationStats* stats) {
  std::vector<double> row;
  row.reserve(c.fields.size());
  for (StateField f : c.fields) {
    const double v = field_value(s, f);
    if (!std::isfinite(v)) throw InputError("non-finite state field " + symbol(f));
    const FieldRange& r = c.ranges[static_cast<std::size_t>(f)];
    const double x = (v - r.lo) / (r.hi - r.lo);
    const double clamped = std::clamp(x, 0.0, 1.0);
    if (stats && clamped != x) ++stats->clamped;
    row.push_back(clamped);
  }
  if (stats) ++stats->rows;
  return row;
}

NetworkQ::NetworkQ(nn::Network net, double q_scale) : net_(std::move(net)), q_scale_(q_scale) {}

nn::Vector NetworkQ::values(std::span<const double> state) const {
  nn::Matrix x(1, static_cast<Eigen::Index>(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = state[i];
  return net_.predict(x).row(0).transpose() * q_scale_;
}

void NetworkQ::step(std::span<const double> state, std::size_t action, double target, double alpha) {
  nn::Matrix x(1, static_cast<Eigen::Index>(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = state[i];
  Rng unused(0);
  net_.zero_grad();
  const nn::Matrix out = net_.forward(x, nn::Mode::train, unused);
  nn::Matrix grad = nn::Matrix::Zero(out.rows(), out.cols());
  const auto a = static_cast<Eigen::Index>(action);
  grad(0, a) = 2.0 * (out(0, a) - target / q_scale_);
  net_.backward(grad);
  auto params = net_.parameters();
  nn::OptimizerState sgd = nn::OptimizerState::sgd(alpha);
  nn::sgd_update(params, sgd);
}

std::unique_ptr<QApproximator> NetworkQ::clone() const { return std::make_unique<NetworkQ>(*this); }

TableQ::TableQ(std::size_t states, std::size_t actions)
    : table_(nn::Matrix::Zero(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(actions))) {}

std::size_t TableQ::row(std::span<const double> state) const {
  if (state.empty()) throw InputError("table lookup needs a state index");
  const double r = std::round(state[0]);
  if (r < 0.0 || r >= static_cast<double>(table_.rows())) throw InputError("table state index out of range");
  return static_cast<std::size_t>(r);
}

nn::Vector TableQ::values(std::span<const double> state) const {
  return table_.row(static_cast<Eigen::Index>(row(state))).transpose();
}

void TableQ::step(std::span<const double> state, std::size_t action, double target, double alpha) {
  double& q = table_(static_cast<Eigen::Index>(row(state)), static_cast<Eigen::Index>(action));
  q += alpha * (target - q);
}

std::unique_ptr<QApproximator> TableQ::clone() const { return std::make_unique<TableQ>(*this); }

QNetworkBank::QNetworkBank(const AgentVariantConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const nn::NetworkSpec spec = nn::mlp_spec(config_.fields.size(), config_.hidden, config_.actions.size(),
                                            nn::Activation::relu, nn::Activation::identity, 0.0, nn::LossKind::mse);
  entries_.resize(env::kCombinationCount);
  for (BankEntry& e : entries_) {
    e.q = std::make_unique<NetworkQ>(nn::Network(spec, rng), config_.q_scale);
    e.alpha = config_.alpha;
  }
}

QNetworkBank::QNetworkBank(const AgentVariantConfig& config, std::vector<std::unique_ptr<QApproximator>> approx)
    : config_(config) {
  if (approx.size() != env::kCombinationCount) throw InputError("a bank needs 16 approximators");
  entries_.resize(env::kCombinationCount);
  for (std::size_t k = 0; k < approx.size(); ++k) {
    entries_[k].q = std::move(approx[k]);
    entries_[k].alpha = config_.alpha;
  }
}

QNetworkBank::QNetworkBank(const QNetworkBank& other) : config_(other.config_) {
  entries_.resize(other.entries_.size());
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const BankEntry& o = other.entries_[k];
    entries_[k] = {o.q ? o.q->clone() : nullptr, o.alpha, o.active_time, o.updates};
  }
}

QNetworkBank& QNetworkBank::operator=(const QNetworkBank& other) {
  if (this != &other) *this = QNetworkBank(other);
  return *this;
}

double QNetworkBank::total_active_time() const {
  double t = 0.0;
  for (const BankEntry& e : entries_) t += e.active_time;
  return t;
}

void QNetworkBank::reset_active_time() {
  for (BankEntry& e : entries_) e.active_time = 0.0;
}

void save_bank(std::ostream& out, const QNetworkBank& bank) {
  binary::write_magic(out, "PKLB", kBankVersion);
  binary::write_string(out, to_text(bank.config()));
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
    const BankEntry& e = bank.entry(StageCombination::from_index(k));
    const auto* q = dynamic_cast<const NetworkQ*>(e.q.get());
    if (!q) throw IoError("only network banks can be saved");
    binary::write<double>(out, e.alpha);
    binary::write<double>(out, e.active_time);
    binary::write<std::uint64_t>(out, e.updates);
    nn::save_network(out, q->network());
  }
  if (!out) throw IoError("bank write failed");
}

QNetworkBank load_bank(std::istream& in) {
  const std::uint32_t version = binary::expect_magic(in, "PKLB");
  if (version != kBankVersion) throw IoError("unsupported bank version " + std::to_string(version));
  std::istringstream cfg_text(binary::read_string(in));
  const auto kv = text::parse_key_values(cfg_text);
  const AgentVariantConfig config = apply_text(AgentVariantConfig{}, kv);
  config.validate();
  std::vector<std::unique_ptr<QApproximator>> qs;
  std::vector<BankEntry> meta(env::kCombinationCount);
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
    meta[k].alpha = binary::read<double>(in);
    meta[k].active_time = binary::read<double>(in);
    meta[k].updates = binary::read<std::uint64_t>(in);
    nn::Network net = nn::load_network(in, nn::LossKind::mse);
    if (net.spec().input_dim() != config.fields.size() || net.spec().output_dim() != config.actions.size()) {
      throw IoError("bank network shape does not match its config");
    }
    qs.push_back(std::make_unique<NetworkQ>(std::move(net), config.q_scale));
  }
  QNetworkBank bank(config, std::move(qs));
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
    BankEntry& e = bank.entry(StageCombination::from_index(k));
    e.alpha = meta[k].alpha;
    e.active_time = meta[k].active_time;
    e.updates = meta[k].updates;
  }
  return bank;
}

std::size_t select_action(const QNetworkBank& bank, std::span<const double> state, StageCombination c,
                          double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InputError("epsilon must lie in [0, 1]");
  const std::size_t n = bank.config().actions.size();
  if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  }
  const nn::Vector q = bank.entry(c).q->values(state);
  std::size_t best = 0;
  for (std::size_t a = 1; a < n; ++a) {
    if (q(static_cast<Eigen::Index>(a)) > q(static_cast<Eigen::Index>(best))) best = a;
  }
  return best;
}

double proximity(const LineState& s, double margin) {
  const env::PlantConfig& p = s.plant();
  const double d1 = s.looper1 - p.looper1.lower;
  const double d2 = p.looper2.upper - s.looper2;
  return std::max(0.0, 1.0 - d1 / margin) + std::max(0.0, 1.0 - d2 / margin);
}

double step_reward(const StepRecord& r, const RewardSpec& spec) {
  double v = spec.action_weight * r.applied_delta - spec.proximity_weight * r.proximity;
  if (r.death) v += spec.death_penalty;
  return v;
}

double accumulate_reward(std::span<const StepRecord> window, const RewardSpec& spec, Aggregation aggregation) {
  if (window.empty()) throw InputError("reward window must hold at least one step");
  double total = 0.0;
  for (const StepRecord& r : window) total += step_reward(r, spec);
  return aggregation == Aggregation::sum ? total : total / static_cast<double>(window.size());
}

double q_update(QNetworkBank& bank, const Transition& t, double gamma) {
  if (!t.terminal && t.next_combination != t.combination) {
    throw ProtocolError("transition successor belongs to combination " + t.next_combination.code() +
                        ", not " + t.combination.code());
  }
  BankEntry& e = bank.entry(t.combination);
  if (t.action >= bank.config().actions.size()) throw InputError("action index out of range");
  double z = t.reward;
  if (!t.terminal) z += gamma * e.q->values(t.next_state).maxCoeff();
  const double q = e.q->values(t.state)(static_cast<Eigen::Index>(t.action));
  const double loss = (z - q) * (z - q);
  e.q->step(t.state, t.action, z, e.alpha);
  e.alpha = std::max(e.alpha * (1.0 - bank.config().alpha_decay), bank.config().alpha_floor);
  ++e.updates;
  return loss;
}

Controller::Controller(QNetworkBank& bank, control::CAgentConfig c_agent, double epsilon, Rng& rng)
    : Controller(&bank, bank.config(), c_agent, epsilon, rng) {
  learner_ = &bank;
}

Controller::Controller(const QNetworkBank* bank, AgentVariantConfig config, control::CAgentConfig c_agent,
                       double epsilon, Rng& rng)
    : bank_(bank), config_(std::move(config)), c_agent_(c_agent), epsilon_(epsilon), rng_(&rng) {
  config_.validate();
  c_agent_.validate();
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InputError("epsilon must lie in [0, 1]");
}

void Controller::finish(const Transition& t) {
  if (record_) log_.push_back(t);
  if (!learner_) return;
  const double loss = q_update(*learner_, t, config_.gamma);
  if (!std::isfinite(loss)) throw TrainingError("non-finite q loss in combination " + t.combination.code());
  loss_sum_ += loss;
  ++updates_;
}

void Controller::close_window(const LineState& s, StageCombination now) {
  if (!open_) return;
  Window w = std::move(*open_);
  open_.reset();
  Transition t{w.combination, std::move(w.state), w.action,
               accumulate_reward(w.steps, config_.reward, config_.aggregation), {}, {}, false};
  if (w.combination == now) {
    t.next_combination = now;
    t.next_state = normalize_state(s, config_);
    finish(t);
  } else {
    pending_[w.combination.index()] = std::move(t);
    last_closed_ = w.combination;
  }
}

Decision Controller::decide(const LineState& s) {
  if (s.terminal) throw ProtocolError("decide on a terminal state");
  const StageCombination k = env::stage_combination(s);
  const bool switched = !current_ || *current_ != k;
  const bool periodic = !switched && config_.acting == ActingPolicy::switches_and_period &&
                        s.time - last_act_ >= config_.act_period - 1e-9;
  Decision d;
  if (switched || periodic) {
    close_window(s, k);
    if (auto& p = pending_[k.index()]; p && switched) {
      p->next_combination = k;
      p->next_state = normalize_state(s, config_);
      finish(*p);
      p.reset();
    }
    current_ = k;
    last_act_ = s.time;
    if (switched || c_schedule_ == ActingPolicy::switches_and_period) c_speed_ = control::recommend_speed(s, c_agent_);
    delta_ = 0.0;
    if (bank_ && config_.acts_in(k)) {
      Window w{k, normalize_state(s, config_), 0, {}};
      w.action = select_action(*bank_, w.state, k, epsilon_, *rng_);
      delta_ = config_.actions[w.action];
      open_ = std::move(w);
    }
    d.acted = true;
  }
  active_time_[k.index()] += 1.0;
  if (learner_) learner_->entry(k).active_time += 1.0;
  d.c_speed = c_speed_;
  d.delta = delta_;
  d.command = std::max(0.0, compose_action(delta_, c_speed_));
  return d;
}

void Controller::observe(const env::StepEvents& ev, const LineState& next) {
  StepRecord r;
  r.applied_delta = ev.stu_speed - c_speed_;
  r.proximity = proximity(next, config_.reward.proximity_margin);
  r.death = next.cause == env::TerminalCause::death;
  if (open_) open_->steps.push_back(r);
  if (!next.terminal) return;

  if (open_) {
    Window w = std::move(*open_);
    open_.reset();
    finish({w.combination, std::move(w.state), w.action,
            accumulate_reward(w.steps, config_.reward, config_.aggregation), w.combination, {}, true});
  } else if (r.death && last_closed_ && pending_[last_closed_->index()]) {
    // Stop combinations without an RL window pass the penalty back to the last acting window.
    pending_[last_closed_->index()]->reward += config_.reward.death_penalty;
  }
  // Windows whose combination never recurred end with the episode.
  for (auto& p : pending_) {
    if (!p) continue;
    p->terminal = true;
    p->next_combination = p->combination;
    p->next_state.clear();
    finish(*p);
    p.reset();
  }
  last_closed_.reset();
  current_.reset();
}

}  // namespace pickling::rl
