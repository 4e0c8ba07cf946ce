#include <fstream>
#include <functional>
#include <sstream>

#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace pickling::harness {

namespace {

struct Binding {
  std::string key;
  std::function<std::string(const HarnessConfig&)> get;
  std::function<void(HarnessConfig&, const std::string&)> set;
};

template <typename Access>
Binding real(std::string key, Access access) {
  return {std::move(key), [access](const HarnessConfig& c) { return text::format_double(access(c)); },
          [access](HarnessConfig& c, const std::string& v) { access(c) = text::parse_double(v); }};
}

template <typename Access>
Binding count(std::string key, Access access) {
  return {std::move(key), [access](const HarnessConfig& c) { return std::to_string(access(c)); },
          [access](HarnessConfig& c, const std::string& v) {
            const long long n = text::parse_long(v);
            if (n < 0) throw ConfigError("negative count: " + v);
            access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(n);
          }};
}

std::uint64_t parse_u64(const std::string& v) {
  std::size_t used = 0;
  const std::string t = text::trim(v);
  if (t.empty() || t[0] == '-') throw ConfigError("expected an unsigned integer: " + v);
  unsigned long long n = 0;
  try {
    n = std::stoull(t, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer: " + v);
  }
  if (used != t.size()) throw ConfigError("expected an unsigned integer: " + v);
  return n;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    b.push_back({"seed", [](const HarnessConfig& c) { return std::to_string(c.seed); },
                 [](HarnessConfig& c, const std::string& v) { c.seed = parse_u64(v); }});
    b.push_back(count("history.strips", [](auto& c) -> auto& { return c.history_strips; }));

    b.push_back(count("grades.hidden_units", [](auto& c) -> auto& { return c.grades.hidden_units; }));
    b.push_back(real("grades.dropout_rate", [](auto& c) -> auto& { return c.grades.dropout_rate; }));
    b.push_back(count("grades.sequence_length", [](auto& c) -> auto& { return c.grades.sequence_length; }));
    b.push_back(count("grades.batch_size", [](auto& c) -> auto& { return c.grades.batch_size; }));
    b.push_back(count("grades.epochs", [](auto& c) -> auto& { return c.grades.epochs; }));
    b.push_back(real("grades.learning_rate", [](auto& c) -> auto& { return c.grades.learning_rate; }));
    b.push_back(real("grades.sampling_temperature", [](auto& c) -> auto& { return c.grades.sampling_temperature; }));

    b.push_back(count("cgan.noise_length", [](auto& c) -> auto& { return c.cgan.noise_length; }));
    b.push_back(count("cgan.window_length", [](auto& c) -> auto& { return c.cgan.window_length; }));
    b.push_back({"cgan.hidden",
                 [](const HarnessConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.cgan.hidden.size(); ++i) {
                     out += (i ? "," : "") + std::to_string(c.cgan.hidden[i]);
                   }
                   return out;
                 },
                 [](HarnessConfig& c, const std::string& v) {
                   c.cgan.hidden.clear();
                   for (const auto& x : text::split(v, ',')) {
                     c.cgan.hidden.push_back(static_cast<std::size_t>(text::parse_long(text::trim(x))));
                   }
                 }});
    b.push_back(count("cgan.discriminator_ratio", [](auto& c) -> auto& { return c.cgan.discriminator_ratio; }));
    b.push_back(real("cgan.label_smoothing", [](auto& c) -> auto& { return c.cgan.label_smoothing; }));
    b.push_back(count("cgan.epochs", [](auto& c) -> auto& { return c.cgan.epochs; }));
    b.push_back(count("cgan.batch_size", [](auto& c) -> auto& { return c.cgan.batch_size; }));
    b.push_back(real("cgan.learning_rate", [](auto& c) -> auto& { return c.cgan.learning_rate; }));
    b.push_back(real("cgan.leaky_slope", [](auto& c) -> auto& { return c.cgan.leaky_slope; }));
    b.push_back(count("cgan.window_stride", [](auto& c) -> auto& { return c.cgan.window_stride; }));
    b.push_back(real("cgan.collapse_ratio", [](auto& c) -> auto& { return c.cgan.collapse_ratio; }));
    b.push_back(count("cgan.collapse_patience", [](auto& c) -> auto& { return c.cgan.collapse_patience; }));

    b.push_back(real("plant.looper1.lower", [](auto& c) -> auto& { return c.plant.looper1.lower; }));
    b.push_back(real("plant.looper1.upper", [](auto& c) -> auto& { return c.plant.looper1.upper; }));
    b.push_back(real("plant.looper2.lower", [](auto& c) -> auto& { return c.plant.looper2.lower; }));
    b.push_back(real("plant.looper2.upper", [](auto& c) -> auto& { return c.plant.looper2.upper; }));
    b.push_back(real("plant.sync_fraction", [](auto& c) -> auto& { return c.plant.sync_fraction; }));
    b.push_back(real("plant.sync_hysteresis", [](auto& c) -> auto& { return c.plant.sync_hysteresis; }));
    b.push_back(real("plant.ftu_max_speed", [](auto& c) -> auto& { return c.plant.ftu_max_speed; }));
    b.push_back(real("plant.ttu_max_speed", [](auto& c) -> auto& { return c.plant.ttu_max_speed; }));
    b.push_back(real("plant.ramp", [](auto& c) -> auto& { return c.plant.ramp; }));
    b.push_back(real("plant.slowdown_residual", [](auto& c) -> auto& { return c.plant.slowdown_residual; }));
    b.push_back(real("plant.crawl_speed", [](auto& c) -> auto& { return c.plant.crawl_speed; }));
    b.push_back(real("plant.stu_length", [](auto& c) -> auto& { return c.plant.stu_length; }));
    b.push_back(count("plant.braking_horizon", [](auto& c) -> auto& { return c.plant.braking_horizon; }));
    b.push_back(count("plant.strips_per_episode", [](auto& c) -> auto& { return c.plant.strips_per_episode; }));

    b.push_back({"speed_table", [](const HarnessConfig& c) { return c.speed_table; },
                 [](HarnessConfig& c, const std::string& v) { c.speed_table = v; }});
    b.push_back(real("disturbance.weld.mean", [](auto& c) -> auto& { return c.disturbance.weld.mean; }));
    b.push_back(real("disturbance.weld.sd", [](auto& c) -> auto& { return c.disturbance.weld.sd; }));
    b.push_back(real("disturbance.weld.min", [](auto& c) -> auto& { return c.disturbance.weld.min; }));
    b.push_back(real("disturbance.cut.mean", [](auto& c) -> auto& { return c.disturbance.cut.mean; }));
    b.push_back(real("disturbance.cut.sd", [](auto& c) -> auto& { return c.disturbance.cut.sd; }));
    b.push_back(real("disturbance.cut.min", [](auto& c) -> auto& { return c.disturbance.cut.min; }));
    b.push_back(real("disturbance.prediction_sd", [](auto& c) -> auto& { return c.disturbance.prediction_sd; }));

    b.push_back(real("c_agent.margin", [](auto& c) -> auto& { return c.c_agent.margin; }));
    b.push_back(count("c_agent.horizon", [](auto& c) -> auto& { return c.c_agent.horizon; }));
    b.push_back(real("c_agent.safety_factor", [](auto& c) -> auto& { return c.c_agent.safety_factor; }));
    b.push_back(real("c_agent.ramp", [](auto& c) -> auto& { return c.c_agent.ramp; }));
    b.push_back(real("c_agent.grid_step", [](auto& c) -> auto& { return c.c_agent.grid_step; }));

    b.push_back({"per_stage_variant", [](const HarnessConfig& c) { return rl::to_string(c.per_stage_variant); },
                 [](HarnessConfig& c, const std::string& v) { c.per_stage_variant = rl::parse_variant(v); }});
    b.push_back(count("schedule.phase1_episodes", [](auto& c) -> auto& { return c.phase1_episodes; }));
    b.push_back(count("schedule.phase2_episodes", [](auto& c) -> auto& { return c.phase2_episodes; }));
    b.push_back(count("schedule.report_window", [](auto& c) -> auto& { return c.report_window; }));
    b.push_back(count("schedule.eval_episodes", [](auto& c) -> auto& { return c.eval_episodes; }));
    b.push_back(real("schedule.epsilon_start", [](auto& c) -> auto& { return c.epsilon_start; }));
    b.push_back(real("schedule.epsilon_end", [](auto& c) -> auto& { return c.epsilon_end; }));
    b.push_back(count("threads", [](auto& c) -> auto& { return c.threads; }));
    return b;
  }();
  return table;
}

const char* variant_prefix(rl::Variant v) { return v == rl::Variant::f_coop ? "f_coop." : "p_coop."; }

}  // namespace

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile parse_profile(std::string_view t) {
  if (t == "desk") return Profile::desk;
  if (t == "paper") return Profile::paper;
  throw ConfigError("unknown profile: " + std::string(t));
}

HarnessConfig HarnessConfig::desk() {
  HarnessConfig c;
  c.profile = Profile::desk;
  c.history_strips = 500;
  c.grades.hidden_units = 32;
  c.grades.epochs = 200;
  return c;
}

HarnessConfig HarnessConfig::paper() {
  HarnessConfig c;
  c.profile = Profile::paper;
  c.history_strips = 5000;
  c.grades = grades::GradeModelConfig::paper();
  c.phase1_episodes = 800;
  c.phase2_episodes = 200;
  c.report_window = 100;
  c.eval_episodes = 100;
  return c;
}

HarnessConfig HarnessConfig::of(Profile p) { return p == Profile::desk ? desk() : paper(); }

void HarnessConfig::validate() const {
  plant.validate();
  disturbance.validate();
  c_agent.validate();
  p_coop.validate();
  f_coop.validate();
  if (p_coop.variant != rl::Variant::p_coop || f_coop.variant != rl::Variant::f_coop) {
    throw ConfigError("variant settings are stored under the wrong prefix");
  }
  try {
    grades.validate();
    cgan.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (history_strips < plant.strips_per_episode) throw ConfigError("history must hold at least one episode");
  if (report_window > phase2_episodes) throw ConfigError("report window must lie inside phase 2");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
    throw ConfigError("epsilon schedule must lie in [0, 1]");
  }
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

std::string to_text(const HarnessConfig& c) {
  std::ostringstream out;
  out << "# pickling line harness configuration\n";
  out << "profile=" << to_string(c.profile) << '\n';
  for (const Binding& b : bindings()) out << b.key << '=' << b.get(c) << '\n';
  for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
    std::istringstream lines(rl::to_text(c.variant(v)));
    std::string line;
    while (std::getline(lines, line)) out << variant_prefix(v) << line.substr(3) << '\n';
  }
  return out.str();
}

HarnessConfig apply_config(HarnessConfig c, std::span<const std::pair<std::string, std::string>> kv) {
  for (const auto& [key, value] : kv) {
    if (key == "profile") c = HarnessConfig::of(parse_profile(value));
  }
  const env::PlantConfig before = c.plant;
  std::vector<std::pair<std::string, std::string>> variant_kv[2];
  for (const auto& [key, value] : kv) {
    if (key == "profile") continue;
    bool done = false;
    for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
      const std::string prefix = variant_prefix(v);
      if (key.rfind(prefix, 0) == 0) {
        variant_kv[static_cast<int>(v)].emplace_back("rl." + key.substr(prefix.size()), value);
        done = true;
      }
    }
    if (done) continue;
    const auto it = std::find_if(bindings().begin(), bindings().end(), [&](const Binding& b) { return b.key == key; });
    if (it == bindings().end()) throw ConfigError("unknown setting " + key);
    try {
      it->set(c, value);
    } catch (const InputError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
    rl::AgentVariantConfig& vc = c.variant(v);
    if (!(c.plant.looper1 == before.looper1 && c.plant.looper2 == before.looper2 &&
          c.plant.ftu_max_speed == before.ftu_max_speed && c.plant.ttu_max_speed == before.ttu_max_speed)) {
      vc.ranges = rl::default_ranges(c.plant);
    }
    vc = rl::apply_text(vc, variant_kv[static_cast<int>(v)]);
  }
  return c;
}

HarnessConfig read_config(const std::filesystem::path& path, std::optional<Profile> profile) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  auto kv = text::parse_key_values(in);
  HarnessConfig c = apply_config(HarnessConfig::desk(), kv);
  if (profile && *profile != c.profile) {
    // An explicit profile flag wins over the file's profile line but keeps its other settings.
    std::erase_if(kv, [](const auto& p) { return p.first == "profile"; });
    c = apply_config(HarnessConfig::of(*profile), kv);
  }
  return c;
}

SpeedTable load_speed_table(const HarnessConfig& c) {
  if (c.speed_table.empty()) return SpeedTable::synthetic_default();
  std::ifstream in(c.speed_table);
  if (!in) throw IoError("cannot read speed table " + c.speed_table);
  return SpeedTable::parse(in);
}

double epsilon_at(const HarnessConfig& c, std::size_t episode) {
  if (episode >= c.phase1_episodes) return 0.0;
  if (c.phase1_episodes == 1) return c.epsilon_start;
  const double f = static_cast<double>(episode) / static_cast<double>(c.phase1_episodes - 1);
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * f;
}

}  // namespace pickling::harness
