#include "pickling/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "pickling/errors.hpp"

namespace pickling::env {

using nlohmann::ordered_json;

namespace {

ordered_json ic_json(const InitialConditions& ic) {
  return {{"looper1", ic.looper1},
          {"looper2", ic.looper2},
          {"ftu_speed", ic.ftu_speed},
          {"stu_speed", ic.stu_speed},
          {"ttu_speed", ic.ttu_speed},
          {"ttu_position", ic.ttu_position},
          {"ftu_stop_remaining", ic.ftu_stop_remaining},
          {"ttu_stop_remaining", ic.ttu_stop_remaining}};
}

InitialConditions ic_from(const ordered_json& j) {
  InitialConditions ic;
  ic.looper1 = j.at("looper1").get<double>();
  ic.looper2 = j.at("looper2").get<double>();
  ic.ftu_speed = j.at("ftu_speed").get<double>();
  ic.stu_speed = j.at("stu_speed").get<double>();
  ic.ttu_speed = j.at("ttu_speed").get<double>();
  ic.ttu_position = j.at("ttu_position").get<double>();
  ic.ftu_stop_remaining = j.at("ftu_stop_remaining").get<double>();
  ic.ttu_stop_remaining = j.at("ttu_stop_remaining").get<double>();
  return ic;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  ordered_json strips = ordered_json::array();
  for (const Strip& x : s.strips) {
    strips.push_back({{"grade", s.vocabulary.name(x.grade)},
                      {"original_width", x.original_width},
                      {"resulting_width", x.resulting_width},
                      {"thickness", x.thickness},
                      {"weight", x.weight},
                      {"coiling_temperature", x.coiling_temperature},
                      {"strips_in_coil", x.strips_in_coil},
                      {"length", x.length}});
  }
  ordered_json j{{"format", "pickling-scenario"},
                 {"version", kScenarioVersion},
                 {"id", s.id},
                 {"source", s.source},
                 {"disturbance_seed", s.disturbance_seed},
                 {"grades", s.vocabulary.grades()},
                 {"initial_conditions", ic_json(s.ic)},
                 {"strips", strips}};
  return j.dump(1) + "\n";
}

Scenario scenario_from_json(const std::string& text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    if (j.at("format").get<std::string>() != "pickling-scenario") throw IoError("not a scenario file");
    if (j.at("version").get<int>() != kScenarioVersion) throw IoError("unsupported scenario version");
    Scenario s;
    s.id = j.at("id").get<std::string>();
    s.source = j.at("source").get<std::string>();
    s.disturbance_seed = j.at("disturbance_seed").get<std::uint64_t>();
    s.vocabulary = GradeVocabulary(j.at("grades").get<std::vector<std::string>>());
    s.ic = ic_from(j.at("initial_conditions"));
    for (const auto& x : j.at("strips")) {
      Strip st;
      const auto id = s.vocabulary.find(x.at("grade").get<std::string>());
      if (!id) throw IoError("scenario strip grade missing from its grade list");
      st.grade = *id;
      st.original_width = x.at("original_width").get<int>();
      st.resulting_width = x.at("resulting_width").get<int>();
      st.thickness = x.at("thickness").get<int>();
      st.weight = x.at("weight").get<int>();
      st.coiling_temperature = x.at("coiling_temperature").get<double>();
      st.strips_in_coil = x.at("strips_in_coil").get<double>();
      st.length = x.at("length").get<double>();
      s.strips.push_back(st);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed scenario: ") + e.what());
  }
}

void write_scenario(const std::filesystem::path& path, const Scenario& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << scenario_to_json(s);
  if (!out) throw IoError("write failed for " + path.string());
}

Scenario read_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str());
}

std::uint64_t scenario_hash(const Scenario& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : scenario_to_json(s)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const LineState& reset(Environment& env, const Scenario& s, const DisturbanceModel& base) {
  DisturbanceModel d = base;
  d.seed = s.disturbance_seed;
  return env.reset(s.strips, s.vocabulary, d, s.ic);
}

InitialConditions sample_initial_conditions(Environment& env, std::span<const Strip> queue,
                                            const GradeVocabulary& vocab, const DisturbanceModel& disturbance,
                                            Rng& rng, const std::function<bool(const LineState&)>& accept,
                                            std::size_t max_attempts) {
  const PlantConfig& p = env.plant();
  if (queue.empty()) throw InputError("empty strip queue");
  std::vector<double> ends;
  double total = 0.0;
  for (const Strip& s : queue) ends.push_back(total += s.length);
  auto uniform = [&rng](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    InitialConditions ic;
    ic.looper1 = uniform(p.looper1.midpoint(), p.looper1_sync_level() - 5.0);
    ic.looper2 = uniform(p.looper2_sync_level() + 5.0, p.looper2.midpoint());
    const double fill = ic.looper1 + ic.looper2 + p.stu_length;
    const double mode = uniform(0.0, 1.0);
    if (mode < 0.2) {
      const auto seam = std::find_if(ends.begin(), ends.end(), [fill](double e) { return e >= fill; });
      if (seam == ends.end()) continue;
      ic.ttu_position = *seam - fill;
      ic.ftu_stop_remaining = uniform(5.0, disturbance.weld.mean);
    } else if (mode < 0.4) {
      ic.ttu_position = ends.front();
      ic.ttu_stop_remaining = uniform(5.0, disturbance.cut.mean);
    } else {
      ic.ttu_position = uniform(0.0, 0.5 * queue.front().length);
    }
    if (ic.ttu_position + fill >= total) continue;
    ic.ftu_speed = ic.ftu_stop_remaining > 0.0 ? 0.0 : uniform(0.3, 1.0) * p.ftu_max_speed;
    ic.ttu_speed = ic.ttu_stop_remaining > 0.0 ? 0.0 : uniform(0.3, 1.0) * p.ttu_max_speed;

    const double lo = ic.ttu_position + ic.looper2, hi = lo + p.stu_length;
    SpeedLimits lim{0.0, std::numeric_limits<double>::infinity()};
    double start = 0.0;
    for (std::size_t i = 0; i < queue.size(); ++i) {
      if (start < hi && ends[i] > lo) {
        const SpeedLimits l = env.speed_table().speed_cap(queue[i], vocab);
        lim.v_max = std::min(lim.v_max, l.v_max);
        lim.v_min = std::max(lim.v_min, l.v_min);
      }
      start = ends[i];
    }
    lim.v_min = std::min(lim.v_min, lim.v_max);
    ic.stu_speed = uniform(lim.v_min, lim.v_max);
    try {
      if (accept(env.reset(queue, vocab, disturbance, ic))) return ic;
    } catch (const ConfigError&) {
    }
  }
  throw ConfigError("no acceptable initial conditions after " + std::to_string(max_attempts) + " attempts");
}

}  // namespace pickling::env
