#include <cstdio>
#include <fstream>
#include <sstream>

#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace pickling::harness {

std::string to_string(ScenarioSource s) { return s == ScenarioSource::generated ? "generated" : "historical"; }

ScenarioSource parse_source(std::string_view t) {
  if (t == "generated") return ScenarioSource::generated;
  if (t == "historical") return ScenarioSource::historical;
  throw InputError("unknown scenario source: " + std::string(t));
}

namespace {
constexpr std::uint64_t kGradeSlot = 100;
constexpr std::uint64_t kCganSlot = 101;
}  // namespace

grades::GradeModel fit_grade_model(const Dataset& history, const HarnessConfig& config, std::uint64_t seed) {
  config.grades.validate();
  Rng rng = make_rng(seed, Stream::init, kGradeSlot);
  const auto data = grades::build_training_sequences(history.strips, history.vocabulary, config.grades.sequence_length);
  return grades::train_grade_model(data, history.vocabulary, config.grades, rng);
}

cgan::CganModel fit_cgan(const Dataset& history, const HarnessConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::init, kCganSlot);
  return cgan::train_strip_cgan(history, config.cgan, rng);
}

ScenarioSets standard_sets(const ScenarioModels& models, const HarnessConfig& config, std::uint64_t seed) {
  return {precompute_scenarios(config.phase1_episodes, ScenarioSource::generated, models, config, seed, 0),
          precompute_scenarios(config.phase2_episodes, ScenarioSource::historical, models, config, seed, 1),
          precompute_scenarios(config.eval_episodes, ScenarioSource::historical, models, config, seed, 2)};
}

std::vector<env::Scenario> precompute_scenarios(std::size_t count, ScenarioSource source,
                                                const ScenarioModels& models, const HarnessConfig& config,
                                                std::uint64_t seed, std::size_t set_index) {
  const std::size_t n = config.plant.strips_per_episode;
  if (source == ScenarioSource::historical) {
    if (!models.history) throw InputError("historical scenarios need an ingested dataset");
    if (models.history->strips.size() < n) throw InputError("dataset holds fewer strips than one episode");
  } else {
    if (!models.grades || !models.cgan) throw InputError("generated scenarios need trained grade and CGAN models");
    if (!(models.grades->vocabulary() == models.cgan->vocabulary)) {
      throw InputError("grade model and CGAN were trained on different vocabularies");
    }
  }
  env::Environment env(config.plant, load_speed_table(config));
  Rng rng = make_rng(seed, Stream::scenario, set_index);
  const auto accept = [](const env::LineState&) { return true; };

  std::vector<env::Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    env::Scenario s;
    char id[32];
    std::snprintf(id, sizeof id, "%c%zu-%04zu", source == ScenarioSource::generated ? 'g' : 'h', set_index, i);
    s.id = id;
    s.source = to_string(source);
    s.disturbance_seed = derive_seed(seed, Stream::disturbance, (static_cast<std::uint64_t>(set_index) << 32) | i);
    if (source == ScenarioSource::historical) {
      const auto& all = models.history->strips;
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, all.size() - n)(rng);
      s.strips.assign(all.begin() + static_cast<std::ptrdiff_t>(start),
                      all.begin() + static_cast<std::ptrdiff_t>(start + n));
      s.vocabulary = models.history->vocabulary;
    } else {
      const grades::GradeSample g = grades::sample_grades(*models.grades, n, rng);
      s.strips = cgan::generate_strips(*models.cgan, g.grades, rng).strips;
      s.vocabulary = models.cgan->vocabulary;
    }
    env::DisturbanceModel d = config.disturbance;
    d.seed = s.disturbance_seed;
    s.ic = env::sample_initial_conditions(env, s.strips, s.vocabulary, d, rng, accept);
    out.push_back(std::move(s));
  }
  return out;
}

void write_scenario_set(const std::filesystem::path& dir, std::span<const env::Scenario> set) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,source,hash\n";
  for (const env::Scenario& s : set) {
    env::write_scenario(dir / (s.id + ".json"), s);
    manifest << s.id << ',' << s.source << ',' << env::hash_hex(env::scenario_hash(s)) << '\n';
  }
  if (!manifest) throw IoError("manifest write failed in " + dir.string());
}

std::vector<env::Scenario> read_scenario_set(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("no scenario manifest in " + dir.string());
  std::string line;
  std::getline(manifest, line);
  if (text::trim(line) != "id,source,hash") throw IoError("bad scenario manifest header in " + dir.string());
  std::vector<env::Scenario> out;
  while (std::getline(manifest, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != 3) throw IoError("bad manifest row: " + line);
    env::Scenario s = env::read_scenario(dir / (f[0] + ".json"));
    if (env::hash_hex(env::scenario_hash(s)) != f[2]) throw IoError("scenario " + f[0] + " does not match its hash");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pickling::harness
