#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/text.hpp"

namespace fs = std::filesystem;
using namespace pickling;
using namespace pickling::harness;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
};

HarnessConfig load_config(const Globals& g) {
  std::optional<Profile> profile;
  if (!g.profile.empty()) profile = parse_profile(g.profile);
  HarnessConfig c = g.config.empty() ? HarnessConfig::of(profile.value_or(Profile::desk)) : read_config(g.config, profile);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

template <class Model>
Model load_model(const fs::path& path) {
  auto in = open_in(path, true);
  return Model::load(in);
}

template <class Model>
void save_model(const fs::path& path, const Model& m) {
  auto out = open_out(path, true);
  m.save(out);
  if (!out) throw IoError("write failed: " + path.string());
}

rl::QNetworkBank read_bank(const fs::path& path) {
  auto in = open_in(path, true);
  return rl::load_bank(in);
}

void write_grades(const fs::path& path, const grades::GradeSample& sample, const GradeVocabulary& vocab) {
  auto out = open_out(path);
  out << "grade,batch\n";
  std::size_t i = 0;
  for (std::size_t b = 0; b < sample.batch_lengths.size(); ++b) {
    for (std::size_t k = 0; k < sample.batch_lengths[b] && i < sample.grades.size(); ++k, ++i) {
      out << vocab.name(sample.grades[i]) << ',' << b << '\n';
    }
  }
  for (; i < sample.grades.size(); ++i) out << vocab.name(sample.grades[i]) << ',' << sample.batch_lengths.size() << '\n';
}

std::vector<std::size_t> read_grades(const fs::path& path, const GradeVocabulary& vocab) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (text::trim(line) != "grade,batch") throw IoError(path.string() + " is not a grade list");
  std::vector<std::size_t> ids;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const std::string name = text::split(text::trim(line), ',').at(0);
    const auto id = vocab.find(name);
    if (!id) throw InputError("grade " + name + " is not in the CGAN vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

bool is_grade_list(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  return in && std::getline(in, line) && text::trim(line) == "grade,batch";
}

void print_report(std::ostream& out, const MetricsReport& r) {
  out << "agent         episodes  deaths  rate    mean_sum     mean_speed  clamp  restrict\n";
  for (const AgentMetrics& m : r.agents) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-13s %8zu  %6zu  %5.1f%%  %11.1f  %10.3f  %5zu  %8zu\n", m.agent.c_str(),
                  m.episodes, m.deaths, 100.0 * m.death_rate, m.mean_episode_sum, m.mean_episode_mean,
                  m.clamp_violations, m.restriction_violations);
    out << buf;
  }
  out << "\ndeaths by stage combination\nagent        ";
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) out << "  " << env::StageCombination::from_index(k).code();
  out << '\n';
  for (const AgentMetrics& m : r.agents) {
    char name[16];
    std::snprintf(name, sizeof name, "%-13s", m.agent.c_str());
    out << name;
    for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
      char cell[8];
      std::snprintf(cell, sizeof cell, "%4zu", m.deaths_by_combination[k]);
      out << cell;
    }
    out << '\n';
  }
  if (!r.surplus.empty()) {
    out << "\nmean STU speed surplus (%)\n";
    for (const SurplusEntry& e : r.surplus) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%-13s vs %-13s %s  %+7.2f\n", e.agent.c_str(), e.baseline.c_str(),
                    e.combination.c_str(), e.percent);
      out << buf;
    }
  }
}

struct Runner {
  Globals globals;
  std::function<void()> action;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pickling line speed control: data, models, agents and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Key=value configuration file");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--profile", g.profile, "Base defaults: desk or paper")->check(CLI::IsMember({"desk", "paper"}));

  std::function<void()> run;

  // synth-history
  std::size_t synth_count = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-history", "Write a synthetic five-grade mill history");
  synth->add_option("--count", synth_count, "Strips (default: history.strips)");
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const Dataset ds = synthetic_history(synth_count ? synth_count : c.history_strips, c.seed);
      auto out = open_out(synth_out);
      write_history(out, ds.strips, ds.vocabulary);
      std::cerr << "wrote " << ds.strips.size() << " strips to " << synth_out << '\n';
    };
  });

  // ingest
  std::string ingest_in, ingest_schema, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Validate a delimited history into a dataset directory");
  ingest->add_option("--input", ingest_in, "History file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--schema", ingest_schema, "Column mapping file")->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Dataset directory")->required();
  ingest->callback([&] {
    run = [&] {
      HistorySchema schema;
      if (!ingest_schema.empty()) {
        auto in = open_in(ingest_schema);
        schema = HistorySchema::parse(in);
      }
      IngestResult r = ingest_history(fs::path(ingest_in), schema);
      for (const RowDiagnostic& d : r.rejected) std::cerr << ingest_in << ':' << d.line << ": " << d.message << '\n';
      write_dataset(ingest_out, {std::move(r.strips), std::move(r.vocabulary), r.stats});
      const Dataset back = read_dataset(ingest_out, schema.length);
      std::cerr << "accepted " << back.strips.size() << " strips over " << back.vocabulary.grade_count()
                << " grades, rejected " << r.rejected.size() << '\n';
    };
  });

  // train-grades
  std::string tg_dataset, tg_out;
  auto* tg = app.add_subcommand("train-grades", "Train the grade sequence model");
  tg->add_option("--dataset", tg_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tg->add_option("--out", tg_out, "Checkpoint")->required();
  tg->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const Dataset ds = read_dataset(tg_dataset);
      const grades::GradeModel m = fit_grade_model(ds, c, c.seed);
      save_model(tg_out, m);
      std::cerr << "final loss " << (m.epoch_losses.empty() ? 0.0 : m.epoch_losses.back()) << '\n';
    };
  });

  // sample-grades
  std::string sg_model, sg_out;
  std::size_t sg_count = 0;
  auto* sg = app.add_subcommand("sample-grades", "Sample a grade sequence");
  sg->add_option("--model", sg_model, "Grade model checkpoint")->required()->check(CLI::ExistingFile);
  sg->add_option("--count", sg_count, "Grades to sample")->required();
  sg->add_option("--out", sg_out, "Grade list (grade,batch)")->required();
  sg->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const auto m = load_model<grades::GradeModel>(sg_model);
      Rng rng = make_rng(c.seed, Stream::sampling, 0);
      write_grades(sg_out, grades::sample_grades(m, sg_count, rng), m.vocabulary());
    };
  });

  // train-cgan
  std::string tc_dataset, tc_out;
  auto* tc = app.add_subcommand("train-cgan", "Train the conditional strip generator");
  tc->add_option("--dataset", tc_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tc->add_option("--out", tc_out, "Checkpoint")->required();
  tc->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const cgan::CganModel m = fit_cgan(read_dataset(tc_dataset), c, c.seed);
      save_model(tc_out, m);
      std::cerr << "trained " << c.cgan.epochs << " epochs\n";
    };
  });

  // gen-strips
  std::string gs_grades, gs_cgan, gs_out, gs_dataset, gs_fidelity;
  std::size_t gs_count = 0;
  auto* gs = app.add_subcommand("gen-strips", "Generate strips for a grade sequence");
  gs->add_option("--grades", gs_grades, "Grade list or grade model checkpoint")->required()->check(CLI::ExistingFile);
  gs->add_option("--cgan", gs_cgan, "CGAN checkpoint")->required()->check(CLI::ExistingFile);
  gs->add_option("--count", gs_count, "Strips to generate when sampling from a grade model");
  gs->add_option("--out", gs_out, "Strip file")->required();
  gs->add_option("--dataset", gs_dataset, "Real dataset for the fidelity report")->check(CLI::ExistingDirectory);
  gs->add_option("--fidelity", gs_fidelity, "Fidelity report (needs --dataset)");
  gs->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const auto gan = load_model<cgan::CganModel>(gs_cgan);
      Rng rng = make_rng(c.seed, Stream::sampling, 1);
      std::vector<std::size_t> ids;
      if (is_grade_list(gs_grades)) {
        ids = read_grades(gs_grades, gan.vocabulary);
        if (gs_count && gs_count < ids.size()) ids.resize(gs_count);
      } else {
        if (!gs_count) throw InputError("--count is required with a grade model");
        const auto gm = load_model<grades::GradeModel>(gs_grades);
        if (!(gm.vocabulary() == gan.vocabulary)) throw InputError("grade model and CGAN vocabularies differ");
        ids = grades::sample_grades(gm, gs_count, rng).grades;
      }
      const cgan::GeneratedStrips out = cgan::generate_strips(gan, ids, rng);
      auto f = open_out(gs_out);
      write_history(f, out.strips, gan.vocabulary);
      std::cerr << "generated " << out.strips.size() << " strips, repairs " << out.repairs.total() << '\n';
      if (!gs_fidelity.empty()) {
        if (gs_dataset.empty()) throw InputError("--fidelity needs --dataset");
        auto rep = open_out(gs_fidelity);
        cgan::write_fidelity(rep, cgan::evaluate_fidelity(read_dataset(gs_dataset).strips, out.strips));
      }
    };
  });

  // precompute-scenarios
  std::string ps_source = "historical", ps_dataset, ps_grades, ps_cgan, ps_out;
  std::size_t ps_count = 0, ps_set = 0;
  auto* ps = app.add_subcommand("precompute-scenarios", "Write a reusable scenario set");
  ps->add_option("--source", ps_source, "generated or historical")
      ->check(CLI::IsMember({"generated", "historical"}));
  ps->add_option("--count", ps_count, "Scenarios")->required();
  ps->add_option("--set", ps_set, "Set index (0 phase 1, 1 phase 2, 2 evaluation)");
  ps->add_option("--dataset", ps_dataset, "Dataset directory")->check(CLI::ExistingDirectory);
  ps->add_option("--grades", ps_grades, "Grade model checkpoint")->check(CLI::ExistingFile);
  ps->add_option("--cgan", ps_cgan, "CGAN checkpoint")->check(CLI::ExistingFile);
  ps->add_option("--out", ps_out, "Scenario directory")->required();
  ps->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      std::optional<Dataset> ds;
      std::optional<grades::GradeModel> gm;
      std::optional<cgan::CganModel> gan;
      if (!ps_dataset.empty()) ds = read_dataset(ps_dataset);
      if (!ps_grades.empty()) gm = load_model<grades::GradeModel>(ps_grades);
      if (!ps_cgan.empty()) gan = load_model<cgan::CganModel>(ps_cgan);
      const ScenarioModels m{ds ? &*ds : nullptr, gm ? &*gm : nullptr, gan ? &*gan : nullptr};
      const auto set = precompute_scenarios(ps_count, parse_source(ps_source), m, c, c.seed, ps_set);
      write_scenario_set(ps_out, set);
      std::cerr << "wrote " << set.size() << " scenarios to " << ps_out << '\n';
    };
  });

  // train-rl
  std::string tr_variant, tr_generated, tr_historical, tr_out, tr_curves;
  auto* tr = app.add_subcommand("train-rl", "Train an RL agent bank");
  tr->add_option("--variant", tr_variant, "f-coop or p-coop")->required()->check(CLI::IsMember({"f-coop", "p-coop"}));
  tr->add_option("--generated", tr_generated, "Phase 1 scenario directory")->required();
  tr->add_option("--historical", tr_historical, "Phase 2 scenario directory")->required();
  tr->add_option("--out", tr_out, "Bank checkpoint")->required();
  tr->add_option("--curves", tr_curves, "Per-episode training curves (CSV)");
  tr->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const auto gen = read_scenario_set(tr_generated);
      const auto hist = read_scenario_set(tr_historical);
      const TrainResult r = train(c, rl::parse_variant(tr_variant), gen, hist, c.seed, [](const EpisodeCurve& e) {
        if ((e.episode + 1) % 25 == 0) {
          std::cerr << "episode " << e.episode + 1 << " phase " << e.phase << " eps " << e.epsilon << " "
                    << env::to_string(e.cause) << " mean speed " << e.mean_speed << '\n';
        }
      });
      auto out = open_out(tr_out, true);
      rl::save_bank(out, r.bank);
      if (!tr_curves.empty()) {
        auto curves = open_out(tr_curves);
        write_curves_csv(curves, r.curves);
      }
      if (r.aborted) throw TrainingError(r.error + " (bank holds the last good state)");
    };
  });

  // simulate
  std::string sim_agent, sim_scenario, sim_bank, sim_out, sim_summary;
  double sim_epsilon = 0.0;
  auto* sim = app.add_subcommand("simulate", "Run one episode and write its per-second log");
  sim->add_option("--agent", sim_agent, "c, c-per-stage, f-coop or p-coop")
      ->required()
      ->check(CLI::IsMember({"c", "c-per-stage", "f-coop", "p-coop"}));
  sim->add_option("--scenario", sim_scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--bank", sim_bank, "Bank checkpoint (RL agents)")->check(CLI::ExistingFile);
  sim->add_option("--epsilon", sim_epsilon, "Exploration rate")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--out", sim_out, "Episode log (CSV)")->required();
  sim->add_option("--summary", sim_summary, "Episode summary (JSON)");
  sim->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      std::optional<rl::QNetworkBank> bank;
      if (!sim_bank.empty()) bank = read_bank(sim_bank);
      EpisodeOptions o;
      o.agent = parse_agent(sim_agent);
      o.bank = bank ? &*bank : nullptr;
      o.epsilon = sim_epsilon;
      o.seed = derive_seed(c.seed, Stream::exploration, 0);
      o.keep_rows = true;
      const EpisodeLog log = run_episode(env::read_scenario(sim_scenario), c, o);
      auto out = open_out(sim_out);
      write_episode_csv(out, log);
      const std::string summary = episode_summary_json(log);
      if (sim_summary.empty()) {
        std::cout << summary;
      } else {
        open_out(sim_summary) << summary;
      }
    };
  });

  // evaluate
  std::string ev_scenarios, ev_agents = "c,c-per-stage,p-coop,f-coop", ev_pbank, ev_fbank, ev_out;
  auto* ev = app.add_subcommand("evaluate", "Run agents on a shared scenario set and export the report");
  ev->add_option("--scenarios", ev_scenarios, "Scenario directory")->required();
  ev->add_option("--agents", ev_agents, "Comma-separated agent list");
  ev->add_option("--p-coop-bank", ev_pbank, "P-Coop bank")->check(CLI::ExistingFile);
  ev->add_option("--f-coop-bank", ev_fbank, "F-Coop bank")->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const auto set = read_scenario_set(ev_scenarios);
      std::optional<rl::QNetworkBank> pbank, fbank;
      if (!ev_pbank.empty()) pbank = read_bank(ev_pbank);
      if (!ev_fbank.empty()) fbank = read_bank(ev_fbank);
      std::vector<EvaluationAgent> agents;
      for (const std::string& name : text::split(ev_agents, ',')) {
        const AgentKind k = parse_agent(text::trim(name));
        const rl::QNetworkBank* b = k == AgentKind::p_coop ? (pbank ? &*pbank : nullptr)
                                    : k == AgentKind::f_coop ? (fbank ? &*fbank : nullptr)
                                                             : nullptr;
        if (is_rl(k) && !b) throw InputError("agent " + to_string(k) + " needs --" + to_string(k) + "-bank");
        agents.push_back({k, b});
      }
      const Evaluation e = evaluate(set, agents, c, c.seed);
      export_report(e.report, ev_out);
      auto episodes = open_out(fs::path(ev_out) / "episodes.csv");
      episodes << "agent,scenario_id,scenario_hash,terminal_cause,steps,sum_stu_speed,mean_stu_speed\n";
      for (const auto& per_agent : e.logs) {
        for (const EpisodeLog& l : per_agent) {
          episodes << l.agent << ',' << l.scenario_id << ',' << l.scenario_hash << ',' << env::to_string(l.cause) << ','
                   << l.steps << ',' << text::format_double(l.sum_speed) << ',' << text::format_double(l.mean_speed)
                   << '\n';
        }
      }
      print_report(std::cout, e.report);
    };
  });

  // report
  std::string rp_in, rp_format = "table";
  auto* rp = app.add_subcommand("report", "Print or convert an exported report");
  rp->add_option("--in", rp_in, "report.json or metrics.csv")->required()->check(CLI::ExistingFile);
  rp->add_option("--format", rp_format, "table, csv or json")->check(CLI::IsMember({"table", "csv", "json"}));
  rp->callback([&] {
    run = [&] {
      auto in = open_in(rp_in);
      std::stringstream body;
      body << in.rdbuf();
      const MetricsReport r =
          fs::path(rp_in).extension() == ".csv" ? report_from_csv(body.str()) : report_from_json(body.str());
      if (rp_format == "csv") {
        std::cout << report_csv(r);
      } else if (rp_format == "json") {
        std::cout << report_json(r);
      } else {
        print_report(std::cout, r);
      }
    };
  });

  // show-config
  auto* sc = app.add_subcommand("show-config", "Print the effective configuration");
  sc->callback([&] { run = [&] { std::cout << to_text(load_config(g)); }; });

  // pipeline
  std::string pl_out, pl_history;
  auto* pl = app.add_subcommand("pipeline", "History to report in one go: models, scenarios, training, evaluation");
  pl->add_option("--out", pl_out, "Work directory")->required();
  pl->add_option("--history", pl_history, "History CSV (default: synthetic)")->check(CLI::ExistingFile);
  pl->callback([&] {
    run = [&] {
      const HarnessConfig c = load_config(g);
      const fs::path dir = pl_out;
      fs::create_directories(dir);
      open_out(dir / "config.txt") << to_text(c);
      Dataset ds;
      if (pl_history.empty()) {
        ds = synthetic_history(c.history_strips, c.seed);
      } else {
        IngestResult r = ingest_history(fs::path(pl_history));
        ds = {std::move(r.strips), std::move(r.vocabulary), r.stats};
      }
      write_dataset(dir / "dataset", ds);
      std::cerr << "training grade model\n";
      const grades::GradeModel gm = fit_grade_model(ds, c, c.seed);
      save_model(dir / "grades.ckpt", gm);
      std::cerr << "training CGAN\n";
      const cgan::CganModel gan = fit_cgan(ds, c, c.seed);
      save_model(dir / "cgan.ckpt", gan);
      const ScenarioSets sets = standard_sets({&ds, &gm, &gan}, c, c.seed);
      write_scenario_set(dir / "scenarios" / "generated", sets.generated);
      write_scenario_set(dir / "scenarios" / "historical", sets.historical);
      write_scenario_set(dir / "scenarios" / "evaluation", sets.evaluation);
      std::vector<rl::QNetworkBank> banks;
      for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
        std::cerr << "training " << rl::to_string(v) << '\n';
        const TrainResult r = train(c, v, sets.generated, sets.historical, c.seed);
        if (r.aborted) throw TrainingError(r.error);
        auto out = open_out(dir / (rl::to_string(v) + ".bank"), true);
        rl::save_bank(out, r.bank);
        auto curves = open_out(dir / (rl::to_string(v) + "_curves.csv"));
        write_curves_csv(curves, r.curves);
        banks.push_back(r.bank);
      }
      const std::vector<EvaluationAgent> agents{{AgentKind::c, nullptr},
                                                {AgentKind::c_per_stage, nullptr},
                                                {AgentKind::p_coop, &banks[0]},
                                                {AgentKind::f_coop, &banks[1]}};
      const Evaluation e = evaluate(sets.evaluation, agents, c, c.seed);
      export_report(e.report, dir / "report");
      print_report(std::cout, e.report);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (run) run();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 5;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
