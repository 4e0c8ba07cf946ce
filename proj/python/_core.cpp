#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "pickling/c_agent.hpp"
#include "pickling/errors.hpp"
#include "pickling/harness.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace pickling;
using namespace pickling::harness;

namespace {

template <class T>
void save_to(const fs::path& path, const T& obj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  obj.save(out);
}

template <class T>
T load_from(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return T::load(in);
}

std::vector<std::size_t> grade_ids(const GradeVocabulary& vocab, const std::vector<std::string>& names) {
  std::vector<std::size_t> ids;
  for (const std::string& n : names) {
    const auto id = vocab.find(n);
    if (!id) throw InputError("unknown grade " + n);
    ids.push_back(*id);
  }
  return ids;
}

py::dict log_dict(const EpisodeLog& l) {
  py::dict d;
  d["agent"] = l.agent;
  d["scenario_id"] = l.scenario_id;
  d["scenario_hash"] = l.scenario_hash;
  d["seed"] = l.seed;
  d["terminal_cause"] = env::to_string(l.cause);
  d["steps"] = l.steps;
  d["sum_stu_speed"] = l.sum_speed;
  d["mean_stu_speed"] = l.mean_speed;
  d["death_combination"] = l.death_combination ? l.death_combination->code() : std::string();
  d["clamp_violations"] = l.clamp_violations;
  d["restriction_violations"] = l.restriction_violations;
  if (!l.rows.empty()) {
    py::array_t<double> rows({l.rows.size(), kLogColumns.size()});
    auto r = rows.mutable_unchecked<2>();
    for (std::size_t i = 0; i < l.rows.size(); ++i) {
      const LogRow& x = l.rows[i];
      const double v[] = {x.time,    static_cast<double>(x.combination.index()), x.ftu_speed, x.stu_speed, x.ttu_speed,
                          x.looper1, x.looper2, x.c_speed, x.rl_delta, x.reward};
      for (std::size_t c = 0; c < kLogColumns.size(); ++c) r(i, c) = v[c];
    }
    d["rows"] = rows;
  }
  return d;
}

py::dict state_dict(const env::LineState& s) {
  py::dict d;
  d["time"] = s.time;
  d["steps"] = s.steps;
  d["horizon"] = s.horizon;
  d["combination"] = env::stage_combination(s).code();
  d["ftu_speed"] = s.ftu.speed;
  d["stu_speed"] = s.stu_speed;
  d["ttu_speed"] = s.ttu.speed;
  d["looper1"] = s.looper1;
  d["looper2"] = s.looper2;
  d["t_w_pred"] = s.t_w_pred;
  d["t_c_pred"] = s.t_c_pred;
  const SpeedLimits lim = s.stu_limits();
  d["v_min"] = lim.v_min;
  d["v_max"] = lim.v_max;
  d["terminal"] = s.terminal;
  d["terminal_cause"] = env::to_string(s.cause);
  return d;
}

// Steppable line for one scenario, driven by an external policy.
class Line {
 public:
  Line(env::Scenario scenario, HarnessConfig config)
      : scenario_(std::move(scenario)), config_(std::move(config)), env_(config_.plant, load_speed_table(config_)) {
    reset();
  }
  py::dict reset() { return state_dict(env::reset(env_, scenario_, config_.disturbance)); }
  py::dict step(double command) {
    if (env_.state().terminal) throw ProtocolError("episode is over; call reset()");
    const env::StepEvents ev = env_.step(command);
    py::dict d = state_dict(env_.state());
    d["command"] = ev.command;
    d["braked"] = ev.braked;
    return d;
  }
  py::dict state() const { return state_dict(env_.state()); }
  double recommend() const { return control::recommend_speed(env_.state(), config_.c_agent); }

 private:
  env::Scenario scenario_;
  HarnessConfig config_;
  env::Environment env_;
};

py::list agents_list(const MetricsReport& r) {
  py::list out;
  for (const AgentMetrics& m : r.agents) {
    py::dict d;
    d["agent"] = m.agent;
    d["episodes"] = m.episodes;
    d["deaths"] = m.deaths;
    d["death_rate"] = m.death_rate;
    d["mean_episode_sum"] = m.mean_episode_sum;
    d["mean_episode_mean"] = m.mean_episode_mean;
    d["clamp_violations"] = m.clamp_violations;
    d["restriction_violations"] = m.restriction_violations;
    py::dict deaths, speed;
    for (std::size_t k = 0; k < env::kCombinationCount; ++k) {
      const std::string code = env::StageCombination::from_index(k).code();
      deaths[code.c_str()] = m.deaths_by_combination[k];
      const SpeedStats& s = m.speed[k];
      if (s.count) {
        py::dict st;
        st["count"] = s.count;
        st["min"] = s.min;
        st["q1"] = s.q1;
        st["median"] = s.median;
        st["q3"] = s.q3;
        st["max"] = s.max;
        st["mean"] = s.mean;
        speed[code.c_str()] = st;
      }
    }
    d["deaths_by_combination"] = deaths;
    d["speed"] = speed;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pickling line simulation, generative models and speed-control agents";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);

  m.attr("LOG_COLUMNS") = py::cast(std::vector<std::string>(kLogColumns.begin(), kLogColumns.end()));

  py::class_<Strip>(m, "Strip")
      .def_readonly("grade", &Strip::grade)
      .def_readonly("original_width", &Strip::original_width)
      .def_readonly("resulting_width", &Strip::resulting_width)
      .def_readonly("thickness", &Strip::thickness)
      .def_readonly("weight", &Strip::weight)
      .def_readonly("coiling_temperature", &Strip::coiling_temperature)
      .def_readonly("strips_in_coil", &Strip::strips_in_coil)
      .def_readonly("length", &Strip::length)
      .def("__repr__", [](const Strip& s) {
        return "Strip(grade=" + std::to_string(s.grade) + ", width=" + std::to_string(s.resulting_width) +
               ", thickness=" + std::to_string(s.thickness) + ")";
      });

  py::class_<GradeVocabulary>(m, "GradeVocabulary")
      .def_property_readonly("grades", &GradeVocabulary::grades)
      .def("name", &GradeVocabulary::name)
      .def("find", &GradeVocabulary::find)
      .def("__len__", &GradeVocabulary::grade_count);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("strips", &Dataset::strips)
      .def_readonly("vocabulary", &Dataset::vocabulary)
      .def("__len__", [](const Dataset& d) { return d.strips.size(); })
      .def("numeric", [](const Dataset& d) {
        py::array_t<double> a({d.strips.size(), kNumericColumns});
        auto r = a.mutable_unchecked<2>();
        for (std::size_t i = 0; i < d.strips.size(); ++i) {
          const auto row = numeric_row(d.strips[i]);
          for (std::size_t c = 0; c < kNumericColumns; ++c) r(i, c) = row[c];
        }
        return a;
      }, "Numeric columns as an (n, 6) array.");
  m.attr("NUMERIC_COLUMNS") = py::cast(std::vector<std::string>(kNumericColumnNames.begin(), kNumericColumnNames.end()));

  m.def("synthetic_history", [](std::size_t count, std::uint64_t seed) { return synthetic_history(count, seed); },
        py::arg("count"), py::arg("seed"));
  m.def(
      "ingest_history",
      [](const fs::path& path) {
        IngestResult r = ingest_history(path);
        std::vector<std::pair<std::size_t, std::string>> rejected;
        for (const RowDiagnostic& d : r.rejected) rejected.emplace_back(d.line, d.message);
        return std::make_pair(Dataset{std::move(r.strips), std::move(r.vocabulary), r.stats}, rejected);
      },
      py::arg("path"), "Returns (dataset, [(line, message)] for rejected rows).");
  m.def("write_dataset", &write_dataset, py::arg("dir"), py::arg("dataset"));
  m.def("read_dataset", [](const fs::path& dir) { return read_dataset(dir); }, py::arg("dir"));

  py::class_<HarnessConfig>(m, "Config")
      .def_static("desk", &HarnessConfig::desk)
      .def_static("paper", &HarnessConfig::paper)
      .def_static(
          "read",
          [](const fs::path& path, std::optional<std::string> profile) {
            return read_config(path, profile ? std::optional(parse_profile(*profile)) : std::nullopt);
          },
          py::arg("path"), py::arg("profile") = py::none())
      .def(
          "with_values",
          [](const HarnessConfig& c, const std::map<std::string, std::string>& kv) {
            const std::vector<std::pair<std::string, std::string>> pairs(kv.begin(), kv.end());
            HarnessConfig out = apply_config(c, pairs);
            out.validate();
            return out;
          },
          py::arg("values"), "Copy with key=value overrides applied.")
      .def("to_text", [](const HarnessConfig& c) { return to_text(c); })
      .def_property_readonly("profile", [](const HarnessConfig& c) { return to_string(c.profile); })
      .def_readwrite("seed", &HarnessConfig::seed)
      .def_readwrite("threads", &HarnessConfig::threads)
      .def_readwrite("history_strips", &HarnessConfig::history_strips)
      .def_readwrite("phase1_episodes", &HarnessConfig::phase1_episodes)
      .def_readwrite("phase2_episodes", &HarnessConfig::phase2_episodes)
      .def_readwrite("report_window", &HarnessConfig::report_window)
      .def_readwrite("eval_episodes", &HarnessConfig::eval_episodes);

  py::class_<grades::GradeModel>(m, "GradeModel")
      .def_static("load", &load_from<grades::GradeModel>, py::arg("path"))
      .def("save", &save_to<grades::GradeModel>, py::arg("path"))
      .def_property_readonly("vocabulary", &grades::GradeModel::vocabulary)
      .def_readonly("epoch_losses", &grades::GradeModel::epoch_losses)
      .def(
          "sample",
          [](const grades::GradeModel& gm, std::size_t count, std::uint64_t seed) {
            Rng rng(seed);
            const grades::GradeSample s = grades::sample_grades(gm, count, rng);
            std::vector<std::string> names;
            for (std::size_t g : s.grades) names.push_back(gm.vocabulary().name(g));
            return std::make_pair(names, s.batch_lengths);
          },
          py::arg("count"), py::arg("seed"), "Returns (grade names, batch lengths).");

  py::class_<cgan::CganModel>(m, "CganModel")
      .def_static("load", &load_from<cgan::CganModel>, py::arg("path"))
      .def("save", &save_to<cgan::CganModel>, py::arg("path"))
      .def_readonly("vocabulary", &cgan::CganModel::vocabulary)
      .def(
          "generate",
          [](const cgan::CganModel& gan, const std::vector<std::string>& grades, std::uint64_t seed) {
            Rng rng(seed);
            return cgan::generate_strips(gan, grade_ids(gan.vocabulary, grades), rng).strips;
          },
          py::arg("grades"), py::arg("seed"));

  m.def("fit_grade_model", &fit_grade_model, py::arg("dataset"), py::arg("config"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def("fit_cgan", &fit_cgan, py::arg("dataset"), py::arg("config"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "ks_statistics",
      [](const std::vector<Strip>& real, const std::vector<Strip>& generated) {
        return cgan::evaluate_fidelity(real, generated).column_ks;
      },
      py::arg("real"), py::arg("generated"), "Per-column two-sample KS statistics.");

  py::class_<env::Scenario>(m, "Scenario")
      .def_readonly("id", &env::Scenario::id)
      .def_readonly("source", &env::Scenario::source)
      .def_readonly("strips", &env::Scenario::strips)
      .def_readonly("disturbance_seed", &env::Scenario::disturbance_seed)
      .def_property_readonly("hash", [](const env::Scenario& s) { return env::hash_hex(env::scenario_hash(s)); })
      .def("to_json", [](const env::Scenario& s) { return env::scenario_to_json(s); })
      .def_static("from_json", &env::scenario_from_json, py::arg("text"));

  m.def(
      "precompute_scenarios",
      [](std::size_t count, const std::string& source, const HarnessConfig& config, std::uint64_t seed,
         std::size_t set_index, const Dataset* dataset, const grades::GradeModel* gm, const cgan::CganModel* gan) {
        return precompute_scenarios(count, parse_source(source), {dataset, gm, gan}, config, seed, set_index);
      },
      py::arg("count"), py::arg("source"), py::arg("config"), py::arg("seed"), py::arg("set_index") = 0,
      py::arg("dataset") = nullptr, py::arg("grade_model") = nullptr, py::arg("cgan") = nullptr);
  m.def("write_scenario_set", [](const fs::path& dir, const std::vector<env::Scenario>& s) { write_scenario_set(dir, s); },
        py::arg("dir"), py::arg("scenarios"));
  m.def("read_scenario_set", &read_scenario_set, py::arg("dir"));

  py::class_<rl::QNetworkBank>(m, "Bank")
      .def_property_readonly("variant", [](const rl::QNetworkBank& b) { return rl::to_string(b.config().variant); })
      .def("save", [](const rl::QNetworkBank& b, const fs::path& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        rl::save_bank(out, b);
      }, py::arg("path"))
      .def("to_bytes", [](const rl::QNetworkBank& b) {
        std::ostringstream out;
        rl::save_bank(out, b);
        return py::bytes(out.str());
      })
      .def_static("load", [](const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read " + path.string());
        return rl::load_bank(in);
      }, py::arg("path"));

  m.def(
      "train",
      [](const HarnessConfig& config, const std::string& variant, const std::vector<env::Scenario>& generated,
         const std::vector<env::Scenario>& historical, std::uint64_t seed) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(config, rl::parse_variant(variant), generated, historical, seed);
        }
        if (r.aborted) throw TrainingError(r.error);
        py::list curves;
        for (const EpisodeCurve& c : r.curves) {
          py::dict d;
          d["episode"] = c.episode;
          d["phase"] = c.phase;
          d["epsilon"] = c.epsilon;
          d["scenario_id"] = c.scenario_id;
          d["terminal_cause"] = env::to_string(c.cause);
          d["steps"] = c.steps;
          d["mean_stu_speed"] = c.mean_speed;
          d["mean_loss"] = c.mean_loss;
          curves.append(d);
        }
        return py::make_tuple(std::move(r.bank), curves);
      },
      py::arg("config"), py::arg("variant"), py::arg("generated"), py::arg("historical"), py::arg("seed"),
      "Returns (bank, per-episode curve dicts).");

  m.def(
      "run_episode",
      [](const env::Scenario& scenario, const HarnessConfig& config, const std::string& agent,
         const rl::QNetworkBank* bank, double epsilon, std::uint64_t seed, bool rows) {
        EpisodeOptions o;
        o.agent = parse_agent(agent);
        o.bank = bank;
        o.epsilon = epsilon;
        o.seed = seed;
        o.keep_rows = rows;
        EpisodeLog log;
        {
          py::gil_scoped_release release;
          log = run_episode(scenario, config, o);
        }
        return log_dict(log);
      },
      py::arg("scenario"), py::arg("config"), py::arg("agent"), py::arg("bank") = nullptr, py::arg("epsilon") = 0.0,
      py::arg("seed") = 0, py::arg("rows") = false,
      "Episode summary dict; with rows=True also an (n, 10) array in LOG_COLUMNS order (combination as 4*ftu+ttu).");

  py::class_<MetricsReport>(m, "Report")
      .def_property_readonly("agents", &agents_list)
      .def_property_readonly("scenario_hashes", [](const MetricsReport& r) { return r.scenario_hashes; })
      .def_property_readonly("surplus", [](const MetricsReport& r) {
        py::list out;
        for (const SurplusEntry& e : r.surplus) {
          out.append(py::make_tuple(e.agent, e.baseline, e.combination, e.percent));
        }
        return out;
      }, "(agent, baseline, combination, percent) tuples.")
      .def("to_json", [](const MetricsReport& r) { return report_json(r); })
      .def("to_csv", [](const MetricsReport& r) { return report_csv(r); })
      .def("export", [](const MetricsReport& r, const fs::path& dir) { export_report(r, dir); }, py::arg("dir"))
      .def_static("from_json", &report_from_json, py::arg("text"))
      .def_static("from_csv", &report_from_csv, py::arg("text"))
      .def("__eq__", [](const MetricsReport& a, const MetricsReport& b) { return a == b; });

  m.def(
      "evaluate",
      [](const std::vector<env::Scenario>& scenarios, const HarnessConfig& config, std::uint64_t seed,
         const std::vector<std::string>& agents, const rl::QNetworkBank* p_coop, const rl::QNetworkBank* f_coop) {
        std::vector<EvaluationAgent> list;
        for (const std::string& a : agents) {
          const AgentKind k = parse_agent(a);
          const rl::QNetworkBank* b = k == AgentKind::p_coop ? p_coop : k == AgentKind::f_coop ? f_coop : nullptr;
          if (is_rl(k) && !b) throw InputError("agent " + a + " needs a bank");
          list.push_back({k, b});
        }
        Evaluation e;
        {
          py::gil_scoped_release release;
          e = evaluate(scenarios, list, config, seed);
        }
        py::list logs;
        for (const auto& per_agent : e.logs) {
          py::list l;
          for (const EpisodeLog& log : per_agent) l.append(log_dict(log));
          logs.append(l);
        }
        return py::make_tuple(e.report, logs);
      },
      py::arg("scenarios"), py::arg("config"), py::arg("seed"),
      py::arg("agents") = std::vector<std::string>{"c", "c-per-stage"}, py::arg("p_coop_bank") = nullptr,
      py::arg("f_coop_bank") = nullptr, "Returns (report, per-agent lists of episode summaries).");

  py::class_<Line>(m, "Line", "Steppable line for one scenario, driven by an external policy.")
      .def(py::init<env::Scenario, HarnessConfig>(), py::arg("scenario"), py::arg("config"))
      .def("reset", &Line::reset)
      .def("step", &Line::step, py::arg("command"))
      .def_property_readonly("state", &Line::state)
      .def("recommend", &Line::recommend, "C-Agent speed for the current state.");
}
