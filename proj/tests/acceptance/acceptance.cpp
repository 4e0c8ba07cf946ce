// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pickling/errors.hpp"
#include "pickling/harness.hpp"
#include "pickling/nn/network.hpp"

using namespace pickling;
using namespace pickling::harness;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// ---- 1: conservation ----

Verdict conservation() {
  const auto t0 = Clock::now();
  const Dataset ds = synthetic_history(2000, 17);
  env::Environment e(env::PlantConfig{}, SpeedTable::synthetic_default());
  env::DisturbanceModel dist;
  Rng rng(23);
  std::uniform_real_distribution<double> cmd(0.0, 260.0);
  std::size_t steps = 0, violations = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < 100; ++k) {
    const auto queue = std::span(ds.strips).subspan(20 * k, 20);
    dist.seed = 1000 + k;
    const auto ic = env::sample_initial_conditions(e, queue, ds.vocabulary, dist, rng,
                                                   [](const env::LineState&) { return true; });
    e.reset(queue, ds.vocabulary, dist, ic);
    const double v1 = e.state().looper1, v2 = e.state().looper2;
    double acc1 = 0.0, acc2 = 0.0;
    while (!e.state().terminal) {
      const env::StepEvents ev = e.step(cmd(rng));
      acc1 += (ev.ftu_speed - ev.stu_speed) / 60.0;
      acc2 += (ev.stu_speed - ev.ttu_speed) / 60.0;
      const double err = std::max(std::abs(e.state().looper1 - (v1 + acc1)), std::abs(e.state().looper2 - (v2 + acc2)));
      worst = std::max(worst, err);
      if (err > 1e-9) ++violations;
      ++steps;
    }
  }
  const double secs = seconds_since(t0);
  return {1, "conservation", violations == 0 && secs < 60.0,
          fmt("100 episodes, %zu steps, max drift %.2e m, %zu violations, %.1f s", steps, worst, violations, secs)};
}

// ---- 2: gradient integrity ----

Verdict gradients() {
  using namespace nn;
  const auto t0 = Clock::now();
  Rng rng(101);
  std::normal_distribution<double> n01;
  auto random_matrix = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = n01(rng);
    return m;
  };
  double dense_worst = 0.0, emb_worst = 0.0, lstm_worst = 0.0;
  const int probes = 10;

  for (int p = 0; p < probes; ++p) {
    NetworkSpec spec;
    spec.loss = p % 2 ? LossKind::binary_cross_entropy : LossKind::mse;
    spec.layers = {LayerSpec::dense(4, 6, Activation::leaky_relu, 0.01), LayerSpec::dense(6, 5, Activation::leaky_relu),
                   LayerSpec::dense(5, p % 2 ? 1 : 2, p % 2 ? Activation::sigmoid : Activation::identity)};
    Network net(spec, rng);
    const Matrix x = random_matrix(5, 4);
    Matrix t = random_matrix(5, p % 2 ? 1 : 2);
    if (p % 2) t = (t.array() > 0.0).cast<double>().matrix() * 0.9;
    dense_worst = std::max(dense_worst, gradient_check(net, x, t, 1e-5));
  }

  const std::size_t vocab = 4;
  for (int p = 0; p < probes; ++p) {
    EmbeddingLayer emb(LayerSpec::embedding(vocab, 3), rng);
    Network net({{LayerSpec::dense(3, 4, Activation::leaky_relu), LayerSpec::dense(4, 1)}, LossKind::mse}, rng);
    std::uniform_int_distribution<std::size_t> tok(0, vocab - 1);
    std::vector<std::size_t> ids(5);
    for (auto& id : ids) id = tok(rng);
    const Matrix noise = random_matrix(5, 3);
    const Matrix target = random_matrix(5, 1);
    std::vector<Parameter*> params = emb.parameters();
    for (Parameter* q : net.parameters()) params.push_back(q);
    auto eval = [&](bool with_grad) {
      Rng r(0);
      if (with_grad) {
        for (Parameter* q : params) q->zero_grad();
        const Matrix out = net.forward(emb.forward(ids, Mode::train).cwiseProduct(noise), Mode::train, r);
        const LossResult loss = compute_loss(LossKind::mse, out, target);
        emb.backward(net.backward(loss.grad).cwiseProduct(noise));
        return loss.value;
      }
      return compute_loss(LossKind::mse, net.predict(emb.forward(ids, Mode::eval).cwiseProduct(noise)), target).value;
    };
    emb_worst = std::max(emb_worst, gradient_check(params, eval, 1e-5));
  }

  const std::size_t hidden = 5, steps = 4, batch = 3;
  for (int p = 0; p < probes; ++p) {
    LstmLayer lstm(LayerSpec::lstm(vocab, hidden), rng);
    Network head({{LayerSpec::dense(hidden, vocab, Activation::softmax)}, LossKind::cross_entropy}, rng);
    std::uniform_int_distribution<std::size_t> tok(0, vocab - 1);
    std::vector<Matrix> xs;
    for (std::size_t t = 0; t < steps; ++t) {
      Matrix m = Matrix::Zero(batch, vocab);
      for (std::size_t b = 0; b < batch; ++b) m(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(tok(rng))) = 1.0;
      xs.push_back(m);
    }
    Matrix target = Matrix::Zero(batch, vocab);
    for (std::size_t b = 0; b < batch; ++b) target(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(tok(rng))) = 1.0;
    std::vector<Parameter*> params = lstm.parameters();
    for (Parameter* q : head.parameters()) params.push_back(q);
    auto eval = [&](bool with_grad) {
      Rng r(0);
      if (with_grad) {
        for (Parameter* q : params) q->zero_grad();
        const Matrix out = head.forward(lstm.forward(xs, Mode::train), Mode::train, r);
        const LossResult loss = compute_loss(LossKind::cross_entropy, out, target);
        lstm.backward(head.backward(loss.grad));
        return loss.value;
      }
      return compute_loss(LossKind::cross_entropy, head.predict(lstm.forward(xs, Mode::eval)), target).value;
    };
    lstm_worst = std::max(lstm_worst, gradient_check(params, eval, 1e-5));
  }
  const double secs = seconds_since(t0);
  const bool ok = dense_worst < 1e-4 && emb_worst < 1e-4 && lstm_worst < 1e-4 && secs < 60.0;
  return {2, "gradient integrity", ok,
          fmt("max relative error over %d probes each: dense %.2e, dense+embedding %.2e, lstm %.2e, %.1f s", probes,
              dense_worst, emb_worst, lstm_worst, secs)};
}

// ---- 4: tabular Bellman fixed point ----

Verdict bellman() {
  const auto t0 = Clock::now();
  const int next[3][2] = {{1, 2}, {2, 0}, {0, 1}};
  const double reward[3][2] = {{1.0, 0.0}, {0.5, 2.0}, {0.0, 3.0}};
  const double gamma = 0.9;
  double v[3][2] = {};
  for (int it = 0; it < 2000; ++it) {
    double nv[3][2];
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a) nv[s][a] = reward[s][a] + gamma * std::max(v[next[s][a]][0], v[next[s][a]][1]);
    std::copy(&nv[0][0], &nv[0][0] + 6, &v[0][0]);
  }
  rl::AgentVariantConfig c = rl::AgentVariantConfig::p_coop();
  c.actions = {0, 1};
  c.alpha = 0.5;
  c.alpha_decay = 0.0;
  std::vector<std::unique_ptr<rl::QApproximator>> qs;
  for (std::size_t k = 0; k < env::kCombinationCount; ++k) qs.push_back(std::make_unique<rl::TableQ>(3, 2));
  rl::QNetworkBank bank(c, std::move(qs));
  const auto k = env::StageCombination::from_code("00");
  const auto& table = dynamic_cast<const rl::TableQ&>(*bank.entry(k).q).table();
  auto error = [&] {
    double e = 0.0;
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a) e = std::max(e, std::abs(table(s, a) - v[s][a]));
    return e;
  };
  std::size_t updates = 0, converged_at = 0;
  for (; updates < 10000; ++updates) {
    const int s = static_cast<int>(updates % 6) / 2, a = static_cast<int>(updates % 2);
    rl::q_update(bank, {k, {double(s)}, std::size_t(a), reward[s][a], k, {double(next[s][a])}, false}, gamma);
    if (error() < 1e-3) {
      if (!converged_at) converged_at = updates + 1;
    } else {
      converged_at = 0;
    }
  }
  const double secs = seconds_since(t0);
  return {4, "tabular Bellman fixed point", converged_at > 0 && error() < 1e-3 && secs < 10.0,
          fmt("within 1e-3 of value iteration after %zu updates (final error %.2e), %.2f s", converged_at, error(), secs)};
}

// ---- desk pipeline ----

struct SeedRun {
  std::uint64_t seed = 0;
  HarnessConfig config;
  Dataset history;
  std::unique_ptr<grades::GradeModel> grade_model;
  std::unique_ptr<cgan::CganModel> cgan_model;
  ScenarioSets sets;
  std::vector<rl::QNetworkBank> banks;  // p-coop, f-coop
  Evaluation eval;
  double grade_secs = 0.0, cgan_secs = 0.0, train_secs = 0.0, eval_secs = 0.0;
};

std::string bank_bytes(const rl::QNetworkBank& b) {
  std::ostringstream out;
  rl::save_bank(out, b);
  return out.str();
}

std::vector<EvaluationAgent> all_agents(const SeedRun& r) {
  return {{AgentKind::c, nullptr},
          {AgentKind::c_per_stage, nullptr},
          {AgentKind::p_coop, &r.banks[0]},
          {AgentKind::f_coop, &r.banks[1]}};
}

SeedRun run_pipeline(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  r.config = HarnessConfig::desk();
  r.config.seed = seed;
  r.config.threads = std::max(1u, std::thread::hardware_concurrency());
  r.history = synthetic_history(r.config.history_strips, seed);
  auto t = Clock::now();
  r.grade_model = std::make_unique<grades::GradeModel>(fit_grade_model(r.history, r.config, seed));
  r.grade_secs = seconds_since(t);
  t = Clock::now();
  r.cgan_model = std::make_unique<cgan::CganModel>(fit_cgan(r.history, r.config, seed));
  r.cgan_secs = seconds_since(t);
  r.sets = standard_sets({&r.history, r.grade_model.get(), r.cgan_model.get()}, r.config, seed);
  t = Clock::now();
  for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
    TrainResult tr = train(r.config, v, r.sets.generated, r.sets.historical, seed);
    if (tr.aborted) throw TrainingError(tr.error);
    r.banks.push_back(std::move(tr.bank));
  }
  r.train_secs = seconds_since(t);
  t = Clock::now();
  r.eval = evaluate(r.sets.evaluation, all_agents(r), r.config, seed);
  r.eval_secs = seconds_since(t);
  return r;
}

const AgentMetrics& metrics(const SeedRun& r, const char* agent) {
  const AgentMetrics* m = r.eval.report.find(agent);
  if (!m) throw ProtocolError(std::string("missing agent ") + agent);
  return *m;
}

// ---- 3: C-Agent safety ----

Verdict c_agent_safety(const SeedRun& r, std::size_t& clamp_violations) {
  const auto t0 = Clock::now();
  HarnessConfig exact = r.config;
  exact.disturbance.prediction_sd = 0.0;
  const std::vector<EvaluationAgent> c{{AgentKind::c, nullptr}};
  const Evaluation e = evaluate(r.sets.evaluation, c, exact, r.seed);
  const AgentMetrics& zero = e.report.agents.at(0);
  clamp_violations += zero.clamp_violations;
  const double exact_secs = seconds_since(t0);
  const AgentMetrics& noisy = metrics(r, "c");
  const bool ok = zero.episodes == 100 && zero.deaths == 0 && noisy.episodes == 100 && noisy.death_rate <= 0.35 &&
                  exact_secs * 2.0 < 300.0;
  return {3, "C-Agent safety", ok,
          fmt("sd 0: %zu/%zu deaths; sd %.0f s: %.0f%% death rate (limit 35%%); %.1f s per 100 episodes",
              zero.deaths, zero.episodes, r.config.disturbance.prediction_sd, 100.0 * noisy.death_rate, exact_secs)};
}

// ---- 7: surplus shape ----

Verdict surplus_shape(const std::vector<SeedRun>& runs) {
  const SeedRun& r = runs.front();
  const AgentMetrics& p = metrics(r, "p-coop");
  const AgentMetrics& base = metrics(r, "c-per-stage");
  int positive = 0;
  std::string cells;
  for (const auto& k : slowdown_combinations()) {
    const auto s = surplus_percent(p, base, k);
    if (s && *s > 0.0) ++positive;
    cells += " " + k.code() + (s ? fmt("=%+.1f%%", *s) : std::string("=n/a"));
  }
  std::string others;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    int pos = 0;
    for (const auto& k : slowdown_combinations()) {
      const auto s = surplus_percent(metrics(runs[i], "p-coop"), metrics(runs[i], "c-per-stage"), k);
      if (s && *s > 0.0) ++pos;
    }
    others += fmt("; seed %llu: %d/5", static_cast<unsigned long long>(runs[i].seed), pos);
  }
  const double secs = r.grade_secs + r.cgan_secs + r.train_secs + r.eval_secs;
  return {7, "P-Coop surplus over C-Agent-per-stage", positive >= 4 && secs < 1800.0,
          fmt("seed %llu: %d/5 positive:", static_cast<unsigned long long>(r.seed), positive) + cells + others +
              fmt("; pipeline %.0f s", secs)};
}

// ---- 8: death-rate ordering ----

Verdict death_ordering(const std::vector<SeedRun>& runs) {
  int holds = 0;
  std::string cells;
  for (const SeedRun& r : runs) {
    const AgentMetrics& p = metrics(r, "p-coop");
    const AgentMetrics& f = metrics(r, "f-coop");
    if (p.death_rate <= f.death_rate) ++holds;
    cells += fmt(" seed %llu: P %.0f%% F %.0f%% (per-stage %.0f%%);", static_cast<unsigned long long>(r.seed),
                 100.0 * p.death_rate, 100.0 * f.death_rate, 100.0 * metrics(r, "c-per-stage").death_rate);
  }
  double worst = 0.0;
  for (const SeedRun& r : runs) worst = std::max(worst, r.train_secs + r.eval_secs);
  return {8, "death-rate ordering P-Coop <= F-Coop", 2 * holds > static_cast<int>(runs.size()) && worst < 1800.0,
          fmt("holds on %d/%zu seeds;", holds, runs.size()) + cells};
}

// ---- 9: CGAN fidelity ----

cgan::FidelityReport fidelity(const cgan::CganModel& gan, const Dataset& real, std::uint64_t seed) {
  std::vector<std::size_t> ids;
  for (const Strip& s : real.strips) {
    const auto id = gan.vocabulary.find(real.vocabulary.name(s.grade));
    if (!id) throw InputError("real grade outside the CGAN vocabulary");
    ids.push_back(*id);
  }
  Rng rng = make_rng(seed, Stream::sampling, 9);
  const cgan::GeneratedStrips gen = cgan::generate_strips(gan, ids, rng);
  if (gen.strips.size() != real.strips.size()) throw ProtocolError("generated strip count mismatch");
  return cgan::evaluate_fidelity(real.strips, gen.strips);
}

// The CGAN is fully trained on 5000 desk-profile strips and generates 5000 for the same grade sequence.
// The 500-strip pipeline CGAN against the same corpus is reported alongside, ungated.
Verdict cgan_fidelity(const SeedRun& r) {
  const auto t0 = Clock::now();
  const Dataset real = synthetic_history(5000, r.seed);
  const cgan::CganModel gan = fit_cgan(real, r.config, r.seed);
  const cgan::FidelityReport rep = fidelity(gan, real, r.seed);
  const double secs = seconds_since(t0);
  const double pipeline_ks = fidelity(*r.cgan_model, real, r.seed).max_column_ks();
  std::string cols;
  for (std::size_t c = 0; c < kNumericColumns; ++c) cols += fmt(" %s=%.3f", kNumericColumnNames[c], rep.column_ks[c]);
  return {9, "CGAN fidelity", rep.max_column_ks() < 0.15 && secs < 900.0,
          fmt("5000 vs 5000 strips, max KS %.3f (limit 0.15):", rep.max_column_ks()) + cols +
              fmt("; %.0f s incl. training; 500-strip pipeline CGAN max KS %.3f", secs, pipeline_ks)};
}

// ---- 10: grade-model structure ----

Verdict grade_structure(const SeedRun& r) {
  const auto t0 = Clock::now();
  const grades::GradeModel& m = *r.grade_model;
  const GradeVocabulary& v = m.vocabulary();
  Rng rng = make_rng(r.seed, Stream::sampling, 10);
  const grades::GradeSample s = grades::sample_grades(m, 10000, rng);
  std::size_t oov = 0;
  for (std::size_t g : s.grades) oov += (g == v.end_token() || !v.contains(g));
  const double corpus = grades::mean_run_length(grades::token_stream(r.history.strips, r.history.vocabulary),
                                                r.history.vocabulary.end_token());
  const double sampled = static_cast<double>(s.grades.size()) / static_cast<double>(s.batch_lengths.size());
  const double secs = r.grade_secs + seconds_since(t0);
  const bool ok = s.grades.size() == 10000 && s.batch_lengths.size() > 1 && oov == 0 && sampled >= 0.5 * corpus &&
                  sampled <= 1.5 * corpus && secs < 300.0;
  return {10, "grade-model structure", ok,
          fmt("%zu batches, mean run %.2f vs corpus %.2f (band %.2f..%.2f), %zu out-of-vocabulary, %.0f s incl. training",
              s.batch_lengths.size(), sampled, corpus, 0.5 * corpus, 1.5 * corpus, oov, secs)};
}

// ---- 11: determinism ----

Verdict determinism(const SeedRun& r) {
  const Evaluation again = evaluate(r.sets.evaluation, all_agents(r), r.config, r.seed);
  const bool report_same = report_json(again.report) == report_json(r.eval.report) &&
                           report_csv(again.report) == report_csv(r.eval.report);
  bool banks_same = true;
  for (rl::Variant v : {rl::Variant::p_coop, rl::Variant::f_coop}) {
    const TrainResult a = train(r.config, v, r.sets.generated, r.sets.historical, r.seed);
    const TrainResult b = train(r.config, v, r.sets.generated, r.sets.historical, r.seed);
    const std::string ref = bank_bytes(r.banks[v == rl::Variant::p_coop ? 0 : 1]);
    banks_same = banks_same && bank_bytes(a.bank) == ref && bank_bytes(b.bank) == ref;
  }
  return {11, "determinism", report_same && banks_same,
          std::string("re-run reports ") + (report_same ? "byte-identical" : "DIFFER") + ", re-trained checkpoints " +
              (banks_same ? "byte-identical" : "DIFFER")};
}

// ---- 12: objective equivalence ----

Verdict objective(const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::size_t comparable = 0, total = 0;
  for (const SeedRun& r : runs) {
    ok = ok && objective_equivalence(r.eval.logs);
    for (std::size_t i = 0; i < r.eval.logs[0].size(); ++i) {
      ++total;
      bool all = true;
      for (const auto& agent : r.eval.logs) all = all && agent[i].cause == env::TerminalCause::complete;
      comparable += all;
      for (const auto& agent : r.eval.logs) {
        const EpisodeLog& l = agent[i];
        if (l.steps && l.mean_speed != l.sum_speed / static_cast<double>(l.steps)) ok = false;
      }
    }
  }
  return {12, "objective equivalence", ok && comparable > 0,
          fmt("argmax sum == argmax mean on %zu/%zu scenarios where every agent completed", comparable, total)};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::vector<Verdict> v;
  progress("criterion 1");
  v.push_back(conservation());
  progress("criterion 2");
  v.push_back(gradients());
  progress("criterion 4");
  v.push_back(bellman());

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {1, 2, 3}) {
    progress("desk pipeline, seed " + std::to_string(seed));
    runs.push_back(run_pipeline(seed));
    const SeedRun& r = runs.back();
    progress(fmt("grades %.0f s, cgan %.0f s, training %.0f s, evaluation %.0f s", r.grade_secs, r.cgan_secs,
                 r.train_secs, r.eval_secs));
  }

  std::size_t clamp = 0;
  progress("criterion 3");
  v.push_back(c_agent_safety(runs.front(), clamp));

  std::size_t episodes = 0, restriction = 0, stop_steps = 0;
  for (const SeedRun& r : runs) {
    for (const AgentMetrics& m : r.eval.report.agents) {
      clamp += m.clamp_violations;
      episodes += m.episodes;
    }
    restriction += metrics(r, "p-coop").restriction_violations;
    for (const EpisodeLog& l : r.eval.logs[2]) stop_steps += l.stop_combination_steps;
  }
  v.push_back({5, "constraint clamp", clamp == 0,
               fmt("%zu violations over %zu agent episodes plus 100 exact-prediction C-Agent episodes", clamp,
                   episodes)});
  v.push_back({6, "P-Coop restriction", restriction == 0 && stop_steps > 0,
               fmt("%zu deviations over %zu P-Coop steps in having-'3' combinations", restriction, stop_steps)});
  v.push_back(surplus_shape(runs));
  v.push_back(death_ordering(runs));
  progress("criterion 9");
  v.push_back(cgan_fidelity(runs.front()));
  progress("criterion 10");
  v.push_back(grade_structure(runs.front()));
  progress("criterion 11");
  v.push_back(determinism(runs.front()));
  v.push_back(objective(runs));

  std::sort(v.begin(), v.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int failed = 0;
  for (const Verdict& x : v) {
    std::cout << (x.pass ? "PASS" : "FAIL") << "  criterion " << (x.id < 10 ? " " : "") << x.id << "  " << x.name
              << ": " << x.detail << '\n';
    failed += !x.pass;
  }
  std::cout << fmt("%zu/%zu criteria passed in %.0f s\n", v.size() - failed, v.size(), seconds_since(start));
  return failed ? 1 : 0;
}
