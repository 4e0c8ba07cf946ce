#include "pickling/grade_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pickling/binary_io.hpp"
#include "pickling/errors.hpp"

namespace pickling::grades {

using nn::Matrix;

void GradeModelConfig::validate() const {
  if (hidden_units < 1) throw InputError("grade model: hidden_units must be >= 1");
  if (sequence_length < 2) throw InputError("grade model: sequence_length must be >= 2");
  if (batch_size < 1) throw InputError("grade model: batch_size must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InputError("grade model: dropout_rate must be in [0,1)");
  if (!(learning_rate > 0.0)) throw InputError("grade model: learning_rate must be positive");
  if (!(sampling_temperature >= 0.0)) throw InputError("grade model: temperature must be >= 0");
}

GradeModelConfig GradeModelConfig::paper() {
  GradeModelConfig c;
  c.hidden_units = 512;
  return c;
}

std::vector<std::size_t> token_stream(const std::vector<Strip>& strips, const GradeVocabulary& vocab) {
  if (strips.empty()) throw InputError("token_stream: no strips");
  std::vector<std::size_t> tokens;
  tokens.reserve(strips.size() * 2);
  for (std::size_t i = 0; i < strips.size(); ++i) {
    const Strip& s = strips[i];
    if (!vocab.contains(s.grade)) throw InputError("token_stream: grade outside vocabulary");
    tokens.push_back(s.grade);
    const bool last = i + 1 == strips.size();
    if (last || strips[i + 1].grade != s.grade || strips[i + 1].original_width != s.original_width ||
        strips[i + 1].thickness != s.thickness) {
      tokens.push_back(vocab.end_token());
    }
  }
  return tokens;
}

TrainingSequences windows_from_tokens(std::span<const std::size_t> tokens, std::size_t sequence_length,
                                      std::size_t vocabulary_size) {
  TrainingSequences out;
  out.vocabulary_size = vocabulary_size;
  for (std::size_t t : tokens) {
    if (t >= vocabulary_size) throw InputError("token outside vocabulary");
  }
  if (tokens.size() <= sequence_length) return out;
  for (std::size_t start = 0; start + sequence_length < tokens.size(); ++start) {
    out.windows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                             tokens.begin() + static_cast<std::ptrdiff_t>(start + sequence_length));
    out.targets.push_back(tokens[start + sequence_length]);
  }
  return out;
}

TrainingSequences build_training_sequences(const std::vector<Strip>& strips, const GradeVocabulary& vocab,
                                           std::size_t sequence_length) {
  const auto tokens = token_stream(strips, vocab);
  return windows_from_tokens(tokens, sequence_length, vocab.size());
}

std::vector<Matrix> one_hot_steps(const std::vector<std::vector<std::size_t>>& windows,
                                  std::span<const std::size_t> rows, std::size_t vocabulary_size) {
  if (rows.empty()) return {};
  const std::size_t len = windows[rows[0]].size();
  std::vector<Matrix> steps(len, Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(vocabulary_size)));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& w = windows[rows[r]];
    for (std::size_t t = 0; t < len; ++t) steps[t](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(w[t])) = 1.0;
  }
  return steps;
}

namespace {

nn::NetworkSpec head_spec(const GradeModelConfig& c, std::size_t vocab_size) {
  nn::NetworkSpec spec;
  spec.layers.push_back(nn::LayerSpec::dropout(c.hidden_units, c.dropout_rate));
  spec.layers.push_back(nn::LayerSpec::dense(c.hidden_units, vocab_size, nn::Activation::softmax));
  spec.loss = nn::LossKind::cross_entropy;
  return spec;
}

nn::LayerSpec lstm_spec(const GradeModelConfig& c, std::size_t vocab_size) {
  return nn::LayerSpec::lstm(vocab_size, c.hidden_units);
}

Matrix run_lstm(const nn::LstmParams& p, const std::vector<Matrix>& steps) {
  Matrix h = Matrix::Zero(steps.front().rows(), static_cast<Eigen::Index>(p.hidden()));
  Matrix c = h;
  for (const Matrix& x : steps) {
    auto r = nn::lstm_step(p, x, h, c);
    h = std::move(r.hidden);
    c = std::move(r.cell);
  }
  return h;
}

Matrix one_hot_targets(const TrainingSequences& data, std::span<const std::size_t> rows) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.vocabulary_size));
  for (std::size_t r = 0; r < rows.size(); ++r) y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(data.targets[rows[r]])) = 1.0;
  return y;
}

}  // namespace

GradeModel::GradeModel(GradeVocabulary vocab, GradeModelConfig config, Rng& rng)
    : vocab_(std::move(vocab)),
      config_(config),
      lstm_(lstm_spec(config, vocab_.size()), rng),
      head_(head_spec(config, vocab_.size()), rng) {
  config_.validate();
}

GradeModel::GradeModel(GradeVocabulary vocab, GradeModelConfig config, nn::LstmLayer lstm, nn::Network head)
    : vocab_(std::move(vocab)), config_(config), lstm_(std::move(lstm)), head_(std::move(head)) {}

std::vector<double> GradeModel::next_distribution(std::span<const std::size_t> window) const {
  if (window.empty()) throw InputError("next_distribution: empty window");
  std::vector<Matrix> steps;
  steps.reserve(window.size());
  for (std::size_t t : window) {
    if (t >= vocab_.size()) throw InputError("next_distribution: token outside vocabulary");
    Matrix x = Matrix::Zero(1, static_cast<Eigen::Index>(vocab_.size()));
    x(0, static_cast<Eigen::Index>(t)) = 1.0;
    steps.push_back(std::move(x));
  }
  const Matrix probs = head_.predict(run_lstm(lstm_.params(), steps));
  return std::vector<double>(probs.data(), probs.data() + probs.size());
}

double GradeModel::cross_entropy(const TrainingSequences& data) const {
  if (data.windows.empty()) throw InputError("cross_entropy: no windows");
  std::vector<std::size_t> rows(data.windows.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto steps = one_hot_steps(data.windows, rows, vocab_.size());
  const Matrix probs = head_.predict(run_lstm(lstm_.params(), steps));
  return nn::compute_loss(nn::LossKind::cross_entropy, probs, one_hot_targets(data, rows)).value;
}

GradeModel train_grade_model(const TrainingSequences& data, const GradeVocabulary& vocab,
                             const GradeModelConfig& config, Rng& rng) {
  config.validate();
  if (data.windows.empty()) throw InputError("train_grade_model: no training windows");
  if (data.vocabulary_size != vocab.size()) throw InputError("train_grade_model: vocabulary size mismatch");
  if (data.windows.front().size() != config.sequence_length) {
    throw InputError("train_grade_model: window length differs from sequence_length");
  }
  Rng init_rng(rng());
  Rng dropout_rng(rng());
  Rng shuffle_rng(rng());
  GradeModel model(vocab, config, init_rng);
  model.primer = data.windows.front();

  std::vector<nn::Parameter*> params = model.lstm().parameters();
  for (nn::Parameter* p : model.head().parameters()) params.push_back(p);
  nn::OptimizerState opt = nn::OptimizerState::adam(config.learning_rate);

  std::vector<std::size_t> order(data.windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      for (nn::Parameter* p : params) p->zero_grad();
      const auto steps = one_hot_steps(data.windows, rows, vocab.size());
      const Matrix h = model.lstm().forward(steps, nn::Mode::train);
      const Matrix probs = model.head().forward(h, nn::Mode::train, dropout_rng);
      const nn::LossResult loss = nn::compute_loss(nn::LossKind::cross_entropy, probs, one_hot_targets(data, rows));
      if (!std::isfinite(loss.value)) {
        std::ostringstream msg;
        msg << "grade model diverged at epoch " << epoch << " batch " << start / config.batch_size
            << " (loss " << loss.value << ")";
        throw TrainingError(msg.str());
      }
      model.lstm().backward(model.head().backward(loss.grad));
      nn::adam_update(params, opt);
      total += loss.value * static_cast<double>(rows.size());
    }
    model.epoch_losses.push_back(total / static_cast<double>(order.size()));
  }
  return model;
}

std::vector<double> apply_temperature(std::span<const double> probabilities, double temperature) {
  std::vector<double> out(probabilities.begin(), probabilities.end());
  if (out.empty()) throw InputError("apply_temperature: empty distribution");
  if (temperature <= 1e-6) {
    const auto best = std::max_element(out.begin(), out.end()) - out.begin();
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(best)] = 1.0;
    return out;
  }
  double max_logit = -INFINITY;
  for (double& p : out) {
    p = p > 0.0 ? std::log(p) / temperature : -INFINITY;
    max_logit = std::max(max_logit, p);
  }
  double sum = 0.0;
  for (double& p : out) {
    p = std::exp(p - max_logit);
    sum += p;
  }
  for (double& p : out) p /= sum;
  return out;
}

GradeSample sample_grades(const GradeModel& model, std::size_t count, Rng& rng, double temperature) {
  if (count < 1) throw InputError("sample_grades: count must be >= 1");
  const std::size_t end = model.vocabulary().end_token();
  const std::size_t len = model.config().sequence_length;
  std::vector<std::size_t> context = model.primer;
  if (context.empty()) context.push_back(end);
  GradeSample out;
  std::size_t run = 0;
  // Guard against a model that only emits END.
  const std::size_t max_draws = 100 * count + 1000;
  std::size_t draws = 0;
  while (out.grades.size() < count) {
    if (++draws > max_draws) throw TrainingError("sample_grades: model emits END indefinitely");
    const std::size_t from = context.size() > len ? context.size() - len : 0;
    const auto probs = model.next_distribution(std::span<const std::size_t>(context).subspan(from));
    std::vector<double> dist = apply_temperature(probs, temperature);
    // Renormalize to absorb rounding before the strict simplex check.
    const double s = std::accumulate(dist.begin(), dist.end(), 0.0);
    for (double& p : dist) p /= s;
    const std::size_t token = nn::sample_categorical(dist, rng);
    context.push_back(token);
    if (context.size() > 4 * len) context.erase(context.begin(), context.end() - static_cast<std::ptrdiff_t>(len));
    if (token == end) {
      if (run > 0) out.batch_lengths.push_back(run);
      run = 0;
    } else {
      out.grades.push_back(token);
      ++run;
    }
  }
  if (run > 0) out.batch_lengths.push_back(run);
  return out;
}

double mean_run_length(std::span<const std::size_t> tokens, std::size_t end_token) {
  std::size_t grades = 0, ends = 0, run = 0;
  for (std::size_t t : tokens) {
    if (t == end_token) {
      if (run > 0) ++ends;
      run = 0;
    } else {
      ++grades;
      ++run;
    }
  }
  if (run > 0) ++ends;
  if (ends == 0) throw InputError("mean_run_length: no batches");
  return static_cast<double>(grades) / static_cast<double>(ends);
}

void GradeModel::save(std::ostream& out) const {
  binary::write_magic(out, "PKLG", 1);
  binary::write<std::uint64_t>(out, config_.hidden_units);
  binary::write<double>(out, config_.dropout_rate);
  binary::write<std::uint64_t>(out, config_.sequence_length);
  binary::write<std::uint64_t>(out, config_.batch_size);
  binary::write<std::uint64_t>(out, config_.epochs);
  binary::write<double>(out, config_.learning_rate);
  binary::write<double>(out, config_.sampling_temperature);
  binary::write<std::uint64_t>(out, vocab_.grade_count());
  for (const auto& g : vocab_.grades()) binary::write_string(out, g);
  binary::write<std::uint64_t>(out, primer.size());
  for (std::size_t t : primer) binary::write<std::uint64_t>(out, t);
  binary::write<std::uint64_t>(out, epoch_losses.size());
  for (double l : epoch_losses) binary::write<double>(out, l);

  const nn::LstmParams p = lstm_.params();
  nn::Parameter wi{p.input_weights, {}, 0.0}, wh{p.recurrent_weights, {}, 0.0}, b{p.bias, {}, 0.0};
  std::vector<const nn::Parameter*> params{&wi, &wh, &b};
  for (const nn::Parameter* q : head_.parameters()) params.push_back(q);
  std::vector<nn::LayerSpec> layers{lstm_.spec()};
  for (const auto& l : head_.spec().layers) layers.push_back(l);
  nn::write_checkpoint(out, layers, params);
}

GradeModel GradeModel::load(std::istream& in) {
  if (binary::expect_magic(in, "PKLG") != 1) throw IoError("unsupported grade model version");
  GradeModelConfig c;
  c.hidden_units = binary::read<std::uint64_t>(in);
  c.dropout_rate = binary::read<double>(in);
  c.sequence_length = binary::read<std::uint64_t>(in);
  c.batch_size = binary::read<std::uint64_t>(in);
  c.epochs = binary::read<std::uint64_t>(in);
  c.learning_rate = binary::read<double>(in);
  c.sampling_temperature = binary::read<double>(in);
  std::vector<std::string> names(binary::read<std::uint64_t>(in));
  for (auto& n : names) n = binary::read_string(in);
  GradeVocabulary vocab(names);
  std::vector<std::size_t> primer(binary::read<std::uint64_t>(in));
  for (auto& t : primer) t = binary::read<std::uint64_t>(in);
  std::vector<double> losses(binary::read<std::uint64_t>(in));
  for (auto& l : losses) l = binary::read<double>(in);

  nn::Checkpoint ck = nn::read_checkpoint(in);
  if (ck.layers.size() != 3 || ck.tensors.size() != 5 || ck.layers[0].kind != nn::LayerKind::lstm) {
    throw IoError("grade model checkpoint has an unexpected layout");
  }
  nn::LstmLayer lstm(ck.layers[0], nn::LstmParams{ck.tensors[0], ck.tensors[1], ck.tensors[2].col(0)});
  nn::NetworkSpec hs{{ck.layers[1], ck.layers[2]}, nn::LossKind::cross_entropy};
  std::vector<Matrix> head_tensors{ck.tensors[3], ck.tensors[4]};
  GradeModel model(std::move(vocab), c, std::move(lstm), nn::Network(std::move(hs), head_tensors));
  model.primer = std::move(primer);
  model.epoch_losses = std::move(losses);
  return model;
}

}  // namespace pickling::grades
