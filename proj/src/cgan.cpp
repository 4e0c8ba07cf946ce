#include "pickling/cgan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "pickling/binary_io.hpp"
#include "pickling/errors.hpp"
#include "pickling/text.hpp"

namespace pickling::cgan {

void CganConfig::validate() const {
  if (noise_length < 1 || window_length < 1 || numeric_columns < 1) throw InputError("cgan: dimensions must be >= 1");
  if (hidden.empty()) throw InputError("cgan: at least one hidden layer");
  if (discriminator_ratio < 1) throw InputError("cgan: discriminator ratio k must be >= 1");
  if (!(label_smoothing > 0.0 && label_smoothing <= 1.0)) throw InputError("cgan: label_smoothing must be in (0,1]");
  if (batch_size < 1) throw InputError("cgan: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("cgan: learning_rate must be positive");
  if (window_stride < 1) throw InputError("cgan: window_stride must be >= 1");
}

WindowDataset build_windows(const Matrix& standardized, std::span<const std::size_t> grades,
                            std::size_t grade_count, std::size_t window_length, std::size_t stride) {
  const auto rows = static_cast<std::size_t>(standardized.rows());
  if (rows != grades.size()) throw InputError("build_windows: grade count differs from row count");
  if (rows < window_length) throw InputError("build_windows: fewer rows than one window");
  if (stride < 1) throw InputError("build_windows: stride must be >= 1");
  const auto cols = static_cast<std::size_t>(standardized.cols());
  WindowDataset out;
  out.grade_count = grade_count;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window_length <= rows; s += stride) starts.push_back(s);
  out.x.resize(static_cast<Eigen::Index>(starts.size()), static_cast<Eigen::Index>(window_length * cols));
  for (std::size_t w = 0; w < starts.size(); ++w) {
    for (std::size_t j = 0; j < window_length; ++j) {
      for (std::size_t c = 0; c < cols; ++c) {
        out.x(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(j * cols + c)) =
            standardized(static_cast<Eigen::Index>(starts[w] + j), static_cast<Eigen::Index>(c));
      }
    }
    if (grades[starts[w]] >= grade_count) throw InputError("build_windows: grade outside vocabulary");
    out.conditions.push_back(grades[starts[w]]);
  }
  return out;
}

WindowDataset build_windows(const Dataset& ds, const CganConfig& config) {
  std::vector<std::size_t> grades;
  grades.reserve(ds.strips.size());
  for (const Strip& s : ds.strips) grades.push_back(s.grade);
  return build_windows(standardize(ds.strips, ds.stats), grades, ds.vocabulary.grade_count(),
                       config.window_length, config.window_stride);
}

Matrix flatten_windows(const Matrix& rows, std::size_t window_length) {
  const auto w = static_cast<Eigen::Index>(window_length);
  if (rows.rows() % w != 0) throw InputError("flatten_windows: row count not a multiple of the window");
  const Eigen::Index b = rows.rows() / w, c = rows.cols();
  Matrix flat(b, w * c);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) flat.block(i, j * c, 1, c) = rows.row(i * w + j);
  }
  return flat;
}

Matrix unflatten_windows(const Matrix& flat, std::size_t window_length, std::size_t columns) {
  const auto w = static_cast<Eigen::Index>(window_length);
  const auto c = static_cast<Eigen::Index>(columns);
  if (flat.cols() != w * c) throw InputError("unflatten_windows: width differs from W*C");
  Matrix rows(flat.rows() * w, c);
  for (Eigen::Index i = 0; i < flat.rows(); ++i) {
    for (Eigen::Index j = 0; j < w; ++j) rows.row(i * w + j) = flat.block(i, j * c, 1, c);
  }
  return rows;
}

ColumnSupport ColumnSupport::from(const std::vector<Strip>& strips) {
  if (strips.empty()) throw InputError("column support needs strips");
  ColumnSupport s;
  s.min.fill(INFINITY);
  s.max.fill(-INFINITY);
  std::array<std::set<double>, kNumericColumns> distinct;
  for (const Strip& strip : strips) {
    const auto row = numeric_row(strip);
    for (std::size_t c = 0; c < kNumericColumns; ++c) {
      s.min[c] = std::min(s.min[c], row[c]);
      s.max[c] = std::max(s.max[c], row[c]);
      if (distinct[c].size() <= kMaxLevels) distinct[c].insert(row[c]);
    }
  }
  for (std::size_t c = 0; c < kNumericColumns; ++c) {
    if (distinct[c].size() <= kMaxLevels) s.levels[c].assign(distinct[c].begin(), distinct[c].end());
  }
  return s;
}

nn::NetworkSpec generator_spec(const CganConfig& c) {
  nn::NetworkSpec spec;
  std::size_t in = c.noise_length;
  for (std::size_t h : c.hidden) {
    auto l = nn::LayerSpec::dense(in, h, nn::Activation::leaky_relu);
    l.leaky_slope = c.leaky_slope;
    spec.layers.push_back(l);
    in = h;
  }
  auto top = nn::LayerSpec::dense(in, c.noise_length * c.window_length, nn::Activation::leaky_relu);
  top.leaky_slope = c.leaky_slope;
  spec.layers.push_back(top);
  spec.layers.push_back(nn::LayerSpec::reshape(c.noise_length * c.window_length, c.noise_length));
  spec.layers.push_back(nn::LayerSpec::dense(c.noise_length, c.numeric_columns, nn::Activation::identity));
  spec.loss = nn::LossKind::mse;
  return spec;
}

nn::NetworkSpec discriminator_spec(const CganConfig& c) {
  nn::NetworkSpec spec;
  std::size_t in = c.window_width();
  for (std::size_t h : c.hidden) {
    auto l = nn::LayerSpec::dense(in, h, nn::Activation::leaky_relu);
    l.leaky_slope = c.leaky_slope;
    spec.layers.push_back(l);
    in = h;
  }
  spec.layers.push_back(nn::LayerSpec::dense(in, 1, nn::Activation::sigmoid));
  spec.loss = nn::LossKind::binary_cross_entropy;
  return spec;
}

namespace {

Matrix embedding_init(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  }
  return m;
}

}  // namespace

CganModel::CganModel(CganConfig config, std::size_t grade_count, Rng& rng)
    : config_((config.validate(), std::move(config))),
      gen_embedding_(nn::LayerSpec::embedding(grade_count, config_.noise_length),
                     embedding_init(grade_count, config_.noise_length, rng)),
      generator_(generator_spec(config_), rng),
      disc_embedding_(nn::LayerSpec::embedding(grade_count, config_.window_width()),
                      embedding_init(grade_count, config_.window_width(), rng)),
      discriminator_(discriminator_spec(config_), rng) {}

CganModel::CganModel(CganConfig config, Matrix generator_embedding, nn::Network generator,
                     Matrix discriminator_embedding, nn::Network discriminator)
    : config_((config.validate(), std::move(config))),
      gen_embedding_(nn::LayerSpec::embedding(static_cast<std::size_t>(generator_embedding.rows()),
                                              config_.noise_length),
                     generator_embedding),
      generator_(std::move(generator)),
      disc_embedding_(nn::LayerSpec::embedding(static_cast<std::size_t>(discriminator_embedding.rows()),
                                               config_.window_width()),
                      discriminator_embedding),
      discriminator_(std::move(discriminator)) {
  if (generator_.spec().input_dim() != config_.noise_length ||
      generator_.spec().output_dim() != config_.numeric_columns) {
    throw InputError("cgan: generator shape does not match the config");
  }
  if (discriminator_.spec().input_dim() != config_.window_width() || discriminator_.spec().output_dim() != 1) {
    throw InputError("cgan: discriminator shape does not match the config");
  }
}

void CganModel::check_conditions(std::span<const std::size_t> ids) const {
  for (std::size_t id : ids) {
    if (id >= grade_count()) throw InputError("cgan: unknown grade id " + std::to_string(id));
  }
}

Matrix CganModel::generator_forward(const Matrix& noise, std::span<const std::size_t> conditions) const {
  check_conditions(conditions);
  if (noise.cols() != static_cast<Eigen::Index>(config_.noise_length) ||
      noise.rows() != static_cast<Eigen::Index>(conditions.size())) {
    throw InputError("cgan: noise shape does not match");
  }
  Matrix product(noise.rows(), noise.cols());
  for (Eigen::Index r = 0; r < noise.rows(); ++r) {
    product.row(r) = noise.row(r).cwiseProduct(gen_embedding_.table().value.row(
        static_cast<Eigen::Index>(conditions[static_cast<std::size_t>(r)])));
  }
  return flatten_windows(generator_.predict(product), config_.window_length);
}

Matrix CganModel::generate_window(const Matrix& noise_row, std::span<const std::size_t> grade_window) const {
  if (grade_window.empty()) throw InputError("cgan: empty grade window");
  check_conditions(grade_window);
  const std::size_t cond = grade_window.front();
  return unflatten_windows(generator_forward(noise_row, std::span<const std::size_t>(&cond, 1)),
                           config_.window_length, config_.numeric_columns);
}

Matrix CganModel::discriminate(const Matrix& windows, std::span<const std::size_t> conditions) const {
  check_conditions(conditions);
  if (windows.rows() != static_cast<Eigen::Index>(conditions.size())) throw InputError("cgan: condition count");
  Matrix product(windows.rows(), windows.cols());
  for (Eigen::Index r = 0; r < windows.rows(); ++r) {
    product.row(r) = windows.row(r).cwiseProduct(disc_embedding_.table().value.row(
        static_cast<Eigen::Index>(conditions[static_cast<std::size_t>(r)])));
  }
  return discriminator_.predict(product);
}

Matrix CganModel::generator_train_forward(const Matrix& noise, std::span<const std::size_t> conditions, Rng& rng) {
  check_conditions(conditions);
  gen_noise_ = noise;
  gen_label_ = gen_embedding_.forward(conditions, nn::Mode::train);
  const Matrix product = noise.cwiseProduct(gen_label_);
  return flatten_windows(generator_.forward(product, nn::Mode::train, rng), config_.window_length);
}

void CganModel::generator_backward(const Matrix& grad_flat) {
  const Matrix g = generator_.backward(unflatten_windows(grad_flat, config_.window_length, config_.numeric_columns));
  gen_embedding_.backward(g.cwiseProduct(gen_noise_));
}

Matrix CganModel::discriminator_train_forward(const Matrix& windows, std::span<const std::size_t> conditions,
                                              Rng& rng) {
  check_conditions(conditions);
  disc_input_ = windows;
  disc_label_ = disc_embedding_.forward(conditions, nn::Mode::train);
  return discriminator_.forward(windows.cwiseProduct(disc_label_), nn::Mode::train, rng);
}

Matrix CganModel::discriminator_backward(const Matrix& grad_prob) {
  const Matrix g = discriminator_.backward(grad_prob);
  disc_embedding_.backward(g.cwiseProduct(disc_input_));
  return g.cwiseProduct(disc_label_);
}

std::vector<nn::Parameter*> CganModel::generator_parameters() {
  std::vector<nn::Parameter*> p{&gen_embedding_.table()};
  for (nn::Parameter* q : generator_.parameters()) p.push_back(q);
  return p;
}

std::vector<nn::Parameter*> CganModel::discriminator_parameters() {
  std::vector<nn::Parameter*> p{&disc_embedding_.table()};
  for (nn::Parameter* q : discriminator_.parameters()) p.push_back(q);
  return p;
}

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n01(rng);
  }
  return m;
}

Eigen::VectorXd column_sd(const Matrix& rows) {
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  return ((rows.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
}

}  // namespace

Matrix discriminator_targets(const CganConfig& config, std::size_t real, std::size_t fake) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(real + fake), 1);
  t.topRows(static_cast<Eigen::Index>(real)).setConstant(config.label_smoothing);
  return t;
}

CganModel train_cgan(const WindowDataset& data, const CganConfig& config, Rng& rng) {
  config.validate();
  if (data.x.rows() == 0) throw InputError("train_cgan: no windows");
  if (data.x.cols() != static_cast<Eigen::Index>(config.window_width())) {
    throw InputError("train_cgan: window width differs from W*C");
  }
  Rng init_rng(rng());
  Rng batch_rng(rng());
  Rng noise_rng(rng());
  Rng pass_rng(rng());
  CganModel model(config, data.grade_count, init_rng);
  nn::OptimizerState opt_g = nn::OptimizerState::adam(config.learning_rate);
  nn::OptimizerState opt_d = nn::OptimizerState::adam(config.learning_rate);
  auto gen_params = model.generator_parameters();
  auto disc_params = model.discriminator_parameters();

  const auto b = static_cast<Eigen::Index>(config.batch_size);
  const auto n = static_cast<Eigen::Index>(config.noise_length);
  std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(data.x.rows()) - 1);
  auto draw = [&](Matrix& x, std::vector<std::size_t>& cond) {
    x.resize(b, data.x.cols());
    cond.resize(config.batch_size);
    for (Eigen::Index i = 0; i < b; ++i) {
      const std::size_t k = pick(batch_rng);
      x.row(i) = data.x.row(static_cast<Eigen::Index>(k));
      cond[static_cast<std::size_t>(i)] = data.conditions[k];
    }
  };

  const Matrix targets = discriminator_targets(config, config.batch_size, config.batch_size);
  const Matrix ones = Matrix::Ones(b, 1);
  std::size_t collapse_streak = 0;
  Matrix real, fake_x;
  std::vector<std::size_t> real_cond, fake_cond;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double d_loss = 0.0;
    for (std::size_t step = 0; step < config.discriminator_ratio; ++step) {
      for (nn::Parameter* p : disc_params) p->zero_grad();
      draw(real, real_cond);
      draw(fake_x, fake_cond);
      const Matrix fake = model.generator_forward(normal_matrix(b, n, noise_rng), fake_cond);
      Matrix x(2 * b, real.cols());
      x << real, fake;
      std::vector<std::size_t> cond = real_cond;
      cond.insert(cond.end(), fake_cond.begin(), fake_cond.end());
      const Matrix p = model.discriminator_train_forward(x, cond, pass_rng);
      const nn::LossResult loss = nn::compute_loss(nn::LossKind::binary_cross_entropy, p, targets);
      model.discriminator_backward(loss.grad);
      nn::adam_update(disc_params, opt_d);
      d_loss += loss.value;
    }
    d_loss /= static_cast<double>(config.discriminator_ratio);

    for (nn::Parameter* p : gen_params) p->zero_grad();
    draw(real, real_cond);
    const Matrix fake = model.generator_train_forward(normal_matrix(b, n, noise_rng), real_cond, pass_rng);
    const Matrix p = model.discriminator_train_forward(fake, real_cond, pass_rng);
    const nn::LossResult g_loss = nn::compute_loss(nn::LossKind::binary_cross_entropy, p, ones);
    model.generator_backward(model.discriminator_backward(g_loss.grad));
    nn::adam_update(gen_params, opt_g);

    if (!std::isfinite(d_loss) || !std::isfinite(g_loss.value)) {
      std::ostringstream msg;
      msg << "cgan diverged at epoch " << epoch << " (generator " << g_loss.value << ", discriminator " << d_loss
          << ")";
      throw TrainingError(msg.str());
    }
    model.log.generator_losses.push_back(g_loss.value);
    model.log.discriminator_losses.push_back(d_loss);

    const Eigen::VectorXd fake_sd = column_sd(unflatten_windows(fake, config.window_length, config.numeric_columns));
    const Eigen::VectorXd real_sd = column_sd(unflatten_windows(real, config.window_length, config.numeric_columns));
    bool collapsed = false;
    for (Eigen::Index c = 0; c < fake_sd.size(); ++c) {
      if (real_sd(c) > 0.0 && fake_sd(c) < config.collapse_ratio * real_sd(c)) collapsed = true;
    }
    collapse_streak = collapsed ? collapse_streak + 1 : 0;
    if (collapse_streak >= config.collapse_patience) {
      model.log.collapse_warnings.push_back(epoch);
      collapse_streak = 0;
    }
  }
  for (nn::Parameter* p : gen_params) p->zero_grad();
  for (nn::Parameter* p : disc_params) p->zero_grad();
  return model;
}

CganModel train_strip_cgan(const Dataset& ds, const CganConfig& config, Rng& rng) {
  if (config.numeric_columns != kNumericColumns) throw InputError("strip cgan needs all numeric columns");
  CganModel model = train_cgan(build_windows(ds, config), config, rng);
  model.vocabulary = ds.vocabulary;
  model.stats = ds.stats;
  model.support = ColumnSupport::from(ds.strips);
  return model;
}

GeneratedStrips generate_strips(const CganModel& model, std::span<const std::size_t> grades, Rng& rng,
                                const LengthModel& length) {
  if (grades.empty()) throw InputError("generate_strips: no grades");
  const CganConfig& c = model.config();
  if (c.numeric_columns != kNumericColumns || model.vocabulary.grade_count() != model.grade_count()) {
    throw InputError("generate_strips: model is not bound to the strip domain");
  }
  for (std::size_t g : grades) {
    if (!model.vocabulary.contains(g)) throw InputError("generate_strips: grade outside vocabulary");
  }
  GeneratedStrips out;
  std::normal_distribution<double> n01(0.0, 1.0);
  const ColumnSupport& sup = model.support;
  for (std::size_t start = 0; start < grades.size(); start += c.window_length) {
    const std::size_t count = std::min(c.window_length, grades.size() - start);
    Matrix noise(1, static_cast<Eigen::Index>(c.noise_length));
    for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(0, j) = n01(rng);
    const Matrix raw = destandardize(model.generate_window(noise, grades.subspan(start, count)), model.stats);
    for (std::size_t j = 0; j < count; ++j) {
      std::array<double, kNumericColumns> v{};
      for (std::size_t col = 0; col < kNumericColumns; ++col) {
        double x = raw(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(col));
        if (!sup.levels[col].empty()) {
          const auto& lv = sup.levels[col];
          const double nearest = *std::min_element(lv.begin(), lv.end(), [x](double a, double b2) {
            return std::abs(a - x) < std::abs(b2 - x);
          });
          ++out.repairs.snapped;
          x = nearest;
        } else if (!std::isfinite(x) || x < sup.min[col] || x > sup.max[col]) {
          x = std::isfinite(x) ? std::clamp(x, sup.min[col], sup.max[col]) : sup.min[col];
          ++out.repairs.clipped;
        }
        v[col] = x;
      }
      Strip s;
      s.grade = grades[start + j];
      s.original_width = static_cast<int>(std::lround(v[0]));
      s.resulting_width = static_cast<int>(std::lround(v[1]));
      s.thickness = static_cast<int>(std::lround(v[2]));
      s.weight = static_cast<int>(std::lround(v[3]));
      s.coiling_temperature = v[4];
      s.strips_in_coil = v[5];
      if (s.resulting_width > s.original_width) {
        s.resulting_width = s.original_width;
        ++out.repairs.width_forced;
      }
      s.length = derive_length(s, length);
      if (auto problem = validate_strip(s, model.vocabulary)) {
        throw TrainingError("generated strip failed validation after repair: " + *problem);
      }
      out.strips.push_back(s);
    }
  }
  return out;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InputError("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double FidelityReport::max_column_ks() const { return *std::max_element(column_ks.begin(), column_ks.end()); }

namespace {
std::vector<double> steps(const std::vector<Strip>& s, int Strip::*field) {
  std::vector<double> out;
  for (std::size_t i = 1; i < s.size(); ++i) out.push_back(std::abs(s[i].*field - s[i - 1].*field));
  return out;
}
}  // namespace

FidelityReport evaluate_fidelity(const std::vector<Strip>& real, const std::vector<Strip>& generated) {
  if (real.empty() || generated.empty()) throw InputError("evaluate_fidelity: empty strip set");
  FidelityReport r;
  for (std::size_t c = 0; c < kNumericColumns; ++c) {
    std::vector<double> a, b;
    for (const Strip& s : real) a.push_back(numeric_row(s)[c]);
    for (const Strip& s : generated) b.push_back(numeric_row(s)[c]);
    r.column_ks[c] = ks_statistic(std::move(a), std::move(b));
  }
  if (real.size() > 1 && generated.size() > 1) {
    r.width_step_ks = ks_statistic(steps(real, &Strip::original_width), steps(generated, &Strip::original_width));
    r.thickness_step_ks = ks_statistic(steps(real, &Strip::thickness), steps(generated, &Strip::thickness));
  }
  return r;
}

void write_fidelity(std::ostream& out, const FidelityReport& report) {
  out << "# pickling-fidelity v1\nmetric,ks\n";
  for (std::size_t c = 0; c < kNumericColumns; ++c) {
    out << kNumericColumnNames[c] << ',' << text::format_double(report.column_ks[c]) << '\n';
  }
  out << "original_width_step," << text::format_double(report.width_step_ks) << '\n';
  out << "thickness_step," << text::format_double(report.thickness_step_ks) << '\n';
}

// ---- checkpoint ----

namespace {

void write_network(std::ostream& out, const nn::EmbeddingLayer& emb, const nn::Network& net) {
  std::vector<nn::LayerSpec> layers{emb.spec()};
  for (const auto& l : net.spec().layers) layers.push_back(l);
  std::vector<const nn::Parameter*> params{&emb.table()};
  for (const nn::Parameter* p : net.parameters()) params.push_back(p);
  nn::write_checkpoint(out, layers, params);
}

std::pair<Matrix, nn::Network> read_network(std::istream& in, nn::LossKind loss) {
  nn::Checkpoint ck = nn::read_checkpoint(in);
  if (ck.layers.size() < 2 || ck.layers[0].kind != nn::LayerKind::embedding || ck.tensors.empty()) {
    throw IoError("cgan checkpoint has an unexpected layout");
  }
  nn::NetworkSpec spec{{ck.layers.begin() + 1, ck.layers.end()}, loss};
  std::vector<Matrix> tensors(ck.tensors.begin() + 1, ck.tensors.end());
  return {ck.tensors[0], nn::Network(std::move(spec), tensors)};
}

template <typename T>
void write_vec(std::ostream& out, const std::vector<T>& v) {
  binary::write<std::uint64_t>(out, v.size());
  for (const T& x : v) binary::write<T>(out, x);
}

template <typename T>
std::vector<T> read_vec(std::istream& in) {
  const auto n = binary::read<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw IoError("implausible vector length in cgan checkpoint");
  std::vector<T> v(n);
  for (T& x : v) x = binary::read<T>(in);
  return v;
}

}  // namespace

void CganModel::save(std::ostream& out) const {
  binary::write_magic(out, "PKLC", 1);
  const CganConfig& c = config_;
  for (std::uint64_t v : {c.noise_length, c.window_length, c.numeric_columns, c.discriminator_ratio, c.epochs,
                          c.batch_size, c.window_stride, c.collapse_patience}) {
    binary::write<std::uint64_t>(out, v);
  }
  for (double v : {c.label_smoothing, c.learning_rate, c.leaky_slope, c.collapse_ratio}) binary::write<double>(out, v);
  write_vec<std::uint64_t>(out, std::vector<std::uint64_t>(c.hidden.begin(), c.hidden.end()));

  binary::write<std::uint64_t>(out, vocabulary.grade_count());
  for (const auto& g : vocabulary.grades()) binary::write_string(out, g);
  for (std::size_t k = 0; k < kNumericColumns; ++k) {
    binary::write<double>(out, stats.mean[k]);
    binary::write<double>(out, stats.sd[k]);
    binary::write<double>(out, support.min[k]);
    binary::write<double>(out, support.max[k]);
    write_vec<double>(out, support.levels[k]);
  }
  write_vec<double>(out, log.generator_losses);
  write_vec<double>(out, log.discriminator_losses);
  write_vec<std::uint64_t>(out, std::vector<std::uint64_t>(log.collapse_warnings.begin(), log.collapse_warnings.end()));
  write_network(out, gen_embedding_, generator_);
  write_network(out, disc_embedding_, discriminator_);
  if (!out) throw IoError("failed writing cgan checkpoint");
}

CganModel CganModel::load(std::istream& in) {
  if (binary::expect_magic(in, "PKLC") != 1) throw IoError("unsupported cgan checkpoint version");
  CganConfig c;
  for (std::size_t* f : {&c.noise_length, &c.window_length, &c.numeric_columns, &c.discriminator_ratio, &c.epochs,
                         &c.batch_size, &c.window_stride, &c.collapse_patience}) {
    *f = binary::read<std::uint64_t>(in);
  }
  for (double* f : {&c.label_smoothing, &c.learning_rate, &c.leaky_slope, &c.collapse_ratio}) {
    *f = binary::read<double>(in);
  }
  const auto hidden = read_vec<std::uint64_t>(in);
  c.hidden.assign(hidden.begin(), hidden.end());

  std::vector<std::string> names(binary::read<std::uint64_t>(in));
  for (auto& n : names) n = binary::read_string(in);
  StandardizationStats stats;
  ColumnSupport support;
  for (std::size_t k = 0; k < kNumericColumns; ++k) {
    stats.mean[k] = binary::read<double>(in);
    stats.sd[k] = binary::read<double>(in);
    support.min[k] = binary::read<double>(in);
    support.max[k] = binary::read<double>(in);
    support.levels[k] = read_vec<double>(in);
  }
  CganTrainingLog log;
  log.generator_losses = read_vec<double>(in);
  log.discriminator_losses = read_vec<double>(in);
  const auto warn = read_vec<std::uint64_t>(in);
  log.collapse_warnings.assign(warn.begin(), warn.end());

  auto [g_table, g_net] = read_network(in, nn::LossKind::mse);
  auto [d_table, d_net] = read_network(in, nn::LossKind::binary_cross_entropy);
  CganModel model(c, std::move(g_table), std::move(g_net), std::move(d_table), std::move(d_net));
  model.vocabulary = GradeVocabulary(names);
  model.stats = stats;
  model.support = std::move(support);
  model.log = std::move(log);
  return model;
}

}  // namespace pickling::cgan
