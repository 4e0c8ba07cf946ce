#include "pickling/nn/layers.hpp"

#include <cmath>
#include <sstream>

#include "pickling/errors.hpp"

namespace pickling::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::lstm: return "lstm";
    case LayerKind::embedding: return "embedding";
    case LayerKind::dropout: return "dropout";
    case LayerKind::multiply: return "multiply";
    case LayerKind::reshape: return "reshape";
  }
  return "unknown";
}

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::softmax: return "softmax";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

void LayerSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw InputError(to_string(kind) + " layer needs non-zero dimensions");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InputError("dropout_rate must lie in [0, 1)");
  }
  if (!(l1_coefficient >= 0.0)) throw InputError("l1_coefficient must be non-negative");
  switch (kind) {
    case LayerKind::dropout:
    case LayerKind::multiply:
      if (input_dim != output_dim) throw InputError(to_string(kind) + " layer must preserve width");
      break;
    case LayerKind::reshape:
      if (input_dim % output_dim != 0) {
        throw InputError("reshape input width must be a multiple of the output width");
      }
      break;
    default:
      break;
  }
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act, double l1) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.input_dim = in;
  s.output_dim = out;
  s.activation = act;
  s.l1_coefficient = l1;
  return s;
}

LayerSpec LayerSpec::dropout(std::size_t dim, double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.input_dim = s.output_dim = dim;
  s.dropout_rate = rate;
  return s;
}

LayerSpec LayerSpec::reshape(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.input_dim = in;
  s.output_dim = out;
  return s;
}

LayerSpec LayerSpec::embedding(std::size_t vocabulary, std::size_t dim) {
  LayerSpec s;
  s.kind = LayerKind::embedding;
  s.input_dim = vocabulary;
  s.output_dim = dim;
  return s;
}

LayerSpec LayerSpec::lstm(std::size_t in, std::size_t hidden) {
  LayerSpec s;
  s.kind = LayerKind::lstm;
  s.input_dim = in;
  s.output_dim = hidden;
  return s;
}

LayerSpec LayerSpec::multiply(std::size_t dim) {
  LayerSpec s;
  s.kind = LayerKind::multiply;
  s.input_dim = s.output_dim = dim;
  return s;
}

void glorot_uniform(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
}

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double peak = z.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      out(r, c) = std::exp(z(r, c) - peak);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

namespace {
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Matrix apply_activation(Activation act, const Matrix& z, double slope) {
  switch (act) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::leaky_relu: return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    case Activation::sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::softmax: return softmax_rows(z);
  }
  return z;
}

Matrix activation_backward(Activation act, const Matrix& z, const Matrix& a, const Matrix& grad_a,
                           double slope) {
  switch (act) {
    case Activation::identity: return grad_a;
    case Activation::relu:
      return grad_a.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    case Activation::leaky_relu:
      return grad_a.cwiseProduct(z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }));
    case Activation::sigmoid:
      return grad_a.cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
    case Activation::softmax: {
      Matrix out(a.rows(), a.cols());
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double dot = grad_a.row(r).dot(a.row(r));
        out.row(r) = a.row(r).cwiseProduct((grad_a.row(r).array() - dot).matrix());
      }
      return out;
    }
  }
  return grad_a;
}

namespace {
void require_cols(const Matrix& x, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    std::ostringstream msg;
    msg << what << ": expected width " << expected << ", got " << x.cols();
    throw InputError(msg.str());
  }
}

void require_cache(bool cached, const char* what) {
  if (!cached) throw ProtocolError(std::string(what) + ": backward called without a train-mode forward");
}
}  // namespace

// ---- dense ----

DenseLayer::DenseLayer(const LayerSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  weights_.value.resize(static_cast<Eigen::Index>(spec.output_dim), static_cast<Eigen::Index>(spec.input_dim));
  glorot_uniform(weights_.value, spec.input_dim, spec.output_dim, rng);
  weights_.l1 = spec.l1_coefficient;
  bias_.value = Matrix::Zero(static_cast<Eigen::Index>(spec.output_dim), 1);
  weights_.zero_grad();
  bias_.zero_grad();
}

DenseLayer::DenseLayer(const LayerSpec& spec, Matrix weights, Vector bias) : spec_(spec) {
  spec_.validate();
  if (weights.rows() != static_cast<Eigen::Index>(spec.output_dim) ||
      weights.cols() != static_cast<Eigen::Index>(spec.input_dim) ||
      bias.size() != static_cast<Eigen::Index>(spec.output_dim)) {
    throw InputError("dense parameters do not match the layer spec");
  }
  weights_.value = std::move(weights);
  weights_.l1 = spec.l1_coefficient;
  bias_.value = bias;
  weights_.zero_grad();
  bias_.zero_grad();
}

Matrix DenseLayer::infer(const Matrix& x) const {
  require_cols(x, spec_.input_dim, "dense forward");
  Matrix z = x * weights_.value.transpose();
  z.rowwise() += bias_.value.col(0).transpose();
  return apply_activation(spec_.activation, z, spec_.leaky_slope);
}

Matrix DenseLayer::forward(const Matrix& x, Mode mode, Rng&) {
  require_cols(x, spec_.input_dim, "dense forward");
  Matrix z = x * weights_.value.transpose();
  z.rowwise() += bias_.value.col(0).transpose();
  Matrix a = apply_activation(spec_.activation, z, spec_.leaky_slope);
  if (mode == Mode::train) {
    input_ = x;
    pre_ = std::move(z);
    out_ = a;
    cached_ = true;
  } else {
    cached_ = false;
  }
  return a;
}

Matrix DenseLayer::backward(const Matrix& grad_out) {
  require_cache(cached_, "dense");
  const Matrix dz = activation_backward(spec_.activation, pre_, out_, grad_out, spec_.leaky_slope);
  weights_.grad.noalias() += dz.transpose() * input_;
  bias_.grad.col(0) += dz.colwise().sum().transpose();
  if (weights_.l1 > 0.0) {
    weights_.grad += weights_.l1 * weights_.value.unaryExpr([](double w) {
      return static_cast<double>((w > 0.0) - (w < 0.0));
    });
  }
  return dz * weights_.value;
}

// ---- dropout ----

DropoutLayer::DropoutLayer(const LayerSpec& spec) : spec_(spec) { spec_.validate(); }

Matrix DropoutLayer::infer(const Matrix& x) const {
  require_cols(x, spec_.input_dim, "dropout forward");
  return x;
}

Matrix DropoutLayer::forward(const Matrix& x, Mode mode, Rng& rng) {
  require_cols(x, spec_.input_dim, "dropout forward");
  if (mode == Mode::eval || spec_.dropout_rate == 0.0) {
    mask_ = Matrix::Ones(x.rows(), x.cols());
    cached_ = (mode == Mode::train);
    return x;
  }
  const double keep = 1.0 - spec_.dropout_rate;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mask_.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) mask_(i, j) = u(rng) < keep ? 1.0 / keep : 0.0;
  }
  cached_ = true;
  return x.cwiseProduct(mask_);
}

Matrix DropoutLayer::backward(const Matrix& grad_out) {
  require_cache(cached_, "dropout");
  return grad_out.cwiseProduct(mask_);
}

// ---- reshape ----

ReshapeLayer::ReshapeLayer(const LayerSpec& spec) : spec_(spec) { spec_.validate(); }

Matrix ReshapeLayer::infer(const Matrix& x) const {
  require_cols(x, spec_.input_dim, "reshape forward");
  const auto k = static_cast<Eigen::Index>(factor());
  const auto n = static_cast<Eigen::Index>(spec_.output_dim);
  Matrix out(x.rows() * k, n);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (Eigen::Index r = 0; r < k; ++r) out.row(b * k + r) = x.row(b).segment(r * n, n);
  }
  return out;
}

Matrix ReshapeLayer::forward(const Matrix& x, Mode mode, Rng&) {
  Matrix out = infer(x);
  cached_ = (mode == Mode::train);
  return out;
}

Matrix ReshapeLayer::backward(const Matrix& grad_out) {
  require_cache(cached_, "reshape");
  const auto k = static_cast<Eigen::Index>(factor());
  const auto n = static_cast<Eigen::Index>(spec_.output_dim);
  Matrix out(grad_out.rows() / k, k * n);
  for (Eigen::Index b = 0; b < out.rows(); ++b) {
    for (Eigen::Index r = 0; r < k; ++r) out.row(b).segment(r * n, n) = grad_out.row(b * k + r);
  }
  return out;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::dense: return std::make_unique<DenseLayer>(spec, rng);
    case LayerKind::dropout: return std::make_unique<DropoutLayer>(spec);
    case LayerKind::reshape: return std::make_unique<ReshapeLayer>(spec);
    default:
      throw InputError(to_string(spec.kind) + " is not a feed-forward layer");
  }
}

// ---- embedding ----

EmbeddingLayer::EmbeddingLayer(const LayerSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  table_.value.resize(static_cast<Eigen::Index>(spec.input_dim), static_cast<Eigen::Index>(spec.output_dim));
  glorot_uniform(table_.value, spec.input_dim, spec.output_dim, rng);
  table_.zero_grad();
}

EmbeddingLayer::EmbeddingLayer(const LayerSpec& spec, Matrix table) : spec_(spec) {
  spec_.validate();
  if (table.rows() != static_cast<Eigen::Index>(spec.input_dim) ||
      table.cols() != static_cast<Eigen::Index>(spec.output_dim)) {
    throw InputError("embedding table does not match the layer spec");
  }
  table_.value = std::move(table);
  table_.zero_grad();
}

Matrix EmbeddingLayer::forward(std::span<const std::size_t> ids, Mode mode) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table_.value.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= spec_.input_dim) throw InputError("embedding id out of range");
    out.row(static_cast<Eigen::Index>(r)) = table_.value.row(static_cast<Eigen::Index>(ids[r]));
  }
  if (mode == Mode::train) {
    ids_.assign(ids.begin(), ids.end());
    cached_ = true;
  } else {
    cached_ = false;
  }
  return out;
}

void EmbeddingLayer::backward(const Matrix& grad_out) {
  require_cache(cached_, "embedding");
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    table_.grad.row(static_cast<Eigen::Index>(ids_[r])) += grad_out.row(static_cast<Eigen::Index>(r));
  }
}

// ---- lstm ----

LstmStepResult lstm_step(const LstmParams& params, const Matrix& x, const Matrix& hidden,
                         const Matrix& cell) {
  const auto h = static_cast<Eigen::Index>(params.hidden());
  if (params.input_weights.rows() != 4 * h || params.recurrent_weights.rows() != 4 * h ||
      params.bias.size() != 4 * h) {
    throw InputError("lstm parameter blocks are inconsistent");
  }
  if (x.cols() != params.input_weights.cols() || hidden.cols() != h || cell.cols() != h ||
      hidden.rows() != x.rows() || cell.rows() != x.rows()) {
    throw InputError("lstm_step: dimension mismatch");
  }
  Matrix pre = x * params.input_weights.transpose() + hidden * params.recurrent_weights.transpose();
  pre.rowwise() += params.bias.transpose();

  LstmStepResult r;
  r.input_gate = pre.leftCols(h).unaryExpr([](double v) { return sigmoid(v); });
  r.forget_gate = pre.middleCols(h, h).unaryExpr([](double v) { return sigmoid(v); });
  r.candidate = pre.middleCols(2 * h, h).array().tanh().matrix();
  r.output_gate = pre.rightCols(h).unaryExpr([](double v) { return sigmoid(v); });
  r.cell = r.forget_gate.cwiseProduct(cell) + r.input_gate.cwiseProduct(r.candidate);
  r.hidden = r.output_gate.cwiseProduct(r.cell.array().tanh().matrix());
  r.output = r.hidden;
  return r;
}

LstmLayer::LstmLayer(const LayerSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const auto h = static_cast<Eigen::Index>(spec.output_dim);
  const auto in = static_cast<Eigen::Index>(spec.input_dim);
  input_weights_.value.resize(4 * h, in);
  recurrent_weights_.value.resize(4 * h, h);
  glorot_uniform(input_weights_.value, spec.input_dim, 4 * spec.output_dim, rng);
  glorot_uniform(recurrent_weights_.value, spec.output_dim, 4 * spec.output_dim, rng);
  bias_.value = Matrix::Zero(4 * h, 1);
  input_weights_.zero_grad();
  recurrent_weights_.zero_grad();
  bias_.zero_grad();
}

LstmLayer::LstmLayer(const LayerSpec& spec, LstmParams params) : spec_(spec) {
  spec_.validate();
  if (params.hidden() != spec.output_dim || params.input() != spec.input_dim) {
    throw InputError("lstm parameters do not match the layer spec");
  }
  input_weights_.value = std::move(params.input_weights);
  recurrent_weights_.value = std::move(params.recurrent_weights);
  bias_.value = params.bias;
  input_weights_.zero_grad();
  recurrent_weights_.zero_grad();
  bias_.zero_grad();
}

LstmParams LstmLayer::params() const {
  return LstmParams{input_weights_.value, recurrent_weights_.value, bias_.value.col(0)};
}

Matrix LstmLayer::forward(std::span<const Matrix> steps, Mode mode) {
  if (steps.empty()) throw InputError("lstm forward needs at least one step");
  const LstmParams p = params();
  const auto h = static_cast<Eigen::Index>(spec_.output_dim);
  const Eigen::Index batch = steps.front().rows();
  Matrix hidden = Matrix::Zero(batch, h);
  Matrix cell = Matrix::Zero(batch, h);
  if (mode == Mode::train) {
    xs_.assign(steps.begin(), steps.end());
    trace_.clear();
    prev_cells_.clear();
    prev_hidden_.clear();
  }
  for (const Matrix& x : steps) {
    LstmStepResult r = lstm_step(p, x, hidden, cell);
    if (mode == Mode::train) {
      prev_cells_.push_back(cell);
      prev_hidden_.push_back(hidden);
    }
    hidden = r.hidden;
    cell = r.cell;
    if (mode == Mode::train) trace_.push_back(std::move(r));
  }
  cached_ = (mode == Mode::train);
  return hidden;
}

void LstmLayer::backward(const Matrix& grad_hidden) {
  require_cache(cached_, "lstm");
  const auto h = static_cast<Eigen::Index>(spec_.output_dim);
  Matrix dh = grad_hidden;
  Matrix dc = Matrix::Zero(dh.rows(), h);
  for (std::size_t t = trace_.size(); t-- > 0;) {
    const LstmStepResult& s = trace_[t];
    const Matrix tc = s.cell.array().tanh().matrix();
    const Matrix d_out = dh.cwiseProduct(tc);
    dc += dh.cwiseProduct(s.output_gate).cwiseProduct((1.0 - tc.array().square()).matrix());
    const Matrix d_in = dc.cwiseProduct(s.candidate);
    const Matrix d_cand = dc.cwiseProduct(s.input_gate);
    const Matrix d_forget = dc.cwiseProduct(prev_cells_[t]);

    Matrix dpre(dh.rows(), 4 * h);
    dpre.leftCols(h) = d_in.cwiseProduct(s.input_gate.cwiseProduct((1.0 - s.input_gate.array()).matrix()));
    dpre.middleCols(h, h) =
        d_forget.cwiseProduct(s.forget_gate.cwiseProduct((1.0 - s.forget_gate.array()).matrix()));
    dpre.middleCols(2 * h, h) = d_cand.cwiseProduct((1.0 - s.candidate.array().square()).matrix());
    dpre.rightCols(h) =
        d_out.cwiseProduct(s.output_gate.cwiseProduct((1.0 - s.output_gate.array()).matrix()));

    input_weights_.grad.noalias() += dpre.transpose() * xs_[t];
    recurrent_weights_.grad.noalias() += dpre.transpose() * prev_hidden_[t];
    bias_.grad.col(0) += dpre.colwise().sum().transpose();

    dc = dc.cwiseProduct(s.forget_gate);
    dh = dpre * recurrent_weights_.value;
  }
}

}  // namespace pickling::nn
