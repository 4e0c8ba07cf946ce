#include "pickling/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "pickling/binary_io.hpp"
#include "pickling/errors.hpp"

namespace pickling::nn {

void NetworkSpec::validate() const {
  if (layers.empty()) throw InputError("network needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    if (i + 1 < layers.size() && layers[i].output_dim != layers[i + 1].input_dim) {
      throw InputError("layer " + std::to_string(i) + " output does not feed layer " +
                       std::to_string(i + 1));
    }
  }
  const LayerSpec& last = layers.back();
  if (loss == LossKind::binary_cross_entropy && last.output_dim != 1) {
    throw InputError("binary cross-entropy needs a single output");
  }
  if (loss == LossKind::cross_entropy && last.output_dim < 2) {
    throw InputError("cross-entropy needs at least two classes");
  }
}

NetworkSpec mlp_spec(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t outputs,
                     Activation hidden_activation, Activation output_activation, double l1,
                     LossKind loss) {
  NetworkSpec spec;
  spec.loss = loss;
  std::size_t width = inputs;
  for (std::size_t h : hidden) {
    spec.layers.push_back(LayerSpec::dense(width, h, hidden_activation, l1));
    width = h;
  }
  spec.layers.push_back(LayerSpec::dense(width, outputs, output_activation));
  return spec;
}

LossResult compute_loss(LossKind kind, const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw InputError("loss: prediction and target shapes differ");
  }
  const double batch = static_cast<double>(prediction.rows());
  LossResult r;
  switch (kind) {
    case LossKind::mse: {
      const Matrix diff = prediction - target;
      r.value = diff.squaredNorm() / batch;
      r.grad = 2.0 * diff / batch;
      break;
    }
    case LossKind::cross_entropy: {
      const Matrix p = prediction.cwiseMax(1e-300);
      r.value = -(target.array() * p.array().log()).sum() / batch;
      r.grad = -(target.array() / p.array()).matrix() / batch;
      break;
    }
    case LossKind::binary_cross_entropy: {
      const Matrix p = prediction.cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);
      r.value = -(target.array() * p.array().log() +
                  (1.0 - target.array()) * (1.0 - p.array()).log())
                     .sum() /
                batch;
      r.grad = ((p.array() - target.array()) / (p.array() * (1.0 - p.array()))).matrix() / batch;
      break;
    }
  }
  return r;
}

// ---- network ----

Network::Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  for (const LayerSpec& s : spec_.layers) layers_.push_back(make_layer(s, rng));
}

Network::Network(NetworkSpec spec, std::span<const Matrix> values) : spec_(std::move(spec)) {
  spec_.validate();
  Rng scratch(0);
  for (const LayerSpec& s : spec_.layers) layers_.push_back(make_layer(s, scratch));
  auto params = parameters();
  if (params.size() != values.size()) throw InputError("parameter count does not match the network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.rows() != values[i].rows() || params[i]->value.cols() != values[i].cols()) {
      throw InputError("parameter tensor shape does not match the network");
    }
    params[i]->value = values[i];
  }
}

Network::Network(const Network& other) : spec_(other.spec_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Matrix Network::forward(const Matrix& x, Mode mode, Rng& rng) {
  if (layers_.empty()) throw ProtocolError("forward on an empty network");
  Matrix a = x;
  for (auto& l : layers_) a = l->forward(a, mode, rng);
  return a;
}

Matrix Network::predict(const Matrix& x) const {
  if (layers_.empty()) throw ProtocolError("predict on an empty network");
  Matrix a = x;
  for (const auto& l : layers_) a = l->infer(a);
  return a;
}

Matrix Network::backward(const Matrix& loss_grad) {
  Matrix g = loss_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

double Network::regularization() const {
  double total = 0.0;
  for (const Parameter* p : parameters()) {
    if (p->l1 > 0.0) total += p->l1 * p->value.cwiseAbs().sum();
  }
  return total;
}

double Network::loss_and_gradients(const Matrix& x, const Matrix& target, Rng& rng) {
  zero_grad();
  const Matrix out = forward(x, Mode::train, rng);
  LossResult loss = compute_loss(spec_.loss, out, target);
  backward(loss.grad);
  return loss.value + regularization();
}

// ---- optimizers ----

OptimizerState OptimizerState::adam(double step_size) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.step_size = step_size;
  return s;
}

OptimizerState OptimizerState::sgd(double step_size, double decay_factor, double floor) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd_decaying;
  s.step_size = step_size;
  s.decay_factor = decay_factor;
  s.step_floor = floor;
  return s;
}

void adam_update(std::span<Parameter* const> params, OptimizerState& state) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw InputError("adam: optimizer state does not match the parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != p.grad.rows() || m.cols() != p.grad.cols()) {
      throw InputError("adam: gradient shape mismatch");
    }
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= state.step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

void sgd_update(std::span<Parameter* const> params, OptimizerState& state) {
  for (Parameter* p : params) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw InputError("sgd: gradient shape mismatch");
    }
    p->value -= state.step_size * p->grad;
  }
  ++state.step;
}

void optimizer_update(std::span<Parameter* const> params, OptimizerState& state) {
  if (state.kind == OptimizerKind::adam) {
    adam_update(params, state);
  } else {
    sgd_update(params, state);
  }
}

void decay_step_size(OptimizerState& state) {
  state.step_size = std::max(state.step_size * (1.0 - state.decay_factor), state.step_floor);
}

// ---- sampling ----

std::size_t sample_categorical(std::span<const double> probabilities, Rng& rng) {
  if (probabilities.empty()) throw InputError("sample_categorical: empty distribution");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw InputError("sample_categorical: negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("sample_categorical: probabilities do not sum to 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] > 0.0) last_positive = i;
    acc += probabilities[i];
    if (draw < acc && probabilities[i] > 0.0) return i;
  }
  return last_positive;
}

// ---- gradient check ----

double gradient_check(std::span<Parameter* const> params,
                      const std::function<double(bool)>& evaluate, double eps, double floor) {
  evaluate(true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& w = params[k]->value;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double saved = w(i, j);
        w(i, j) = saved + eps;
        const double up = evaluate(false);
        w(i, j) = saved - eps;
        const double down = evaluate(false);
        w(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[k](i, j);
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  return worst;
}

double gradient_check(Network& net, const Matrix& input, const Matrix& target, double eps) {
  const Rng base(0x5eedULL);
  auto params = net.parameters();
  auto evaluate = [&](bool with_grad) {
    Rng rng = base;  // identical dropout masks for every evaluation
    if (with_grad) return net.loss_and_gradients(input, target, rng);
    const Matrix out = net.forward(input, Mode::train, rng);
    return compute_loss(net.spec().loss, out, target).value + net.regularization();
  };
  return gradient_check(params, evaluate, eps);
}

// ---- checkpoints ----

void write_checkpoint(std::ostream& out, std::span<const LayerSpec> layers,
                      std::span<const Parameter* const> params) {
  binary::write_magic(out, "PKLN", kCheckpointVersion);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
  for (const LayerSpec& s : layers) {
    binary::write<std::uint8_t>(out, static_cast<std::uint8_t>(s.kind));
    binary::write<std::uint8_t>(out, static_cast<std::uint8_t>(s.activation));
    binary::write<std::uint64_t>(out, s.input_dim);
    binary::write<std::uint64_t>(out, s.output_dim);
    binary::write<double>(out, s.leaky_slope);
    binary::write<double>(out, s.l1_coefficient);
    binary::write<double>(out, s.dropout_rate);
  }
  binary::write<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) binary::write<double>(out, p->value(i, j));
    }
  }
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::uint32_t version = binary::expect_magic(in, "PKLN");
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  const auto n_layers = binary::read<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    s.kind = static_cast<LayerKind>(binary::read<std::uint8_t>(in));
    s.activation = static_cast<Activation>(binary::read<std::uint8_t>(in));
    s.input_dim = binary::read<std::uint64_t>(in);
    s.output_dim = binary::read<std::uint64_t>(in);
    s.leaky_slope = binary::read<double>(in);
    s.l1_coefficient = binary::read<double>(in);
    s.dropout_rate = binary::read<double>(in);
    s.validate();
    ck.layers.push_back(s);
  }
  const auto n_tensors = binary::read<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < n_tensors; ++k) {
    const auto rows = binary::read<std::uint64_t>(in);
    const auto cols = binary::read<std::uint64_t>(in);
    if (rows * cols > (1ULL << 28)) throw IoError("implausible tensor size in checkpoint");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = binary::read<double>(in);
    }
    ck.tensors.push_back(std::move(m));
  }
  return ck;
}

void save_network(std::ostream& out, const Network& net) {
  const auto params = net.parameters();
  write_checkpoint(out, net.spec().layers, params);
}

Network load_network(std::istream& in, LossKind loss) {
  Checkpoint ck = read_checkpoint(in);
  NetworkSpec spec{ck.layers, loss};
  return Network(std::move(spec), ck.tensors);
}

}  // namespace pickling::nn
