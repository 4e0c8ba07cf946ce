#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "pickling/nn/layers.hpp"

namespace pickling::nn {

enum class LossKind : std::uint8_t { mse, cross_entropy, binary_cross_entropy };

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::mse;

  void validate() const;
  std::size_t input_dim() const { return layers.front().input_dim; }
  std::size_t output_dim() const { return layers.back().output_dim; }
};

// Builds a feed-forward stack of dense layers with the given hidden widths.
NetworkSpec mlp_spec(std::size_t inputs, std::span<const std::size_t> hidden, std::size_t outputs,
                     Activation hidden_activation, Activation output_activation, double l1,
                     LossKind loss);

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d(loss)/d(prediction)
};

// Batch-mean losses. mse sums squared error over outputs; cross_entropy expects
// probability rows and one-hot targets; binary_cross_entropy expects probabilities.
LossResult compute_loss(LossKind kind, const Matrix& prediction, const Matrix& target);

// Sequential feed-forward network (dense, dropout, reshape).
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, Rng& rng);
  // Builds from explicit parameters, in `parameters()` order.
  Network(NetworkSpec spec, std::span<const Matrix> values);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  Matrix forward(const Matrix& x, Mode mode, Rng& rng);
  // Eval-mode forward without touching caches.
  Matrix predict(const Matrix& x) const;
  Matrix backward(const Matrix& loss_grad);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();
  // Sum over layers of l1 * sum|W|.
  double regularization() const;

  // One train-mode pass: zero grads, forward, loss (+ l1), backward. Returns the total loss.
  double loss_and_gradients(const Matrix& x, const Matrix& target, Rng& rng);

  Layer& layer(std::size_t i) { return *layers_[i]; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

enum class OptimizerKind : std::uint8_t { sgd_decaying, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double step_size = 1e-3;
  double decay_factor = 0.003;
  double step_floor = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  static OptimizerState adam(double step_size);
  static OptimizerState sgd(double step_size, double decay_factor = 0.003, double floor = 1e-4);
};

// Bias-corrected Adam step over `params` using their accumulated gradients.
void adam_update(std::span<Parameter* const> params, OptimizerState& state);
// Plain gradient step w -= step_size * g.
void sgd_update(std::span<Parameter* const> params, OptimizerState& state);
// Dispatches on state.kind.
void optimizer_update(std::span<Parameter* const> params, OptimizerState& state);
// step_size <- max(step_size * (1 - decay_factor), step_floor).
void decay_step_size(OptimizerState& state);

// Draws an index from a probability row. Throws InputError unless the row sums to 1 within 1e-9.
std::size_t sample_categorical(std::span<const double> probabilities, Rng& rng);

// Max over parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// using central differences. `evaluate(true)` must zero gradients, run forward+backward and
// return the loss; `evaluate(false)` only returns the loss.
double gradient_check(std::span<Parameter* const> params,
                      const std::function<double(bool)>& evaluate, double eps = 1e-5,
                      double floor = 1e-12);
double gradient_check(Network& net, const Matrix& input, const Matrix& target, double eps = 1e-5);

// Checkpoint container: "PKLN", version, layer specs, then every parameter tensor.
struct Checkpoint {
  std::vector<LayerSpec> layers;
  std::vector<Matrix> tensors;
};
inline constexpr std::uint32_t kCheckpointVersion = 1;
void write_checkpoint(std::ostream& out, std::span<const LayerSpec> layers,
                      std::span<const Parameter* const> params);
Checkpoint read_checkpoint(std::istream& in);
void save_network(std::ostream& out, const Network& net);
Network load_network(std::istream& in, LossKind loss);

}  // namespace pickling::nn
