#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pickling/rng.hpp"

namespace pickling::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LayerKind : std::uint8_t { dense, lstm, embedding, dropout, multiply, reshape };
enum class Activation : std::uint8_t { identity, relu, leaky_relu, softmax, sigmoid };
enum class Mode : std::uint8_t { train, eval };

std::string to_string(LayerKind kind);
std::string to_string(Activation activation);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Activation activation = Activation::identity;
  double leaky_slope = 0.2;
  double l1_coefficient = 0.0;
  double dropout_rate = 0.0;

  // Throws InputError on a malformed spec.
  void validate() const;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act = Activation::identity,
                         double l1 = 0.0);
  static LayerSpec dropout(std::size_t dim, double rate);
  static LayerSpec reshape(std::size_t in, std::size_t out);
  static LayerSpec embedding(std::size_t vocabulary, std::size_t dim);
  static LayerSpec lstm(std::size_t in, std::size_t hidden);
  static LayerSpec multiply(std::size_t dim);

  bool operator==(const LayerSpec&) const = default;
};

// A trainable tensor with its gradient accumulator. l1 applies to `value` only.
struct Parameter {
  Matrix value;
  Matrix grad;
  double l1 = 0.0;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Glorot-uniform fill: U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
void glorot_uniform(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng);

Matrix apply_activation(Activation act, const Matrix& z, double slope);
// Gradient w.r.t. pre-activation given the upstream gradient on the activation output.
Matrix activation_backward(Activation act, const Matrix& z, const Matrix& a, const Matrix& grad_a,
                           double slope);
// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& z);

// Feed-forward layer over row-major batches (one sample per row).
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const LayerSpec& spec() const = 0;
  virtual Matrix forward(const Matrix& x, Mode mode, Rng& rng) = 0;
  // Eval-mode forward that leaves caches untouched.
  virtual Matrix infer(const Matrix& x) const = 0;
  // Accumulates parameter gradients and returns the gradient w.r.t. the layer input.
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(const LayerSpec& spec, Rng& rng);
  DenseLayer(const LayerSpec& spec, Matrix weights, Vector bias);

  const LayerSpec& spec() const override { return spec_; }
  Matrix forward(const Matrix& x, Mode mode, Rng& rng) override;
  Matrix infer(const Matrix& x) const override;
  Matrix backward(const Matrix& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

  Parameter& weights() { return weights_; }
  Parameter& bias() { return bias_; }
  const Parameter& weights() const { return weights_; }
  const Parameter& bias() const { return bias_; }

 private:
  LayerSpec spec_;
  Parameter weights_;  // output_dim x input_dim
  Parameter bias_;     // output_dim x 1
  Matrix input_, pre_, out_;
  bool cached_ = false;
};

// Inverted dropout: kept activations are scaled by 1/(1-rate) in train mode.
class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(const LayerSpec& spec);
  const LayerSpec& spec() const override { return spec_; }
  Matrix forward(const Matrix& x, Mode mode, Rng& rng) override;
  Matrix infer(const Matrix& x) const override;
  Matrix backward(const Matrix& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }

 private:
  LayerSpec spec_;
  Matrix mask_;
  bool cached_ = false;
};

// (B, k*n) -> (B*k, n): row b of the input becomes rows b*k .. b*k+k-1.
class ReshapeLayer final : public Layer {
 public:
  explicit ReshapeLayer(const LayerSpec& spec);
  const LayerSpec& spec() const override { return spec_; }
  Matrix forward(const Matrix& x, Mode mode, Rng& rng) override;
  Matrix infer(const Matrix& x) const override;
  Matrix backward(const Matrix& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReshapeLayer>(*this); }

  std::size_t factor() const { return spec_.input_dim / spec_.output_dim; }

 private:
  LayerSpec spec_;
  bool cached_ = false;
};

// Builds a feed-forward layer (dense, dropout, reshape).
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng);

class EmbeddingLayer {
 public:
  EmbeddingLayer(const LayerSpec& spec, Rng& rng);
  EmbeddingLayer(const LayerSpec& spec, Matrix table);

  const LayerSpec& spec() const { return spec_; }
  Matrix forward(std::span<const std::size_t> ids, Mode mode);
  void backward(const Matrix& grad_out);
  std::vector<Parameter*> parameters() { return {&table_}; }
  Parameter& table() { return table_; }
  const Parameter& table() const { return table_; }

 private:
  LayerSpec spec_;
  Parameter table_;  // vocabulary x dim
  std::vector<std::size_t> ids_;
  bool cached_ = false;
};

// Parameters of an LSTM cell; gate blocks stacked as [input, forget, candidate, output].
struct LstmParams {
  Matrix input_weights;      // 4H x I
  Matrix recurrent_weights;  // 4H x H
  Vector bias;               // 4H

  std::size_t hidden() const { return static_cast<std::size_t>(recurrent_weights.cols()); }
  std::size_t input() const { return static_cast<std::size_t>(input_weights.cols()); }
};

struct LstmStepResult {
  Matrix hidden;     // B x H
  Matrix cell;       // B x H
  Matrix output;     // B x H (equal to hidden)
  Matrix input_gate, forget_gate, candidate, output_gate;
};

// One LSTM step for a batch of rows. Throws InputError on dimension mismatch.
LstmStepResult lstm_step(const LstmParams& params, const Matrix& x, const Matrix& hidden,
                         const Matrix& cell);

// Many-to-one LSTM over a fixed-length sequence with truncated BPTT inside the window.
class LstmLayer {
 public:
  LstmLayer(const LayerSpec& spec, Rng& rng);
  LstmLayer(const LayerSpec& spec, LstmParams params);

  const LayerSpec& spec() const { return spec_; }
  // steps[t] is B x I; returns the final hidden state (B x H). Starts from a zero state.
  Matrix forward(std::span<const Matrix> steps, Mode mode);
  // Gradient w.r.t. the final hidden state; accumulates parameter gradients.
  void backward(const Matrix& grad_hidden);
  std::vector<Parameter*> parameters() { return {&input_weights_, &recurrent_weights_, &bias_}; }
  LstmParams params() const;

 private:
  LayerSpec spec_;
  Parameter input_weights_;
  Parameter recurrent_weights_;
  Parameter bias_;
  std::vector<Matrix> xs_;
  std::vector<LstmStepResult> trace_;
  std::vector<Matrix> prev_cells_;
  std::vector<Matrix> prev_hidden_;
  bool cached_ = false;
};

}  // namespace pickling::nn
