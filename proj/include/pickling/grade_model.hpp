#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "pickling/nn/network.hpp"
#include "pickling/strip.hpp"

namespace pickling::grades {

struct GradeModelConfig {
  std::size_t hidden_units = 64;
  double dropout_rate = 0.2;
  std::size_t sequence_length = 20;
  std::size_t batch_size = 256;
  std::size_t epochs = 500;
  double learning_rate = 1e-3;
  double sampling_temperature = 1.0;

  void validate() const;
  static GradeModelConfig paper();
};

// Grade ids with END after every run of identical (grade, width, thickness).
std::vector<std::size_t> token_stream(const std::vector<Strip>& strips, const GradeVocabulary& vocab);

struct TrainingSequences {
  std::vector<std::vector<std::size_t>> windows;  // each sequence_length tokens
  std::vector<std::size_t> targets;               // token following each window
  std::size_t vocabulary_size = 0;
};

// Sliding windows with stride 1 over a token stream.
TrainingSequences windows_from_tokens(std::span<const std::size_t> tokens, std::size_t sequence_length,
                                      std::size_t vocabulary_size);
TrainingSequences build_training_sequences(const std::vector<Strip>& strips, const GradeVocabulary& vocab,
                                           std::size_t sequence_length = 20);

// One-hot step matrices: result[t] is (windows x vocabulary).
std::vector<nn::Matrix> one_hot_steps(const std::vector<std::vector<std::size_t>>& windows,
                                      std::span<const std::size_t> rows, std::size_t vocabulary_size);

class GradeModel {
 public:
  GradeModel(GradeVocabulary vocab, GradeModelConfig config, Rng& rng);

  const GradeVocabulary& vocabulary() const { return vocab_; }
  const GradeModelConfig& config() const { return config_; }
  std::size_t output_dim() const { return vocab_.size(); }

  // Next-token distribution after a window (eval mode). Window may be any length >= 1.
  std::vector<double> next_distribution(std::span<const std::size_t> window) const;
  // Mean cross-entropy over windows (eval mode).
  double cross_entropy(const TrainingSequences& data) const;

  std::vector<double> epoch_losses;
  // Seed context for sampling, taken from the training stream.
  std::vector<std::size_t> primer;

  nn::LstmLayer& lstm() { return lstm_; }
  nn::Network& head() { return head_; }

  void save(std::ostream& out) const;
  static GradeModel load(std::istream& in);

 private:
  GradeModel(GradeVocabulary vocab, GradeModelConfig config, nn::LstmLayer lstm, nn::Network head);

  GradeVocabulary vocab_;
  GradeModelConfig config_;
  nn::LstmLayer lstm_;
  nn::Network head_;  // dropout -> dense softmax
};

// Adam on mini-batch cross-entropy, reshuffled every epoch. Throws TrainingError on a non-finite loss.
GradeModel train_grade_model(const TrainingSequences& data, const GradeVocabulary& vocab,
                             const GradeModelConfig& config, Rng& rng);

struct GradeSample {
  std::vector<std::size_t> grades;         // exactly `count`, no END
  std::vector<std::size_t> batch_lengths;  // run lengths between END tokens; last may be cut short
};

// Temperature <= 1e-6 means greedy argmax.
GradeSample sample_grades(const GradeModel& model, std::size_t count, Rng& rng, double temperature);
inline GradeSample sample_grades(const GradeModel& model, std::size_t count, Rng& rng) {
  return sample_grades(model, count, rng, model.config().sampling_temperature);
}

// Applies temperature to log-probabilities and renormalizes.
std::vector<double> apply_temperature(std::span<const double> probabilities, double temperature);

// Corpus mean run length: non-END tokens / END tokens.
double mean_run_length(std::span<const std::size_t> tokens, std::size_t end_token);

}  // namespace pickling::grades
