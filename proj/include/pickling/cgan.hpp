#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pickling/nn/network.hpp"
#include "pickling/strip.hpp"

namespace pickling::cgan {

using nn::Matrix;

struct CganConfig {
  std::size_t noise_length = 32;
  std::size_t window_length = 16;
  std::size_t numeric_columns = kNumericColumns;
  std::vector<std::size_t> hidden{256, 128, 64};
  std::size_t discriminator_ratio = 2;  // k
  double label_smoothing = 0.9;         // target for real examples
  std::size_t epochs = 4000;            // one generator step per epoch
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double leaky_slope = 0.2;
  std::size_t window_stride = 2;
  double collapse_ratio = 0.1;
  std::size_t collapse_patience = 50;

  void validate() const;
  std::size_t window_width() const { return window_length * numeric_columns; }
};

// Standardized windows flattened row by row: entry (j, c) of a window sits at j*C + c.
struct WindowDataset {
  Matrix x;                             // windows x (W*C)
  std::vector<std::size_t> conditions;  // first grade of each window
  std::size_t grade_count = 0;
};

WindowDataset build_windows(const Matrix& standardized, std::span<const std::size_t> grades,
                            std::size_t grade_count, std::size_t window_length, std::size_t stride);
WindowDataset build_windows(const Dataset& ds, const CganConfig& config);

// (B*W) x C rows <-> B x (W*C) flattened windows.
Matrix flatten_windows(const Matrix& rows, std::size_t window_length);
Matrix unflatten_windows(const Matrix& flat, std::size_t window_length, std::size_t columns);

// Observed per-column support used to repair generated strips.
struct ColumnSupport {
  std::array<double, kNumericColumns> min{};
  std::array<double, kNumericColumns> max{};
  // Non-empty when the column takes at most kMaxLevels distinct values.
  std::array<std::vector<double>, kNumericColumns> levels{};
  static constexpr std::size_t kMaxLevels = 10;

  static ColumnSupport from(const std::vector<Strip>& strips);
};

struct CganTrainingLog {
  std::vector<double> generator_losses;
  std::vector<double> discriminator_losses;
  std::vector<std::size_t> collapse_warnings;  // epochs at which the warning fired
};

class CganModel {
 public:
  CganModel(CganConfig config, std::size_t grade_count, Rng& rng);
  CganModel(CganConfig config, Matrix generator_embedding, nn::Network generator, Matrix discriminator_embedding,
            nn::Network discriminator);

  const CganConfig& config() const { return config_; }
  std::size_t grade_count() const { return static_cast<std::size_t>(gen_embedding_.table().value.rows()); }

  // noise: B x n, conditions: B grade ids -> B x (W*C) standardized windows.
  Matrix generator_forward(const Matrix& noise, std::span<const std::size_t> conditions) const;
  // Single window conditioned on its first grade -> W x C.
  Matrix generate_window(const Matrix& noise_row, std::span<const std::size_t> grade_window) const;
  // Probability that each flattened window is real.
  Matrix discriminate(const Matrix& windows, std::span<const std::size_t> conditions) const;

  // Training-mode passes.
  Matrix generator_train_forward(const Matrix& noise, std::span<const std::size_t> conditions, Rng& rng);
  void generator_backward(const Matrix& grad_flat);
  Matrix discriminator_train_forward(const Matrix& windows, std::span<const std::size_t> conditions, Rng& rng);
  // Returns the gradient with respect to the windows.
  Matrix discriminator_backward(const Matrix& grad_prob);

  std::vector<nn::Parameter*> generator_parameters();
  std::vector<nn::Parameter*> discriminator_parameters();

  void save(std::ostream& out) const;
  static CganModel load(std::istream& in);

  // Binding to the strip domain; empty for generic models.
  GradeVocabulary vocabulary;
  StandardizationStats stats;
  ColumnSupport support;
  CganTrainingLog log;

 private:
  void check_conditions(std::span<const std::size_t> ids) const;

  CganConfig config_;
  nn::EmbeddingLayer gen_embedding_;
  nn::Network generator_;
  nn::EmbeddingLayer disc_embedding_;
  nn::Network discriminator_;
  Matrix gen_noise_, gen_label_, disc_input_, disc_label_;
};

nn::NetworkSpec generator_spec(const CganConfig& c);
nn::NetworkSpec discriminator_spec(const CganConfig& c);

// BCE targets for a stacked batch: `real` smoothed rows, then `fake` zero rows.
Matrix discriminator_targets(const CganConfig& config, std::size_t real, std::size_t fake);

// Alternating minimax training: k discriminator steps on smoothed real and fresh fake
// windows, then one non-saturating generator step with the discriminator frozen.
CganModel train_cgan(const WindowDataset& data, const CganConfig& config, Rng& rng);
// Standardizes the dataset, trains, and binds vocabulary, stats and column support.
CganModel train_strip_cgan(const Dataset& ds, const CganConfig& config, Rng& rng);

struct RepairCounts {
  std::size_t clipped = 0;       // values pulled into the observed range
  std::size_t snapped = 0;       // values moved onto an observed level
  std::size_t width_forced = 0;  // resulting_width lowered to original_width
  std::size_t total() const { return clipped + snapped + width_forced; }
};

struct GeneratedStrips {
  std::vector<Strip> strips;
  RepairCounts repairs;
};

GeneratedStrips generate_strips(const CganModel& model, std::span<const std::size_t> grades, Rng& rng,
                                const LengthModel& length = {});

// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

struct FidelityReport {
  std::array<double, kNumericColumns> column_ks{};
  double width_step_ks = 0.0;      // |original_width_i - original_width_{i-1}|
  double thickness_step_ks = 0.0;  // |thickness_i - thickness_{i-1}|
  double max_column_ks() const;
};

FidelityReport evaluate_fidelity(const std::vector<Strip>& real, const std::vector<Strip>& generated);
void write_fidelity(std::ostream& out, const FidelityReport& report);

}  // namespace pickling::cgan
