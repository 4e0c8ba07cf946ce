#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pickling/rng.hpp"

namespace pickling {

// One steel strip (coil). Thickness is stored in 0.01 mm units.
struct Strip {
  std::size_t grade = 0;
  int original_width = 0;   // mm
  int resulting_width = 0;  // mm
  int thickness = 0;        // 0.01 mm
  int weight = 0;           // kg
  double coiling_temperature = 0.0;  // degC
  double strips_in_coil = 1.0;
  double length = 0.0;  // m, derived from mass balance

  bool operator==(const Strip&) const = default;
};

// Column order used by standardization and the CGAN.
inline constexpr std::size_t kNumericColumns = 6;
inline constexpr std::array<const char*, kNumericColumns> kNumericColumnNames{
    "original_width", "resulting_width", "thickness", "weight", "coiling_temperature",
    "strips_in_coil"};

std::array<double, kNumericColumns> numeric_row(const Strip& s);

// Ordered grade names plus a trailing END token. Ids are dense: grades 0..N-1, END = N.
class GradeVocabulary {
 public:
  GradeVocabulary() = default;
  explicit GradeVocabulary(std::vector<std::string> grades);

  std::size_t grade_count() const { return grades_.size(); }
  std::size_t size() const { return grades_.size() + 1; }
  std::size_t end_token() const { return grades_.size(); }
  bool contains(std::size_t id) const { return id < grades_.size(); }
  const std::string& name(std::size_t id) const;
  std::optional<std::size_t> find(const std::string& name) const;
  // Appends when absent; returns the id.
  std::size_t intern(const std::string& name);
  const std::vector<std::string>& grades() const { return grades_; }

  bool operator==(const GradeVocabulary&) const = default;

 private:
  std::vector<std::string> grades_;
};

struct StandardizationStats {
  std::array<double, kNumericColumns> mean{};
  std::array<double, kNumericColumns> sd{};

  // Throws InputError when any sd is not strictly positive.
  void validate() const;
  bool operator==(const StandardizationStats&) const = default;
};

// Population moments over the numeric columns. Constant columns yield sd 0, rejected by standardize.
StandardizationStats compute_stats(const std::vector<Strip>& strips);
Eigen::MatrixXd standardize(const std::vector<Strip>& strips, const StandardizationStats& stats);
Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw, const StandardizationStats& stats);
Eigen::MatrixXd destandardize(const Eigen::MatrixXd& z, const StandardizationStats& stats);

struct LengthModel {
  double density = 7850.0;  // kg/m^3
  double min_length = 100.0;
  double max_length = 2000.0;
};

// length = weight / (density * width * thickness), SI units, clamped to the model range.
double derive_length(const Strip& s, const LengthModel& model = {});

// Checks the Strip invariants; returns a diagnostic or nullopt.
std::optional<std::string> validate_strip(const Strip& s, const GradeVocabulary& vocab);

struct SpeedRule {
  int width_lo = 0;          // mm, inclusive
  int width_hi = 100000;     // mm, exclusive
  int thickness_lo = 0;      // 0.01 mm, inclusive
  int thickness_hi = 100000; // 0.01 mm, exclusive
  std::vector<std::string> grades;  // empty = every grade
  double v_min = 30.0;       // m/min
  double v_max = 220.0;      // m/min
};

struct SpeedLimits {
  double v_min = 0.0;
  double v_max = 0.0;
  bool operator==(const SpeedLimits&) const = default;
};

class SpeedTable {
 public:
  SpeedTable() = default;
  explicit SpeedTable(std::vector<SpeedRule> rules);

  // Synthetic default: wider, thicker and alloyed strips get lower caps within 30..220 m/min.
  static SpeedTable synthetic_default();
  static SpeedTable parse(std::istream& in);
  void write(std::ostream& out) const;

  bool matches(const SpeedRule& rule, const Strip& s, const std::string& grade) const;
  // Tightest applicable pair: min of v_max, max of v_min (capped at v_max).
  // Throws ConfigError naming the strip when no rule matches.
  SpeedLimits speed_cap(const Strip& s, const GradeVocabulary& vocab) const;
  const std::vector<SpeedRule>& rules() const { return rules_; }

 private:
  std::vector<SpeedRule> rules_;
};

// Column mapping for delimited history files.
struct HistorySchema {
  char delimiter = ',';
  std::string grade = "grade";
  std::string original_width = "original_width";
  std::string resulting_width = "resulting_width";
  std::string thickness = "thickness";
  std::string weight = "weight";
  std::string coiling_temperature = "coiling_temperature";
  std::string strips_in_coil = "strips_in_coil";
  LengthModel length;

  static HistorySchema parse(std::istream& in);
};

struct RowDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  std::vector<Strip> strips;
  GradeVocabulary vocabulary;
  StandardizationStats stats;
  std::vector<RowDiagnostic> rejected;
};

IngestResult ingest_history(std::istream& in, const HistorySchema& schema = {});
IngestResult ingest_history(const std::filesystem::path& path, const HistorySchema& schema = {});

void write_history(std::ostream& out, const std::vector<Strip>& strips, const GradeVocabulary& vocab);

// Dataset directory: strips.csv, vocabulary.txt, stats.csv, each with a version header.
struct Dataset {
  std::vector<Strip> strips;
  GradeVocabulary vocabulary;
  StandardizationStats stats;
};
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir, const LengthModel& length = {});

// Batch-structured synthetic mill history over five grades.
Dataset synthetic_history(std::size_t count, std::uint64_t seed, const LengthModel& length = {});

}  // namespace pickling
