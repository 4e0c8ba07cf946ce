#include "pickling/strip.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "pickling/errors.hpp"
#include "pickling/text.hpp"

namespace pickling {

std::array<double, kNumericColumns> numeric_row(const Strip& s) {
  return {static_cast<double>(s.original_width), static_cast<double>(s.resulting_width),
          static_cast<double>(s.thickness),      static_cast<double>(s.weight),
          s.coiling_temperature,                 s.strips_in_coil};
}

// ---- vocabulary ----

GradeVocabulary::GradeVocabulary(std::vector<std::string> grades) {
  for (auto& g : grades) {
    if (find(g)) throw InputError("duplicate grade in vocabulary: " + g);
    if (g == "END") throw InputError("END is reserved");
    grades_.push_back(std::move(g));
  }
}

const std::string& GradeVocabulary::name(std::size_t id) const {
  static const std::string end = "END";
  if (id == end_token()) return end;
  if (id > end_token()) throw InputError("grade id out of range: " + std::to_string(id));
  return grades_[id];
}

std::optional<std::size_t> GradeVocabulary::find(const std::string& name) const {
  const auto it = std::find(grades_.begin(), grades_.end(), name);
  if (it == grades_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - grades_.begin());
}

std::size_t GradeVocabulary::intern(const std::string& name) {
  if (auto id = find(name)) return *id;
  if (name == "END") throw InputError("END is reserved");
  grades_.push_back(name);
  return grades_.size() - 1;
}

// ---- standardization ----

void StandardizationStats::validate() const {
  for (std::size_t c = 0; c < kNumericColumns; ++c) {
    if (!(sd[c] > 0.0) || !std::isfinite(sd[c]) || !std::isfinite(mean[c])) {
      throw InputError(std::string("standardization: zero or invalid sd for column ") +
                       kNumericColumnNames[c]);
    }
  }
}

StandardizationStats compute_stats(const std::vector<Strip>& strips) {
  if (strips.empty()) throw InputError("compute_stats: no strips");
  StandardizationStats st;
  const double n = static_cast<double>(strips.size());
  for (const Strip& s : strips) {
    const auto r = numeric_row(s);
    for (std::size_t c = 0; c < kNumericColumns; ++c) st.mean[c] += r[c];
  }
  for (auto& m : st.mean) m /= n;
  for (const Strip& s : strips) {
    const auto r = numeric_row(s);
    for (std::size_t c = 0; c < kNumericColumns; ++c) st.sd[c] += (r[c] - st.mean[c]) * (r[c] - st.mean[c]);
  }
  for (auto& v : st.sd) v = std::sqrt(v / n);
  return st;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw, const StandardizationStats& stats) {
  stats.validate();
  if (raw.cols() != static_cast<Eigen::Index>(kNumericColumns)) throw InputError("standardize: wrong column count");
  Eigen::MatrixXd z(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    z.col(c) = (raw.col(c).array() - stats.mean[k]) / stats.sd[k];
  }
  return z;
}

Eigen::MatrixXd standardize(const std::vector<Strip>& strips, const StandardizationStats& stats) {
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(strips.size()), static_cast<Eigen::Index>(kNumericColumns));
  for (std::size_t i = 0; i < strips.size(); ++i) {
    const auto r = numeric_row(strips[i]);
    for (std::size_t c = 0; c < kNumericColumns; ++c) raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c];
  }
  return standardize(raw, stats);
}

Eigen::MatrixXd destandardize(const Eigen::MatrixXd& z, const StandardizationStats& stats) {
  stats.validate();
  if (z.cols() != static_cast<Eigen::Index>(kNumericColumns)) throw InputError("destandardize: wrong column count");
  Eigen::MatrixXd raw(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    raw.col(c) = z.col(c).array() * stats.sd[k] + stats.mean[k];
  }
  return raw;
}

// ---- geometry ----

double derive_length(const Strip& s, const LengthModel& model) {
  const double width_m = s.original_width * 1e-3;
  const double thickness_m = s.thickness * 1e-5;
  const double raw = static_cast<double>(s.weight) / (model.density * width_m * thickness_m);
  return std::clamp(raw, model.min_length, model.max_length);
}

std::optional<std::string> validate_strip(const Strip& s, const GradeVocabulary& vocab) {
  if (!vocab.contains(s.grade)) return "grade id " + std::to_string(s.grade) + " not in vocabulary";
  if (s.original_width <= 0) return std::string("original_width must be positive");
  if (s.resulting_width <= 0) return std::string("resulting_width must be positive");
  if (s.resulting_width > s.original_width) return std::string("resulting_width exceeds original_width");
  if (s.thickness <= 0) return std::string("thickness must be positive");
  if (s.weight <= 0) return std::string("weight must be positive");
  if (!(s.length > 0.0) || !std::isfinite(s.length)) return std::string("length must be positive");
  if (!std::isfinite(s.coiling_temperature)) return std::string("coiling_temperature must be finite");
  if (!std::isfinite(s.strips_in_coil) || s.strips_in_coil <= 0.0) {
    return std::string("strips_in_coil must be positive");
  }
  return std::nullopt;
}

// ---- speed table ----

SpeedTable::SpeedTable(std::vector<SpeedRule> rules) : rules_(std::move(rules)) {
  for (const SpeedRule& r : rules_) {
    if (!(r.v_min <= r.v_max) || r.v_min < 0.0) throw ConfigError("speed rule with v_min > v_max");
  }
}

SpeedTable SpeedTable::synthetic_default() {
  const std::vector<std::string> alloyed{"S355", "HSLA420", "DP600"};
  std::vector<SpeedRule> rules;
  rules.push_back({0, 100000, 0, 100000, {}, 30.0, 220.0});
  rules.push_back({1400, 100000, 0, 100000, {}, 30.0, 190.0});
  rules.push_back({1600, 100000, 0, 100000, {}, 30.0, 170.0});
  rules.push_back({0, 100000, 400, 100000, {}, 30.0, 170.0});
  rules.push_back({0, 100000, 600, 100000, {}, 30.0, 140.0});
  rules.push_back({0, 100000, 0, 100000, alloyed, 30.0, 180.0});
  rules.push_back({0, 100000, 400, 100000, alloyed, 30.0, 150.0});
  return SpeedTable(std::move(rules));
}

bool SpeedTable::matches(const SpeedRule& rule, const Strip& s, const std::string& grade) const {
  if (s.original_width < rule.width_lo || s.original_width >= rule.width_hi) return false;
  if (s.thickness < rule.thickness_lo || s.thickness >= rule.thickness_hi) return false;
  if (!rule.grades.empty() && std::find(rule.grades.begin(), rule.grades.end(), grade) == rule.grades.end()) {
    return false;
  }
  return true;
}

SpeedLimits SpeedTable::speed_cap(const Strip& s, const GradeVocabulary& vocab) const {
  const std::string& grade = vocab.name(s.grade);
  bool any = false;
  SpeedLimits out{0.0, 0.0};
  for (const SpeedRule& r : rules_) {
    if (!matches(r, s, grade)) continue;
    if (!any) {
      out = {r.v_min, r.v_max};
      any = true;
    } else {
      out.v_min = std::max(out.v_min, r.v_min);
      out.v_max = std::min(out.v_max, r.v_max);
    }
  }
  if (!any) {
    std::ostringstream msg;
    msg << "speed table has no rule for grade=" << grade << " width=" << s.original_width
        << "mm thickness=" << s.thickness << "x0.01mm";
    throw ConfigError(msg.str());
  }
  out.v_min = std::min(out.v_min, out.v_max);
  return out;
}

SpeedTable SpeedTable::parse(std::istream& in) {
  std::vector<SpeedRule> rules;
  std::string line;
  bool header_seen = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != 7) throw ConfigError("speed table line " + std::to_string(lineno) + ": expected 7 fields");
    SpeedRule r;
    r.width_lo = text::parse_int(f[0]);
    r.width_hi = text::parse_int(f[1]);
    r.thickness_lo = text::parse_int(f[2]);
    r.thickness_hi = text::parse_int(f[3]);
    if (text::trim(f[4]) != "*") {
      for (const auto& g : text::split(f[4], '|')) r.grades.push_back(text::trim(g));
    }
    r.v_min = text::parse_double(f[5]);
    r.v_max = text::parse_double(f[6]);
    rules.push_back(r);
  }
  return SpeedTable(std::move(rules));
}

void SpeedTable::write(std::ostream& out) const {
  out << "# pickling-speed-table v1\n";
  out << "width_lo,width_hi,thickness_lo,thickness_hi,grades,v_min,v_max\n";
  for (const SpeedRule& r : rules_) {
    out << r.width_lo << ',' << r.width_hi << ',' << r.thickness_lo << ',' << r.thickness_hi << ',';
    if (r.grades.empty()) {
      out << '*';
    } else {
      for (std::size_t i = 0; i < r.grades.size(); ++i) out << (i ? "|" : "") << r.grades[i];
    }
    out << ',' << text::format_double(r.v_min) << ',' << text::format_double(r.v_max) << '\n';
  }
}

// ---- ingestion ----

HistorySchema HistorySchema::parse(std::istream& in) {
  HistorySchema s;
  for (const auto& [key, value] : text::parse_key_values(in)) {
    if (key == "delimiter") {
      if (value.size() != 1) throw ConfigError("delimiter must be one character");
      s.delimiter = value[0];
    } else if (key == "grade") s.grade = value;
    else if (key == "original_width") s.original_width = value;
    else if (key == "resulting_width") s.resulting_width = value;
    else if (key == "thickness") s.thickness = value;
    else if (key == "weight") s.weight = value;
    else if (key == "coiling_temperature") s.coiling_temperature = value;
    else if (key == "strips_in_coil") s.strips_in_coil = value;
    else if (key == "density") s.length.density = text::parse_double(value);
    else if (key == "min_length") s.length.min_length = text::parse_double(value);
    else if (key == "max_length") s.length.max_length = text::parse_double(value);
    else throw ConfigError("unknown schema key: " + key);
  }
  return s;
}

IngestResult ingest_history(std::istream& in, const HistorySchema& schema) {
  IngestResult result;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> columns;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string trimmed = text::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto fields = text::split(trimmed, schema.delimiter);
    if (columns.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) columns[text::trim(fields[i])] = i;
      for (const std::string* name : {&schema.grade, &schema.original_width, &schema.resulting_width,
                                      &schema.thickness, &schema.weight, &schema.coiling_temperature,
                                      &schema.strips_in_coil}) {
        if (!columns.count(*name)) throw InputError("history header lacks column '" + *name + "'");
      }
      continue;
    }
    auto field = [&](const std::string& name) -> std::string {
      const std::size_t idx = columns.at(name);
      if (idx >= fields.size()) throw InputError("missing field '" + name + "'");
      return text::trim(fields[idx]);
    };
    try {
      const std::string grade = field(schema.grade);
      if (grade.empty() || grade == "END") throw InputError("invalid grade '" + grade + "'");
      Strip s;
      s.original_width = text::parse_int(field(schema.original_width));
      s.resulting_width = text::parse_int(field(schema.resulting_width));
      s.thickness = text::parse_int(field(schema.thickness));
      s.weight = text::parse_int(field(schema.weight));
      s.coiling_temperature = text::parse_double(field(schema.coiling_temperature));
      s.strips_in_coil = text::parse_double(field(schema.strips_in_coil));
      s.length = derive_length(s, schema.length);
      // Check invariants against a provisional vocabulary so rejected rows never add grades.
      GradeVocabulary probe = result.vocabulary;
      s.grade = probe.intern(grade);
      if (auto problem = validate_strip(s, probe)) throw InputError(*problem);
      result.vocabulary = std::move(probe);
      result.strips.push_back(s);
    } catch (const std::exception& e) {
      result.rejected.push_back({lineno, e.what()});
    }
  }
  if (result.strips.empty()) throw InputError("history contains no valid strips");
  result.stats = compute_stats(result.strips);
  return result;
}

IngestResult ingest_history(const std::filesystem::path& path, const HistorySchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read history file " + path.string());
  return ingest_history(in, schema);
}

void write_history(std::ostream& out, const std::vector<Strip>& strips, const GradeVocabulary& vocab) {
  out << "# pickling-strips v1\n";
  out << "grade,original_width,resulting_width,thickness,weight,coiling_temperature,strips_in_coil\n";
  for (const Strip& s : strips) {
    out << vocab.name(s.grade) << ',' << s.original_width << ',' << s.resulting_width << ','
        << s.thickness << ',' << s.weight << ',' << text::format_double(s.coiling_temperature) << ','
        << text::format_double(s.strips_in_coil) << '\n';
  }
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "strips.csv");
    if (!out) throw IoError("cannot write " + (dir / "strips.csv").string());
    write_history(out, ds.strips, ds.vocabulary);
  }
  {
    std::ofstream out(dir / "vocabulary.txt");
    out << "# pickling-vocabulary v1\n";
    for (const auto& g : ds.vocabulary.grades()) out << g << '\n';
  }
  {
    std::ofstream out(dir / "stats.csv");
    out << "# pickling-stats v1\ncolumn,mean,sd\n";
    for (std::size_t c = 0; c < kNumericColumns; ++c) {
      out << kNumericColumnNames[c] << ',' << text::format_double(ds.stats.mean[c]) << ','
          << text::format_double(ds.stats.sd[c]) << '\n';
    }
  }
}

Dataset read_dataset(const std::filesystem::path& dir, const LengthModel& length) {
  Dataset ds;
  std::ifstream vin(dir / "vocabulary.txt");
  if (!vin) throw IoError("cannot read " + (dir / "vocabulary.txt").string());
  std::vector<std::string> grades;
  std::string line;
  while (std::getline(vin, line)) {
    line = text::trim(line);
    if (!line.empty() && line[0] != '#') grades.push_back(line);
  }
  ds.vocabulary = GradeVocabulary(grades);

  HistorySchema schema;
  schema.length = length;
  IngestResult ing = ingest_history(dir / "strips.csv", schema);
  if (!ing.rejected.empty()) throw IoError("dataset strips.csv contains invalid rows");
  // Re-map ids onto the stored vocabulary order.
  for (Strip& s : ing.strips) {
    const auto id = ds.vocabulary.find(ing.vocabulary.name(s.grade));
    if (!id) throw IoError("dataset strip grade missing from vocabulary.txt");
    s.grade = *id;
  }
  ds.strips = std::move(ing.strips);

  std::ifstream sin(dir / "stats.csv");
  if (!sin) throw IoError("cannot read " + (dir / "stats.csv").string());
  bool header = false;
  std::size_t col = 0;
  while (std::getline(sin, line)) {
    line = text::trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != 3 || col >= kNumericColumns || f[0] != kNumericColumnNames[col]) {
      throw IoError("malformed stats.csv");
    }
    ds.stats.mean[col] = text::parse_double(f[1]);
    ds.stats.sd[col] = text::parse_double(f[2]);
    ++col;
  }
  if (col != kNumericColumns) throw IoError("stats.csv is incomplete");
  return ds;
}

// ---- synthetic history ----

namespace {
struct GradeProfile {
  const char* name;
  double frequency;
  double mean_batch;
  double width_mean, width_sd;
  double thickness_mean, thickness_sd;
  double weight_mean, weight_sd;
  double temperature_mean, temperature_sd;
};

constexpr std::array<GradeProfile, 5> kProfiles{{
    {"DC01", 0.35, 6.0, 1250, 150, 250, 60, 18000, 3000, 620, 20},
    {"S235", 0.25, 5.0, 1400, 200, 350, 80, 20000, 3500, 600, 25},
    {"S355", 0.20, 4.0, 1500, 150, 450, 100, 22000, 3000, 580, 20},
    {"HSLA420", 0.12, 3.0, 1300, 120, 400, 80, 19000, 2500, 560, 15},
    {"DP600", 0.08, 2.0, 1200, 100, 300, 50, 17000, 2500, 540, 15},
}};
}  // namespace

Dataset synthetic_history(std::size_t count, std::uint64_t seed, const LengthModel& length) {
  if (count == 0) throw InputError("synthetic_history: count must be positive");
  Rng rng(seed);
  std::vector<std::string> names;
  std::vector<double> weights;
  for (const auto& p : kProfiles) {
    names.emplace_back(p.name);
    weights.push_back(p.frequency);
  }
  Dataset ds;
  ds.vocabulary = GradeVocabulary(names);
  std::discrete_distribution<std::size_t> pick_grade(weights.begin(), weights.end());
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  while (ds.strips.size() < count) {
    const std::size_t g = pick_grade(rng);
    const GradeProfile& p = kProfiles[g];
    std::geometric_distribution<int> extra(1.0 / p.mean_batch);
    const std::size_t batch = 1 + static_cast<std::size_t>(extra(rng));
    const int width = static_cast<int>(std::lround(std::clamp(p.width_mean + p.width_sd * n01(rng), 900.0, 1900.0)));
    const int thickness =
        static_cast<int>(std::lround(std::clamp(p.thickness_mean + p.thickness_sd * n01(rng), 150.0, 800.0)));
    for (std::size_t k = 0; k < batch && ds.strips.size() < count; ++k) {
      Strip s;
      s.grade = g;
      s.original_width = width;
      const double trim = u01(rng) < 0.7 ? 0.0 : 10.0 + 30.0 * u01(rng);
      s.resulting_width = width - static_cast<int>(std::lround(trim));
      s.thickness = thickness;
      s.weight = static_cast<int>(std::lround(std::clamp(p.weight_mean + p.weight_sd * n01(rng), 8000.0, 32000.0)));
      s.coiling_temperature = std::round((p.temperature_mean + p.temperature_sd * n01(rng)) * 10.0) / 10.0;
      const double c = u01(rng);
      s.strips_in_coil = c < 0.8 ? 1.0 : (c < 0.92 ? 2.0 : 0.5);
      s.length = derive_length(s, length);
      ds.strips.push_back(s);
    }
  }
  ds.stats = compute_stats(ds.strips);
  return ds;
}

}  // namespace pickling
