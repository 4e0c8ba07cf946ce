#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pickling/cgan.hpp"
#include "pickling/errors.hpp"

using namespace pickling;
using namespace pickling::cgan;

namespace {

double lrelu(double v) { return v > 0.0 ? v : 0.2 * v; }

CganConfig tiny_config() {
  CganConfig c;
  c.noise_length = 4;
  c.window_length = 4;
  c.hidden = {8};
  c.epochs = 20;
  c.batch_size = 16;
  c.window_stride = 4;
  return c;
}

CganModel tiny_strip_model(std::uint64_t seed, const Dataset& ds) {
  Rng rng(seed);
  return train_strip_cgan(ds, tiny_config(), rng);
}

// sup_x |F_a(x) - F_b(x)| evaluated at every sample point.
double ecdf_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  auto cdf = [](const std::vector<double>& s, double x) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [x](double v) { return v <= x; })) /
           static_cast<double>(s.size());
  };
  double d = 0.0;
  for (const auto* s : {&a, &b}) {
    for (double x : *s) d = std::max(d, std::abs(cdf(a, x) - cdf(b, x)));
  }
  return d;
}

}  // namespace

TEST_CASE("zero embedding gives a bias-driven constant window") {
  CganConfig c = tiny_config();
  Rng rng(1);
  CganModel base(c, 2, rng);
  Rng rng2(1);
  nn::Network gen(generator_spec(c), rng2);
  nn::Network disc(discriminator_spec(c), rng2);
  Matrix emb = Matrix::Ones(2, static_cast<Eigen::Index>(c.noise_length));
  emb.row(1).setZero();
  const CganModel m(c, emb, gen, Matrix::Ones(2, static_cast<Eigen::Index>(c.window_width())), disc);
  Rng noise(3);
  std::normal_distribution<double> n01;
  const std::vector<std::size_t> grade1{1};
  Matrix z1(1, 4), z2(1, 4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    z1(0, j) = n01(noise);
    z2(0, j) = n01(noise);
  }
  const Matrix a = m.generator_forward(z1, grade1);
  const Matrix b = m.generator_forward(z2, grade1);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  const std::vector<std::size_t> grade0{0};
  CHECK((m.generator_forward(z1, grade0) - m.generator_forward(z2, grade0)).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(m.generator_forward(z1, std::vector<std::size_t>{2}), InputError);
}

TEST_CASE("generator forward is deterministic") {
  Rng rng(4);
  const CganModel m(tiny_config(), 3, rng);
  Matrix z = Matrix::Constant(2, 4, 0.3);
  const std::vector<std::size_t> cond{0, 2};
  CHECK(m.generator_forward(z, cond) == m.generator_forward(z, cond));
  const std::vector<std::size_t> window{2, 1, 1, 0};
  CHECK(m.generate_window(z.topRows(1), window) == m.generate_window(z.topRows(1), window));
  CHECK(m.generate_window(z.topRows(1), window).rows() == 4);
  CHECK(m.generate_window(z.topRows(1), window).cols() == 6);
}

TEST_CASE("toy generator matches a straight-line oracle") {
  CganConfig c;
  c.noise_length = 2;
  c.window_length = 2;
  c.numeric_columns = 1;
  c.hidden = {2};
  const Matrix w1 = (Matrix(2, 2) << 0.5, -1.0, 0.25, 2.0).finished();
  const Matrix b1 = (Matrix(2, 1) << 0.1, -0.3).finished();
  const Matrix w2 = (Matrix(4, 2) << 1.0, 0.5, -0.5, 1.5, 2.0, -1.0, 0.3, 0.7).finished();
  const Matrix b2 = (Matrix(4, 1) << 0.0, 0.2, -0.1, 0.05).finished();
  const Matrix w3 = (Matrix(1, 2) << 1.5, -0.75).finished();
  const Matrix b3 = (Matrix(1, 1) << 0.125).finished();
  const std::vector<Matrix> values{w1, b1, w2, b2, w3, b3};
  nn::Network gen(generator_spec(c), values);
  Rng rng(5);
  nn::Network disc(discriminator_spec(c), rng);
  const Matrix emb = (Matrix(1, 2) << 0.8, -1.2).finished();
  const CganModel m(c, emb, gen, Matrix::Ones(1, 2), disc);

  const double z0 = 0.7, z1 = -0.4;
  const double p0 = z0 * 0.8, p1 = z1 * -1.2;
  const double h0 = lrelu(0.5 * p0 - 1.0 * p1 + 0.1);
  const double h1 = lrelu(0.25 * p0 + 2.0 * p1 - 0.3);
  const double u0 = lrelu(1.0 * h0 + 0.5 * h1 + 0.0);
  const double u1 = lrelu(-0.5 * h0 + 1.5 * h1 + 0.2);
  const double u2 = lrelu(2.0 * h0 - 1.0 * h1 - 0.1);
  const double u3 = lrelu(0.3 * h0 + 0.7 * h1 + 0.05);
  const double row0 = 1.5 * u0 - 0.75 * u1 + 0.125;
  const double row1 = 1.5 * u2 - 0.75 * u3 + 0.125;

  const Matrix out = m.generator_forward((Matrix(1, 2) << z0, z1).finished(), std::vector<std::size_t>{0});
  REQUIRE(out.cols() == 2);
  CHECK(std::abs(out(0, 0) - row0) < 1e-12);
  CHECK(std::abs(out(0, 1) - row1) < 1e-12);
}

TEST_CASE("window flattening round trip") {
  Matrix rows(6, 3);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = static_cast<double>(i);
  const Matrix flat = flatten_windows(rows, 2);
  REQUIRE(flat.rows() == 3);
  CHECK(flat(1, 1 * 3 + 2) == rows(3, 2));
  CHECK(unflatten_windows(flat, 2, 3) == rows);
}

TEST_CASE("windows from consecutive strips are conditioned on their first grade") {
  Matrix x(10, 1);
  for (Eigen::Index i = 0; i < 10; ++i) x(i, 0) = static_cast<double>(i);
  const std::vector<std::size_t> grades{0, 0, 1, 1, 1, 0, 1, 0, 0, 1};
  const WindowDataset w = build_windows(x, grades, 2, 4, 3);
  REQUIRE(w.x.rows() == 3);
  CHECK(w.conditions == std::vector<std::size_t>{0, 1, 1});
  CHECK(w.x(1, 0) == 3.0);
  CHECK(w.x(2, 3) == 9.0);
  CHECK_THROWS_AS(build_windows(x, grades, 2, 11, 1), InputError);
}

TEST_CASE("real examples carry the smoothed label") {
  CganConfig c;
  CHECK(c.label_smoothing == 0.9);
  const Matrix t = discriminator_targets(c, 3, 2);
  REQUIRE(t.rows() == 5);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(t(i, 0) == 0.9);
  for (Eigen::Index i = 3; i < 5; ++i) CHECK(t(i, 0) == 0.0);
}

TEST_CASE("untrained discriminator is at chance on a balanced batch") {
  const Dataset ds = synthetic_history(400, 6);
  CganConfig c;
  const WindowDataset w = build_windows(ds, c);
  Rng rng(7);
  const CganModel m(c, w.grade_count, rng);
  const Eigen::Index b = std::min<Eigen::Index>(w.x.rows(), 150);
  Matrix noise(b, static_cast<Eigen::Index>(c.noise_length));
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n01(rng);
  const std::vector<std::size_t> cond(w.conditions.begin(), w.conditions.begin() + b);
  const Matrix fake = m.generator_forward(noise, cond);
  const Matrix pr = m.discriminate(w.x.topRows(b), cond);
  const Matrix pf = m.discriminate(fake, cond);
  double correct = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    correct += pr(i, 0) > 0.5 ? 1.0 : 0.0;
    correct += pf(i, 0) <= 0.5 ? 1.0 : 0.0;
  }
  const double accuracy = correct / static_cast<double>(2 * b);
  CHECK(accuracy >= 0.4);
  CHECK(accuracy <= 0.6);
}

TEST_CASE("one-column Gaussian data: generated moments match") {
  Rng data_rng(8);
  std::normal_distribution<double> n01;
  Matrix x(4000, 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = n01(data_rng);
  const std::vector<std::size_t> grades(4000, 0);
  CganConfig c;
  c.noise_length = 8;
  c.window_length = 4;
  c.numeric_columns = 1;
  c.hidden = {32, 16};
  c.epochs = 1500;
  c.window_stride = 4;
  const WindowDataset w = build_windows(x, grades, 1, c.window_length, c.window_stride);
  Rng rng(9);
  const CganModel m = train_cgan(w, c, rng);
  for (double l : m.log.generator_losses) REQUIRE(std::isfinite(l));
  for (double l : m.log.discriminator_losses) REQUIRE(std::isfinite(l));
  CHECK(m.log.generator_losses.size() == c.epochs);

  Matrix noise(2000, 8);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n01(rng);
  const Matrix g = m.generator_forward(noise, std::vector<std::size_t>(2000, 0));
  const double mean = g.mean();
  const double sd = std::sqrt((g.array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.3);
  CHECK(std::abs(sd - 1.0) < 0.3);
}

TEST_CASE("generated strips are valid and repairs are counted") {
  const Dataset ds = synthetic_history(300, 10);
  const CganModel m = tiny_strip_model(11, ds);
  Rng rng(12);
  const std::vector<std::size_t> one{2};
  const GeneratedStrips single = generate_strips(m, one, rng);
  REQUIRE(single.strips.size() == 1);
  CHECK(single.strips[0].grade == 2);
  CHECK_FALSE(validate_strip(single.strips[0], m.vocabulary).has_value());

  std::vector<std::size_t> grades;
  for (std::size_t i = 0; i < 100; ++i) grades.push_back(ds.strips[i].grade);
  const GeneratedStrips many = generate_strips(m, grades, rng);
  REQUIRE(many.strips.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    const Strip& s = many.strips[i];
    CHECK(s.grade == grades[i]);
    CHECK_FALSE(validate_strip(s, m.vocabulary).has_value());
    CHECK(s.resulting_width <= s.original_width);
    CHECK(s.thickness >= m.support.min[2]);
    CHECK(s.thickness <= m.support.max[2]);
  }
  // strips_in_coil takes three values, so every generated value is snapped.
  CHECK(many.repairs.snapped >= 100);
  CHECK_THROWS_AS(generate_strips(m, std::vector<std::size_t>{}, rng), InputError);
  CHECK_THROWS_AS(generate_strips(m, std::vector<std::size_t>{99}, rng), InputError);
}

TEST_CASE("training and generation are deterministic") {
  const Dataset ds = synthetic_history(200, 13);
  std::stringstream a, b;
  const CganModel m1 = tiny_strip_model(14, ds);
  const CganModel m2 = tiny_strip_model(14, ds);
  m1.save(a);
  m2.save(b);
  CHECK(a.str() == b.str());
  std::vector<std::size_t> grades(30, 1);
  Rng r1(15), r2(15);
  const auto s1 = generate_strips(m1, grades, r1).strips;
  const auto s2 = generate_strips(m2, grades, r2).strips;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].weight == s2[i].weight);
    CHECK(s1[i].coiling_temperature == s2[i].coiling_temperature);
  }
}

TEST_CASE("checkpoint round trip") {
  const Dataset ds = synthetic_history(200, 16);
  const CganModel m = tiny_strip_model(17, ds);
  std::stringstream buf;
  m.save(buf);
  const std::string bytes = buf.str();
  const CganModel back = CganModel::load(buf);
  CHECK(back.vocabulary == m.vocabulary);
  CHECK(back.log.generator_losses == m.log.generator_losses);
  std::stringstream again;
  back.save(again);
  CHECK(again.str() == bytes);
  std::stringstream bad("PKLX");
  CHECK_THROWS_AS(CganModel::load(bad), IoError);
}

TEST_CASE("KS statistic: identity, disjoint support, ECDF oracle") {
  const Dataset ds = synthetic_history(400, 18);
  CHECK(evaluate_fidelity(ds.strips, ds.strips).max_column_ks() == 0.0);

  std::vector<double> a, shifted;
  Rng rng(19);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 500; ++i) a.push_back(n01(rng));
  for (double v : a) shifted.push_back(v + 10.0);
  CHECK(ks_statistic(a, shifted) == doctest::Approx(1.0).epsilon(1e-3));

  const CganModel m = tiny_strip_model(20, ds);
  std::vector<std::size_t> grades;
  for (const Strip& s : ds.strips) grades.push_back(s.grade);
  const auto gen = generate_strips(m, grades, rng).strips;
  const FidelityReport rep = evaluate_fidelity(ds.strips, gen);
  for (std::size_t c = 0; c < kNumericColumns; ++c) {
    std::vector<double> x, y;
    for (const Strip& s : ds.strips) x.push_back(numeric_row(s)[c]);
    for (const Strip& s : gen) y.push_back(numeric_row(s)[c]);
    CHECK(std::abs(rep.column_ks[c] - ecdf_oracle(x, y)) < 1e-12);
  }
  std::vector<double> wr, wg;
  for (std::size_t i = 1; i < ds.strips.size(); ++i) {
    wr.push_back(std::abs(ds.strips[i].original_width - ds.strips[i - 1].original_width));
    wg.push_back(std::abs(gen[i].original_width - gen[i - 1].original_width));
  }
  CHECK(std::abs(rep.width_step_ks - ecdf_oracle(wr, wg)) < 1e-12);

  std::ostringstream out;
  write_fidelity(out, rep);
  CHECK(out.str().rfind("# pickling-fidelity v1\nmetric,ks\n", 0) == 0);
  CHECK_THROWS_AS(ks_statistic({}, {1.0}), InputError);
}
