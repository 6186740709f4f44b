#include <doctest.h>

#include <cmath>
#include <limits>

#include "mpd/errors.hpp"
#include "mpd/numerics.hpp"
#include "testkit.hpp"

using mpd::Matrix;
using mpd::Vector;

TEST_CASE("matmul against hand-computed product") {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const Matrix b{{7, 8}, {9, 10}, {11, 12}};
  CHECK(mpd::matmul(a, b) == Matrix{{58, 64}, {139, 154}});
  CHECK(mpd::matmul_transposed(a, b.transposed()) == Matrix{{58, 64}, {139, 154}});
  CHECK_THROWS_AS(mpd::matmul(a, a), mpd::ConfigError);
}

TEST_CASE("identity and transpose") {
  mpd::Rng rng(3);
  const Matrix m = testkit::random_matrix(3, 5, rng);
  CHECK(mpd::matmul(mpd::Matrix::identity(3), m) == m);
  CHECK(m.transposed().transposed() == m);
  CHECK(m.row_sums().size() == 3);
  CHECK(m.col_sums().size() == 5);
}

TEST_CASE("softmax reference values") {
  // numpy: scipy.special.softmax([1, 2, 3])
  const Vector s = mpd::softmax(Vector{1.0, 2.0, 3.0});
  CHECK(s[0] == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(0.24472847105479767).epsilon(1e-14));
  CHECK(s[2] == doctest::Approx(0.6652409557748219).epsilon(1e-14));

  // Temperature 2 on {0, 2} equals softmax {0, 1}.
  const Vector t = mpd::softmax(Vector{0.0, 2.0}, 2.0);
  CHECK(t[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("softmax survives large inputs and rejects bad ones") {
  const Vector s = mpd::softmax(Vector{1000.0, 1000.0});
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(mpd::softmax(Vector{1.0, std::nan("")}), mpd::NumericError);
  CHECK_THROWS_AS(mpd::softmax(Vector{1.0}, 0.0), mpd::ConfigError);
  CHECK(mpd::log_sum_exp(Vector{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("softmax is a distribution (property)") {
  mpd::Rng rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v(1 + trial % 9);
    for (double& x : v) x = u(rng);
    const Vector s = mpd::softmax(v);
    double total = 0.0;
    for (double x : s) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cosine similarity") {
  CHECK(mpd::cosine_sim(Vector{1, 0}, Vector{0, 2}) == 0.0);
  CHECK(mpd::cosine_sim(Vector{1, 1}, Vector{2, 2}) == doctest::Approx(1.0));
  CHECK(mpd::cosine_sim(Vector{1, 1}, Vector{-3, -3}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(mpd::cosine_sim(Vector{0, 0}, Vector{1, 0}), mpd::NumericError);

  mpd::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = testkit::gaussian_matrix(2, 7, rng);
    const double c = mpd::cosine_sim(m.row(0), m.row(1));
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
    CHECK(c == doctest::Approx(mpd::cosine_sim(m.row(1), m.row(0))));
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(mpd::argmax(Vector{0.1, 0.5, 0.5}) == 1);
  CHECK(mpd::argmax(Vector{2.0, 2.0}) == 0);
  CHECK(mpd::argmax(Vector{-1.0}) == 0);
}

TEST_CASE("adam first steps match closed form") {
  Matrix p{{1.0}};
  const Matrix g{{0.5}};
  auto state = mpd::AdamState::for_param(p);
  mpd::adam_step(p, g, state);
  // Bias-corrected moments are exactly g and g^2 while the gradient is constant.
  CHECK(p(0, 0) == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  mpd::adam_step(p, g, state);
  CHECK(p(0, 0) == doctest::Approx(1.0 - 2.0 * 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(state.step == 2);
}

TEST_CASE("adam rejects bad gradients without touching state") {
  Matrix p{{1.0, 2.0}};
  auto state = mpd::AdamState::for_param(p);
  const Matrix before = p;
  CHECK_THROWS_AS(mpd::adam_step(p, Matrix{{1.0}}, state), mpd::ConfigError);
  CHECK_THROWS_AS(mpd::adam_step(p, Matrix{{1.0, std::numeric_limits<double>::infinity()}}, state),
                  mpd::NumericError);
  CHECK(p == before);
  CHECK(state.step == 0);
}

TEST_CASE("adam minimises a quadratic") {
  Matrix p{{3.0, -2.0}};
  auto state = mpd::AdamState::for_param(p, {.lr = 0.1});
  for (int i = 0; i < 2000; ++i) {
    Matrix g = p;  // gradient of 0.5 * |p|^2
    mpd::adam_step(p, g, state);
  }
  CHECK(std::abs(p(0, 0)) < 1e-3);
  CHECK(std::abs(p(0, 1)) < 1e-3);
}
