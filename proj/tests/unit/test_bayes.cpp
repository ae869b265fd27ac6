#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cbnn/bayes.hpp"
#include "cbnn/errors.hpp"
#include "cbnn/gradcheck.hpp"
#include "test_util.hpp"

using namespace cbnn;
using cbnn::testing::random_matrix;
using cbnn::testing::simpson;

namespace {

FlipoutParams random_params(std::size_t in, std::size_t out, Rng& rng, double sigma = 0.3) {
  FlipoutParams p;
  p.w_mean = random_matrix(in, out, rng);
  p.w_rho = Matrix(in, out, softplus_inverse(sigma));
  p.bias = random_matrix(1, out, rng);
  p.prior_scale = 1.0;
  return p;
}

// ∫ q ln(q/p) dw for scalar Gaussians, by Simpson on ±12 posterior std.
double kl_by_quadrature(double mu, double sigma, double prior) {
  auto logpdf = [](double x, double m, double s) {
    return -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * (x - m) * (x - m) / (s * s);
  };
  return simpson(
      [&](double w) {
        const double lq = logpdf(w, mu, sigma);
        return std::exp(lq) * (lq - logpdf(w, 0.0, prior));
      },
      mu - 12 * sigma, mu + 12 * sigma, 4000);
}

}  // namespace

// ---- flipout forward ----------------------------------------------------------

TEST(Flipout, ZeroScaleEqualsMeanOnly) {
  Rng rng(1);
  FlipoutParams p = random_params(5, 3, rng);
  p.w_rho.fill(-1000.0);  // softplus underflows to 0
  const Matrix x = random_matrix(4, 5, rng);
  FlipoutTape t1, t2;
  Rng r(2);
  const Matrix stoch = flipout_forward(x, p, r, Mode::stochastic, t1);
  const Matrix mean = flipout_forward(x, p, r, Mode::mean_only, t2);
  EXPECT_LT(frobenius_distance(stoch, mean), 1e-12);
}

TEST(Flipout, MeanOnlyIsAffine) {
  Rng rng(3);
  const FlipoutParams p = random_params(4, 2, rng);
  const Matrix x = random_matrix(3, 4, rng);
  FlipoutTape tape;
  Rng r(0);
  Matrix expected = matmul(x, p.w_mean);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) expected(i, j) += p.bias[j];
  EXPECT_LT(frobenius_distance(flipout_forward(x, p, r, Mode::mean_only, tape), expected), 1e-14);
}

TEST(Flipout, IdenticalRowsGetDistinctPerturbations) {
  Rng rng(4);
  const FlipoutParams p = random_params(6, 3, rng);
  Matrix x(4, 6);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) x(r, c) = 0.5 + 0.1 * c;
  Rng r(5);
  int all_distinct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    FlipoutTape tape;
    const Matrix out = flipout_forward(x, p, r, Mode::stochastic, tape);
    bool distinct = true;
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b)
        if (out.row_span(a)[0] == out.row_span(b)[0] && out.row_span(a)[1] == out.row_span(b)[1] &&
            out.row_span(a)[2] == out.row_span(b)[2]) {
          distinct = false;
        }
    all_distinct += distinct;
  }
  // Two rows coincide only if all sign patterns agree; that happens rarely.
  EXPECT_GE(all_distinct, 90);
}

TEST(Flipout, MonteCarloMeanMatchesMeanOnly) {
  Rng rng(6);
  const FlipoutParams p = random_params(3, 2, rng, 0.5);
  const Matrix x = random_matrix(2, 3, rng);
  FlipoutTape tape;
  Rng r(7);
  const Matrix mean = flipout_forward(x, p, r, Mode::mean_only, tape);
  const int n = 20000;
  Matrix s(2, 2), ss(2, 2);
  for (int i = 0; i < n; ++i) {
    const Matrix out = flipout_forward(x, p, r, Mode::stochastic, tape);
    for (std::size_t k = 0; k < out.size(); ++k) {
      s[k] += out[k];
      ss[k] += out[k] * out[k];
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double m = s[k] / n;
    const double se = std::sqrt((ss[k] / n - m * m) / n);
    EXPECT_LE(std::abs(m - mean[k]), 3.5 * se) << k;
  }
}

TEST(Flipout, ShapeMismatchThrows) {
  Rng rng(8);
  const FlipoutParams p = random_params(3, 2, rng);
  FlipoutTape tape;
  EXPECT_THROW(flipout_forward(Matrix(2, 4), p, rng, Mode::stochastic, tape), DimensionError);
}

TEST(Flipout, StochasticGradientMatchesFiniteDifferences) {
  Rng init(9);
  FlipoutLayer layer("f", 4, 3, init);
  for (double& v : layer.weight_rho().value.data()) v = softplus_inverse(0.3 + 0.2 * init.uniform());
  for (double& v : layer.bias().value.data()) v = init.normal();
  const Matrix x = random_matrix(5, 4, init, -2, 2);
  const Matrix up = random_matrix(5, 3, init);
  const Rng frozen(10);
  auto loss = [&] {
    Rng r = frozen;
    const Matrix out = layer.forward(x, r, Mode::stochastic);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
    return s;
  };
  auto params = layer.parameters();
  auto backprop = [&] {
    for (Parameter* p : params) p->zero_grad();
    Rng r = frozen;
    layer.forward(x, r, Mode::stochastic);
    layer.backward(up);
  };
  const auto report = grad_check(loss, backprop, params);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
}

TEST(Flipout, InputGradientMatchesFiniteDifferences) {
  Rng init(12);
  const FlipoutParams p = random_params(4, 3, init);
  Parameter x("x", random_matrix(2, 4, init));
  const Matrix up = random_matrix(2, 3, init);
  const Rng frozen(13);
  auto loss = [&] {
    Rng r = frozen;
    FlipoutTape t;
    const Matrix out = flipout_forward(x.value, p, r, Mode::stochastic, t);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += up[i] * out[i];
    return s;
  };
  auto backprop = [&] {
    Rng r = frozen;
    FlipoutTape t;
    flipout_forward(x.value, p, r, Mode::stochastic, t);
    Matrix dm(4, 3), dr(4, 3), db(1, 3);
    x.grad = flipout_backward(t, up, p.w_mean, p.w_rho, dm, dr, db);
  };
  EXPECT_LT(grad_check(loss, backprop, {&x}).max_rel_error, 1e-5);
}

TEST(Flipout, LayerInitialisation) {
  Rng init(14);
  FlipoutLayer layer("f", 10, 6, init);
  for (double v : layer.weight_rho().value.data()) EXPECT_NEAR(softplus(v), 0.05, 1e-12);
  for (double v : layer.weight_mean().value.data()) EXPECT_LE(std::abs(v), std::sqrt(6.0 / 16.0));
  for (double v : layer.bias().value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Flipout, LayerAgreesWithFreeFunction) {
  Rng init(15);
  FlipoutLayer layer("f", 3, 2, init);
  const Matrix x = random_matrix(4, 3, init);
  Rng a(16), b(16);
  FlipoutTape tape;
  EXPECT_EQ(layer.forward(x, a, Mode::stochastic),
            flipout_forward(x, layer.snapshot(), b, Mode::stochastic, tape));
}

// ---- KL -----------------------------------------------------------------------

TEST(Kl, IdenticalDistributionsGiveZero) {
  FlipoutParams p{Matrix{{0.0}}, Matrix{{softplus_inverse(1.0)}}, Matrix{{0.0}}, 1.0};
  EXPECT_NEAR(flipout_kl(p), 0.0, 1e-15);
}

TEST(Kl, MeanShift) {
  FlipoutParams p{Matrix{{2.0}}, Matrix{{softplus_inverse(1.0)}}, Matrix{{0.0}}, 1.0};
  EXPECT_NEAR(flipout_kl(p), 2.0, 1e-12);
}

TEST(Kl, WideningAgainstQuadrature) {
  const double expected = (4.0 - 1.0 - std::log(4.0)) / 2.0;
  EXPECT_NEAR(gaussian_kl(0.0, 2.0, 0.0, 1.0), expected, 1e-12);
  EXPECT_NEAR(kl_by_quadrature(0.0, 2.0, 1.0), expected, 1e-6);
}

TEST(Kl, ClosedFormMatchesQuadratureOnGrid) {
  for (double mu : {-3.0, -1.0, 0.0, 1.5, 3.0})
    for (double sigma : {0.1, 0.5, 1.0, 3.0}) {
      EXPECT_NEAR(gaussian_kl(mu, sigma, 0.0, 1.0), kl_by_quadrature(mu, sigma, 1.0), 1e-6)
          << mu << " " << sigma;
    }
}

TEST(Kl, NonNegativeAndLayerSumsWeights) {
  Rng rng(17);
  FlipoutLayer layer("f", 4, 3, rng, 0.7);
  for (double& v : layer.weight_rho().value.data()) v = rng.normal();
  EXPECT_GE(layer.kl(), 0.0);
  double total = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    total += gaussian_kl(layer.weight_mean().value[i], softplus(layer.weight_rho().value[i]), 0,
                         0.7);
  }
  EXPECT_NEAR(layer.kl(), total, 1e-10);
  EXPECT_NEAR(flipout_kl(layer.snapshot()), total, 1e-10);
}

TEST(Kl, GradientMatchesFiniteDifferences) {
  Rng rng(18);
  FlipoutLayer layer("f", 3, 3, rng, 1.3);
  for (double& v : layer.weight_rho().value.data()) v = rng.normal();
  auto params = layer.parameters();
  auto backprop = [&] {
    for (Parameter* p : params) p->zero_grad();
    layer.accumulate_kl_grad(1.0);
  };
  const auto report = grad_check([&] { return layer.kl(); }, backprop, params);
  EXPECT_LT(report.max_rel_error, 1e-6) << report.worst_parameter;
}

// ---- head ---------------------------------------------------------------------

TEST(Head, CentredAtInitialisation) {
  const auto m = gaussian_head(Matrix{{0.0}}, GaussianHead::centered());
  EXPECT_NEAR(m.mean[0], 25.0, 1e-9);
  EXPECT_NEAR(m.std[0], 1.0, 1e-9);
}

TEST(Head, StaysPositiveForVeryNegativeInput) {
  const auto m = gaussian_head(Matrix{{-100.0}}, GaussianHead::centered());
  EXPECT_GT(m.mean[0], 0.0);
  EXPECT_LT(m.mean[0], 1e-20);
  EXPECT_GT(m.std[0], kHeadStdFloor);
  EXPECT_LT(m.std[0], 1.0);
}

TEST(Head, MeanIsMonotone) {
  const auto head = GaussianHead::centered();
  double prev = -1.0;
  for (double t = -30; t <= 30; t += 0.5) {
    const double m = gaussian_head(Matrix{{t}}, head).mean[0];
    EXPECT_GT(m, prev);
    prev = m;
  }
}

TEST(Head, LayerGradientMatchesFiniteDifferences) {
  GaussianHeadLayer head("h", GaussianHead::centered(5.0, 1.0, 0.05));
  Parameter t("t", Matrix{{0.3}, {-1.2}, {2.0}});
  const std::vector<double> y{4.0, 6.5, 5.2};
  auto loss = [&] {
    const auto m = head.forward(t.value);
    return gaussian_nll(y, m.mean, m.std);
  };
  ParameterList params = head.parameters();
  params.push_back(&t);
  auto backprop = [&] {
    for (Parameter* p : params) p->zero_grad();
    const auto m = head.forward(t.value);
    const auto g = gaussian_nll_grad(y, m.mean, m.std);
    t.grad = head.backward(g.d_mean, g.d_std);
  };
  EXPECT_LT(grad_check(loss, backprop, params).max_rel_error, 1e-6);
}

// ---- NLL / ELBO ---------------------------------------------------------------

TEST(Nll, ClosedForm) {
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  const std::vector<double> m{25.0}, s{1.0};
  EXPECT_NEAR(gaussian_nll(std::vector<double>{25.0}, m, s), half_log_2pi, 1e-12);
  EXPECT_NEAR(gaussian_nll(std::vector<double>{26.0}, m, s), half_log_2pi + 0.5, 1e-12);
  EXPECT_NEAR(half_log_2pi, 0.9189, 1e-4);
}

TEST(Nll, IsBatchMean) {
  const std::vector<double> y{25, 26}, m{25, 25}, s{1, 1};
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(gaussian_nll(y, m, s), half_log_2pi + 0.25, 1e-12);
}

TEST(Nll, GradientMatchesFiniteDifferences) {
  const std::vector<double> y{1.0, -0.5, 2.0};
  std::vector<double> mean{0.7, 0.1, 2.4}, sd{0.8, 1.5, 0.5};
  const auto g = gaussian_nll_grad(y, mean, sd);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    auto mp = mean, mm = mean, sp = sd, sm = sd;
    mp[i] += h;
    mm[i] -= h;
    sp[i] += h;
    sm[i] -= h;
    const double dm = (gaussian_nll(y, mp, sd) - gaussian_nll(y, mm, sd)) / (2 * h);
    const double ds = (gaussian_nll(y, mean, sp) - gaussian_nll(y, mean, sm)) / (2 * h);
    EXPECT_LT(std::abs(dm - g.d_mean[i]) / std::abs(dm), 1e-6);
    EXPECT_LT(std::abs(ds - g.d_std[i]) / std::abs(ds), 1e-6);
  }
}

TEST(Nll, RejectsNonPositiveStd) {
  const std::vector<double> y{1.0}, m{1.0}, s{0.0};
  EXPECT_THROW(gaussian_nll(y, m, s), NumericError);
}

TEST(Elbo, Arithmetic) {
  EXPECT_NEAR(elbo(0.9189, 50.0, ElboConfig{200}), 1.1689, 1e-12);
  EXPECT_EQ(elbo(0.9189, 0.0, ElboConfig{200}), 0.9189);
  const double kl200 = elbo(0.0, 50.0, ElboConfig{200});
  const double kl400 = elbo(0.0, 50.0, ElboConfig{400});
  EXPECT_EQ(kl400, kl200 / 2.0);
}
