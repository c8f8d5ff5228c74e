#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "simplexfit/dist.hpp"
#include "simplexfit/errors.hpp"

using namespace simplexfit;

namespace {

// Independent adaptive Simpson quadrature, used as the integration oracle.
// Deliberately knows nothing about the library's own quadrature.
double simpson(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b);
  return (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double whole,
                        double tol, int depth) {
  const double c = 0.5 * (a + b);
  const double left = simpson(f, a, c);
  const double right = simpson(f, c, b);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson(f, a, c, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, c, b, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol = 1e-12) {
  return adaptive_simpson(f, a, b, simpson(f, a, b), tol, 60);
}

// Integral of the density over (0,1). The integrand vanishes rapidly at the
// endpoints (the exponent diverges), so clipping at eps loses less than the
// requested tolerance. Splitting at mu keeps the peak on a panel boundary.
double density_mass(double mu, double sigma2, double p = 1.0) {
  dist::SimplexParams par(mu, sigma2);
  auto f = [&](double y) { return std::pow(y, p - 1.0) * dist::density(y, par); };
  const double eps = 1e-13;
  return integrate(f, eps, mu, 1e-13) + integrate(f, mu, 1.0 - eps, 1e-13);
}

}  // namespace

TEST_CASE("deviance matches hand evaluations and is zero iff y == mu") {
  CHECK(dist::deviance(0.5, 0.5) == 0.0);
  CHECK(dist::deviance(0.25, 0.5) == doctest::Approx(16.0 / 3.0).epsilon(1e-14));
  CHECK(dist::deviance(0.9, 0.5) == doctest::Approx(256.0 / 9.0).epsilon(1e-14));
  // High-precision references evaluated independently.
  CHECK(dist::deviance(0.3, 0.7) == doctest::Approx(17.276751970629522).epsilon(1e-14));
  CHECK(dist::deviance(0.9, 0.25) == doctest::Approx(133.53086419753086).epsilon(1e-14));
  for (double y : {0.05, 0.3, 0.5, 0.8, 0.95}) {
    for (double mu : {0.05, 0.3, 0.5, 0.8, 0.95}) {
      const double d = dist::deviance(y, mu);
      CHECK(d >= 0.0);
      CHECK((d == 0.0) == (y == mu));
    }
  }
}

TEST_CASE("deviance rejects arguments outside (0,1)") {
  CHECK_THROWS_AS(dist::deviance(0.0, 0.5), DomainError);
  CHECK_THROWS_AS(dist::deviance(1.0, 0.5), DomainError);
  CHECK_THROWS_AS(dist::deviance(0.5, -0.1), DomainError);
  CHECK_THROWS_AS(dist::deviance(std::nan(""), 0.5), DomainError);
}

TEST_CASE("SimplexParams validates its ranges") {
  CHECK_NOTHROW(dist::SimplexParams(0.5, 1.0));
  CHECK_THROWS_AS(dist::SimplexParams(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(dist::SimplexParams(1.0, 1.0), DomainError);
  CHECK_THROWS_AS(dist::SimplexParams(0.5, 0.0), DomainError);
  CHECK_THROWS_AS(dist::SimplexParams(0.5, -2.0), DomainError);
}

TEST_CASE("log_density matches closed form and high-precision references") {
  // y = mu: exponent term vanishes.
  const double y = 0.37, s2 = 0.8;
  const double expect =
      -0.5 * std::log(2.0 * M_PI) - 0.5 * std::log(s2) - 1.5 * std::log(y * (1.0 - y));
  CHECK(dist::log_density(y, dist::SimplexParams(y, s2)) ==
        doctest::Approx(expect).epsilon(1e-14));
  CHECK(dist::log_density(0.5, dist::SimplexParams(0.5, 1.0)) ==
        doctest::Approx(1.1605030).epsilon(1e-7));
  // References evaluated with 40-digit arithmetic.
  CHECK(dist::log_density(0.3, dist::SimplexParams(0.5, 1.0)) ==
        doctest::Approx(-0.10177643461719416).epsilon(1e-14));
  CHECK(dist::log_density(0.9, dist::SimplexParams(0.2, 4.0)) ==
        doctest::Approx(-24.584368689675703).epsilon(1e-14));
  CHECK(dist::log_density(0.05, dist::SimplexParams(0.7, 0.25)) ==
        doctest::Approx(-399.04467894654919).epsilon(1e-14));
  CHECK(dist::log_density(0.459, dist::SimplexParams(0.773, 0.0346)) ==
        doctest::Approx(-183.49877850291774).epsilon(1e-14));
}

TEST_CASE("density integrates to 1 within 1e-8 on the (mu, sigma2) grid") {
  for (double mu : {0.05, 0.3, 0.5, 0.8, 0.95}) {
    for (double s2 : {0.1, 1.0, 10.0}) {
      CAPTURE(mu);
      CAPTURE(s2);
      CHECK(density_mass(mu, s2) == doctest::Approx(1.0).epsilon(1e-8));
    }
  }
}

TEST_CASE("gamma_half_upper_scaled matches references across both branches") {
  CHECK(dist::gamma_half_upper_scaled(0.0) ==
        doctest::Approx(std::sqrt(M_PI)).epsilon(1e-15));
  // References evaluated with 40-digit arithmetic (e^x Gamma(1/2, x)).
  CHECK(dist::gamma_half_upper_scaled(0.1) ==
        doctest::Approx(1.2825093897118496).epsilon(1e-13));
  CHECK(dist::gamma_half_upper_scaled(1.0) ==
        doctest::Approx(0.75787215614131211).epsilon(1e-13));
  // Straddle the internal branch switch; values must stay on one curve.
  CHECK(dist::gamma_half_upper_scaled(1.4999) ==
        doctest::Approx(0.66143444474974011).epsilon(1e-13));
  CHECK(dist::gamma_half_upper_scaled(1.5001) ==
        doctest::Approx(0.66140342922078283).epsilon(1e-13));
  CHECK(dist::gamma_half_upper_scaled(5.0) ==
        doctest::Approx(0.41178763513417405).epsilon(1e-13));
  CHECK(dist::gamma_half_upper_scaled(50.0) ==
        doctest::Approx(0.14004758419309571).epsilon(1e-13));
  CHECK(dist::gamma_half_upper_scaled(5000.0) ==
        doctest::Approx(0.014140721834220662).epsilon(1e-13));
  // e^x Gamma(1/2, x) ~ x^{-1/2} for large x.
  CHECK(dist::gamma_half_upper_scaled(1e6) == doctest::Approx(1e-3).epsilon(1e-3));
  CHECK_THROWS_AS(dist::gamma_half_upper_scaled(-1.0), DomainError);
}

TEST_CASE("gamma_half_upper_scaled is strictly decreasing") {
  double prev = dist::gamma_half_upper_scaled(0.0);
  for (double x = 0.05; x <= 20.0; x += 0.05) {
    const double cur = dist::gamma_half_upper_scaled(x);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("response_variance matches the direct second-moment integral") {
  // Oracle: Var(y) = E y^2 - (E y)^2 by direct quadrature of the density.
  struct Case { double mu, s2, expect; };
  // Expectations computed with 40-digit quadrature.
  const Case cases[] = {{0.3, 1.0, 0.0082452302410427},
                        {0.5, 0.25, 0.0037360734841354},
                        {0.9, 4.0, 0.0026703328033369}};
  for (const auto& c : cases) {
    CAPTURE(c.mu);
    CAPTURE(c.s2);
    CHECK(dist::response_variance(dist::SimplexParams(c.mu, c.s2)) ==
          doctest::Approx(c.expect).epsilon(1e-10));
  }
  // Full grid against a freshly computed integral, 0.5% relative.
  for (double mu : {0.05, 0.3, 0.5, 0.8, 0.95}) {
    for (double s2 : {0.1, 1.0, 10.0}) {
      dist::SimplexParams p(mu, s2);
      auto f1 = [&](double y) { return y * dist::density(y, p); };
      auto f2 = [&](double y) { return y * y * dist::density(y, p); };
      const double eps = 1e-13;
      const double m1 = integrate(f1, eps, mu) + integrate(f1, mu, 1.0 - eps);
      const double m2 = integrate(f2, eps, mu) + integrate(f2, mu, 1.0 - eps);
      const double oracle = m2 - m1 * m1;
      CAPTURE(mu);
      CAPTURE(s2);
      CHECK(dist::response_variance(p) == doctest::Approx(oracle).epsilon(0.005));
    }
  }
}

TEST_CASE("response_variance limits and bound") {
  // Small dispersion: Var(y) -> sigma2 * mu^3 (1-mu)^3.
  for (double mu : {0.2, 0.5, 0.8}) {
    const double s2 = 1e-3;
    const double approx = s2 * dist::variance_function(mu);
    CHECK(dist::response_variance(dist::SimplexParams(mu, s2)) ==
          doctest::Approx(approx).epsilon(0.05));
  }
  for (double mu : {0.05, 0.3, 0.5, 0.8, 0.95}) {
    for (double s2 : {1e-4, 0.1, 1.0, 10.0, 1e4}) {
      CHECK(dist::response_variance(dist::SimplexParams(mu, s2)) < mu * (1.0 - mu));
    }
  }
}

TEST_CASE("variance_function is mu^3 (1-mu)^3") {
  CHECK(dist::variance_function(0.5) == doctest::Approx(std::pow(0.25, 3)).epsilon(1e-15));
  CHECK(dist::variance_function(0.2) ==
        doctest::Approx(std::pow(0.2, 3) * std::pow(0.8, 3)).epsilon(1e-15));
}

TEST_CASE("sampler: determinism, inversion accuracy, and CDF consistency") {
  dist::SimplexParams p(0.4, 1.0);
  auto a = dist::sample(p, 100, 12345);
  auto b = dist::sample(p, 100, 12345);
  auto c = dist::sample(p, 100, 54321);
  CHECK(a == b);
  CHECK(a != c);
  for (double v : a) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  dist::Sampler s(p);
  for (double u : {1e-6, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0 - 1e-6}) {
    CHECK(s.cdf(s.invert(u)) == doctest::Approx(u).epsilon(1e-9));
  }
  // CDF itself against the quadrature oracle at a few points.
  for (double y : {0.1, 0.4, 0.7, 0.95}) {
    auto f = [&](double t) { return dist::density(t, p); };
    const double oracle = integrate(f, 1e-13, y);
    CHECK(s.cdf(y) == doctest::Approx(oracle).epsilon(1e-8));
  }
}

TEST_CASE("sample mean near mu and KS statistic acceptable") {
  dist::SimplexParams p(0.4, 1.0);
  const std::size_t n = 100000;
  auto draws = dist::sample(p, n, 99);
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(n);
  const double sd = std::sqrt(dist::response_variance(p) / static_cast<double>(n));
  CHECK(std::abs(mean - 0.4) < 3.0 * sd);

  // Kolmogorov-Smirnov against the tabulated CDF, asymptotic p-value.
  std::sort(draws.begin(), draws.end());
  dist::Sampler s(p);
  double dn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = s.cdf(draws[i]);
    dn = std::max(dn, std::abs(F - static_cast<double>(i + 1) / n));
    dn = std::max(dn, std::abs(F - static_cast<double>(i) / n));
  }
  const double lambda = (std::sqrt(static_cast<double>(n)) + 0.12 +
                         0.11 / std::sqrt(static_cast<double>(n))) * dn;
  double pvalue = 0.0;
  for (int j = 1; j <= 100; ++j) {
    pvalue += 2.0 * ((j % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  }
  CHECK(pvalue > 0.01);
}

TEST_CASE("sampler histogram matches density within binomial error") {
  // Bimodal regime (large dispersion): the histogram check exercises shape.
  dist::SimplexParams p(0.5, 10.0);
  const std::size_t n = 200000;
  auto draws = dist::sample(p, n, 7);
  const int bins = 50;
  std::vector<int> counts(bins, 0);
  for (double v : draws) counts[std::min(bins - 1, static_cast<int>(v * bins))]++;
  dist::Sampler s(p);
  for (int i = 0; i < bins; ++i) {
    const double lo = static_cast<double>(i) / bins, hi = static_cast<double>(i + 1) / bins;
    const double prob = s.cdf(std::min(1.0 - 1e-13, hi)) - s.cdf(std::max(1e-13, lo));
    const double expect = n * prob;
    const double sd = std::sqrt(n * prob * (1.0 - prob));
    CAPTURE(i);
    CHECK(std::abs(counts[i] - expect) < 5.0 * sd + 5.0);
  }
}

TEST_CASE("sample rejects n = 0") {
  CHECK_THROWS_AS(dist::sample(dist::SimplexParams(0.5, 1.0), 0, 1), DomainError);
}
