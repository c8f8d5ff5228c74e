#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "simplexfit/errors.hpp"
#include "simplexfit/links.hpp"

using namespace simplexfit;
using links::DispLink;
using links::LinkMode;
using links::MeanLink;

TEST_CASE("mean links: forward/inverse round trips and hand values") {
  for (auto kind : {MeanLink::Logit, MeanLink::Probit, MeanLink::Cloglog, MeanLink::Loglog}) {
    for (double mu : {0.02, 0.2, 0.5, 0.8, 0.98}) {
      const double eta = links::link_eval(kind, LinkMode::Forward, mu);
      CAPTURE(static_cast<int>(kind));
      CAPTURE(mu);
      CHECK(links::link_eval(kind, LinkMode::Inverse, eta) ==
            doctest::Approx(mu).epsilon(1e-12));
    }
  }
  CHECK(links::link_eval(MeanLink::Logit, LinkMode::Forward, 0.5) == 0.0);
  CHECK(links::link_eval(MeanLink::Logit, LinkMode::Forward, 0.25) ==
        doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-15));
  CHECK(links::link_eval(MeanLink::Probit, LinkMode::Forward, 0.975) ==
        doctest::Approx(1.9599639845400542).epsilon(1e-12));
  CHECK(links::link_eval(MeanLink::Cloglog, LinkMode::Forward, 0.3) ==
        doctest::Approx(std::log(-std::log(0.7))).epsilon(1e-14));
}

TEST_CASE("dispersion links: forward/inverse round trips") {
  for (auto kind : {DispLink::Log, DispLink::Sqrt, DispLink::Identity}) {
    for (double s2 : {1e-3, 0.1, 1.0, 25.0}) {
      const double zeta = links::link_eval(kind, LinkMode::Forward, s2);
      CHECK(links::link_eval(kind, LinkMode::Inverse, zeta) ==
            doctest::Approx(s2).epsilon(1e-12));
    }
  }
  CHECK(links::link_eval(DispLink::Log, LinkMode::Forward, std::exp(2.0)) ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK(links::link_eval(DispLink::Sqrt, LinkMode::Forward, 9.0) == 3.0);
  // Identity inverse refuses non-positive input instead of projecting.
  CHECK_THROWS_AS(links::link_eval(DispLink::Identity, LinkMode::Inverse, -0.5), DomainError);
}

TEST_CASE("link derivatives match finite differences") {
  const double h1 = 1e-6, h2 = 1e-4;
  for (auto kind : {MeanLink::Logit, MeanLink::Probit, MeanLink::Cloglog, MeanLink::Loglog}) {
    for (double mu : {0.1, 0.35, 0.5, 0.72, 0.9}) {
      auto g = [&](double m) { return links::link_eval(kind, LinkMode::Forward, m); };
      const double d1 = links::link_eval(kind, LinkMode::D1, mu);
      const double d2 = links::link_eval(kind, LinkMode::D2, mu);
      const double fd1 = (g(mu + h1) - g(mu - h1)) / (2 * h1);
      const double fd2 = (g(mu + h2) - 2 * g(mu) + g(mu - h2)) / (h2 * h2);
      CAPTURE(static_cast<int>(kind));
      CAPTURE(mu);
      CHECK(std::abs(d1 - fd1) < 1e-7 * (1.0 + std::abs(fd1)));
      CHECK(std::abs(d2 - fd2) < 1e-5 * (1.0 + std::abs(fd2)));
    }
  }
  for (auto kind : {DispLink::Log, DispLink::Sqrt, DispLink::Identity}) {
    for (double s2 : {0.2, 1.0, 4.0}) {
      auto hf = [&](double s) { return links::link_eval(kind, LinkMode::Forward, s); };
      const double d1 = links::link_eval(kind, LinkMode::D1, s2);
      const double d2 = links::link_eval(kind, LinkMode::D2, s2);
      const double fd1 = (hf(s2 + h1) - hf(s2 - h1)) / (2 * h1);
      const double fd2 = (hf(s2 + h2) - 2 * hf(s2) + hf(s2 - h2)) / (h2 * h2);
      CHECK(std::abs(d1 - fd1) < 1e-7 * (1.0 + std::abs(fd1)));
      CHECK(std::abs(d2 - fd2) < 1e-5 * (1.0 + std::abs(fd2)));
    }
  }
}

TEST_CASE("link names round trip; unknown names rejected") {
  for (const char* name : {"logit", "probit", "cloglog", "loglog"}) {
    CHECK(links::to_name(links::mean_link_from_name(name)) == name);
  }
  for (const char* name : {"log", "sqrt", "identity"}) {
    CHECK(links::to_name(links::disp_link_from_name(name)) == name);
  }
  CHECK_THROWS_AS(links::mean_link_from_name("cauchit"), ConfigError);
  CHECK_THROWS_AS(links::disp_link_from_name("inverse"), ConfigError);
}

TEST_CASE("normal helpers match high-precision references") {
  CHECK(links::norm_quantile(0.975) == doctest::Approx(1.9599639845400542).epsilon(1e-13));
  CHECK(links::norm_quantile(0.01) == doctest::Approx(-2.3263478740408411).epsilon(1e-13));
  CHECK(links::norm_quantile(0.3) == doctest::Approx(-0.52440051270804078).epsilon(1e-13));
  CHECK(links::norm_quantile(0.5) == doctest::Approx(0.0));
  for (double p : {0.001, 0.025, 0.3, 0.5, 0.77, 0.999}) {
    CHECK(links::norm_cdf(links::norm_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(links::norm_pdf(0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-15));
  CHECK_THROWS_AS(links::norm_quantile(0.0), DomainError);
  CHECK_THROWS_AS(links::norm_quantile(1.0), DomainError);
}
