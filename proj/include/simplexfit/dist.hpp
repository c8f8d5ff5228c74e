#ifndef SIMPLEXFIT_DIST_HPP
#define SIMPLEXFIT_DIST_HPP

#include <cstdint>
#include <vector>

#include "simplexfit/rng.hpp"

namespace simplexfit::dist {

// Parameters of the simplex distribution S^-1(mu, sigma2) on (0,1).
struct SimplexParams {
  double mu;
  double sigma2;
  SimplexParams(double mu, double sigma2);  // throws DomainError if invalid
};

// d(y; mu) = (y - mu)^2 / { y(1-y) mu^2 (1-mu)^2 }, the deviation component
// appearing in the density exponent. Zero iff y == mu.
double deviance(double y, double mu);

// log p(y; mu, sigma2) =
//   -log(2*pi)/2 - log(sigma2)/2 - (3/2) log{y(1-y)} - d(y;mu)/(2 sigma2)
double log_density(double y, const SimplexParams& p);

double density(double y, const SimplexParams& p);

// e^x * Gamma(1/2, x), the scaled upper incomplete gamma at a = 1/2.
// Never forms e^x explicitly for large x: uses sqrt(pi)*e^x*erfc(sqrt(x))
// for small x and a Lentz continued fraction for the scaled form otherwise.
double gamma_half_upper_scaled(double x);

// Var(y) = mu(1-mu) - sqrt(1/(2 sigma2)) * gamma_half_upper_scaled(xi),
// xi = 1 / (2 sigma2 mu^2 (1-mu)^2). Always strictly below mu(1-mu).
double response_variance(const SimplexParams& p);

// V(mu) = mu^3 (1-mu)^3, the simplex variance function.
double variance_function(double mu);

// Draws by numerical inversion of a quadrature-tabulated CDF. The table is
// built once per (mu, sigma2); draws refine a monotone-interpolated initial
// guess with safeguarded Newton/bisection to 1e-12 in y.
class Sampler {
 public:
  explicit Sampler(const SimplexParams& p);

  double draw(Rng& rng) const { return invert(rng.uniform01()); }

  // CDF value by the same tabulation (exposed for inversion and testing).
  double cdf(double y) const;

  // y such that cdf(y) = u, to 1e-12 in y.
  double invert(double u) const;

 private:
  SimplexParams p_;
  std::vector<double> knots_;  // strictly increasing in (0,1)
  std::vector<double> cum_;    // cum_[i] = integral of density on (0, knots_[i])
  double total_;               // integral over (0,1); ~1 up to quadrature error
};

// n independent draws; identical (p, n, seed) produces the identical sequence.
std::vector<double> sample(const SimplexParams& p, std::size_t n, std::uint64_t seed);

}  // namespace simplexfit::dist

#endif
