#include "simplexfit/dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "simplexfit/errors.hpp"

namespace simplexfit::dist {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kLog2Pi = 1.8378770664093454836;

void check_open_unit(double y, const char* name) {
  if (!std::isfinite(y) || y <= 0.0 || y >= 1.0)
    throw DomainError(std::string(name) + " must lie strictly inside (0,1), got " +
                      std::to_string(y));
}

// 15-point Gauss-Legendre on [-1,1]; nodes/weights to full double precision.
constexpr double kGlNode[15] = {
    -0.9879925180204854, -0.9372733924007060, -0.8482065834104272,
    -0.7244177313601701, -0.5709721726085388, -0.3941513470775634,
    -0.2011940939974345, 0.0,                 0.2011940939974345,
    0.3941513470775634,  0.5709721726085388,  0.7244177313601701,
    0.8482065834104272,  0.9372733924007060,  0.9879925180204854};
constexpr double kGlWeight[15] = {
    0.0307532419961173, 0.0703660474881081, 0.1071592204671719,
    0.1395706779261543, 0.1662692058169939, 0.1861610000155622,
    0.1984314853271116, 0.2025782419255613, 0.1984314853271116,
    0.1861610000155622, 0.1662692058169939, 0.1395706779261543,
    0.1071592204671719, 0.0703660474881081, 0.0307532419961173};

template <typename F>
double gl15(F&& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 15; ++i) s += kGlWeight[i] * f(c + h * kGlNode[i]);
  return h * s;
}

}  // namespace

SimplexParams::SimplexParams(double mu_in, double sigma2_in) : mu(mu_in), sigma2(sigma2_in) {
  check_open_unit(mu, "mu");
  if (!std::isfinite(sigma2) || sigma2 <= 0.0)
    throw DomainError("sigma2 must be strictly positive, got " + std::to_string(sigma2));
}

double deviance(double y, double mu) {
  check_open_unit(y, "y");
  check_open_unit(mu, "mu");
  const double r = y - mu;
  return r * r / (y * (1.0 - y) * mu * mu * (1.0 - mu) * (1.0 - mu));
}

double log_density(double y, const SimplexParams& p) {
  const double d = deviance(y, p.mu);
  return -0.5 * kLog2Pi - 0.5 * std::log(p.sigma2) - 1.5 * std::log(y * (1.0 - y)) -
         d / (2.0 * p.sigma2);
}

double density(double y, const SimplexParams& p) { return std::exp(log_density(y, p)); }

double gamma_half_upper_scaled(double x) {
  if (!std::isfinite(x) || x < 0.0)
    throw DomainError("gamma_half_upper_scaled requires x >= 0, got " + std::to_string(x));
  if (x < 1.5) return kSqrtPi * std::exp(x) * std::erfc(std::sqrt(x));
  // Modified Lentz continued fraction for the scaled upper gamma:
  //   e^x Gamma(a,x) = x^a / (x + 1 - a -  1(1-a)/(x + 3 - a - 2(2-a)/(...)))
  const double a = 0.5;
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 300; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return std::sqrt(x) * h;
}

double variance_function(double mu) {
  const double m = mu * (1.0 - mu);
  return m * m * m;
}

double response_variance(const SimplexParams& p) {
  const double m = p.mu * (1.0 - p.mu);
  const double xi = 1.0 / (2.0 * p.sigma2 * m * m);
  return m - std::sqrt(1.0 / (2.0 * p.sigma2)) * gamma_half_upper_scaled(xi);
}

Sampler::Sampler(const SimplexParams& p) : p_(p) {
  // Chebyshev-clustered base grid (handles mass piling near 0 and 1), then
  // adaptive bisection of any cell whose GL15 integral is not converged.
  constexpr int kBase = 256;
  constexpr int kMaxDepth = 40;
  const auto f = [this](double y) { return density(y, p_); };

  knots_.push_back(0.0);
  cum_.push_back(0.0);
  double acc = 0.0;
  struct Cell {
    double a, b, whole;
    int depth;
  };
  for (int j = 0; j < kBase; ++j) {
    const double a = 0.5 * (1.0 - std::cos(M_PI * j / kBase));
    const double b = 0.5 * (1.0 - std::cos(M_PI * (j + 1) / kBase));
    std::vector<Cell> stack{{a, b, gl15(f, a, b), 0}};
    while (!stack.empty()) {
      Cell cell = stack.back();
      stack.pop_back();
      const double mid = 0.5 * (cell.a + cell.b);
      const double left = gl15(f, cell.a, mid), right = gl15(f, mid, cell.b);
      if (cell.depth >= kMaxDepth ||
          std::fabs(left + right - cell.whole) <= 1e-14 + 1e-13 * std::fabs(left + right)) {
        acc += left;
        knots_.push_back(mid);
        cum_.push_back(acc);
        acc += right;
        knots_.push_back(cell.b);
        cum_.push_back(acc);
      } else {
        // keep left-to-right order: push right half first
        stack.push_back({mid, cell.b, right, cell.depth + 1});
        stack.push_back({cell.a, mid, left, cell.depth + 1});
      }
    }
  }
  total_ = acc;
}

double Sampler::cdf(double y) const {
  if (y <= 0.0) return 0.0;
  if (y >= 1.0) return 1.0;
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), y);
  const std::size_t i = static_cast<std::size_t>(it - knots_.begin()) - 1;
  const auto f = [this](double t) { return density(t, p_); };
  return (cum_[i] + gl15(f, knots_[i], y)) / total_;
}

double Sampler::invert(double u) const {
  u = std::min(std::max(u, 0.0), 1.0);
  const double target = u * total_;
  // locate bracketing cell in the cumulative table
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
  std::size_t i = static_cast<std::size_t>(it - cum_.begin());
  if (i == 0) i = 1;
  if (i >= cum_.size()) i = cum_.size() - 1;
  double lo = knots_[i - 1], hi = knots_[i];
  const double cell_lo = lo;  // fixed left endpoint of the in-cell integral
  const double flo = cum_[i - 1];
  const auto f = [this](double t) { return density(t, p_); };

  // initial guess: linear interpolation of the CDF inside the cell
  const double span = cum_[i] - flo;
  double y = span > 0.0 ? lo + (hi - lo) * (target - flo) / span : 0.5 * (lo + hi);
  y = std::min(std::max(y, std::nextafter(lo, hi)), std::nextafter(hi, lo));

  // safeguarded Newton on F(y) - target, bisection fallback
  for (int iter = 0; iter < 200; ++iter) {
    const double g = flo + gl15(f, cell_lo, y) - target;
    if (g > 0.0)
      hi = y;
    else
      lo = y;
    if (hi - lo < 1e-12) break;
    const double slope = f(y);
    double next = slope > 0.0 ? y - g / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    y = next;
  }
  y = 0.5 * (lo + hi);
  const double eps = 1e-14;
  return std::min(std::max(y, eps), 1.0 - eps);
}

std::vector<double> sample(const SimplexParams& p, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("sample: n must be >= 1");
  Sampler sampler(p);
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& y : out) y = sampler.draw(rng);
  return out;
}

}  // namespace simplexfit::dist
