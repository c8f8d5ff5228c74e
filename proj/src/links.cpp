#include "simplexfit/links.hpp"

#include <cmath>

#include "simplexfit/errors.hpp"

namespace simplexfit::links {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require_open_unit(double mu) {
  if (!std::isfinite(mu) || mu <= 0.0 || mu >= 1.0)
    throw DomainError("mean link argument must lie in (0,1)");
}

void require_positive(double s) {
  if (!std::isfinite(s) || s <= 0.0)
    throw DomainError("dispersion link argument must be positive");
}

}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

// Acklam's rational approximation refined by one Halley step; full double
// precision on (0,1).
double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("norm_quantile requires p in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement
  const double e = norm_cdf(x) - p;
  const double u = e / norm_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double link_eval(MeanLink kind, LinkMode mode, double x) {
  switch (kind) {
    case MeanLink::Logit:
      switch (mode) {
        case LinkMode::Forward: require_open_unit(x); return std::log(x / (1.0 - x));
        case LinkMode::Inverse: {
          const double mu = 1.0 / (1.0 + std::exp(-x));
          require_open_unit(mu);  // guards overflow to exactly 0 or 1
          return mu;
        }
        case LinkMode::D1: require_open_unit(x); return 1.0 / (x * (1.0 - x));
        case LinkMode::D2: {
          require_open_unit(x);
          const double m = x * (1.0 - x);
          return (2.0 * x - 1.0) / (m * m);
        }
      }
      break;
    case MeanLink::Probit:
      switch (mode) {
        case LinkMode::Forward: require_open_unit(x); return norm_quantile(x);
        case LinkMode::Inverse: {
          const double mu = norm_cdf(x);
          require_open_unit(mu);
          return mu;
        }
        case LinkMode::D1: {
          require_open_unit(x);
          return 1.0 / norm_pdf(norm_quantile(x));
        }
        case LinkMode::D2: {
          require_open_unit(x);
          const double q = norm_quantile(x);
          const double phi = norm_pdf(q);
          return q / (phi * phi);
        }
      }
      break;
    case MeanLink::Cloglog:
      // g(mu) = log(-log(1-mu))
      switch (mode) {
        case LinkMode::Forward: require_open_unit(x); return std::log(-std::log1p(-x));
        case LinkMode::Inverse: {
          const double mu = -std::expm1(-std::exp(x));
          require_open_unit(mu);
          return mu;
        }
        case LinkMode::D1: {
          require_open_unit(x);
          return -1.0 / ((1.0 - x) * std::log1p(-x));
        }
        case LinkMode::D2: {
          require_open_unit(x);
          const double L = std::log1p(-x);
          const double q = (1.0 - x) * L;
          return (-L - 1.0) / (q * q);
        }
      }
      break;
    case MeanLink::Loglog:
      // g(mu) = log(-log(mu)), decreasing in mu
      switch (mode) {
        case LinkMode::Forward: require_open_unit(x); return std::log(-std::log(x));
        case LinkMode::Inverse: {
          const double mu = std::exp(-std::exp(x));
          require_open_unit(mu);
          return mu;
        }
        case LinkMode::D1: require_open_unit(x); return 1.0 / (x * std::log(x));
        case LinkMode::D2: {
          require_open_unit(x);
          const double q = x * std::log(x);
          return -(std::log(x) + 1.0) / (q * q);
        }
      }
      break;
  }
  throw DomainError("unhandled mean link evaluation");
}

double link_eval(DispLink kind, LinkMode mode, double x) {
  switch (kind) {
    case DispLink::Log:
      switch (mode) {
        case LinkMode::Forward: require_positive(x); return std::log(x);
        case LinkMode::Inverse: {
          const double s = std::exp(x);
          require_positive(s);
          return s;
        }
        case LinkMode::D1: require_positive(x); return 1.0 / x;
        case LinkMode::D2: require_positive(x); return -1.0 / (x * x);
      }
      break;
    case DispLink::Sqrt:
      switch (mode) {
        case LinkMode::Forward: require_positive(x); return std::sqrt(x);
        case LinkMode::Inverse:
          if (!std::isfinite(x) || x <= 0.0)
            throw DomainError("sqrt link inverse requires a positive linear predictor");
          return x * x;
        case LinkMode::D1: require_positive(x); return 0.5 / std::sqrt(x);
        case LinkMode::D2: require_positive(x); return -0.25 / (x * std::sqrt(x));
      }
      break;
    case DispLink::Identity:
      switch (mode) {
        case LinkMode::Forward: require_positive(x); return x;
        case LinkMode::Inverse:
          if (!std::isfinite(x) || x <= 0.0)
            throw DomainError("identity dispersion link produced sigma2 <= 0");
          return x;
        case LinkMode::D1: return 1.0;
        case LinkMode::D2: return 0.0;
      }
      break;
  }
  throw DomainError("unhandled dispersion link evaluation");
}

MeanLink mean_link_from_name(const std::string& name) {
  if (name == "logit") return MeanLink::Logit;
  if (name == "probit") return MeanLink::Probit;
  if (name == "cloglog") return MeanLink::Cloglog;
  if (name == "loglog") return MeanLink::Loglog;
  throw ConfigError("unknown mean link '" + name + "'");
}

DispLink disp_link_from_name(const std::string& name) {
  if (name == "log") return DispLink::Log;
  if (name == "sqrt") return DispLink::Sqrt;
  if (name == "identity") return DispLink::Identity;
  throw ConfigError("unknown dispersion link '" + name + "'");
}

std::string to_name(MeanLink kind) {
  switch (kind) {
    case MeanLink::Logit: return "logit";
    case MeanLink::Probit: return "probit";
    case MeanLink::Cloglog: return "cloglog";
    case MeanLink::Loglog: return "loglog";
  }
  return "?";
}

std::string to_name(DispLink kind) {
  switch (kind) {
    case DispLink::Log: return "log";
    case DispLink::Sqrt: return "sqrt";
    case DispLink::Identity: return "identity";
  }
  return "?";
}

}  // namespace simplexfit::links
