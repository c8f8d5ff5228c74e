#ifndef SIMPLEXFIT_LINKS_HPP
#define SIMPLEXFIT_LINKS_HPP

#include <string>

namespace simplexfit::links {

// Mean links g: (0,1) -> R, all strictly monotone and twice differentiable.
enum class MeanLink { Logit, Probit, Cloglog, Loglog };

// Dispersion links h: (0,inf) -> R. Identity is allowed; its inverse errors
// on non-positive values instead of projecting.
enum class DispLink { Log, Sqrt, Identity };

enum class LinkMode { Forward, Inverse, D1, D2 };

double link_eval(MeanLink kind, LinkMode mode, double x);
double link_eval(DispLink kind, LinkMode mode, double x);

MeanLink mean_link_from_name(const std::string& name);   // ConfigError on unknown
DispLink disp_link_from_name(const std::string& name);
std::string to_name(MeanLink kind);
std::string to_name(DispLink kind);

// Standard normal helpers (probit link, Wald p-values).
double norm_pdf(double x);
double norm_cdf(double x);
double norm_quantile(double p);  // DomainError outside (0,1)

}  // namespace simplexfit::links

#endif
