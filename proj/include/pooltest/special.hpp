#pragma once

namespace pooltest {

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double regularized_gamma_p(double a, double x);

/// Inverse of P(a, .) in x for p in [0, 1).
double regularized_gamma_p_inv(double a, double p);

/// Quantile of the chi-square distribution with `df` degrees of freedom.
double chi_square_quantile(double p, double df = 1.0);

double normal_cdf(double x);
double normal_quantile(double p);

}  // namespace pooltest
