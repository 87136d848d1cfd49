#pragma once

#include <functional>
#include <vector>

namespace pooltest {

/// Composite Gauss-Legendre integration of exp(f) over [a, b], carried out
/// entirely in log space. Panels are bisected until the log of the total
/// stabilizes; the panel list is kept so quantiles of the normalized
/// density can be located afterwards.
class LogQuadrature {
 public:
  struct Panel {
    double a, b;
    double log_mass;
  };

  /// Throws NumericError if the total has not stabilized to `rel_tol`
  /// within `max_rounds` rounds of global bisection.
  LogQuadrature(std::function<double(double)> log_f, double a, double b, double rel_tol = 1e-10,
                int max_rounds = 20);

  double log_total() const { return log_total_; }
  const std::vector<Panel>& panels() const { return panels_; }

  /// log of integral of exp(g) over the same panel layout (for moments).
  double log_integral(const std::function<double(double)>& log_g) const;

  /// x such that integral of exp(f) over [a, x] equals `fraction` of the total.
  double quantile(double fraction) const;

 private:
  double panel_log_mass(const std::function<double(double)>& log_g, double a, double b) const;

  std::function<double(double)> log_f_;
  std::vector<Panel> panels_;
  double log_total_ = 0.0;
};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
const std::vector<std::pair<double, double>>& gauss_legendre_rule(int n);

/// log(sum(exp(xs))) with max subtraction.
double log_sum_exp(const std::vector<double>& xs);
double log_sum_exp(double a, double b);

}  // namespace pooltest
