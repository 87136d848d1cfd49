#include "pooltest/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "pooltest/types.hpp"

namespace pooltest {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kPanelOrder = 21;
}  // namespace

const std::vector<std::pair<double, double>>& gauss_legendre_rule(int n) {
  static std::mutex mutex;
  static std::map<int, std::vector<std::pair<double, double>>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  // Newton iteration on P_n with the usual cosine starting guesses.
  std::vector<std::pair<double, double>> rule(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it2 = 0; it2 < 100; ++it2) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / pp;
      x -= dx;
      if (std::fabs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule[i] = {-x, w};
    rule[n - 1 - i] = {x, w};
  }
  return cache.emplace(n, std::move(rule)).first->second;
}

double log_sum_exp(const std::vector<double>& xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double LogQuadrature::panel_log_mass(const std::function<double(double)>& log_g, double a, double b) const {
  const auto& rule = gauss_legendre_rule(kPanelOrder);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  std::vector<double> terms;
  terms.reserve(rule.size());
  for (const auto& [node, weight] : rule) {
    const double x = mid + half * node;
    const double v = log_g(x);
    if (v == kNegInf) continue;
    terms.push_back(std::log(weight * half) + v);
  }
  if (terms.empty()) return kNegInf;
  return log_sum_exp(terms);
}

LogQuadrature::LogQuadrature(std::function<double(double)> log_f, double a, double b, double rel_tol,
                             int max_rounds)
    : log_f_(std::move(log_f)) {
  constexpr int kInitialPanels = 8;
  panels_.reserve(64);
  for (int i = 0; i < kInitialPanels; ++i) {
    const double pa = a + (b - a) * i / kInitialPanels;
    const double pb = a + (b - a) * (i + 1) / kInitialPanels;
    panels_.push_back({pa, pb, panel_log_mass(log_f_, pa, pb)});
  }

  double prev_total = kNegInf;
  for (int round = 0; round <= max_rounds; ++round) {
    std::vector<double> masses;
    masses.reserve(panels_.size());
    for (const Panel& p : panels_) masses.push_back(p.log_mass);
    log_total_ = log_sum_exp(masses);

    if (round > 0 && std::isfinite(log_total_)) {
      const double rel = std::fabs(std::exp(prev_total - log_total_) - 1.0);
      if (rel <= rel_tol) {
        std::sort(panels_.begin(), panels_.end(), [](const Panel& x, const Panel& y) { return x.a < y.a; });
        return;
      }
    }
    if (round == max_rounds) break;
    prev_total = log_total_;

    // Bisect every panel that carries weight; panels whose combined mass
    // cannot move the total are left alone.
    std::vector<Panel> next;
    next.reserve(panels_.size() * 2);
    const double keep_threshold =
        log_total_ + std::log(0.01 * rel_tol / static_cast<double>(std::max<std::size_t>(panels_.size(), 1)));
    for (const Panel& p : panels_) {
      if (p.log_mass < keep_threshold) {
        next.push_back(p);
        continue;
      }
      const double mid = 0.5 * (p.a + p.b);
      next.push_back({p.a, mid, panel_log_mass(log_f_, p.a, mid)});
      next.push_back({mid, p.b, panel_log_mass(log_f_, mid, p.b)});
    }
    panels_ = std::move(next);
  }
  throw NumericError("quadrature failed to stabilize the normalizing constant");
}

double LogQuadrature::log_integral(const std::function<double(double)>& log_g) const {
  std::vector<double> masses;
  masses.reserve(panels_.size());
  for (const Panel& p : panels_) masses.push_back(panel_log_mass(log_g, p.a, p.b));
  return log_sum_exp(masses);
}

double LogQuadrature::quantile(double fraction) const {
  if (!(fraction >= 0.0) || !(fraction <= 1.0)) throw std::domain_error("quantile fraction must be in [0,1]");
  if (fraction == 0.0) return panels_.front().a;
  if (fraction == 1.0) return panels_.back().b;
  const double target = log_total_ + std::log(fraction);

  double cum = kNegInf;
  for (const Panel& p : panels_) {
    const double with_panel = log_sum_exp(cum, p.log_mass);
    if (with_panel >= target) {
      // Bisect inside this panel on the partial integral.
      double lo = p.a, hi = p.b;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double part = log_sum_exp(cum, panel_log_mass(log_f_, p.a, mid));
        if (part < target) lo = mid; else hi = mid;
        if (hi - lo < 1e-15 * std::max(1.0, std::fabs(hi))) break;
      }
      return 0.5 * (lo + hi);
    }
    cum = with_panel;
  }
  return panels_.back().b;
}

}  // namespace pooltest
