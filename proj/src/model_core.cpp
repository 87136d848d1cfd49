#include "pooltest/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace pooltest {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_prevalence(double p) {
  if (!(p >= 0.0) || !(p <= 1.0)) throw std::domain_error("prevalence must lie in [0,1]");
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
}  // namespace

double pool_positive_prob(double p, int size) {
  check_prevalence(p);
  if (size < 1) throw std::domain_error("pool size must be >= 1");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  return -std::expm1(static_cast<double>(size) * std::log1p(-p));
}

double log1mexp(double x) {
  if (!(x > 0.0)) throw std::domain_error("log1mexp requires x > 0");
  constexpr double ln2 = 0.6931471805599453094;
  if (x <= ln2) return std::log(-std::expm1(-x));
  return std::log1p(-std::exp(-x));
}

PooledSuffStats PooledSuffStats::from(const PoolDataset& data) {
  PooledSuffStats s;
  std::map<int, long long> pos;
  for (const Pool& pool : data.pools()) {
    s.num_pools += 1;
    s.num_individuals += pool.size;
    if (pool.positive) {
      pos[pool.size] += 1;
    } else {
      s.negatives_individuals += pool.size;
    }
  }
  s.positive_size_counts.assign(pos.begin(), pos.end());
  return s;
}

double pooled_log_likelihood(const PoolDataset& data, double p) {
  return pooled_log_likelihood(PooledSuffStats::from(data), p);
}

double pooled_log_likelihood(const PooledSuffStats& stats, double p) {
  check_prevalence(p);
  if (stats.num_pools == 0) return 0.0;
  if (p == 0.0) return stats.any_positive() ? -kInf : 0.0;
  if (p == 1.0) return stats.any_negative() ? -kInf : 0.0;
  return pooled_log_likelihood_log1mp(stats, std::log1p(-p));
}

double pooled_log_likelihood_log1mp(const PooledSuffStats& stats, double log1mp) {
  double ll = stats.negatives_individuals == 0 ? 0.0
                                               : static_cast<double>(stats.negatives_individuals) * log1mp;
  for (const auto& [size, count] : stats.positive_size_counts) {
    const double t = static_cast<double>(size) * log1mp;  // log (1-p)^s
    if (t == 0.0) return -kInf;
    ll += static_cast<double>(count) * log1mexp(-t);
  }
  return ll;
}

std::pair<double, double> score_and_curvature(const PoolDataset& data, double p) {
  return score_and_curvature(PooledSuffStats::from(data), p);
}

std::pair<double, double> score_and_curvature(const PooledSuffStats& stats, double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::domain_error("score_and_curvature requires p in (0,1)");
  const double q1 = 1.0 - p;  // 1 - p
  double score = -static_cast<double>(stats.negatives_individuals) / q1;
  double curv = -static_cast<double>(stats.negatives_individuals) / (q1 * q1);
  const double log1mp = std::log1p(-p);
  for (const auto& [size, count] : stats.positive_size_counts) {
    const double s = static_cast<double>(size);
    const double phi = -std::expm1(s * log1mp);
    const double pow_sm1 = std::exp((s - 1.0) * log1mp);
    const double g = s * pow_sm1 / phi;
    const double dg = -s * (s - 1.0) * std::exp((s - 2.0) * log1mp) / phi - g * g;
    score += static_cast<double>(count) * g;
    curv += static_cast<double>(count) * dg;
  }
  return {score, curv};
}

double link_apply(Link link, double theta) {
  if (!(theta > 0.0) || !(theta < 1.0)) throw std::domain_error("link_apply requires theta in (0,1)");
  switch (link) {
    case Link::logit:
      return std::log(theta) - std::log1p(-theta);
    case Link::cloglog:
      return std::log(-std::log1p(-theta));
  }
  throw std::logic_error("unknown link");
}

double link_inverse(Link link, double eta) {
  double p;
  switch (link) {
    case Link::logit:
      p = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
      break;
    case Link::cloglog:
      p = -std::expm1(-std::exp(eta));
      break;
    default:
      throw std::logic_error("unknown link");
  }
  const double lo = std::nextafter(0.0, 1.0);
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(p, lo, hi);
}

LinkLogTerms link_log1m_terms(Link link, double eta) {
  LinkLogTerms t{};
  switch (link) {
    case Link::logit: {
      const double p = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
      t.lq = -softplus(eta);
      t.dlq = -p;
      t.d2lq = -p * (1.0 - p);
      break;
    }
    case Link::cloglog: {
      const double e = std::exp(eta);
      t.lq = -e;
      t.dlq = -e;
      t.d2lq = -e;
      break;
    }
  }
  return t;
}

double pool_eta_loglik(Link link, bool positive, int size, double eta) {
  if (std::isnan(eta)) return -kInf;
  const LinkLogTerms t = link_log1m_terms(link, eta);
  const double s = static_cast<double>(size);
  const double logq = s * t.lq;  // log (1-p)^s, <= 0
  if (!positive) return logq;
  if (logq == 0.0) return -kInf;
  return log1mexp(-logq);
}

EtaDerivatives pool_eta_derivatives(Link link, bool positive, int size, double eta) {
  if (std::isnan(eta)) return {-kInf, 0.0, 0.0};
  const LinkLogTerms t = link_log1m_terms(link, eta);
  const double s = static_cast<double>(size);
  EtaDerivatives out{};
  if (!positive) {
    out.ll = s * t.lq;
    out.d1 = s * t.dlq;
    out.d2 = s * t.d2lq;
    return out;
  }
  const double logq = s * t.lq;
  if (logq == 0.0) {
    // Positive pool with p rounded to 0: the likelihood is -inf; report a
    // unit upward slope so a line-searched Newton step can recover.
    out.ll = -kInf;
    out.d1 = 1.0;
    out.d2 = 0.0;
    return out;
  }
  // x = expm1(-logq) > 0; phi = -expm1(logq); d1 = s*dlq * e^t/(e^t - 1).
  const double x = std::expm1(-logq);
  const double inv_ratio = -1.0 / x;     // e^t / (e^t - 1), t = logq < 0
  const double w = s * t.dlq / x;        // kept as a ratio to avoid underflow
  out.ll = log1mexp(-logq);
  out.d1 = s * t.dlq * inv_ratio;
  out.d2 = s * t.d2lq * inv_ratio - w * (s * t.dlq) * (1.0 + x) / x;
  return out;
}

}  // namespace pooltest
