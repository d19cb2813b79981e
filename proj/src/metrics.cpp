#include "kaer/metrics.hpp"

#include <cmath>
#include <limits>

#include "kaer/errors.hpp"

namespace kaer {

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DomainError("metrics: prediction/label length mismatch");
  Metrics m;
  m.per_example_correct.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = predictions[i] == 1;
    const bool gold = labels[i] == 1;
    if (pred && gold) ++m.tp;
    else if (pred) ++m.fp;
    else if (gold) ++m.fn;
    else ++m.tn;
    m.per_example_correct.push_back(pred == gold ? 1 : 0);
  }
  auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw DomainError("student t: df must be positive");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw DomainError("student t: t is NaN");
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

TTestResult paired_ttest(std::span<const std::uint8_t> correct_a, std::span<const std::uint8_t> correct_b) {
  if (correct_a.size() != correct_b.size()) throw DomainError("paired t-test: vectors differ in length");
  const std::size_t n = correct_a.size();
  if (n < 2) throw DomainError("paired t-test needs at least two pairs");
  double sum = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(correct_a[i]) - static_cast<double>(correct_b[i]);
    sum += diff;
    any = any || diff != 0.0;
  }
  if (!any) throw DegenerateError("paired t-test: the two prediction vectors agree on every example");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(correct_a[i]) - static_cast<double>(correct_b[i]) - mean;
    ss += diff * diff;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.df = static_cast<std::int64_t>(n - 1);
  if (sd == 0.0) {
    // Every difference equals the (non-zero) mean.
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided(r.t, static_cast<double>(r.df));
  return r;
}

}  // namespace kaer
