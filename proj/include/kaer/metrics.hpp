#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kaer/encoder.hpp"

namespace kaer {

struct Metrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0;
  std::vector<std::uint8_t> per_example_correct;

  std::int64_t n() const { return tp + fp + fn + tn; }
};

/// Confusion counts and P/R/F1 with 0 for any zero denominator.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

/// Predicts a match when p(match) beats p(non-match), i.e. threshold 0.5.
template <typename Scalar>
std::vector<int> predict(const Matrix<Scalar>& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) out[static_cast<std::size_t>(r)] = probs(r, 1) > probs(r, 0) ? 1 : 0;
  return out;
}

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail P(|T| >= |t|) of Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

struct TTestResult {
  double t = 0;
  std::int64_t df = 0;
  double p = 1;
};

/// Two-sided paired t-test on per-example correctness (1 correct, 0 wrong).
/// Throws DegenerateError when every difference is zero and DomainError on
/// length mismatch or fewer than two pairs.
TTestResult paired_ttest(std::span<const std::uint8_t> correct_a, std::span<const std::uint8_t> correct_b);

}  // namespace kaer
