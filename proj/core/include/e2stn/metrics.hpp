#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "e2stn/dataset.hpp"
#include "e2stn/model.hpp"

namespace e2stn {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t p = 0) : classes(p), counts(p * p, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t total() const;
  std::uint64_t correct() const;
  std::uint64_t row_total(std::size_t truth) const;
  /// Correct over total; 0 for an empty matrix.
  double accuracy() const;
  /// Row-normalized percentages (0 for empty rows).
  std::vector<double> row_percent() const;
};

struct FoldResult {
  std::uint32_t target_subject = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

/// Scores every trial in `test` against its label. Throws ShapeError when
/// the trial dims do not match the model.
FoldResult evaluate(const Model& model, const std::vector<LabeledTrial>& test, std::uint32_t target_subject = 0);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population convention
};

Aggregate aggregate(const std::vector<double>& fold_accuracies);

enum class Alternative { TwoSided, Greater };

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Paired t-test on a - b. `Greater` tests mean(a - b) > 0.
/// Identical lists give t = 0, p = 1; other zero-variance differences throw.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b,
                          Alternative alternative = Alternative::TwoSided);

/// Regularized incomplete beta I_x(a, b) (continued fraction).
double incomplete_beta(double a, double b, double x);
/// Student-t CDF with `df` degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace e2stn
