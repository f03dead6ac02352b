#include "e2stn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "e2stn/error.hpp"
#include "e2stn/training.hpp"

namespace e2stn {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t c = 0;
  for (std::size_t k = 0; k < classes; ++k) c += at(k, k);
  return c;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < classes; ++k) s += at(truth, k);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(t);
}

std::vector<double> ConfusionMatrix::row_percent() const {
  std::vector<double> out(counts.size(), 0.0);
  for (std::size_t r = 0; r < classes; ++r) {
    const auto n = row_total(r);
    if (n == 0) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      out[r * classes + c] = 100.0 * static_cast<double>(at(r, c)) / static_cast<double>(n);
    }
  }
  return out;
}

FoldResult evaluate(const Model& model, const std::vector<LabeledTrial>& test, std::uint32_t target_subject) {
  const auto& cfg = model.config;
  std::vector<const FeatureMatrix*> rows;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& f = test[i].features;
    if (f.channels != cfg.channels || f.bands != cfg.bands) {
      throw ShapeError("evaluate: trial " + std::to_string(i) + " is " + std::to_string(f.channels) + "x" +
                       std::to_string(f.bands) + ", model expects " + std::to_string(cfg.channels) + "x" +
                       std::to_string(cfg.bands));
    }
    if (test[i].label >= cfg.classes) throw ShapeError("evaluate: label out of range at trial " + std::to_string(i));
    rows.push_back(&f);
  }
  FoldResult r;
  r.target_subject = target_subject;
  r.confusion = ConfusionMatrix(cfg.classes);
  const auto pred = predict_labels(model, rows);
  for (std::size_t i = 0; i < test.size(); ++i) ++r.confusion.at(test[i].label, pred[i]);
  r.accuracy = r.confusion.accuracy();
  return r;
}

Aggregate aggregate(const std::vector<double>& acc) {
  if (acc.empty()) throw ShapeError("aggregate: no folds");
  const double n = static_cast<double>(acc.size());
  Aggregate a;
  a.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : acc) ss += (x - a.mean) * (x - a.mean);
  a.std = std::sqrt(ss / n);
  return a;
}

namespace {

// Lentz's method for the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const double mm = m;
    double num = mm * (b - mm) * x / ((a + 2 * mm - 1) * (a + 2 * mm));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + mm) * (a + b + mm) * x / ((a + 2 * mm) * (a + 2 * mm + 1));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) throw NumericError("incomplete beta: parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (df <= 0) throw NumericError("student_t_cdf: df must be positive");
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b, Alternative alternative) {
  if (a.size() != b.size()) throw ShapeError("paired_t_test: lists differ in length");
  if (a.size() < 2) throw ShapeError("paired_t_test: need at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = static_cast<double>(n - 1);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / r.df);
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
      return r;
    }
    throw NumericError("paired_t_test: differences have zero variance");
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  // Two-sided tail mass, computed directly so small p keeps its precision.
  const double both = incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
  if (alternative == Alternative::TwoSided) {
    r.p = std::min(1.0, both);
  } else {
    r.p = r.t >= 0 ? 0.5 * both : 1.0 - 0.5 * both;
  }
  return r;
}

}  // namespace e2stn
