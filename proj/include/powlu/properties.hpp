#pragma once

// Numerical certification of PowLU's analytic properties: the monotonicity
// bound on the exponent hyperparameter m with its transcendental roots,
// continuity/differentiability at zero, bounded growth, and a concrete
// non-linearity witness.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "powlu/activation.hpp"

namespace powlu {

/// phi(t) = t + 1 - t ln t. Increasing on (0,1), decreasing on (1,inf),
/// maximum phi(1) = 2, unique zero t0 on (1,inf).
inline double phi(double t) {
  if (!(t > 0.0)) throw std::invalid_argument("phi: t must be positive");
  return detail::phi_aux(t);
}

/// Logarithmic derivative of PowLU's positive branch. eval_self(PowLU).value
/// times this equals the analytic derivative.
inline double g_prime(double x, double m) {
  if (!(x > 0.0)) throw std::invalid_argument("g_prime: x must be positive");
  return detail::powlu_log_derivative(x, m);
}

namespace detail {

/// Bisection on a bracketing interval; the functions handled here are
/// monotone across their bracket so convergence is guaranteed.
inline double bisect(const std::function<double(double)>& f, double lo,
                     double hi, double tol) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0))
    throw std::logic_error("bisect: no sign change on bracket");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// The three constants of the monotonicity derivation: t0 is the zero of
/// phi, t_star the stationary point of M(t) = (t+1)^2/(t ln t - t - 1), and
/// m_upper = M(t_star) the resulting upper bound on m.
struct BoundConstants {
  double t0 = 0.0;
  double t_star = 0.0;
  double m_upper = 0.0;
};

inline BoundConstants find_bound_constants() {
  constexpr double tol = 1e-12;
  const double t0 = detail::bisect([](double t) { return detail::phi_aux(t); },
                                   1.0, 100.0, tol);
  // stationary condition of M(t): ln t = 2 + 4/(t - 1)
  const double t_star = detail::bisect(
      [](double t) { return std::log(t) - 2.0 - 4.0 / (t - 1.0); }, t0, 1000.0,
      tol);
  const double m_upper =
      (t_star + 1.0) * (t_star + 1.0) /
      (t_star * std::log(t_star) - t_star - 1.0);
  return {t0, t_star, m_upper};
}

struct MonotonicityReport {
  double m = 0.0;
  double grid_lo = 0.0;
  double grid_hi = 0.0;
  double min_derivative = 0.0;
  std::optional<double> first_violation_x;
  bool certified_monotone = false;
};

/// Scans g'(x) on n_points log-spaced x in [1e-6, 1e4] (t up to 100, well
/// past t_star) and reports the minimum plus the first sign violation.
inline MonotonicityReport scan_monotonicity(double m, std::size_t n_points) {
  if (!(m > 0.0)) throw std::invalid_argument("scan_monotonicity: m must be positive");
  if (n_points < 1000)
    throw std::invalid_argument("scan_monotonicity: need at least 1000 points");
  constexpr double lo = 1e-6;
  constexpr double hi = 1e4;
  const double ln_lo = std::log(lo);
  const double step = (std::log(hi) - ln_lo) / double(n_points - 1);
  MonotonicityReport report;
  report.m = m;
  report.grid_lo = lo;
  report.grid_hi = hi;
  report.min_derivative = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_points; ++i) {
    const double x = std::exp(ln_lo + double(i) * step);
    const double g = detail::powlu_log_derivative(x, m);
    if (g < report.min_derivative) report.min_derivative = g;
    if (g < 0.0 && !report.first_violation_x) report.first_violation_x = x;
  }
  report.certified_monotone = !report.first_violation_x.has_value();
  return report;
}

struct RegularityEntry {
  double h = 0.0;
  double value_pos = 0.0;   // f(+h)
  double value_neg = 0.0;   // f(-h)
  double right_dq = 0.0;    // (f(+h) - f(0)) / +h
  double left_dq = 0.0;     // (f(-h) - f(0)) / -h
};

struct ZeroRegularityReport {
  std::vector<RegularityEntry> ladder;  // h = 1e-2 down to 1e-8
  double continuity_gap = 0.0;          // max(|f(h)|, |f(-h)|) at h = 1e-8
  double left_dq = 0.0;                 // at h = 1e-8
  double right_dq = 0.0;                // at h = 1e-8
  bool ladder_monotone = false;         // all four |.| sequences non-increasing
};

/// Probes continuity and one-sided difference quotients at x = 0 over the
/// ladder h = 1e-2, 1e-3, ..., 1e-8.
inline ZeroRegularityReport check_zero_regularity(const ActivationKind& kind) {
  ZeroRegularityReport report;
  const double f0 = eval_self(kind, 0.0).value;
  for (int e = 2; e <= 8; ++e) {
    const double h = std::pow(10.0, -e);
    RegularityEntry entry;
    entry.h = h;
    entry.value_pos = eval_self(kind, h).value;
    entry.value_neg = eval_self(kind, -h).value;
    entry.right_dq = (entry.value_pos - f0) / h;
    entry.left_dq = (entry.value_neg - f0) / -h;
    report.ladder.push_back(entry);
  }
  const RegularityEntry& last = report.ladder.back();
  report.continuity_gap = std::max(std::abs(last.value_pos), std::abs(last.value_neg));
  report.left_dq = last.left_dq;
  report.right_dq = last.right_dq;
  report.ladder_monotone = true;
  for (std::size_t i = 1; i < report.ladder.size(); ++i) {
    const RegularityEntry& a = report.ladder[i - 1];
    const RegularityEntry& b = report.ladder[i];
    if (std::abs(b.value_pos) > std::abs(a.value_pos) ||
        std::abs(b.value_neg) > std::abs(a.value_neg) ||
        std::abs(b.right_dq) > std::abs(a.right_dq) ||
        std::abs(b.left_dq) > std::abs(a.left_dq)) {
      report.ladder_monotone = false;
      break;
    }
  }
  return report;
}

/// PowLU(x) / x for x > 0; stays finite, is >= sigmoid(x), and decreases
/// toward 1 for large x, in contrast to SwiGLU whose value/x grows like x.
inline double growth_ratio(double x, double m) {
  if (!(x > 0.0)) throw std::invalid_argument("growth_ratio: x must be positive");
  return detail::powlu_pos_value(x, m) / x;
}

/// Max residual of the best least-squares affine fit over 201 evenly spaced
/// points on [-5, 5]; a large residual is an assertable witness that the
/// self form is not linear.
inline double max_affine_residual(const ActivationKind& kind) {
  constexpr std::size_t n = 201;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = -5.0 + 10.0 * double(i) / double(n - 1);
    const double y = eval_self(kind, x).value;
    xs[i] = x;
    ys[i] = y;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = double(n);
  const double slope = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / dn;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    worst = std::max(worst, std::abs(ys[i] - intercept - slope * xs[i]));
  return worst;
}

}  // namespace powlu
