#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

namespace deviate::quad {

struct Result {
  double value = 0.0;
  double abs_error = 0.0;
  int evaluations = 0;
  bool converged = false;
};

namespace detail {

// 21-point Gauss-Kronrod rule; odd indices of kNodes are the 10-point Gauss nodes.
inline constexpr std::array<double, 11> kNodes{
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452, 0.930157491355708226001207180059508,
    0.865063366688984510732096688423493, 0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784, 0.294392862701460198131126603103866,
    0.148874338981631210884826001129720, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 11> kKronrod{
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390, 0.054755896574351996031381300244580,
    0.075039674810919952767043140916190, 0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600525478590, 0.134709217311473325928054001771707, 0.142775938577060080797094273138717,
    0.147739104901338491374841515972068, 0.149445554002916905664936468389821};
inline constexpr std::array<double, 5> kGauss{
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697, 0.219086362515982043995534934228163,
    0.269266719309996355091226921569469, 0.295524224714752870173892994651338};

struct Interval {
  double a, b, value, error;
  bool operator<(const Interval& o) const { return error < o.error; }
};

template <class F>
Interval gk21(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double resk = kKronrod[10] * fc;
  double resg = 0.0;
  double resabs = std::abs(resk);
  std::array<double, 10> f1{}, f2{};
  for (int j = 0; j < 10; ++j) {
    const double dx = half * kNodes[static_cast<std::size_t>(j)];
    f1[static_cast<std::size_t>(j)] = f(center - dx);
    f2[static_cast<std::size_t>(j)] = f(center + dx);
    const double sum = f1[static_cast<std::size_t>(j)] + f2[static_cast<std::size_t>(j)];
    resk += kKronrod[static_cast<std::size_t>(j)] * sum;
    resabs += kKronrod[static_cast<std::size_t>(j)] *
              (std::abs(f1[static_cast<std::size_t>(j)]) + std::abs(f2[static_cast<std::size_t>(j)]));
    if (j % 2 == 1) resg += kGauss[static_cast<std::size_t>(j / 2)] * sum;
  }
  const double mean = 0.5 * resk;
  double resasc = kKronrod[10] * std::abs(fc - mean);
  for (std::size_t j = 0; j < 10; ++j) resasc += kKronrod[j] * (std::abs(f1[j] - mean) + std::abs(f2[j] - mean));
  resasc *= std::abs(half);
  resabs *= std::abs(half);
  double err = std::abs((resk - resg) * half);
  if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  constexpr double eps = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50 * eps)) err = std::max(50 * eps * resabs, err);
  return {a, b, resk * half, err};
}

}  // namespace detail

/// Globally adaptive 21-point Gauss-Kronrod on the finite interval [a, b].
/// Stops when the summed error estimate is below max(abs_tol, rel_tol*|value|).
template <class F>
Result integrate(const F& f, double a, double b, double abs_tol, double rel_tol = 1e-12, int max_intervals = 4000) {
  Result out;
  if (a == b) {
    out.converged = true;
    return out;
  }
  std::priority_queue<detail::Interval> heap;
  heap.push(detail::gk21(f, a, b));
  out.evaluations = 21;
  double value = heap.top().value;
  double error = heap.top().error;
  int n = 1;
  while (error > std::max(abs_tol, rel_tol * std::abs(value)) && n < max_intervals) {
    const detail::Interval worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      heap.push(worst);
      break;  // interval can no longer be split
    }
    const detail::Interval left = detail::gk21(f, worst.a, mid);
    const detail::Interval right = detail::gk21(f, mid, worst.b);
    out.evaluations += 42;
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++n;
  }
  // Re-sum to shed accumulated cancellation in the running totals.
  value = 0.0;
  error = 0.0;
  while (!heap.empty()) {
    value += heap.top().value;
    error += heap.top().error;
    heap.pop();
  }
  out.value = value;
  out.abs_error = error;
  out.converged = error <= std::max(abs_tol, rel_tol * std::abs(value));
  return out;
}

/// Integral over [a, +inf) through x = a + t/(1-t), t in [0, 1).
template <class F>
Result integrate_upper_tail(const F& f, double a, double abs_tol, double rel_tol = 1e-12) {
  auto g = [&](double t) {
    const double s = 1.0 - t;
    return f(a + t / s) / (s * s);
  };
  return integrate(g, 0.0, 1.0, abs_tol, rel_tol);
}

/// Integral over (-inf, b] through x = b - t/(1-t).
template <class F>
Result integrate_lower_tail(const F& f, double b, double abs_tol, double rel_tol = 1e-12) {
  auto g = [&](double t) {
    const double s = 1.0 - t;
    return f(b - t / s) / (s * s);
  };
  return integrate(g, 0.0, 1.0, abs_tol, rel_tol);
}

/// Integral over the real line: tails plus the finite pieces between
/// consecutive breakpoints (sorted, deduplicated internally).
template <class F>
Result integrate_real_line(const F& f, std::vector<double> breakpoints, double abs_tol, double rel_tol = 1e-12) {
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()), breakpoints.end());
  if (breakpoints.empty()) breakpoints.push_back(0.0);
  const auto pieces = breakpoints.size() + 1;
  const double piece_tol = abs_tol / static_cast<double>(pieces);
  Result total;
  total.converged = true;
  auto add = [&](const Result& r) {
    total.value += r.value;
    total.abs_error += r.abs_error;
    total.evaluations += r.evaluations;
    total.converged = total.converged && r.converged;
  };
  add(integrate_lower_tail(f, breakpoints.front(), piece_tol, rel_tol));
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    add(integrate(f, breakpoints[i], breakpoints[i + 1], piece_tol, rel_tol));
  }
  add(integrate_upper_tail(f, breakpoints.back(), piece_tol, rel_tol));
  // Pieces may each meet the relative criterion without the sum meeting
  // abs_tol; report convergence against the overall target.
  total.converged = total.abs_error <= std::max(abs_tol, rel_tol * std::abs(total.value)) || total.converged;
  return total;
}

}  // namespace deviate::quad
