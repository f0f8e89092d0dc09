#pragma once

#include "capnav/core.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace capnav {

// Natural cubic spline through 3-D knots, parameterized by cumulative chord
// length u, with an arc-length table for converting to and from arc length.
class ArcSpline {
 public:
  static constexpr int kTableSize = 1024;

  ArcSpline() = default;

  explicit ArcSpline(std::vector<Vec3> knots) : knots_(std::move(knots)) {
    const std::size_t n = knots_.size();
    if (n < 2) throw DegenerateInput("spline needs at least two knots");
    u_.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      const double h = (knots_[i] - knots_[i - 1]).norm();
      if (!(h > 1e-12)) throw DegenerateInput("spline knots must be distinct consecutive points");
      u_[i] = u_[i - 1] + h;
    }
    solve_second_derivatives();
    build_table();
  }

  const std::vector<Vec3>& knots() const { return knots_; }
  double length() const { return table_s_.back(); }
  double chord_length() const { return u_.back(); }
  double knot_u(std::size_t i) const { return u_[i]; }

  Vec3 point_u(double u) const {
    const auto [i, a, b, h] = locate(u);
    return a * knots_[i] + b * knots_[i + 1] + ((a * a * a - a) * M_[i] + (b * b * b - b) * M_[i + 1]) * (h * h / 6.0);
  }

  Vec3 deriv_u(double u) const {
    const auto [i, a, b, h] = locate(u);
    return (knots_[i + 1] - knots_[i]) / h + ((1.0 - 3.0 * a * a) * M_[i] + (3.0 * b * b - 1.0) * M_[i + 1]) * (h / 6.0);
  }

  Vec3 second_u(double u) const {
    const auto [i, a, b, h] = locate(u);
    return a * M_[i] + b * M_[i + 1];
  }

  // Arc length from u = 0.
  double arclength_u(double u) const {
    u = std::clamp(u, 0.0, u_.back());
    const double step = u_.back() / kTableSize;
    const int j = std::min(static_cast<int>(u / step), kTableSize - 1);
    return table_s_[j] + integrate(j * step, u);
  }

  // Chord parameter at arc length sigma: monotone table seed, Newton polish.
  double u_at(double sigma) const {
    const double L = length();
    if (sigma <= 0.0) return 0.0;
    if (sigma >= L) return u_.back();
    auto it = std::upper_bound(table_s_.begin(), table_s_.end(), sigma);
    const int j = std::clamp(static_cast<int>(it - table_s_.begin()) - 1, 0, kTableSize - 1);
    const double step = u_.back() / kTableSize;
    const double lo = j * step, hi = (j + 1) * step;
    const double frac = (sigma - table_s_[j]) / (table_s_[j + 1] - table_s_[j]);
    double u = lo + frac * step;
    for (int k = 0; k < 8; ++k) {
      const double f = table_s_[j] + integrate(lo, u) - sigma;
      const double d = deriv_u(u).norm();
      if (!(d > 0.0)) break;
      const double next = std::clamp(u - f / d, lo, hi);
      if (std::abs(next - u) < 1e-15 * std::max(1.0, u_.back())) {
        u = next;
        break;
      }
      u = next;
    }
    return u;
  }

  Vec3 point_at(double sigma) const { return point_u(u_at(sigma)); }

  Vec3 tangent_at(double sigma) const { return deriv_u(u_at(sigma)).normalized(); }

  // Arc length of the closest point within [lo, hi]: scan of the table nodes
  // then golden-section refinement in u. Ties resolve toward smaller arc length.
  double nearest(const Vec3& p, double lo, double hi) const {
    lo = std::clamp(lo, 0.0, length());
    hi = std::clamp(hi, 0.0, length());
    if (hi < lo) std::swap(lo, hi);
    if (hi - lo < 1e-15) return lo;
    const double ulo = u_at(lo), uhi = u_at(hi);
    const double step = u_.back() / kTableSize;
    double best_u = ulo, best_d = (point_u(ulo) - p).squaredNorm();
    const int j0 = static_cast<int>(std::floor(ulo / step)) + 1;
    for (int j = j0; j * step < uhi; ++j) {
      const double d = (point_u(j * step) - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best_u = j * step;
      }
    }
    const double dhi = (point_u(uhi) - p).squaredNorm();
    if (dhi < best_d) {
      best_d = dhi;
      best_u = uhi;
    }
    double a = std::max(ulo, best_u - step), b = std::min(uhi, best_u + step);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = (point_u(x1) - p).squaredNorm(), f2 = (point_u(x2) - p).squaredNorm();
    for (int it = 0; it < 100 && b - a > 1e-14; ++it) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - g * (b - a);
        f1 = (point_u(x1) - p).squaredNorm();
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + g * (b - a);
        f2 = (point_u(x2) - p).squaredNorm();
      }
    }
    const double ur = 0.5 * (a + b);
    const double u = (point_u(ur) - p).squaredNorm() <= best_d ? ur : best_u;
    return std::clamp(arclength_u(u), lo, hi);
  }

 private:
  struct Loc {
    std::size_t i;
    double a, b, h;
  };

  Loc locate(double u) const {
    u = std::clamp(u, 0.0, u_.back());
    auto it = std::upper_bound(u_.begin(), u_.end(), u);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - u_.begin() - 1, 0));
    i = std::min(i, u_.size() - 2);
    const double h = u_[i + 1] - u_[i];
    const double b = (u - u_[i]) / h;
    return {i, 1.0 - b, b, h};
  }

  void solve_second_derivatives() {
    const std::size_t n = knots_.size();
    M_.assign(n, Vec3::Zero());
    if (n < 3) return;
    // Thomas algorithm on the interior equations, natural ends.
    std::vector<double> c(n, 0.0);
    std::vector<Vec3> d(n, Vec3::Zero());
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = u_[i] - u_[i - 1], h1 = u_[i + 1] - u_[i];
      const Vec3 rhs = 6.0 * ((knots_[i + 1] - knots_[i]) / h1 - (knots_[i] - knots_[i - 1]) / h0);
      const double diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
      c[i] = h1 / diag;
      d[i] = (rhs - h0 * d[i - 1]) / diag;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      M_[i] = d[i] - c[i] * M_[i + 1];
      if (i == 1) break;
    }
  }

  double integrate(double a, double b) const {
    // 5-point Gauss-Legendre on [a, b]; callers keep the interval within one table cell
    static constexpr std::array<double, 5> x{0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                             0.9061798459386640};
    static constexpr std::array<double, 5> w{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                             0.2369268850561891, 0.2369268850561891};
    if (b <= a) return 0.0;
    // split at knots so each piece is polynomial
    double total = 0.0;
    double lo = a;
    while (lo < b) {
      auto it = std::upper_bound(u_.begin(), u_.end(), lo);
      double hi = it == u_.end() ? b : std::min(b, *it);
      if (hi <= lo) hi = b;
      const double hh = 0.5 * (hi - lo), mm = 0.5 * (hi + lo);
      for (int k = 0; k < 5; ++k) total += w[k] * hh * deriv_u(mm + hh * x[k]).norm();
      lo = hi;
    }
    return total;
  }

  void build_table() {
    table_s_.assign(kTableSize + 1, 0.0);
    const double step = u_.back() / kTableSize;
    for (int j = 0; j < kTableSize; ++j) table_s_[j + 1] = table_s_[j] + integrate(j * step, (j + 1) * step);
  }

  std::vector<Vec3> knots_;
  std::vector<double> u_;
  std::vector<Vec3> M_;
  std::vector<double> table_s_;
};

}  // namespace capnav
