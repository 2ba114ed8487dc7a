#pragma once

// Closed-form Heisenberg geodesics from the origin (circle-lift formulas),
// kept in test code only so the main pipeline stays free of model-specific
// shortcuts. Frame convention: Z1 = dx1 - (x2/2) dx3, Z2 = dx2 + (x1/2) dx3.
//
// For initial covector (a, b, c) the horizontal projection is a circular arc
//   w(t) = x1 + i x2 = (a + i b) (e^{i c t} - 1) / (i c),
// and the vertical coordinate is the swept area
//   x3(t) = (a^2 + b^2) (c t - sin(c t)) / (2 c^2),
// with straight-line limits as c -> 0. Speed is sqrt(a^2 + b^2), constant.
// First return to the vertical axis happens at c t = 2 pi, giving
//   d((0,0,0), (0,0,h)) = 2 sqrt(pi h),
// midpoints on the circle of radius 2 sqrt(h/pi) at altitude h/2.

#include <array>
#include <cmath>
#include <numbers>

namespace heatlab_test {

inline std::array<double, 3> heis_exp(double a, double b, double c, double t) {
  const double rho2 = a * a + b * b;
  const double th = c * t;
  if (std::abs(th) < 1e-3) {
    // Series through theta^4 to avoid the cancellation in (theta - sin theta)
    // and (1 - cos theta) near the straight-line limit.
    const double re = t * (1.0 - th * th / 6.0 + th * th * th * th / 120.0);
    const double im = t * (th / 2.0 - th * th * th / 24.0);
    const double x1 = a * re - b * im;
    const double x2 = b * re + a * im;
    const double x3 =
        rho2 * (c * t * t * t / 12.0) * (1.0 - th * th / 20.0 + th * th * th * th / 840.0);
    return {x1, x2, x3};
  }
  const double s = std::sin(th), u = std::cos(th);
  // (a+ib)(e^{i theta}-1)/(ic) expanded into real and imaginary parts.
  const double x1 = (a * s - b * (1.0 - u)) / c;
  const double x2 = (b * s + a * (1.0 - u)) / c;
  const double x3 = rho2 * (th - s) / (2.0 * c * c);
  return {x1, x2, x3};
}

inline double heis_vertical_distance(double h) {
  return 2.0 * std::sqrt(std::numbers::pi * std::abs(h));
}

inline double heis_midpoint_circle_radius(double h) {
  return 2.0 * std::sqrt(std::abs(h) / std::numbers::pi);
}

}  // namespace heatlab_test
