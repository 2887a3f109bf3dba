#pragma once

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

namespace lookback {

template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-10, int depth = 15) {
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      f, a, b, depth, tol, &err);
}

// Endpoint-singularity tolerant rule on a finite interval.
template <class F>
double integrate_singular(F&& f, double a, double b, double tol = 1e-10) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(f, a, b, tol);
}

template <class F>
double gauss15(F&& f, double a, double b) {
  return boost::math::quadrature::gauss<double, 15>::integrate(f, a, b);
}

}  // namespace lookback
