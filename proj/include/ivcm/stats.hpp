#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ivcm {

/// Sample quantile, Hyndman-Fan type 7 (linear interpolation between order
/// statistics). `values` need not be sorted.
double quantile_type7(std::span<const double> values, double p);

/// Standard normal quantile function.
double normal_quantile(double p);

/// n equally spaced points from lo to hi inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t n);

/// Trapezoid rule for samples y on grid x.
double trapezoid(std::span<const double> x, std::span<const double> y);

/// Trapezoid quadrature weights for grid x.
std::vector<double> trapezoid_weights(std::span<const double> x);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace ivcm
