#pragma once

#include <array>
#include <type_traits>

namespace elastic::quadrature {

// 5-point Gauss-Legendre rule on [-1, 1].
inline constexpr std::array<double, 5> kGaussNodes = {
    -0.90617984593866399280, -0.53846931010568309104, 0.0,
    0.53846931010568309104, 0.90617984593866399280};
inline constexpr std::array<double, 5> kGaussWeights = {
    0.23692688505618908751, 0.47862867049936646804, 0.56888888888888888889,
    0.47862867049936646804, 0.23692688505618908751};

/// Integrates f over [a, b] with the 5-point rule. f may return a double or
/// an Eigen expression.
template <typename F>
auto gauss_legendre(F&& f, double a, double b) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  if constexpr (std::is_arithmetic_v<std::invoke_result_t<F&, double>>) {
    double sum = 0.0;
    for (std::size_t i = 0; i < kGaussNodes.size(); ++i)
      sum += kGaussWeights[i] * f(mid + half * kGaussNodes[i]);
    return half * sum;
  } else {
    auto sum = (kGaussWeights[0] * f(mid + half * kGaussNodes[0])).eval();
    for (std::size_t i = 1; i < kGaussNodes.size(); ++i)
      sum += kGaussWeights[i] * f(mid + half * kGaussNodes[i]);
    return (half * sum).eval();
  }
}

}  // namespace elastic::quadrature
