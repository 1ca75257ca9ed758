#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace camid::nn {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares `analytic` against central differences (f(x+h) - f(x-h)) / 2h,
/// perturbing x in place (restored afterwards). When max_coords is non-zero
/// and smaller than x.size(), a seeded random subset of coordinates is
/// probed. Returns the maximum relative error.
double grad_check(const std::function<double()>& f, std::span<double> x,
                  std::span<const double> analytic, double h = 1e-5, std::size_t max_coords = 0,
                  std::uint64_t seed = 0);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Checks every differentiable op and a small full model in 64-bit precision
/// on shapes and values drawn from `seed`.
std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed, double h = 1e-5);

}  // namespace camid::nn
