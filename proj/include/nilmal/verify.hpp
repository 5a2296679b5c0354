#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nilmal/model.hpp"

namespace nilmal {

/// Deliberate defects for checking that each verification can fail.
enum class Fault { none, gradient, moments, mi, kernel };

Fault parse_fault(std::string_view text);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
  std::size_t kink_retries = 0;  // probes repeated with a smaller step after crossing a ReLU kink
};

/// Five-point finite differences against backprop over `draws` random (weights, batch, masks)
/// draws. A probe whose perturbation flips a ReLU unit is retried with a 10x smaller step, and
/// one-sided from the unflipped side once the step reaches 1e-5.
/// `corrupt` scales the analytic gradient of one block to exercise the failure path.
GradientCheck gradient_check(const Architecture& arch, int draws, int batch, std::uint64_t seed,
                             bool corrupt = false);

CheckResult check_gradient(Fault fault = Fault::none);
CheckResult check_moments(Fault fault = Fault::none);
CheckResult check_mutual_information(Fault fault = Fault::none);
CheckResult check_kernel(Fault fault = Fault::none);

std::vector<CheckResult> run_verify(Fault fault = Fault::none);

}  // namespace nilmal
