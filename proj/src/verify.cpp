#include "nilmal/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "nilmal/acquisition.hpp"
#include "nilmal/errors.hpp"
#include "nilmal/uncertainty.hpp"

namespace nilmal {

using Eigen::Index;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Entropy of an equal-weight mixture by the trapezoid rule on a fine grid.
double mixture_entropy_quadrature(const GaussianMixture& mix) {
  double lo = mix.mean[0];
  double hi = mix.mean[0];
  double smallest = mix.stddev[0];
  for (std::size_t i = 0; i < mix.size(); ++i) {
    lo = std::min(lo, mix.mean[i] - 12.0 * mix.stddev[i]);
    hi = std::max(hi, mix.mean[i] + 12.0 * mix.stddev[i]);
    smallest = std::min(smallest, mix.stddev[i]);
  }
  const int steps = std::max(20000, static_cast<int>((hi - lo) / smallest * 400.0));
  const double h = (hi - lo) / steps;
  double total = 0.0;
  for (int s = 0; s <= steps; ++s) {
    const double x = lo + s * h;
    double p = 0.0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
      const double z = (x - mix.mean[i]) / mix.stddev[i];
      p += std::exp(-0.5 * z * z) / (mix.stddev[i] * std::sqrt(2.0 * std::numbers::pi));
    }
    p /= static_cast<double>(mix.size());
    const double term = p > 0.0 ? -p * std::log(p) : 0.0;
    total += (s == 0 || s == steps) ? 0.5 * term : term;
  }
  return total * h;
}

}  // namespace

Fault parse_fault(std::string_view text) {
  if (text == "none") return Fault::none;
  if (text == "gradient") return Fault::gradient;
  if (text == "moments") return Fault::moments;
  if (text == "mi") return Fault::mi;
  if (text == "kernel") return Fault::kernel;
  throw ConfigError(fmt::format("unknown fault '{}' (expected gradient, moments, mi or kernel)", text));
}

GradientCheck gradient_check(const Architecture& arch, int draws, int batch, std::uint64_t seed, bool corrupt) {
  GradientCheck out;
  std::normal_distribution<double> normal;
  for (int d = 0; d < draws; ++d) {
    Rng rng = keyed_rng({seed, stream_tag("gradcheck"), static_cast<std::uint64_t>(d)});
    Seq2PointNet net = Seq2PointNet::initialized(arch, rng());
    // Nonzero biases and perturbed weights move every unit away from the initial symmetry.
    for (double& p : net.parameters()) p += 0.1 * normal(rng);
    const auto k = static_cast<Index>(net.appliance_count());
    Eigen::MatrixXd x(arch.input_length, batch);
    Eigen::MatrixXd y(k, batch);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);
    const DropoutMasks masks = sample_masks(net, batch, rng);

    Eigen::VectorXd analytic = backward(net, x, y, &masks).gradient;
    if (corrupt) {
      const auto& b = net.block("dense.weight");
      analytic.segment(static_cast<Index>(b.offset), b.rows * b.cols) *= 1.01;
    }
    const std::vector<bool> base = relu_pattern(net, x, &masks);
    auto& theta = net.parameters();
    // Loss at theta[i] = original + step, and whether every ReLU kept its base state.
    auto probe = [&](Index i, double original, double step) {
      theta[i] = original + step;
      const double loss = nll_loss(forward_batch(net, x, &masks), y);
      const bool same = relu_pattern(net, x, &masks) == base;
      theta[i] = original;
      return std::pair{loss, same};
    };
    const double loss = nll_loss(forward_batch(net, x, &masks), y);
    for (Index i = 0; i < theta.size(); ++i) {
      const double original = theta[i];
      double numeric = 0.0;
      double step = 1e-7;
      bool found = false;
      // Five-point stencil: O(eps^4) truncation keeps eps far above the loss's rounding noise.
      for (double eps = 1e-3; eps >= 1e-5 && !found; eps /= 10.0) {
        const auto p2 = probe(i, original, 2 * eps);
        const auto p1 = probe(i, original, eps);
        const auto m1 = probe(i, original, -eps);
        const auto m2 = probe(i, original, -2 * eps);
        if (p2.second && p1.second && m1.second && m2.second) {
          numeric = (-p2.first + 8.0 * p1.first - 8.0 * m1.first + m2.first) / (12.0 * eps);
          step = eps;
          found = true;
        } else {
          ++out.kink_retries;
        }
      }
      // A unit sits within 1e-5 of its kink: differentiate from the side that keeps the
      // base pattern, which is the side backprop linearizes.
      for (double eps = 1e-5; eps >= 1e-7 && !found; eps /= 10.0) {
        for (double dir : {1.0, -1.0}) {
          const auto a = probe(i, original, dir * eps);
          const auto b = probe(i, original, dir * 2 * eps);
          if (!a.second || !b.second) continue;
          numeric = dir * (-3.0 * loss + 4.0 * a.first - b.first) / (2.0 * eps);
          step = eps;
          found = true;
          break;
        }
        if (!found) ++out.kink_retries;
      }
      // Below the stencil's rounding noise (a few thousand ulps of the batch loss over the
      // step) a difference carries no information; a near-floor sigma can push the loss to 1e7.
      const double noise = 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / step;
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-7, noise});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic[i]) / scale);
      ++out.parameters;
    }
  }
  return out;
}

CheckResult check_gradient(Fault fault) {
  Stopwatch clock;
  CheckResult r{"gradient", false, "", 0.0};
  Architecture arch;
  arch.input_length = 9;
  arch.conv_channels = {3, 4};
  arch.conv_kernels = {3, 3};
  arch.dense_units = 8;
  double worst = 0.0;
  std::size_t params = 0;
  std::size_t retries = 0;
  for (const auto& apps : {std::vector<std::string>{"a"}, std::vector<std::string>{"a", "b", "c"}}) {
    arch.appliances = apps;
    const auto g = gradient_check(arch, 10, 16, apps.size(), fault == Fault::gradient);
    worst = std::max(worst, g.max_relative_error);
    params += g.parameters;
    retries += g.kink_retries;
  }
  r.passed = worst < 1e-3;
  r.detail = fmt::format("max relative error {:.3g} over {} parameter probes ({} kink retries)", worst, params,
                         retries);
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_moments(Fault fault) {
  Stopwatch clock;
  CheckResult r{"mog-moments", true, "", 0.0};
  Rng rng = keyed_rng({stream_tag("verify-moments")});
  std::uniform_int_distribution<int> components(2, 25);
  std::uniform_real_distribution<double> means(-3.0, 3.0);
  std::uniform_real_distribution<double> sigmas(0.05, 2.0);
  std::normal_distribution<double> normal;
  constexpr int kMixtures = 100;
  constexpr int kDraws = 1000000;
  double worst = 0.0;
  for (int m = 0; m < kMixtures; ++m) {
    GaussianMixture mix;
    const int f = components(rng);
    for (int i = 0; i < f; ++i) {
      mix.mean.push_back(means(rng));
      mix.stddev.push_back(sigmas(rng));
    }
    double sigma = ensemble_moments(mix).stddev;
    if (fault == Fault::moments) {
      double s2 = 0.0;
      for (double s : mix.stddev) s2 += s * s;
      sigma = std::sqrt(s2 / f);
    }
    std::uniform_int_distribution<int> pick(0, f - 1);
    double sum = 0.0;
    double sum2 = 0.0;
    for (int s = 0; s < kDraws; ++s) {
      const int i = pick(rng);
      const double v = mix.mean[static_cast<std::size_t>(i)] + mix.stddev[static_cast<std::size_t>(i)] * normal(rng);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / kDraws;
    const double sample = std::sqrt((sum2 - kDraws * mean * mean) / (kDraws - 1));
    worst = std::max(worst, std::abs(sigma - sample) / sample);
  }
  r.passed = worst < 0.02;
  r.detail = fmt::format("max relative deviation {:.3g} over {} mixtures of {} draws", worst, kMixtures, kDraws);
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_mutual_information(Fault fault) {
  Stopwatch clock;
  CheckResult r{"mutual-information", false, "", 0.0};
  const MiFormula formula = fault == Fault::mi ? MiFormula::literal : MiFormula::corrected;

  GaussianMixture same{std::vector<double>(5, 0.3), std::vector<double>(5, 0.8)};
  Rng rng = keyed_rng({stream_tag("verify-mi"), 1});
  const double flat = mutual_information_raw(same, 10000, rng, formula);

  GaussianMixture apart{{0.0, 10.0}, {1.0, 1.0}};
  const double oracle = mixture_entropy_quadrature(apart) - gaussian_entropy(1.0);
  rng = keyed_rng({stream_tag("verify-mi"), 2});
  const double split = mutual_information_raw(apart, 100000, rng, formula);

  r.passed = std::abs(flat) < 0.01 && std::abs(split - oracle) < 0.05 && std::abs(split - std::log(2.0)) < 0.05;
  r.detail = fmt::format("identical components {:.4f} nats; separated pair {:.4f} nats (quadrature oracle {:.4f})",
                         flat, split, oracle);
  r.seconds = clock.seconds();
  return r;
}

CheckResult check_kernel(Fault fault) {
  Stopwatch clock;
  CheckResult r{"triangle-kernel", true, "", 0.0};
  AggregationWindow w;
  w.mode = WindowMode::dynamic;
  w.kernel = Kernel::triangle;
  w.half_width = fault == Fault::kernel ? 8 : 7;
  const Minute today = 20;
  std::vector<std::string> problems;
  for (int offset = -7; offset <= 7; ++offset) {
    const double expected = static_cast<double>(8 - std::abs(offset)) / 8.0;
    const double got = w.weight(today + offset, today);
    if (got != expected) problems.push_back(fmt::format("offset {}: {} != {}", offset, got, expected));
  }
  if (w.weight(today + 8, today) != 0.0 || w.weight(today - 8, today) != 0.0) {
    problems.push_back("weight outside the window is nonzero");
  }
  std::vector<TimedScore> scores;
  for (Minute m = (today - 7) * kMinutesPerDay; m < (today + 8) * kMinutesPerDay; m += 15) scores.push_back({m, 3.25});
  const double constant = aggregate_house_score(scores, w, today);
  if (std::abs(constant - 3.25) > 1e-12) problems.push_back(fmt::format("constant window aggregated to {}", constant));
  r.passed = problems.empty();
  r.detail = problems.empty() ? std::string("weights 1/8 .. 1 .. 1/8 exact; constant window preserved")
                              : fmt::format("{} problem(s); first: {}", problems.size(), problems.front());
  r.seconds = clock.seconds();
  return r;
}

std::vector<CheckResult> run_verify(Fault fault) {
  return {check_gradient(fault), check_moments(fault), check_mutual_information(fault), check_kernel(fault)};
}

}  // namespace nilmal
