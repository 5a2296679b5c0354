#include "nilmal/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nilmal/errors.hpp"

namespace nilmal {

using Eigen::Index;

namespace {

// Inverse standard normal CDF: rational approximation (relative error ~1e-9) refined by one
// Halley step on erfc.
double normal_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x;
  if (p < low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace

void GaussianMixture::validate() const {
  if (mean.empty()) throw ValidationError("mixture has no components");
  if (mean.size() != stddev.size()) throw ValidationError("mixture mean and stddev counts differ");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(stddev[i]) || !(stddev[i] > 0.0)) {
      throw ValidationError(fmt::format("invalid mixture component {} (mean {}, stddev {})", i, mean[i], stddev[i]));
    }
  }
}

EnsembleMoments ensemble_moments(const GaussianMixture& mix) {
  mix.validate();
  const double f = static_cast<double>(mix.size());
  double sum_mean = 0.0;
  double sum_second = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    sum_mean += mix.mean[i];
    sum_second += mix.stddev[i] * mix.stddev[i] + mix.mean[i] * mix.mean[i];
  }
  const double mu = sum_mean / f;
  double var = sum_second / f - mu * mu;
  if (var < 0.0) {
    if (var < -1e-12) spdlog::warn("ensemble variance {} below zero from cancellation; clamped", var);
    var = 0.0;
  }
  return {mu, std::sqrt(var)};
}

double entropy_score(const GaussianMixture& mix, double scale_watts) {
  return ensemble_moments(mix).stddev * scale_watts;
}

double gaussian_entropy(double stddev) {
  return std::log(std::sqrt(2.0 * std::numbers::pi * std::numbers::e) * stddev);
}

MiFormula parse_mi_formula(std::string_view text) {
  if (text == "corrected") return MiFormula::corrected;
  if (text == "literal") return MiFormula::literal;
  throw ConfigError(fmt::format("unknown mi_formula '{}' (expected corrected or literal)", text));
}

const char* to_string(MiFormula formula) {
  return formula == MiFormula::corrected ? "corrected" : "literal";
}

std::vector<int> stratified_counts(int samples, int components) {
  if (samples < 1) throw ConfigError("MI sample count must be at least 1");
  if (components < 1) throw ValidationError("mixture has no components");
  std::vector<int> counts(static_cast<std::size_t>(components), samples / components);
  for (int i = 0; i < samples % components; ++i) ++counts[static_cast<std::size_t>(i)];
  for (int& c : counts) c = std::max(c, 1);
  return counts;
}

double mutual_information_raw(const GaussianMixture& mix, int samples, Rng& rng, MiFormula formula) {
  mix.validate();
  const auto counts = stratified_counts(samples, static_cast<int>(mix.size()));
  const std::size_t f = mix.size();
  // One pass carries no disagreement between models.
  if (f == 1) return 0.0;
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  const double log_f = std::log(static_cast<double>(f));

  std::vector<double> inv_sigma(f);
  std::vector<double> log_sigma(f);
  for (std::size_t i = 0; i < f; ++i) {
    inv_sigma[i] = 1.0 / mix.stddev[i];
    log_sigma[i] = std::log(mix.stddev[i]);
  }

  // Each component's draws are further stratified into equal-probability slices, one uniform
  // draw per slice. Each stratum is an unbiased estimate of E_i[-log p(x)]; the mixture
  // entropy is their mean.
  std::vector<double> log_p(f);
  double entropy = 0.0;
  for (std::size_t i = 0; i < f; ++i) {
    double stratum = 0.0;
    for (int s = 0; s < counts[i]; ++s) {
      const double u = (static_cast<double>(s) + uniform01(rng)) / counts[i];
      const double x = mix.mean[i] + mix.stddev[i] * normal_quantile(std::max(u, 0x1.0p-60));
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < f; ++j) {
        const double z = (x - mix.mean[j]) * inv_sigma[j];
        log_p[j] = -0.5 * z * z - log_sigma[j] - log_norm;
        top = std::max(top, log_p[j]);
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < f; ++j) acc += std::exp(log_p[j] - top);
      stratum -= top + std::log(acc) - log_f;
    }
    entropy += stratum / counts[i];
  }
  entropy /= static_cast<double>(f);

  double conditional = 0.0;
  for (std::size_t i = 0; i < f; ++i) {
    conditional += formula == MiFormula::corrected ? gaussian_entropy(mix.stddev[i])
                                                    : log_sigma[i] + log_norm;
  }
  if (formula == MiFormula::corrected) conditional /= static_cast<double>(f);
  return entropy - conditional;
}

double mutual_information_score(const GaussianMixture& mix, int samples, Rng& rng, MiFormula formula) {
  return std::max(0.0, mutual_information_raw(mix, samples, rng, formula));
}

std::vector<GaussianMixture> mc_predict(const Seq2PointNet& net, std::span<const double> input, int passes,
                                        Rng& rng) {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Index>(input.size()));
  std::vector<Rng> rngs{rng};
  McBatch batch = mc_predict_batch(net, x, passes, rngs);
  rng = rngs.front();
  std::vector<GaussianMixture> result;
  for (Index a = 0; a < static_cast<Index>(net.appliance_count()); ++a) result.push_back(batch.mixture(a, 0));
  return result;
}

McBatch mc_predict_batch(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, int passes,
                         std::vector<Rng>& rngs) {
  if (passes < 1) throw ConfigError("forward pass count must be at least 1");
  if (static_cast<Index>(rngs.size()) != inputs.cols()) throw ShapeError("one rng stream per point is required");
  const Eigen::MatrixXd features = conv_features(net, inputs);
  const Index n = inputs.cols();
  DropoutMasks masks;
  masks.features.resize(features.rows(), n);
  masks.hidden.resize(net.architecture().dense_units, n);
  McBatch out;
  out.mean.reserve(static_cast<std::size_t>(passes));
  out.stddev.reserve(static_cast<std::size_t>(passes));
  for (int f = 0; f < passes; ++f) {
    for (Index j = 0; j < n; ++j) sample_mask_column(net, masks, j, rngs[static_cast<std::size_t>(j)]);
    GaussianOutput g = head_forward(net, features, &masks);
    out.mean.push_back(std::move(g.mean));
    out.stddev.push_back(std::move(g.stddev));
  }
  return out;
}

GaussianMixture McBatch::mixture(Index appliance, Index point) const {
  GaussianMixture mix;
  mix.mean.reserve(mean.size());
  mix.stddev.reserve(mean.size());
  for (std::size_t f = 0; f < mean.size(); ++f) {
    mix.mean.push_back(mean[f](appliance, point));
    mix.stddev.push_back(stddev[f](appliance, point));
  }
  return mix;
}

Eigen::MatrixXd McBatch::ensemble_mean() const {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(mean.front().rows(), mean.front().cols());
  for (const auto& m : mean) sum += m;
  return sum / static_cast<double>(mean.size());
}

Eigen::MatrixXd McBatch::ensemble_stddev() const {
  Eigen::MatrixXd out(mean.front().rows(), mean.front().cols());
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index a = 0; a < out.rows(); ++a) out(a, j) = ensemble_moments(mixture(a, j)).stddev;
  }
  return out;
}

}  // namespace nilmal
