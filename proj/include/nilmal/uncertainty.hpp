#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nilmal/model.hpp"
#include "nilmal/rng.hpp"

namespace nilmal {

/// Equally weighted Gaussian components from F stochastic passes, in normalized units.
struct GaussianMixture {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t size() const { return mean.size(); }
  /// Throws ValidationError unless F >= 1, sizes agree and every stddev is finite and positive.
  void validate() const;
};

struct EnsembleMoments {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mixture mean and standard deviation. A negative variance from cancellation is clamped
/// to 0 (with a warning when below -1e-12).
EnsembleMoments ensemble_moments(const GaussianMixture& mix);

/// Ensemble standard deviation in watts.
double entropy_score(const GaussianMixture& mix, double scale_watts);

/// Differential entropy of a single Gaussian, log(sqrt(2 pi e) sigma).
double gaussian_entropy(double stddev);

enum class MiFormula {
  corrected,  // (1/F) sum_i 0.5 log(2 pi e sigma_i^2)
  literal,    // sum_i 0.5 log(2 pi sigma_i^2)
};

MiFormula parse_mi_formula(std::string_view text);
const char* to_string(MiFormula formula);

/// Per-component sample counts for S stratified draws: S / F each, the remainder going to
/// the first components, and never fewer than one.
std::vector<int> stratified_counts(int samples, int components);

/// Monte-Carlo mixture entropy minus expected component entropy, before clamping. Nats.
double mutual_information_raw(const GaussianMixture& mix, int samples, Rng& rng,
                              MiFormula formula = MiFormula::corrected);
/// `mutual_information_raw` clamped at 0.
double mutual_information_score(const GaussianMixture& mix, int samples, Rng& rng,
                                MiFormula formula = MiFormula::corrected);

/// One mixture per appliance, in the network's appliance order.
std::vector<GaussianMixture> mc_predict(const Seq2PointNet& net, std::span<const double> input, int passes, Rng& rng);

/// F stochastic passes over a batch; mean[f] and stddev[f] are k x n.
struct McBatch {
  std::vector<Eigen::MatrixXd> mean;
  std::vector<Eigen::MatrixXd> stddev;

  int passes() const { return static_cast<int>(mean.size()); }
  Eigen::Index points() const { return mean.empty() ? 0 : mean.front().cols(); }
  GaussianMixture mixture(Eigen::Index appliance, Eigen::Index point) const;
  /// k x n ensemble means and standard deviations.
  Eigen::MatrixXd ensemble_mean() const;
  Eigen::MatrixXd ensemble_stddev() const;
};

/// Column j's masks are drawn from `rngs[j]` only, so a point's mixture does not depend on
/// which other points share the batch.
McBatch mc_predict_batch(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, int passes, std::vector<Rng>& rngs);

}  // namespace nilmal
