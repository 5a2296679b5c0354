#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nilmal/rng.hpp"
#include "nilmal/windows.hpp"

namespace nilmal {

/// Sequence-to-point network shape. One appliance gives the single-output head (one layer
/// emitting mean and sigma pre-activation); several give the multi-output head, where a sigma
/// layer runs first and a separate mean layer reads the trunk together with the sigma outputs.
struct Architecture {
  int input_length = 99;
  std::vector<int> conv_channels{16, 16, 24, 24, 24};
  std::vector<int> conv_kernels{9, 7, 5, 5, 3};
  int dense_units = 256;
  double dropout = 0.25;
  std::vector<std::string> appliances;

  bool multi_head() const { return appliances.size() > 1; }
  int feature_size() const { return conv_channels.empty() ? input_length : conv_channels.back() * input_length; }
  std::vector<std::string> violations() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 10.0;  // cap on the global gradient norm, 0 disables
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const;
};

/// Inverted-dropout keep masks for one batch: entries are 0 or 1/(1-p).
struct DropoutMasks {
  Eigen::MatrixXd features;  // feature_size x n, applied to the flattened conv output
  Eigen::MatrixXd hidden;    // dense_units x n, applied after the dense trunk
};

/// Per-appliance Gaussian parameters for a batch, each k x n.
struct GaussianOutput {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd stddev;
};

struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
};

class Seq2PointNet {
 public:
  static constexpr double kSigmaFloor = 1e-6;

  struct Block {
    std::string name;
    std::size_t offset;
    Eigen::Index rows;
    Eigen::Index cols;
  };

  /// All parameters zero.
  explicit Seq2PointNet(Architecture arch);
  /// He-normal hidden layers, scaled-normal heads, zero biases.
  static Seq2PointNet initialized(Architecture arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  std::size_t appliance_count() const { return arch_.appliances.size(); }
  std::size_t output_count() const { return 2 * arch_.appliances.size(); }
  /// Index of an appliance in the output table.
  std::size_t appliance_index(const std::string& name) const;

  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block(std::string_view name) const;
  Eigen::Map<Eigen::MatrixXd> view(const Block& b) {
    return {params_.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> view(const Block& b) const {
    return {params_.data() + b.offset, b.rows, b.cols};
  }

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Seq2PointNet load(std::istream& in);
  static Seq2PointNet load(const std::filesystem::path& path);

 private:
  Architecture arch_;
  Eigen::VectorXd params_;
  std::vector<Block> blocks_;
};

/// Deterministic convolutional features (feature_size x n) for an L x n input batch.
Eigen::MatrixXd conv_features(const Seq2PointNet& net, const Eigen::MatrixXd& inputs);
/// Dense trunk and head on precomputed features; `masks` null disables dropout.
GaussianOutput head_forward(const Seq2PointNet& net, const Eigen::MatrixXd& features, const DropoutMasks* masks);
GaussianOutput forward_batch(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const DropoutMasks* masks);
/// One input window; result ordered as the architecture's appliance table.
std::vector<Gaussian> forward(const Seq2PointNet& net, std::span<const double> input,
                              const DropoutMasks* masks = nullptr);

/// Which ReLU units are active, over every ReLU site of the batch. Two parameter vectors with
/// equal patterns lie in the same linear piece of the network.
std::vector<bool> relu_pattern(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const DropoutMasks* masks);

DropoutMasks sample_masks(const Seq2PointNet& net, Eigen::Index n, Rng& rng);
/// Fill column `col` of preallocated masks from `rng`.
void sample_mask_column(const Seq2PointNet& net, DropoutMasks& masks, Eigen::Index col, Rng& rng);

double softplus(double x);
double sigmoid(double x);

/// Mean over samples and appliances of 0.5 log(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
double nll_loss(const GaussianOutput& prediction, const Eigen::MatrixXd& targets);

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

/// Mean NLL of the batch and its gradient with respect to every parameter.
LossGradient backward(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                      const DropoutMasks* masks);

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Adam on mean NLL with dropout active. Deterministic for a fixed config seed.
/// Throws NumericError when the loss diverges.
TrainResult train(Seq2PointNet& net, const WindowSet& windows, const TrainConfig& config);

}  // namespace nilmal
