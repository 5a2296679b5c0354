#include "nilmal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "nilmal/errors.hpp"

namespace nilmal {

namespace {

using Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kCheckpointMagic[8] = {'N', 'I', 'L', 'M', 'S', '2', 'P', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Zero-padded ("same") im2col over a C x (n*L) activation. Row ci*K + k of `cols` holds
// channel ci shifted by k - (K-1)/2 within each sample.
void im2col(const RowMatrix& act, int kernel, Index n, int length, RowMatrix& cols) {
  const int pad = (kernel - 1) / 2;
  cols.resize(act.rows() * kernel, n * length);
  for (Index ci = 0; ci < act.rows(); ++ci) {
    const double* src = act.row(ci).data();
    for (int k = 0; k < kernel; ++k) {
      double* dst = cols.row(ci * kernel + k).data();
      const int shift = k - pad;
      const int lo = std::max(0, -shift);
      const int hi = std::min(length, length - shift);
      for (Index j = 0; j < n; ++j) {
        double* d = dst + j * length;
        const double* s = src + j * length;
        std::fill(d, d + lo, 0.0);
        if (hi > lo) std::memcpy(d + lo, s + lo + shift, sizeof(double) * static_cast<std::size_t>(hi - lo));
        std::fill(d + std::max(hi, lo), d + length, 0.0);
      }
    }
  }
}

// Adjoint of im2col.
void col2im(const RowMatrix& cols, int kernel, Index channels, Index n, int length, RowMatrix& grad) {
  const int pad = (kernel - 1) / 2;
  grad.setZero(channels, n * length);
  for (Index ci = 0; ci < channels; ++ci) {
    double* dst = grad.row(ci).data();
    for (int k = 0; k < kernel; ++k) {
      const double* src = cols.row(ci * kernel + k).data();
      const int shift = k - pad;
      const int lo = std::max(0, -shift);
      const int hi = std::min(length, length - shift);
      for (Index j = 0; j < n; ++j) {
        double* d = dst + j * length + shift;
        const double* s = src + j * length;
        for (int t = lo; t < hi; ++t) d[t] += s[t];
      }
    }
  }
}

struct ConvCache {
  RowMatrix input;
  std::vector<RowMatrix> cols;
  std::vector<RowMatrix> acts;  // post-ReLU output of each layer
};

struct HeadCache {
  Eigen::MatrixXd dropped_features;
  Eigen::MatrixXd hidden;  // post-ReLU, before dropout
  Eigen::MatrixXd dropped_hidden;
  Eigen::MatrixXd sigma_pre;
};

// Buffers reused across calls on one thread; steady-state training allocates nothing large.
struct Scratch {
  ConvCache conv;
  HeadCache head;
  Eigen::MatrixXd features;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  DropoutMasks masks;
  Eigen::MatrixXd d_hd;
  Eigen::MatrixXd d_z1;
  Eigen::MatrixXd d_features;
  RowMatrix d_act;
  RowMatrix d_z;
  RowMatrix d_cols;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

constexpr Index kChunk = 32;  // samples per conv pass; keeps im2col buffers cache-resident

// Conv stack over n samples stored contiguously (L x n); writes the flattened
// features of sample j to features + j * feature_size.
void conv_chunk(const Seq2PointNet& net, const double* inputs, Index n, ConvCache& cache, double* features) {
  const auto& arch = net.architecture();
  const int length = arch.input_length;
  const std::size_t layers = arch.conv_channels.size();
  cache.input.resize(1, n * length);
  std::memcpy(cache.input.data(), inputs, sizeof(double) * static_cast<std::size_t>(n * length));
  cache.cols.resize(layers);
  cache.acts.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const RowMatrix& in = l == 0 ? cache.input : cache.acts[l - 1];
    im2col(in, arch.conv_kernels[l], n, length, cache.cols[l]);
    auto w = net.view(net.block(fmt::format("conv{}.weight", l)));
    auto b = net.view(net.block(fmt::format("conv{}.bias", l)));
    RowMatrix& act = cache.acts[l];
    act.resize(w.rows(), n * length);
    act.noalias() = w * cache.cols[l];
    act.colwise() += b.col(0);
    act = act.cwiseMax(0.0);
  }
  const RowMatrix& act = cache.acts.back();
  const Index channels = act.rows();
  for (Index j = 0; j < n; ++j) {
    for (Index c = 0; c < channels; ++c) {
      std::memcpy(features + (j * channels + c) * length, act.row(c).data() + j * length,
                  sizeof(double) * static_cast<std::size_t>(length));
    }
  }
}

void check_input(const Seq2PointNet& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.architecture().input_length) {
    throw ShapeError(fmt::format("expected input windows of length {}, got {}", net.architecture().input_length,
                                 inputs.rows()));
  }
}

Eigen::MatrixXd run_conv(const Seq2PointNet& net, const Eigen::MatrixXd& inputs) {
  check_input(net, inputs);
  const auto& arch = net.architecture();
  if (arch.conv_channels.empty()) return inputs;
  const Index n = inputs.cols();
  Eigen::MatrixXd features(arch.feature_size(), n);
  for (Index start = 0; start < n; start += kChunk) {
    const Index len = std::min(kChunk, n - start);
    conv_chunk(net, inputs.col(start).data(), len, scratch().conv, features.col(start).data());
  }
  return features;
}

GaussianOutput run_head(const Seq2PointNet& net, const Eigen::MatrixXd& features, const DropoutMasks* masks,
                        HeadCache& cache) {
  const auto& arch = net.architecture();
  if (features.rows() != arch.feature_size()) {
    throw ShapeError(fmt::format("expected {} features, got {}", arch.feature_size(), features.rows()));
  }
  if (masks != nullptr && (masks->features.rows() != features.rows() || masks->features.cols() != features.cols() ||
                           masks->hidden.rows() != arch.dense_units || masks->hidden.cols() != features.cols())) {
    throw ShapeError("dropout masks do not match the batch");
  }
  auto& xd = cache.dropped_features;
  auto& hidden = cache.hidden;
  auto& hd = cache.dropped_hidden;
  auto& s = cache.sigma_pre;
  if (masks != nullptr) {
    xd = features.cwiseProduct(masks->features);
  } else {
    xd = features;
  }
  auto w1 = net.view(net.block("dense.weight"));
  auto b1 = net.view(net.block("dense.bias"));
  hidden.resize(w1.rows(), features.cols());
  hidden.noalias() = w1 * xd;
  hidden.colwise() += b1.col(0);
  hidden = hidden.cwiseMax(0.0);
  if (masks != nullptr) {
    hd = hidden.cwiseProduct(masks->hidden);
  } else {
    hd = hidden;
  }

  GaussianOutput out;
  if (!arch.multi_head()) {
    auto wo = net.view(net.block("head.weight"));
    auto bo = net.view(net.block("head.bias"));
    Eigen::MatrixXd o = wo * hd;
    o.colwise() += bo.col(0);
    out.mean = o.row(0);
    s = o.row(1);
  } else {
    const Index k = static_cast<Index>(net.appliance_count());
    auto ws = net.view(net.block("sigma.weight"));
    auto bs = net.view(net.block("sigma.bias"));
    s = ws * hd;
    s.colwise() += bs.col(0);
    auto wm = net.view(net.block("mean.weight"));
    auto bm = net.view(net.block("mean.bias"));
    out.mean = wm.leftCols(arch.dense_units) * hd + wm.rightCols(k) * s;
    out.mean.colwise() += bm.col(0);
  }
  out.stddev = s.unaryExpr([](double v) { return softplus(v) + Seq2PointNet::kSigmaFloor; });
  return out;
}

void normal_fill(Eigen::Map<Eigen::MatrixXd> m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

nlohmann::json arch_json(const Architecture& a) {
  return {{"input_length", a.input_length}, {"conv_channels", a.conv_channels},
          {"conv_kernels", a.conv_kernels}, {"dense_units", a.dense_units},
          {"dropout", a.dropout},           {"appliances", a.appliances}};
}

}  // namespace

std::vector<std::string> Architecture::violations() const {
  std::vector<std::string> out;
  if (input_length < 1 || input_length % 2 == 0) {
    out.push_back(fmt::format("sequence_length: must be odd and positive, got {}", input_length));
  }
  if (conv_channels.size() != conv_kernels.size()) {
    out.push_back("conv_channels and conv_kernels must have the same length");
  }
  for (int c : conv_channels) {
    if (c < 1) out.push_back("conv_channels: entries must be positive");
  }
  for (int k : conv_kernels) {
    if (k < 1 || k % 2 == 0) out.push_back(fmt::format("conv_kernels: {} is not odd and positive", k));
  }
  if (dense_units < 1) out.push_back("dense_units: must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) out.push_back(fmt::format("dropout: {} not in [0, 1)", dropout));
  if (appliances.empty()) out.push_back("appliances: need at least one output");
  return out;
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (!(learning_rate > 0.0)) out.push_back("learning_rate: must be > 0");
  if (batch_size < 1) out.push_back("batch_size: must be >= 1");
  if (epochs < 1) out.push_back("epochs: must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0)) out.push_back("beta1: must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) out.push_back("beta2: must be in (0, 1)");
  if (!(epsilon > 0.0)) out.push_back("epsilon: must be > 0");
  if (grad_clip < 0.0) out.push_back("grad_clip: must be >= 0");
  return out;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Seq2PointNet::Seq2PointNet(Architecture arch) : arch_(std::move(arch)) {
  auto problems = arch_.violations();
  if (!problems.empty()) throw ConfigError("invalid architecture: " + problems.front());
  std::size_t offset = 0;
  auto add = [&](std::string name, Index rows, Index cols) {
    blocks_.push_back({std::move(name), offset, rows, cols});
    offset += static_cast<std::size_t>(rows * cols);
  };
  Index in_channels = 1;
  for (std::size_t l = 0; l < arch_.conv_channels.size(); ++l) {
    add(fmt::format("conv{}.weight", l), arch_.conv_channels[l], in_channels * arch_.conv_kernels[l]);
    add(fmt::format("conv{}.bias", l), arch_.conv_channels[l], 1);
    in_channels = arch_.conv_channels[l];
  }
  add("dense.weight", arch_.dense_units, arch_.feature_size());
  add("dense.bias", arch_.dense_units, 1);
  const auto k = static_cast<Index>(arch_.appliances.size());
  if (!arch_.multi_head()) {
    add("head.weight", 2, arch_.dense_units);
    add("head.bias", 2, 1);
  } else {
    add("sigma.weight", k, arch_.dense_units);
    add("sigma.bias", k, 1);
    add("mean.weight", k, arch_.dense_units + k);
    add("mean.bias", k, 1);
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Index>(offset));
}

Seq2PointNet Seq2PointNet::initialized(Architecture arch, std::uint64_t seed) {
  Seq2PointNet net(std::move(arch));
  Rng rng = keyed_rng({seed, stream_tag("init")});
  for (const auto& b : net.blocks_) {
    if (b.cols == 1) continue;  // biases stay zero
    const bool head = b.name.starts_with("head") || b.name.starts_with("sigma") || b.name.starts_with("mean");
    const double fan_in = static_cast<double>(b.cols);
    normal_fill(net.view(b), head ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in), rng);
  }
  return net;
}

std::size_t Seq2PointNet::appliance_index(const std::string& name) const {
  auto it = std::find(arch_.appliances.begin(), arch_.appliances.end(), name);
  if (it == arch_.appliances.end()) throw ShapeError(fmt::format("network has no output for {}", name));
  return static_cast<std::size_t>(it - arch_.appliances.begin());
}

const Seq2PointNet::Block& Seq2PointNet::block(std::string_view name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw ShapeError(fmt::format("no parameter block {}", name));
}

void Seq2PointNet::save(std::ostream& out) const {
  const std::string header = arch_json(arch_).dump();
  const auto header_len = static_cast<std::uint32_t>(header.size());
  const auto count = static_cast<std::uint64_t>(params_.size());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(params_.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

void Seq2PointNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  save(out);
}

Seq2PointNet Seq2PointNet::load(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)] = {};
  std::uint32_t version = 0;
  std::uint32_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file");
  }
  if (version != kCheckpointVersion) throw std::runtime_error(fmt::format("unsupported checkpoint version {}", version));
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  auto j = nlohmann::json::parse(header);
  Architecture arch;
  arch.input_length = j.at("input_length").get<int>();
  arch.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  arch.conv_kernels = j.at("conv_kernels").get<std::vector<int>>();
  arch.dense_units = j.at("dense_units").get<int>();
  arch.dropout = j.at("dropout").get<double>();
  arch.appliances = j.at("appliances").get<std::vector<std::string>>();
  Seq2PointNet net(std::move(arch));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != net.parameter_count()) throw std::runtime_error("checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(net.params_.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return net;
}

Seq2PointNet Seq2PointNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  return load(in);
}

Eigen::MatrixXd conv_features(const Seq2PointNet& net, const Eigen::MatrixXd& inputs) {
  return run_conv(net, inputs);
}

GaussianOutput head_forward(const Seq2PointNet& net, const Eigen::MatrixXd& features, const DropoutMasks* masks) {
  return run_head(net, features, masks, scratch().head);
}

GaussianOutput forward_batch(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const DropoutMasks* masks) {
  return run_head(net, run_conv(net, inputs), masks, scratch().head);
}

std::vector<Gaussian> forward(const Seq2PointNet& net, std::span<const double> input, const DropoutMasks* masks) {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Index>(input.size()));
  auto out = forward_batch(net, x, masks);
  std::vector<Gaussian> result(net.appliance_count());
  for (std::size_t a = 0; a < result.size(); ++a) {
    result[a] = {out.mean(static_cast<Index>(a), 0), out.stddev(static_cast<Index>(a), 0)};
  }
  return result;
}

std::vector<bool> relu_pattern(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const DropoutMasks* masks) {
  check_input(net, inputs);
  const auto& arch = net.architecture();
  const Index n = inputs.cols();
  std::vector<bool> pattern;
  Eigen::MatrixXd features(arch.feature_size(), n);
  if (arch.conv_channels.empty()) features = inputs;
  for (Index start = 0; start < n && !arch.conv_channels.empty(); start += kChunk) {
    const Index len = std::min(kChunk, n - start);
    ConvCache& cache = scratch().conv;
    conv_chunk(net, inputs.col(start).data(), len, cache, features.col(start).data());
    for (const auto& act : cache.acts) {
      for (Index i = 0; i < act.size(); ++i) pattern.push_back(act.data()[i] > 0.0);
    }
  }
  HeadCache& head = scratch().head;
  run_head(net, features, masks, head);
  for (Index i = 0; i < head.hidden.size(); ++i) pattern.push_back(head.hidden.data()[i] > 0.0);
  return pattern;
}

void sample_mask_column(const Seq2PointNet& net, DropoutMasks& masks, Index col, Rng& rng) {
  const double p = net.architecture().dropout;
  if (p <= 0.0) {
    masks.features.col(col).setOnes();
    masks.hidden.col(col).setOnes();
    return;
  }
  const double keep = 1.0 / (1.0 - p);
  double* f = masks.features.col(col).data();
  for (Index i = 0; i < masks.features.rows(); ++i) f[i] = uniform01(rng) < p ? 0.0 : keep;
  double* h = masks.hidden.col(col).data();
  for (Index i = 0; i < masks.hidden.rows(); ++i) h[i] = uniform01(rng) < p ? 0.0 : keep;
}

DropoutMasks sample_masks(const Seq2PointNet& net, Index n, Rng& rng) {
  DropoutMasks m;
  m.features.resize(net.architecture().feature_size(), n);
  m.hidden.resize(net.architecture().dense_units, n);
  for (Index j = 0; j < n; ++j) sample_mask_column(net, m, j, rng);
  return m;
}

double nll_loss(const GaussianOutput& prediction, const Eigen::MatrixXd& targets) {
  if (prediction.mean.rows() != targets.rows() || prediction.mean.cols() != targets.cols()) {
    throw ShapeError("prediction and target shapes differ");
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (Index j = 0; j < targets.cols(); ++j) {
    for (Index a = 0; a < targets.rows(); ++a) {
      const double mu = prediction.mean(a, j);
      const double sigma = prediction.stddev(a, j);
      const double y = targets(a, j);
      if (!std::isfinite(mu) || !std::isfinite(sigma) || !std::isfinite(y) || !(sigma > 0.0)) {
        throw NumericError(fmt::format("non-finite loss input at sample {} (mu={}, sigma={}, y={})", j, mu, sigma, y));
      }
      const double r = y - mu;
      total += half_log_2pi + std::log(sigma) + r * r / (2.0 * sigma * sigma);
    }
  }
  return total / static_cast<double>(targets.size());
}

namespace {

// Forward and backward over one chunk of samples; adds d(loss)/d(theta) into `gradient`
// with the loss normalized by `inv_count`, and returns the chunk's share of the loss.
double accumulate_chunk(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                        const DropoutMasks* masks, double inv_count, Eigen::VectorXd& gradient) {
  const auto& arch = net.architecture();
  const Index n = inputs.cols();
  const auto k = static_cast<Index>(net.appliance_count());

  Scratch& sc = scratch();
  Eigen::MatrixXd& features = sc.features;
  if (arch.conv_channels.empty()) {
    features = inputs;
  } else {
    features.resize(arch.feature_size(), n);
    conv_chunk(net, inputs.data(), n, sc.conv, features.data());
  }
  HeadCache& head = sc.head;
  GaussianOutput out = run_head(net, features, masks, head);
  const double loss = nll_loss(out, targets) * static_cast<double>(n * k) * inv_count;

  auto grad = [&](std::string_view name) {
    const auto& b = net.block(name);
    return Eigen::Map<Eigen::MatrixXd>(gradient.data() + b.offset, b.rows, b.cols);
  };

  const Eigen::ArrayXXd sigma = out.stddev.array();
  const Eigen::ArrayXXd resid = targets.array() - out.mean.array();
  Eigen::MatrixXd d_mean = (-resid / sigma.square() * inv_count).matrix();
  Eigen::MatrixXd d_sigma = ((1.0 / sigma - resid.square() / sigma.cube()) * inv_count).matrix();
  Eigen::MatrixXd d_s = d_sigma.cwiseProduct(head.sigma_pre.unaryExpr([](double v) { return sigmoid(v); }));

  Eigen::MatrixXd& d_hd = sc.d_hd;
  if (!arch.multi_head()) {
    Eigen::MatrixXd d_o(2, n);
    d_o.row(0) = d_mean;
    d_o.row(1) = d_s;
    grad("head.weight").noalias() += d_o * head.dropped_hidden.transpose();
    grad("head.bias") += d_o.rowwise().sum();
    d_hd.noalias() = net.view(net.block("head.weight")).transpose() * d_o;
  } else {
    auto wm = net.view(net.block("mean.weight"));
    auto g_wm = grad("mean.weight");
    g_wm.leftCols(arch.dense_units).noalias() += d_mean * head.dropped_hidden.transpose();
    g_wm.rightCols(k).noalias() += d_mean * head.sigma_pre.transpose();
    grad("mean.bias") += d_mean.rowwise().sum();
    d_hd.noalias() = wm.leftCols(arch.dense_units).transpose() * d_mean;
    d_s.noalias() += wm.rightCols(k).transpose() * d_mean;
    grad("sigma.weight").noalias() += d_s * head.dropped_hidden.transpose();
    grad("sigma.bias") += d_s.rowwise().sum();
    d_hd.noalias() += net.view(net.block("sigma.weight")).transpose() * d_s;
  }

  if (masks != nullptr) d_hd.array() *= masks->hidden.array();
  Eigen::MatrixXd& d_z1 = sc.d_z1;
  d_z1 = (head.hidden.array() > 0.0).select(d_hd, 0.0);
  grad("dense.weight").noalias() += d_z1 * head.dropped_features.transpose();
  grad("dense.bias") += d_z1.rowwise().sum();
  if (arch.conv_channels.empty()) return loss;
  Eigen::MatrixXd& d_features = sc.d_features;
  d_features.noalias() = net.view(net.block("dense.weight")).transpose() * d_z1;
  if (masks != nullptr) d_features.array() *= masks->features.array();

  const int length = arch.input_length;
  const Index last = static_cast<Index>(arch.conv_channels.back());
  RowMatrix& d_act = sc.d_act;
  d_act.resize(last, n * length);
  for (Index j = 0; j < n; ++j) {
    for (Index c = 0; c < last; ++c) {
      std::memcpy(d_act.row(c).data() + j * length, d_features.col(j).data() + c * length,
                  sizeof(double) * static_cast<std::size_t>(length));
    }
  }
  RowMatrix& d_z = sc.d_z;
  RowMatrix& d_cols = sc.d_cols;
  for (std::size_t l = arch.conv_channels.size(); l-- > 0;) {
    d_z = (sc.conv.acts[l].array() > 0.0).select(d_act, 0.0);
    grad(fmt::format("conv{}.weight", l)).noalias() += d_z * sc.conv.cols[l].transpose();
    grad(fmt::format("conv{}.bias", l)) += d_z.rowwise().sum();
    if (l == 0) break;
    d_cols.noalias() = net.view(net.block(fmt::format("conv{}.weight", l))).transpose() * d_z;
    col2im(d_cols, arch.conv_kernels[l], arch.conv_channels[l - 1], n, length, d_act);
  }
  return loss;
}

}  // namespace

LossGradient backward(const Seq2PointNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                      const DropoutMasks* masks) {
  check_input(net, inputs);
  const Index n = inputs.cols();
  const auto k = static_cast<Index>(net.appliance_count());
  if (n == 0) throw ShapeError("empty batch");
  if (targets.rows() != k || targets.cols() != n) throw ShapeError("targets do not match the batch");
  if (masks != nullptr && (masks->features.cols() != n || masks->hidden.cols() != n)) {
    throw ShapeError("dropout masks do not match the batch");
  }

  LossGradient result;
  result.gradient = Eigen::VectorXd::Zero(static_cast<Index>(net.parameter_count()));
  const double inv_count = 1.0 / static_cast<double>(n * k);
  if (n <= kChunk) {
    result.loss = accumulate_chunk(net, inputs, targets, masks, inv_count, result.gradient);
    return result;
  }
  for (Index start = 0; start < n; start += kChunk) {
    const Index len = std::min(kChunk, n - start);
    Scratch& sc = scratch();
    sc.inputs = inputs.middleCols(start, len);
    sc.targets = targets.middleCols(start, len);
    const Eigen::MatrixXd& in = sc.inputs;
    const Eigen::MatrixXd& tg = sc.targets;
    try {
      if (masks != nullptr) {
        sc.masks.features = masks->features.middleCols(start, len);
        sc.masks.hidden = masks->hidden.middleCols(start, len);
        result.loss += accumulate_chunk(net, in, tg, &sc.masks, inv_count, result.gradient);
      } else {
        result.loss += accumulate_chunk(net, in, tg, nullptr, inv_count, result.gradient);
      }
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("{} (chunk offset {})", e.what(), start));
    }
  }
  return result;
}

TrainResult train(Seq2PointNet& net, const WindowSet& windows, const TrainConfig& config) {
  auto problems = config.violations();
  if (!problems.empty()) throw ConfigError("invalid training config: " + problems.front());
  if (windows.empty()) throw ValidationError("no training windows");
  if (!windows.has_targets()) throw ValidationError("training windows carry no targets");
  if (windows.appliances() != net.architecture().appliances) {
    throw ShapeError("window appliances do not match the network outputs");
  }

  Rng rng = keyed_rng({config.seed, stream_tag("train")});
  const Index count = static_cast<Index>(net.parameter_count());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(count);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(count);
  double beta1_t = 1.0;
  double beta2_t = 1.0;

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  DropoutMasks masks;
  const auto& arch = net.architecture();
  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> batch(order.data() + start, end - start);
      windows.fill_inputs(batch, inputs);
      windows.fill_targets(batch, targets);
      masks.features.resize(arch.feature_size(), inputs.cols());
      masks.hidden.resize(arch.dense_units, inputs.cols());
      for (Index j = 0; j < inputs.cols(); ++j) sample_mask_column(net, masks, j, rng);
      LossGradient lg;
      try {
        lg = backward(net, inputs, targets, &masks);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("training diverged at epoch {}, batch starting {}: {}", epoch, start, e.what()));
      }
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
        throw NumericError(fmt::format("training diverged at epoch {}, batch starting {}: loss {}", epoch, start, lg.loss));
      }
      if (config.grad_clip > 0.0) {
        const double norm = lg.gradient.norm();
        if (norm > config.grad_clip) lg.gradient *= config.grad_clip / norm;
      }
      beta1_t *= config.beta1;
      beta2_t *= config.beta2;
      m = config.beta1 * m + (1.0 - config.beta1) * lg.gradient;
      v = config.beta2 * v + (1.0 - config.beta2) * lg.gradient.cwiseAbs2();
      const double lr = config.learning_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
      net.parameters().array() -= lr * m.array() / (v.array().sqrt() + config.epsilon);
      epoch_total += lg.loss * static_cast<double>(batch.size());
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace nilmal
