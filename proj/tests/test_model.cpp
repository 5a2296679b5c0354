#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "nilmal/errors.hpp"
#include "nilmal/model.hpp"
#include "nilmal/verify.hpp"

using namespace nilmal;
using Eigen::Index;

namespace {

Architecture tiny(std::vector<std::string> appliances) {
  Architecture a;
  a.input_length = 9;
  a.conv_channels = {3, 4};
  a.conv_kernels = {3, 3};
  a.dense_units = 8;
  a.appliances = std::move(appliances);
  return a;
}

Seq2PointNet perturbed(const Architecture& arch, std::uint64_t seed) {
  Rng rng = keyed_rng({seed, stream_tag("perturb")});
  Seq2PointNet net = Seq2PointNet::initialized(arch, seed);
  std::normal_distribution<double> normal;
  for (double& p : net.parameters()) p += 0.1 * normal(rng);
  return net;
}

Eigen::MatrixXd random_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Straightforward loop implementation of the network, written independently of the
// im2col path. Returns the mean NLL and appends every ReLU state to `pattern`.
double reference_loss(const Seq2PointNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                      const DropoutMasks* masks, GaussianOutput* out = nullptr, std::vector<bool>* pattern = nullptr) {
  const auto& arch = net.architecture();
  const int L = arch.input_length;
  const Index n = x.cols();
  const Index k = static_cast<Index>(arch.appliances.size());
  double total = 0.0;
  if (out != nullptr) {
    out->mean.resize(k, n);
    out->stddev.resize(k, n);
  }
  for (Index j = 0; j < n; ++j) {
    std::vector<std::vector<double>> act(1, std::vector<double>(x.col(j).data(), x.col(j).data() + L));
    for (std::size_t l = 0; l < arch.conv_channels.size(); ++l) {
      const int K = arch.conv_kernels[l];
      const int pad = (K - 1) / 2;
      const auto w = net.view(net.block("conv" + std::to_string(l) + ".weight"));
      const auto b = net.view(net.block("conv" + std::to_string(l) + ".bias"));
      std::vector<std::vector<double>> next(static_cast<std::size_t>(arch.conv_channels[l]), std::vector<double>(L));
      for (int co = 0; co < arch.conv_channels[l]; ++co) {
        for (int t = 0; t < L; ++t) {
          double s = b(co, 0);
          for (std::size_t ci = 0; ci < act.size(); ++ci) {
            for (int q = 0; q < K; ++q) {
              const int src = t + q - pad;
              if (src >= 0 && src < L) s += w(co, static_cast<Index>(ci) * K + q) * act[ci][static_cast<std::size_t>(src)];
            }
          }
          if (pattern != nullptr) pattern->push_back(s > 0.0);
          next[static_cast<std::size_t>(co)][static_cast<std::size_t>(t)] = std::max(0.0, s);
        }
      }
      act = std::move(next);
    }
    Eigen::VectorXd feat(arch.feature_size());
    for (std::size_t c = 0; c < act.size(); ++c) {
      for (int t = 0; t < L; ++t) feat(static_cast<Index>(c) * L + t) = act[c][static_cast<std::size_t>(t)];
    }
    if (masks != nullptr) feat = feat.cwiseProduct(masks->features.col(j));
    Eigen::VectorXd h = net.view(net.block("dense.weight")) * feat + net.view(net.block("dense.bias")).col(0);
    for (Index u = 0; u < h.size(); ++u) {
      if (pattern != nullptr) pattern->push_back(h(u) > 0.0);
      h(u) = std::max(0.0, h(u));
    }
    if (masks != nullptr) h = h.cwiseProduct(masks->hidden.col(j));
    Eigen::VectorXd mu(k);
    Eigen::VectorXd s(k);
    if (k == 1) {
      const Eigen::VectorXd o = net.view(net.block("head.weight")) * h + net.view(net.block("head.bias")).col(0);
      mu(0) = o(0);
      s(0) = o(1);
    } else {
      s = net.view(net.block("sigma.weight")) * h + net.view(net.block("sigma.bias")).col(0);
      Eigen::VectorXd hs(h.size() + k);
      hs << h, s;
      mu = net.view(net.block("mean.weight")) * hs + net.view(net.block("mean.bias")).col(0);
    }
    for (Index a = 0; a < k; ++a) {
      const double sigma = std::log1p(std::exp(s(a))) + 1e-6;
      const double r = y(a, j) - mu(a);
      total += 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) + r * r / (2.0 * sigma * sigma);
      if (out != nullptr) {
        out->mean(a, j) = mu(a);
        out->stddev(a, j) = sigma;
      }
    }
  }
  return total / static_cast<double>(n * k);
}

}  // namespace

TEST_CASE("forward matches an independent loop implementation") {
  for (const auto& apps : {std::vector<std::string>{"a"}, std::vector<std::string>{"a", "b", "c"}}) {
    const Architecture arch = tiny(apps);
    Rng rng = keyed_rng({stream_tag("forward-oracle"), apps.size()});
    const Seq2PointNet net = perturbed(arch, 4);
    const Eigen::MatrixXd x = random_matrix(arch.input_length, 40, rng);
    const Eigen::MatrixXd y = random_matrix(static_cast<Index>(apps.size()), 40, rng);
    const DropoutMasks masks = sample_masks(net, 40, rng);
    GaussianOutput expected;
    const double loss = reference_loss(net, x, y, &masks, &expected);
    const GaussianOutput got = forward_batch(net, x, &masks);
    CHECK((got.mean - expected.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((got.stddev - expected.stddev).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(nll_loss(got, y) == doctest::Approx(loss).epsilon(1e-12));
    CHECK(backward(net, x, y, &masks).loss == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("backprop agrees with finite differences of the loop implementation") {
  // Probes whose perturbation flips a ReLU in the reference are skipped; the remaining
  // probes are the overwhelming majority and must all agree.
  for (const auto& apps : {std::vector<std::string>{"a"}, std::vector<std::string>{"a", "b"}}) {
    const Architecture arch = tiny(apps);
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double worst = 0.0;
    for (std::uint64_t draw = 0; draw < 3; ++draw) {
      Rng rng = keyed_rng({stream_tag("fd-oracle"), apps.size(), draw});
      Seq2PointNet net = perturbed(arch, 100 + draw);
      const Eigen::MatrixXd x = random_matrix(arch.input_length, 6, rng);
      const Eigen::MatrixXd y = random_matrix(static_cast<Index>(apps.size()), 6, rng);
      const DropoutMasks masks = sample_masks(net, 6, rng);
      const Eigen::VectorXd g = backward(net, x, y, &masks).gradient;
      std::vector<bool> base;
      reference_loss(net, x, y, &masks, nullptr, &base);
      auto& theta = net.parameters();
      // Five-point stencil: truncation error O(eps^4) lets eps sit well above the loss's
      // rounding noise.
      const double eps = 1e-3;
      for (Index i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        double f[4];
        bool flipped = false;
        const double offsets[4] = {2 * eps, eps, -eps, -2 * eps};
        for (int k = 0; k < 4; ++k) {
          std::vector<bool> pattern;
          theta[i] = keep + offsets[k];
          f[k] = reference_loss(net, x, y, &masks, nullptr, &pattern);
          flipped = flipped || pattern != base;
        }
        theta[i] = keep;
        if (flipped) {
          ++skipped;
          continue;
        }
        const double fd = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * eps);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-7}));
        ++checked;
      }
    }
    CHECK(checked > 20 * skipped);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("built-in gradient check passes and catches a corrupted gradient") {
  const auto ok = gradient_check(tiny({"a", "b"}), 3, 8, 77);
  CHECK(ok.max_relative_error < 1e-3);
  const auto bad = gradient_check(tiny({"a", "b"}), 3, 8, 77, true);
  CHECK(bad.max_relative_error > 1e-3);
}

TEST_CASE("forward without dropout is deterministic") {
  const Seq2PointNet net = perturbed(tiny({"a"}), 1);
  std::vector<double> x(9);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<double>(i));
  const auto a = forward(net, x);
  const auto b = forward(net, x);
  CHECK(a[0].mean == b[0].mean);
  CHECK(a[0].stddev == b[0].stddev);
}

TEST_CASE("zero output head gives sigma softplus(0) plus the floor") {
  Seq2PointNet net = perturbed(tiny({"a"}), 2);
  net.view(net.block("head.weight")).setZero();
  net.view(net.block("head.bias")).setZero();
  Rng rng = keyed_rng({stream_tag("zero-head")});
  const auto out = forward_batch(net, random_matrix(9, 20, rng), nullptr);
  const double expected = std::log(2.0) + 1e-6;
  CHECK((out.stddev.array() - expected).abs().maxCoeff() < 1e-15);
  CHECK(out.mean.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("different dropout masks give different outputs") {
  const Seq2PointNet net = perturbed(tiny({"a"}), 3);
  Rng rng = keyed_rng({stream_tag("mask-differ")});
  const Eigen::MatrixXd x = random_matrix(9, 1, rng);
  int differ = 0;
  for (int t = 0; t < 50; ++t) {
    const auto m1 = sample_masks(net, 1, rng);
    const auto m2 = sample_masks(net, 1, rng);
    differ += forward_batch(net, x, &m1).mean(0, 0) != forward_batch(net, x, &m2).mean(0, 0);
  }
  CHECK(differ >= 48);
}

TEST_CASE("dropout masks hold zeros and the inverted keep scale") {
  const Seq2PointNet net = perturbed(tiny({"a"}), 3);
  Rng rng = keyed_rng({stream_tag("mask-values")});
  const auto m = sample_masks(net, 2000, rng);
  const double keep = 1.0 / 0.75;
  double kept = 0.0;
  for (Index i = 0; i < m.hidden.size(); ++i) {
    const double v = m.hidden.data()[i];
    REQUIRE((v == 0.0 || v == keep));
    kept += v > 0.0;
  }
  CHECK(kept / static_cast<double>(m.hidden.size()) == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("wrong input length is a shape error") {
  const Seq2PointNet net = perturbed(tiny({"a"}), 1);
  CHECK_THROWS_AS(forward(net, std::vector<double>(8, 0.0)), ShapeError);
  CHECK_THROWS_AS(forward_batch(net, Eigen::MatrixXd::Zero(10, 3), nullptr), ShapeError);
}

TEST_CASE("output count is 2 per appliance") {
  CHECK(Seq2PointNet(tiny({"a"})).output_count() == 2);
  CHECK(Seq2PointNet(tiny({"a", "b", "c"})).output_count() == 6);
  const Seq2PointNet net = perturbed(tiny({"a", "b", "c"}), 1);
  CHECK(forward(net, std::vector<double>(9, 0.5)).size() == 3);
}

TEST_CASE("nll closed forms") {
  GaussianOutput p{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(nll_loss(p, Eigen::MatrixXd::Constant(1, 1, 2.0)) == doctest::Approx(half_log_2pi));
  CHECK(nll_loss(p, Eigen::MatrixXd::Constant(1, 1, 2.0)) == doctest::Approx(0.9189).epsilon(1e-4));
  p.mean(0, 0) = 0.0;
  CHECK(nll_loss(p, Eigen::MatrixXd::Constant(1, 1, 1.0)) == doctest::Approx(1.4189).epsilon(1e-4));
  double previous = 0.0;
  for (double sigma : {1e2, 1e4, 1e8}) {
    p.stddev(0, 0) = sigma;
    const double loss = nll_loss(p, Eigen::MatrixXd::Constant(1, 1, 1.0));
    CHECK(loss > previous);
    previous = loss;
  }
}

TEST_CASE("non-finite loss input names the sample") {
  GaussianOutput p{Eigen::MatrixXd::Zero(1, 3), Eigen::MatrixXd::Ones(1, 3)};
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, 3);
  y(0, 2) = NAN;
  try {
    nll_loss(p, y);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
  }
}

TEST_CASE("mean head bias gradient vanishes when predictions are exact") {
  Seq2PointNet net = perturbed(tiny({"a"}), 5);
  Rng rng = keyed_rng({stream_tag("stationary")});
  const Eigen::MatrixXd x = random_matrix(9, 12, rng);
  const Eigen::MatrixXd y = forward_batch(net, x, nullptr).mean;
  const Eigen::VectorXd g = backward(net, x, y, nullptr).gradient;
  const auto& bias = net.block("head.bias");
  CHECK(std::abs(g[static_cast<Index>(bias.offset)]) < 1e-12);
}

TEST_CASE("duplicating a sample leaves the mean-loss gradient unchanged") {
  const Seq2PointNet net = perturbed(tiny({"a", "b"}), 6);
  Rng rng = keyed_rng({stream_tag("duplicate")});
  const Eigen::MatrixXd x = random_matrix(9, 1, rng);
  const Eigen::MatrixXd y = random_matrix(2, 1, rng);
  Eigen::MatrixXd x2(9, 2);
  x2 << x, x;
  Eigen::MatrixXd y2(2, 2);
  y2 << y, y;
  const auto one = backward(net, x, y, nullptr);
  const auto two = backward(net, x2, y2, nullptr);
  CHECK(two.loss == doctest::Approx(one.loss).epsilon(1e-12));
  CHECK((two.gradient - one.gradient).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("chunked backward equals one-shot backward on large batches") {
  const Seq2PointNet net = perturbed(tiny({"a", "b"}), 8);
  Rng rng = keyed_rng({stream_tag("chunks")});
  const Eigen::MatrixXd x = random_matrix(9, 100, rng);
  const Eigen::MatrixXd y = random_matrix(2, 100, rng);
  const DropoutMasks masks = sample_masks(net, 100, rng);
  const auto all = backward(net, x, y, &masks);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(all.gradient.size());
  for (Index j = 0; j < 100; ++j) {
    DropoutMasks m{masks.features.col(j), masks.hidden.col(j)};
    sum += backward(net, x.col(j), y.col(j), &m).gradient / 100.0;
  }
  CHECK((all.gradient - sum).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("property: sigma stays positive for random weights and inputs") {
  Rng rng = keyed_rng({stream_tag("sigma-positive")});
  std::uniform_real_distribution<double> scale(-6.0, 3.0);
  for (int trial = 0; trial < 60; ++trial) {
    const Architecture arch = tiny(trial % 2 == 0 ? std::vector<std::string>{"a"} : std::vector<std::string>{"a", "b"});
    Seq2PointNet net(arch);
    const double s = std::pow(10.0, scale(rng));
    std::normal_distribution<double> normal(0.0, s);
    for (double& p : net.parameters()) p = normal(rng);
    // Drive the sigma pre-activation strongly negative on some trials.
    if (trial % 3 == 0) {
      const auto& b = net.block(arch.multi_head() ? "sigma.bias" : "head.bias");
      net.parameters()[static_cast<Index>(b.offset + b.rows - 1)] = -800.0;
    }
    const Eigen::MatrixXd x = random_matrix(9, 16, rng) * std::pow(10.0, scale(rng));
    const DropoutMasks masks = sample_masks(net, 16, rng);
    const auto out = forward_batch(net, x, trial % 2 == 0 ? &masks : nullptr);
    REQUIRE(out.stddev.minCoeff() > 0.0);
    REQUIRE(out.stddev.allFinite());
  }
}

TEST_CASE("appliance index table keeps outputs attached to names") {
  const Seq2PointNet net = perturbed(tiny({"fridge", "ac", "furnace"}), 9);
  CHECK(net.appliance_index("fridge") == 0);
  CHECK(net.appliance_index("furnace") == 2);
  CHECK_THROWS_AS(net.appliance_index("oven"), ShapeError);
  std::stringstream buf;
  net.save(buf);
  const Seq2PointNet back = Seq2PointNet::load(buf);
  CHECK(back.architecture().appliances == net.architecture().appliances);
  CHECK(back.parameters() == net.parameters());
}

namespace {

WindowSet sine_windows(double amplitude, int houses) {
  std::vector<PowerSeries> series;
  for (int h = 1; h <= houses; ++h) {
    PowerSeries s;
    s.house_id = h;
    for (int t = 0; t < 3000; ++t) {
      const double a = amplitude * (1.0 + std::sin(0.05 * t + h));
      s.mains.push_back(100.0 + a + 20.0 * std::cos(0.3 * t));
      s.appliances["a"].push_back(a);
    }
    series.push_back(std::move(s));
  }
  const Dataset d(0, std::move(series));
  std::vector<TrainingSegment> segs;
  for (int h = 1; h <= houses; ++h) segs.push_back({h, {0, 3000}});
  const Normalizer norm = fit_normalizer(d, segs, {"a"});
  WindowSet w(31, {"a"}, true);
  for (const auto& s : segs) w.append(d, s.house_id, s.targets, norm, 3);
  return w;
}

Architecture small_arch() {
  Architecture a;
  a.input_length = 31;
  a.conv_channels = {4, 4};
  a.conv_kernels = {5, 3};
  a.dense_units = 16;
  a.appliances = {"a"};
  return a;
}

}  // namespace

TEST_CASE("training with a fixed seed is reproducible and reduces the loss") {
  const WindowSet w = sine_windows(50.0, 2);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 64;
  tc.seed = 12;
  Seq2PointNet a = Seq2PointNet::initialized(small_arch(), 1);
  Seq2PointNet b = Seq2PointNet::initialized(small_arch(), 1);
  const auto ra = train(a, w, tc);
  const auto rb = train(b, w, tc);
  CHECK(a.parameters() == b.parameters());
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(ra.epoch_loss.back() < ra.epoch_loss.front());
  tc.seed = 13;
  Seq2PointNet c = Seq2PointNet::initialized(small_arch(), 1);
  train(c, w, tc);
  CHECK(c.parameters() != a.parameters());
}

TEST_CASE("constant-zero target is learned to within a watt") {
  const WindowSet w = sine_windows(0.0, 2);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 64;
  tc.seed = 3;
  Seq2PointNet net = Seq2PointNet::initialized(small_arch(), 2);
  train(net, w, tc);
  const WindowSet held = sine_windows(0.0, 3);
  std::vector<std::size_t> idx(held.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Eigen::MatrixXd x;
  held.fill_inputs(idx, x);
  const auto out = forward_batch(net, x, nullptr);
  // The target scale floors at 1 W, so normalized units are watts here.
  const double rmse = std::sqrt(out.mean.squaredNorm() / static_cast<double>(out.mean.size()));
  CHECK(rmse < 1.0);
  CHECK(out.stddev.mean() < 0.1);
}

TEST_CASE("training rejects empty or mismatched windows") {
  Seq2PointNet net = Seq2PointNet::initialized(small_arch(), 1);
  TrainConfig tc;
  CHECK_THROWS_AS(train(net, WindowSet(31, {"a"}, true), tc), ValidationError);
  CHECK_THROWS_AS(train(net, WindowSet(31, {"b"}, true), tc), ValidationError);
  tc.epochs = 0;
  CHECK_THROWS_AS(train(net, sine_windows(1.0, 1), tc), ConfigError);
}
