#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "e2stn/error.hpp"
#include "e2stn/model.hpp"
#include "e2stn/ops.hpp"
#include "e2stn/transfer_eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace e2stn;
using testutil::random_tensor;

namespace {

using Features = std::array<std::vector<double>, 3>;

double elu(double v) { return v > 0 ? v : std::expm1(v); }

Features features_oracle(const std::vector<double>& x, const EvalConvParams& p, const ModelConfig& cfg) {
  const std::size_t c = cfg.channels, b = cfg.bands, f1 = cfg.eval.filters1, fd = f1 * cfg.eval.depth,
                    f2 = cfg.eval.filters2;
  auto hc = oracle::conv2d(x, 1, c, b, oracle::vec(p.standard), f1, 1, 3, 0, 0, 1);
  for (double& v : hc) v = elu(v);
  auto hdc = oracle::conv2d(hc, f1, c, b, oracle::vec(p.depthwise), fd, c, 1, 1, 0, 0);
  for (double& v : hdc) v = elu(v);
  const auto dw = oracle::conv2d(hdc, fd, 1, b, oracle::vec(p.separable_dw), fd, 1, 3, 1, 0, 1);
  const auto hsc = oracle::conv2d(dw, fd, 1, b, oracle::vec(p.separable_pw), f2, 1, 1, 2, 0, 0);
  return {hc, hdc, hsc};
}

double norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Per-map mean and population variance over the map's spatial extent.
std::pair<std::vector<double>, std::vector<double>> stats(const std::vector<double>& f, std::size_t maps) {
  const std::size_t n = f.size() / maps;
  std::vector<double> mu(maps, 0.0), var(maps, 0.0);
  for (std::size_t m = 0; m < maps; ++m) {
    for (std::size_t i = 0; i < n; ++i) mu[m] += f[m * n + i] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var[m] += std::pow(f[m * n + i] - mu[m], 2) / static_cast<double>(n);
  }
  return {mu, var};
}

ModelConfig three_by_three() {
  ModelConfig c = tiny_model_config();
  c.channels = 3;
  c.bands = 3;
  return c;
}

}  // namespace

TEST_CASE("feature shapes and zero input") {
  const ModelConfig cfg = tiny_model_config();
  const Model model = make_model(cfg, false, 1);
  const auto f = extract_features(Tensor::zeros({4, 3}), *model.eval, cfg.eval);
  const std::size_t f1 = cfg.eval.filters1, fd = f1 * cfg.eval.depth;
  CHECK(f[0].shape() == Shape{f1, 4, 3});
  CHECK(f[1].shape() == Shape{fd, 1, 3});
  CHECK(f[2].shape() == Shape{cfg.eval.filters2, 1, 3});
  for (const auto& t : f)
    for (double v : t.data()) CHECK(v == 0.0);
  const auto batched = extract_features(Tensor::zeros({5, 4, 3}), *model.eval, cfg.eval);
  CHECK(batched[2].shape() == Shape{5, cfg.eval.filters2, 1, 3});
  CHECK_THROWS_AS(extract_features(Tensor::zeros({3, 3}), *model.eval, cfg.eval), ShapeError);
}

TEST_CASE("features match the naive convolution oracle") {
  const ModelConfig cfg = three_by_three();
  const Model model = make_model(cfg, false, 2);
  Rng rng(31);
  const Tensor x = random_tensor({3, 3}, rng, false, -2, 2);
  const auto got = extract_features(x, *model.eval, cfg.eval);
  const auto expect = features_oracle(oracle::vec(x), *model.eval, cfg);
  for (std::size_t i = 0; i < 3; ++i) CHECK(oracle::max_abs_diff(expect[i], oracle::vec(got[i])) < 1e-10);

  SUBCASE("single-filter hand case") {
    ModelConfig one = cfg;
    one.eval.filters1 = 1;
    Model m = make_model(one, false, 2);
    auto k = m.eval->standard.mutable_data();
    k[0] = 1, k[1] = -2, k[2] = 0.5;
    const Tensor in = Tensor::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    // Row [1,2,3], zero-padded: [0*1 + 1*-2 + 2*0.5, 1 - 4 + 1.5, 2 - 6 + 0] = [-1, -1.5, -4].
    const auto f = extract_features(in, *m.eval, one.eval);
    CHECK(f[0].data()[0] == doctest::Approx(elu(-1.0)).epsilon(1e-15));
    CHECK(f[0].data()[1] == doctest::Approx(elu(-1.5)).epsilon(1e-15));
    CHECK(f[0].data()[2] == doctest::Approx(elu(-4.0)).epsilon(1e-15));
  }
}

TEST_CASE("content loss") {
  const ModelConfig cfg = three_by_three();
  const Model model = make_model(cfg, false, 3);
  Rng rng(32);
  const Tensor a = random_tensor({3, 3}, rng, false, -2, 2), b = random_tensor({3, 3}, rng, false, -2, 2);
  CHECK(content_loss(a, a, *model.eval, cfg.eval).item() == 0.0);
  const double ab = content_loss(a, b, *model.eval, cfg.eval).item();
  CHECK(ab > 0.0);
  CHECK(ab == doctest::Approx(content_loss(b, a, *model.eval, cfg.eval).item()).epsilon(1e-14));
  const auto fa = features_oracle(oracle::vec(a), *model.eval, cfg);
  const auto fb = features_oracle(oracle::vec(b), *model.eval, cfg);
  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expect += norm_diff(fa[i], fb[i]) / 3.0;
  CHECK(std::abs(ab - expect) < 1e-10);

  EvalConvConfig sized = cfg.eval;
  sized.normalize_by_size = true;
  double expect_sized = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expect_sized += norm_diff(fa[i], fb[i]) / static_cast<double>(fa[i].size()) / 3.0;
  CHECK(std::abs(content_loss(a, b, *model.eval, sized).item() - expect_sized) < 1e-12);
  CHECK_THROWS_AS(content_loss(a, Tensor::zeros({3, 2}), *model.eval, cfg.eval), ShapeError);
}

TEST_CASE("style loss") {
  const ModelConfig cfg = three_by_three();
  Model model = make_model(cfg, false, 4);
  Rng rng(33);
  const Tensor a = random_tensor({3, 3}, rng, false, -2, 2), b = random_tensor({3, 3}, rng, false, -2, 2);
  CHECK(style_loss(a, a, *model.eval, cfg.eval).item() == 0.0);

  SUBCASE("statistics oracle") {
    const auto fa = features_oracle(oracle::vec(a), *model.eval, cfg);
    const auto fb = features_oracle(oracle::vec(b), *model.eval, cfg);
    const std::size_t maps[3] = {cfg.eval.filters1, cfg.eval.filters1 * cfg.eval.depth, cfg.eval.filters2};
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto [ma, va] = stats(fa[i], maps[i]);
      const auto [mb, vb] = stats(fb[i], maps[i]);
      expect += (norm_diff(ma, mb) + norm_diff(va, vb)) / 3.0;
    }
    CHECK(std::abs(style_loss(a, b, *model.eval, cfg.eval).item() - expect) < 1e-10);
  }

  SUBCASE("band reversal under band-symmetric kernels") {
    for (Tensor k : {model.eval->standard, model.eval->separable_dw}) {
      auto d = k.mutable_data();
      for (std::size_t i = 0; i < d.size(); i += 3) d[i + 2] = d[i];
    }
    const Tensor reversed = Tensor::from({3, 3}, {a.at({0, 2}), a.at({0, 1}), a.at({0, 0}),
                                                  a.at({1, 2}), a.at({1, 1}), a.at({1, 0}),
                                                  a.at({2, 2}), a.at({2, 1}), a.at({2, 0})});
    CHECK(style_loss(reversed, a, *model.eval, cfg.eval).item() < 1e-12);
    CHECK(content_loss(reversed, a, *model.eval, cfg.eval).item() > 1e-3);
  }
}

TEST_CASE("identity loss") {
  const ModelConfig cfg = tiny_model_config();
  const Model model = make_model(cfg, false, 5);
  Rng rng(34);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor xs = random_tensor({2, 4, 3}, rng, false, -3, 3), xt = random_tensor({2, 4, 3}, rng, false, -3, 3);
    const double v = identity_loss(xs, xt, *model.transfer, cfg.transfer, *model.eval, cfg.eval).item();
    CHECK(v >= 0.0);
    // Both self-transfer paths feed the same sample to the two encoders.
    const double ss = content_loss(stylize(xs, xs, *model.transfer, cfg.transfer), xs, *model.eval, cfg.eval).item();
    const double tt = content_loss(stylize(xt, xt, *model.transfer, cfg.transfer), xt, *model.eval, cfg.eval).item();
    CHECK(v == doctest::Approx(ss + tt).epsilon(1e-14));
  }
}

TEST_CASE("frozen evaluator receives no gradient; transfer gradients check out") {
  const ModelConfig cfg = tiny_model_config();
  Model model = make_model(cfg, false, 6);
  CHECK(model.store.count_with_prefix("eval.") == 0);
  Rng rng(35);
  const Tensor xs = random_tensor({2, 4, 3}, rng, false), xt = random_tensor({2, 4, 3}, rng, false);
  const auto& tp = *model.transfer;
  auto loss = [&] {
    const Tensor hat = stylize(xs, xt, tp, cfg.transfer);
    return add(add(content_loss(hat, xs, *model.eval, cfg.eval), style_loss(hat, xt, *model.eval, cfg.eval)),
               identity_loss(xs, xt, tp, cfg.transfer, *model.eval, cfg.eval));
  };
  model.store.zero_grad();
  loss().backward();
  for (const auto& p : model.store.entries()) {
    if (p.name.rfind("eval.", 0) == 0) CHECK(p.tensor.grad().empty());
  }
  std::vector<NamedTensor> named;
  for (const auto& p : model.store.entries())
    if (p.name.rfind("transfer.", 0) == 0) named.push_back({p.name, p.tensor});
  CHECK(grad_check(loss, named).max_relative_error < 1e-4);

  ModelConfig trainable = cfg;
  trainable.eval.frozen = false;
  const Model joint = make_model(trainable, false, 6);
  CHECK(joint.store.count_with_prefix("eval.") == 4);
}
