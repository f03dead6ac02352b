#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "e2stn/classifier.hpp"
#include "e2stn/error.hpp"
#include "e2stn/model.hpp"
#include "e2stn/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace e2stn;
using testutil::random_tensor;

namespace {

ModelConfig small(std::size_t c, std::size_t b, std::size_t k) {
  ModelConfig cfg = tiny_model_config();
  cfg.channels = c;
  cfg.bands = b;
  cfg.classifier.cheb_order = k;
  return cfg;
}

void randomize(Tensor t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& x : t.mutable_data()) x = rng.uniform(lo, hi);
}

std::vector<double> flatten(const std::vector<oracle::Mat>& g) {
  std::vector<double> out;
  for (const auto& m : g)
    for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace

TEST_CASE("build_graph") {
  SUBCASE("zero spatial weights and bias give an empty graph") {
    const ModelConfig cfg = small(4, 3, 2);
    Model m = make_model(cfg, true, 1);
    for (double& v : m.classifier.spatial.mutable_data()) v = 0.0;
    Rng rng(41);
    const Tensor g = build_graph(random_tensor({4, 3}, rng, false, -5, 5), m.classifier);
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("ReLU clamps a negative pre-activation") {
    ClassifierParams p;
    p.spatial = Tensor::from({1, 1}, {1});
    p.bias = Tensor::from({1, 1}, {-3});
    p.frequency = Tensor::from({1, 1}, {1});
    const Tensor g = build_graph(Tensor::from({1, 1}, {2}), p);
    CHECK(g.shape() == Shape{1, 1, 1});
    CHECK(g.item() == 0.0);
  }
  SUBCASE("column-block layout matches the oracle") {
    const ModelConfig cfg = small(3, 3, 2);
    Model m = make_model(cfg, true, 2);
    Rng rng(42);
    randomize(m.classifier.bias, rng);
    const Tensor x = random_tensor({3, 3}, rng, false, -2, 2);
    const auto expect = flatten(oracle::build_graph(oracle::mat(x), m.classifier));
    CHECK(oracle::max_abs_diff(expect, oracle::vec(build_graph(x, m.classifier))) < 1e-12);
  }
  SUBCASE("entries are nonnegative on random inputs and parameters") {
    const ModelConfig cfg = tiny_model_config();
    Model m = make_model(cfg, true, 3);
    Rng rng(43);
    for (int i = 0; i < 200; ++i) {
      for (Tensor t : {m.classifier.spatial, m.classifier.frequency, m.classifier.bias}) randomize(t, rng, -3, 3);
      const Tensor g = build_graph(random_tensor({5, 4, 3}, rng, false, -10, 10), m.classifier);
      for (double v : g.data()) REQUIRE(v >= 0.0);
    }
  }
  SUBCASE("shape mismatch") {
    const Model m = make_model(tiny_model_config(), true, 4);
    CHECK_THROWS_AS(build_graph(Tensor::zeros({3, 3}), m.classifier), ShapeError);
  }
}

TEST_CASE("cheb_conv") {
  Rng rng(44);
  SUBCASE("explicit-powers oracle over orders, theta modes and normalization") {
    for (std::size_t k : {1u, 2u, 3u})
      for (bool theta : {true, false})
        for (bool norm : {true, false}) {
          ModelConfig cfg = small(3, 3, k);
          cfg.classifier.use_theta = theta;
          cfg.classifier.row_normalize = norm;
          Model m = make_model(cfg, true, 5);
          randomize(m.classifier.bias, rng);
          const Tensor x = random_tensor({3, 3}, rng, false);
          const Tensor g = build_graph(x, m.classifier);
          const auto expect = oracle::cheb_conv(oracle::mat(x), oracle::build_graph(oracle::mat(x), m.classifier),
                                                m.classifier, cfg.classifier);
          CHECK(oracle::max_abs_diff(expect, oracle::vec(cheb_conv(x, g, m.classifier, cfg.classifier))) < 1e-10);
        }
  }
  SUBCASE("C=2, B=1, K=2 hand case") {
    ModelConfig cfg = small(2, 1, 2);
    cfg.classifier.use_theta = false;
    cfg.classifier.row_normalize = false;
    const Model m = make_model(cfg, true, 6);
    const Tensor x = Tensor::from({2, 1}, {1, 2});
    const Tensor g = Tensor::from({1, 2, 2}, {0, 1, 3, 0.5});
    // x + G x = [1 + 2, 2 + (3 + 1)].
    const Tensor h = cheb_conv(x, g, m.classifier, cfg.classifier);
    CHECK(h.data()[0] == 3.0);
    CHECK(h.data()[1] == 6.0);
  }
  SUBCASE("K=1 ignores the graph; an empty graph at K=2 equals K=1") {
    ModelConfig k1 = small(4, 3, 1);
    const Model m1 = make_model(k1, true, 7);
    const Tensor x = random_tensor({4, 3}, rng, false);
    const Tensor ref = cheb_conv(x, Tensor::zeros({3, 4, 4}), m1.classifier, k1.classifier);
    for (int i = 0; i < 20; ++i) {
      const Tensor g = random_tensor({3, 4, 4}, rng, false, 0, 5);
      CHECK(oracle::vec(cheb_conv(x, g, m1.classifier, k1.classifier)) == oracle::vec(ref));
    }
    ModelConfig k2 = small(4, 3, 2);
    k2.classifier.use_theta = false;
    k1.classifier.use_theta = false;
    const Model m2 = make_model(k2, true, 7);
    CHECK(oracle::vec(cheb_conv(x, Tensor::zeros({3, 4, 4}), m2.classifier, k2.classifier)) ==
          oracle::vec(cheb_conv(x, Tensor::zeros({3, 4, 4}), m1.classifier, k1.classifier)));
  }
  SUBCASE("order below one is a configuration error") {
    ModelConfig cfg = small(4, 3, 2);
    const Model m = make_model(cfg, true, 8);
    cfg.classifier.cheb_order = 0;
    CHECK_THROWS_AS(cheb_conv(Tensor::zeros({4, 3}), Tensor::zeros({3, 4, 4}), m.classifier, cfg.classifier),
                    ConfigError);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("predict") {
  const ModelConfig cfg = tiny_model_config();
  Model m = make_model(cfg, true, 9);
  Rng rng(45);
  const Tensor x = random_tensor({6, 4, 3}, rng, false, -3, 3);
  const Tensor p = predict(x, m.classifier, cfg.classifier);
  CHECK(p.shape() == Shape{6, 3});
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += p.data()[r * 3 + j];
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK(oracle::vec(predict(x, m.classifier, cfg.classifier)) == oracle::vec(p));

  const Tensor logits = classifier_logits(x, m.classifier, cfg.classifier);
  for (std::size_t r = 0; r < 6; ++r) {
    std::size_t al = 0, ap = 0;
    for (std::size_t j = 1; j < 3; ++j) {
      if (logits.data()[r * 3 + j] > logits.data()[r * 3 + al]) al = j;
      if (p.data()[r * 3 + j] > p.data()[r * 3 + ap]) ap = j;
    }
    CHECK(al == ap);
  }

  // Oracle for the head: flatten H_DG, FC1, ELU, FC2, clamp, softmax.
  const Tensor one = random_tensor({4, 3}, rng, false);
  const auto h = oracle::cheb_conv(oracle::mat(one), oracle::build_graph(oracle::mat(one), m.classifier), m.classifier,
                                   cfg.classifier);
  oracle::Mat flat(1);
  for (const auto& r : h) flat[0].insert(flat[0].end(), r.begin(), r.end());
  auto hidden = oracle::add_row(oracle::matmul(flat, oracle::mat(m.classifier.fc1)), oracle::vec(m.classifier.fc1_bias));
  for (double& v : hidden[0]) v = v > 0 ? v : std::expm1(v);
  auto logit = oracle::add_row(oracle::matmul(hidden, oracle::mat(m.classifier.fc2)), oracle::vec(m.classifier.fc2_bias));
  for (double& v : logit[0]) v = std::clamp(v, -40.0, 40.0);
  CHECK(oracle::max_abs_diff(oracle::softmax_rows(logit), oracle::vec(predict(one, m.classifier, cfg.classifier))) < 1e-12);

  for (auto& e : m.store.entries())
    for (double& v : e.tensor.mutable_data()) v = 0.0;
  const Tensor flat_p = predict(x, m.classifier, cfg.classifier);
  for (double v : flat_p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("gradient through graph, filter, head and cross-entropy") {
  const ModelConfig cfg = tiny_model_config();
  const Model m = make_model(cfg, true, 10);
  Rng rng(46);
  const Tensor x = random_tensor({2, 4, 3}, rng, true);
  const Tensor y = one_hot({0, 2}, 3);
  std::vector<NamedTensor> named{{"x", x}};
  for (const auto& p : m.store.entries()) named.push_back({p.name, p.tensor});
  CHECK(grad_check([&] { return cross_entropy(predict(x, m.classifier, cfg.classifier), y); }, named).max_relative_error <
        1e-4);
}

TEST_CASE("export_contribution") {
  const std::vector<std::string> names{"Fp1", "Fp2", "Cz"};
  SUBCASE("zero channel scores 0, hand-computed means") {
    const Tensor h = Tensor::from({3, 2}, {0, 0, 1, -3, 2, 2});
    const auto map = export_contribution({h}, names);
    // Means of |.|: 0, 2, 2 -> min-max [0, 1, 1].
    CHECK(map.scores == std::vector<double>{0.0, 1.0, 1.0});
    CHECK(map.channels == names);
  }
  SUBCASE("batches average across samples") {
    const Tensor a = Tensor::from({2, 3, 1}, {1, 2, 4, 3, 2, 0});
    const auto map = export_contribution({a}, names);
    // Means: 2, 2, 2 -> all tie.
    CHECK(map.scores == std::vector<double>{1.0, 1.0, 1.0});
    const Tensor b = Tensor::from({3, 1}, {0, 3, 6});
    const auto m2 = export_contribution({a, b}, names);
    // Means over 3 samples: 4/3, 7/3, 10/3.
    CHECK(m2.scores[0] == 0.0);
    CHECK(m2.scores[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(m2.scores[2] == 1.0);
  }
  SUBCASE("errors and JSON") {
    CHECK_THROWS_AS(export_contribution({}, names), ShapeError);
    CHECK_THROWS_AS(export_contribution({Tensor::zeros({2, 2})}, names), ShapeError);
    const auto json = export_contribution({Tensor::from({3, 1}, {1, 2, 3})}, names).to_json();
    CHECK(json.find("\"channels\"") != std::string::npos);
    CHECK(json.find("\"scores\"") != std::string::npos);
  }
}
