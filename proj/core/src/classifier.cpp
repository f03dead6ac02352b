#include "e2stn/classifier.hpp"

#include <algorithm>

#include "e2stn/error.hpp"
#include "e2stn/ops.hpp"
#include "json.hpp"

namespace e2stn {

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return reshape(x, {1, x.shape()[0], x.shape()[1]});
  if (x.rank() == 3) return x;
  throw ShapeError("classifier expects [C,B] or [N,C,B], got " + to_string(x.shape()));
}

}  // namespace

std::size_t graph_feature_width(const ModelConfig& config) {
  return config.classifier.use_theta ? config.classifier.graph_out : config.bands;
}

ClassifierParams make_classifier_params(const ModelConfig& config, ParamStore& store, Rng& rng) {
  config.validate();
  const std::size_t c = config.channels;
  const std::size_t b = config.bands;
  const auto& k = config.classifier;
  const std::size_t f = graph_feature_width(config);
  ClassifierParams p;
  p.spatial = store.add("classifier.spatial", xavier_uniform({c, c}, c, c, rng));
  p.frequency = store.add("classifier.frequency", xavier_uniform({b, c * b}, b, c * b, rng));
  p.bias = store.add("classifier.bias", zeros_param({c, b}));
  if (k.use_theta) {
    p.theta = store.add("classifier.theta", xavier_uniform({b * k.cheb_order, f}, b * k.cheb_order, f, rng));
  }
  p.fc1 = store.add("classifier.fc1", xavier_uniform({c * f, k.hidden}, c * f, k.hidden, rng));
  p.fc1_bias = store.add("classifier.fc1_bias", zeros_param({k.hidden}));
  p.fc2 = store.add("classifier.fc2", xavier_uniform({k.hidden, config.classes}, k.hidden, config.classes, rng));
  p.fc2_bias = store.add("classifier.fc2_bias", zeros_param({config.classes}));
  return p;
}

Tensor build_graph(const Tensor& x, const ClassifierParams& p) {
  const std::size_t c = p.spatial.shape()[0];
  const std::size_t b = p.bias.shape()[1];
  if (x.rank() < 2 || x.shape()[x.rank() - 2] != c || x.shape().back() != b) {
    throw ShapeError("build_graph: expected [..," + std::to_string(c) + "," + std::to_string(b) + "], got " +
                     to_string(x.shape()));
  }
  const Tensor raw = relu(matmul(add(matmul(p.spatial, x), p.bias), p.frequency));  // [.., C, C*B]
  Shape blocks(raw.shape().begin(), raw.shape().end() - 1);
  blocks.push_back(b);
  blocks.push_back(c);  // [.., C, B, C]: row i, block b, column j
  const std::size_t lead = blocks.size() - 3;
  std::vector<std::size_t> perm(lead);
  for (std::size_t i = 0; i < lead; ++i) perm[i] = i;
  perm.insert(perm.end(), {lead + 1, lead, lead + 2});
  return permute(reshape(raw, blocks), perm);  // [.., B, C, C]
}

Tensor cheb_conv(const Tensor& x, const Tensor& graph, const ClassifierParams& p, const ClassifierConfig& config) {
  if (config.cheb_order < 1) throw ConfigError("cheb_order must be >= 1");
  const Tensor xb = as_batch(x);
  const std::size_t n = xb.shape()[0];
  const std::size_t c = xb.shape()[1];
  const std::size_t b = xb.shape()[2];
  const Tensor g = graph.rank() == 3 ? reshape(graph, {1, b, c, c}) : graph;
  if (g.shape() != Shape{n, b, c, c}) {
    throw ShapeError("cheb_conv: graph " + to_string(graph.shape()) + " does not match input " + to_string(x.shape()));
  }
  const Tensor adj = config.row_normalize ? normalize_rows(g, config.row_eps) : g;
  const std::size_t order = config.cheb_order;

  std::vector<Tensor> terms;
  terms.push_back(reshape(transpose_last_two(xb), {n, b, c, 1}));
  for (std::size_t k = 1; k < order; ++k) terms.push_back(matmul(adj, terms.back()));

  Tensor out;
  if (config.use_theta) {
    if (!p.theta.defined() || p.theta.shape()[0] != b * order) throw ConfigError("cheb_conv: theta missing or mis-sized");
    const Tensor stacked = concat(terms, -1);                    // [N, B, C, K]
    const Tensor cols = reshape(permute(stacked, {0, 2, 1, 3}), {n, c, b * order});
    out = matmul(cols, p.theta);                                 // [N, C, F]
  } else {
    Tensor acc = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, terms[k]);
    out = transpose_last_two(reshape(acc, {n, b, c}));           // [N, C, B]
  }
  return x.rank() == 2 ? reshape(out, {out.shape()[1], out.shape()[2]}) : out;
}

Tensor graph_features(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config) {
  return cheb_conv(x, build_graph(x, params), params, config);
}

Tensor classifier_logits(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config) {
  const Tensor h = graph_features(as_batch(x), params, config);
  const std::size_t n = h.shape()[0];
  const Tensor flat = reshape(h, {n, h.shape()[1] * h.shape()[2]});
  const Tensor hidden = elu(add(matmul(flat, params.fc1), params.fc1_bias));
  const Tensor logits = add(matmul(hidden, params.fc2), params.fc2_bias);
  return clamp(logits, -config.logit_clamp, config.logit_clamp);
}

Tensor predict(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config) {
  return softmax_rows(classifier_logits(x, params, config));
}

std::string ContributionMap::to_json() const {
  nlohmann::json j;
  j["channels"] = channels;
  j["scores"] = scores;
  return j.dump(2);
}

ContributionMap export_contribution(const std::vector<Tensor>& features, const std::vector<std::string>& channels) {
  if (features.empty()) throw ShapeError("export_contribution: empty sample set");
  const std::size_t c = channels.size();
  std::vector<double> totals(c, 0.0);
  std::size_t count = 0;
  for (const auto& t : features) {
    if (t.rank() < 2 || t.shape()[t.rank() - 2] != c) {
      throw ShapeError("export_contribution: feature shape " + to_string(t.shape()) + " does not have " +
                       std::to_string(c) + " channels");
    }
    const std::size_t f = t.shape().back();
    const std::size_t samples = t.size() / (c * f);
    const auto v = t.data();
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < f; ++j) totals[i] += std::abs(v[(s * c + i) * f + j]) / static_cast<double>(f);
    count += samples;
  }
  for (auto& v : totals) v /= static_cast<double>(count);
  const auto [lo, hi] = std::minmax_element(totals.begin(), totals.end());
  const double min = *lo;
  const double range = *hi - *lo;
  ContributionMap map;
  map.channels = channels;
  map.scores.resize(c);
  for (std::size_t i = 0; i < c; ++i) map.scores[i] = range > 0.0 ? (totals[i] - min) / range : 1.0;
  return map;
}

}  // namespace e2stn
