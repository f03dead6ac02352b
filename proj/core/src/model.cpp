#include "e2stn/model.hpp"

#include <algorithm>

#include "e2stn/error.hpp"

namespace e2stn {

Model make_model(const ModelConfig& config, bool ablation, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.ablation = ablation;
  const Rng root(seed);
  if (!ablation) {
    Rng transfer_rng = root.split(101);
    Rng eval_rng = root.split(102);
    m.transfer = make_transfer_params(config, m.store, transfer_rng);
    m.eval = make_eval_params(config, m.store, eval_rng);
  }
  Rng classifier_rng = root.split(103);
  m.classifier = make_classifier_params(config, m.store, classifier_rng);
  return m;
}

ParamSnapshot snapshot(const ParamStore& store) {
  ParamSnapshot s;
  for (const auto& p : store.entries()) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

void restore(ParamStore& store, const ParamSnapshot& values) {
  auto& entries = store.entries();
  if (values.size() != entries.size()) throw ShapeError("restore: snapshot does not match parameter store");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto dst = entries[i].tensor.mutable_data();
    if (dst.size() != values[i].size()) throw ShapeError("restore: size mismatch for '" + entries[i].name + "'");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace e2stn
