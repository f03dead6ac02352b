#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "e2stn/classifier.hpp"
#include "e2stn/config.hpp"
#include "e2stn/params.hpp"
#include "e2stn/transfer.hpp"
#include "e2stn/transfer_eval.hpp"

namespace e2stn {

/// Full network. In ablation mode only the classifier exists; the transfer
/// and evaluation modules are never constructed.
struct Model {
  ModelConfig config;
  bool ablation = false;
  ParamStore store;
  std::optional<TransferParams> transfer;
  std::optional<EvalConvParams> eval;
  ClassifierParams classifier;
};

/// Each sub-module draws from its own split of `seed`, so the classifier
/// starts from identical weights in full and ablation models.
Model make_model(const ModelConfig& config, bool ablation, std::uint64_t seed);

using ParamSnapshot = std::vector<std::vector<double>>;
ParamSnapshot snapshot(const ParamStore& store);
void restore(ParamStore& store, const ParamSnapshot& values);

}  // namespace e2stn
