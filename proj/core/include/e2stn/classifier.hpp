#pragma once

#include <string>
#include <vector>

#include "e2stn/config.hpp"
#include "e2stn/params.hpp"
#include "e2stn/tensor.hpp"

namespace e2stn {

/// Dynamic-graph discriminator: per-sample adjacency, polynomial graph
/// filtering, two dense layers and softmax.
struct ClassifierParams {
  Tensor spatial;    // W_s [C, C]
  Tensor frequency;  // W_f [B, C*B]
  Tensor bias;       // [C, B]
  Tensor theta;      // [B*K, F]; undefined in literal (sum-of-powers) mode
  Tensor fc1;        // [C*F, hidden]
  Tensor fc1_bias;   // [hidden]
  Tensor fc2;        // [hidden, P]
  Tensor fc2_bias;   // [P]
};

ClassifierParams make_classifier_params(const ModelConfig& config, ParamStore& store, Rng& rng);

/// Width of H_DG: `graph_out` with the trainable mix, B in literal mode.
std::size_t graph_feature_width(const ModelConfig& config);

/// ReLU((W_s X + bias) W_f), a [C, C*B] block per sample, split into B
/// adjacency matrices: column block b (columns b*C .. b*C+C-1) becomes
/// band b. Returns [.., B, C, C], all entries >= 0.
Tensor build_graph(const Tensor& x, const ClassifierParams& params);

/// For each band b: T_0 = x[:, b], T_k = G_b T_{k-1}, k < K. The B*K
/// columns (index b*K + k) are mixed by theta into [.., C, F]; without
/// theta, powers are summed per band into [.., C, B].
Tensor cheb_conv(const Tensor& x, const Tensor& graph, const ClassifierParams& params,
                 const ClassifierConfig& config);

/// H_DG = cheb_conv(x, build_graph(x)).
Tensor graph_features(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config);

/// Clamped logits [N, P]; an unbatched [C, B] input yields [1, P].
Tensor classifier_logits(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config);

/// Class probabilities [N, P].
Tensor predict(const Tensor& x, const ClassifierParams& params, const ClassifierConfig& config);

struct ContributionMap {
  std::vector<std::string> channels;
  std::vector<double> scores;

  /// {"channels": [...], "scores": [...]}
  std::string to_json() const;
};

/// Mean |H_DG| per channel over samples and feature columns, min-max scaled
/// to [0, 1]. When every channel ties, every score is 1.0.
ContributionMap export_contribution(const std::vector<Tensor>& features, const std::vector<std::string>& channels);

}  // namespace e2stn
