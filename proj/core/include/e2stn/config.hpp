#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace e2stn {

struct TransferConfig {
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 3;
  std::size_t cnn_hidden = 4;
  /// Divide attention logits by sqrt(head_dim). Off gives unscaled logits.
  bool attn_scale = true;
  /// Residual adds the sublayer's query projection instead of its input.
  bool q_residual = true;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return model_dim / heads; }
};

struct EvalConvConfig {
  std::size_t filters1 = 8;
  std::size_t depth = 2;
  std::size_t filters2 = 16;
  bool elu = true;
  bool frozen = true;
  /// Divide each per-layer distance by the layer's feature count.
  bool normalize_by_size = false;
};

struct ClassifierConfig {
  std::size_t cheb_order = 2;
  std::size_t graph_out = 16;
  std::size_t hidden = 64;
  /// Mix per-band, per-order terms with a trainable map; off sums the powers.
  bool use_theta = true;
  bool row_normalize = true;
  double row_eps = 1e-6;
  double logit_clamp = 40.0;
};

struct ModelConfig {
  std::size_t channels = 16;
  std::size_t bands = 5;
  std::size_t classes = 3;
  TransferConfig transfer;
  EvalConvConfig eval;
  ClassifierConfig classifier;

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lambda = 1.0;
  double nu = 1.0;
  double xi = 1.0;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;
  std::uint64_t seed = 0;
  /// Classifier only, trained on labeled source trials.
  bool ablation = false;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 5.0;
  double val_fraction = 0.1;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 0;
  bool cosine_schedule = false;

  void validate() const;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

/// Canonical JSON text (sorted keys, round-trip doubles).
std::string to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_from_json(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);

/// Small dimensions used for gradient checks and smoke tests:
/// C=4, B=3, m=8, h=2, P=3, K=2.
ModelConfig tiny_model_config();

/// 64-bit FNV-1a over the canonical JSON.
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace e2stn
