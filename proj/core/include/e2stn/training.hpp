#pragma once

#include <functional>
#include <vector>

#include "e2stn/config.hpp"
#include "e2stn/dataset.hpp"
#include "e2stn/model.hpp"
#include "e2stn/random.hpp"

namespace e2stn {

/// Labeled source mini-batch: features [N, C, B] and class indices.
struct SourceBatch {
  Tensor features;
  std::vector<std::size_t> labels;
};

struct JointLoss {
  Tensor total;
  Tensor content;
  Tensor style;
  Tensor identity;
  Tensor ce;
};

struct LossValues {
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
  double identity = 0.0;
  double ce = 0.0;
};

LossValues values_of(const JointLoss& loss);

/// L = L_c + lambda L_s + nu L_id + xi L_ce. L_ce averages the cross-entropy
/// of predictions on the source batch and on its stylized counterpart, both
/// scored against the source labels. Target features are positionally
/// paired with the source batch and carry no labels.
///
/// For an ablation model the target is ignored and L = L_ce on the source
/// batch alone; the other components are zero.
JointLoss joint_loss(const Model& model, const SourceBatch& source, const Tensor& target, const TrainConfig& config);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every trainable tensor in `store` with rate `lr`.
  void step(ParamStore& store, double lr);

  std::size_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

  // Moment buffers aligned with store.entries(); empty for frozen entries.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t steps) { steps_ = steps; }
  void ensure_state(const ParamStore& store);

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct StepMetrics {
  LossValues loss;
  double grad_norm = 0.0;  // before clipping
};

/// Zero grads, build the joint loss, backpropagate, clip to the global norm
/// and apply one Adam update. Throws NumericError with the component values
/// when the loss or a gradient is non-finite.
StepMetrics train_step(Model& model, Adam& adam, const SourceBatch& source, const Tensor& target,
                       const TrainConfig& config, double learning_rate);

/// Rescales all trainable gradients so their joint L2 norm is at most
/// `max_norm`; returns the norm before scaling.
double clip_grad_norm(ParamStore& store, double max_norm);

struct BatchIndices {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// One epoch of batches. Source indices are a fresh permutation (each trial
/// exactly once); target indices are drawn uniformly with replacement and
/// paired positionally. `target_count == 0` yields source-only batches.
std::vector<BatchIndices> pair_batches(std::size_t source_count, std::size_t target_count, std::size_t batch_size,
                                       Rng& rng);

struct MetricRow {
  std::size_t epoch = 0;
  LossValues loss;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> trace;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  bool stopped_early = false;
};

struct TrainState {
  Adam adam;
  Rng rng;
  std::size_t epoch = 0;
};

/// Splits `val_fraction` of the source trials off for validation, then runs
/// `config.epochs` epochs of train_step. With patience > 0 training stops
/// after that many epochs without validation improvement and the best
/// parameters are restored. `on_epoch` is called after every epoch.
TrainResult train(Model& model, TrainState& state, const std::vector<LabeledTrial>& source, const TargetPool& target,
                  const TrainConfig& config, const std::function<void(const MetricRow&)>& on_epoch = {});

/// Fraction of trials whose argmax prediction matches the label.
double accuracy(const Model& model, const std::vector<LabeledTrial>& trials, const std::vector<std::size_t>& indices);

/// Argmax predictions in batches of `batch_size`.
std::vector<std::size_t> predict_labels(const Model& model, const std::vector<const FeatureMatrix*>& rows,
                                        std::size_t batch_size = 256);

}  // namespace e2stn
