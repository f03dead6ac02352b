#include "e2stn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "e2stn/error.hpp"
#include "e2stn/ops.hpp"

namespace e2stn {

namespace {

EvalFeatures slice_features(const EvalFeatures& f, std::size_t start, std::size_t n) {
  return {slice(f[0], 0, start, n), slice(f[1], 0, start, n), slice(f[2], 0, start, n)};
}

std::string describe(const LossValues& v) {
  std::ostringstream os;
  os << "L=" << v.total << " L_c=" << v.content << " L_s=" << v.style << " L_id=" << v.identity << " L_ce=" << v.ce;
  return os.str();
}

}  // namespace

LossValues values_of(const JointLoss& loss) {
  auto val = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  return {val(loss.total), val(loss.content), val(loss.style), val(loss.identity), val(loss.ce)};
}

JointLoss joint_loss(const Model& model, const SourceBatch& source, const Tensor& target, const TrainConfig& config) {
  const Tensor& xs = source.features;
  if (xs.rank() != 3) throw ShapeError("joint_loss: source batch must be [N,C,B], got " + to_string(xs.shape()));
  const std::size_t n = xs.shape()[0];
  if (source.labels.size() != n) throw ShapeError("joint_loss: label count does not match batch size");
  const auto& cfg = model.config;
  const Tensor labels = one_hot(source.labels, cfg.classes);

  JointLoss out;
  if (model.ablation) {
    out.ce = cross_entropy(predict(xs, model.classifier, cfg.classifier), labels);
    out.content = out.style = out.identity = Tensor::scalar(0.0);
    out.total = out.ce;
    return out;
  }
  if (target.shape() != xs.shape()) {
    throw ShapeError("joint_loss: target batch " + to_string(target.shape()) + " does not pair with source " +
                     to_string(xs.shape()));
  }
  const auto& tp = *model.transfer;
  const auto& tc = cfg.transfer;
  const Tensor& xt = target;

  // Shared encodings; the decoder then runs once over three stacked pairs:
  // (source | target) -> X_hat_s, (source | source) -> X_hat_ss,
  // (target | target) -> X_hat_tt.
  const Tensor src_by_src = encode(xs, tp.source, tc);
  const Tensor tgt_by_tgt = encode(xt, tp.target, tc);
  const Tensor src_by_tgt = encode(xs, tp.target, tc);
  const Tensor tgt_by_src = encode(xt, tp.source, tc);
  const Tensor queries = concat({src_by_src, src_by_src, tgt_by_src}, 0);
  const Tensor keys = concat({tgt_by_tgt, src_by_tgt, tgt_by_tgt}, 0);
  const Tensor generated = reconstruct(decode(queries, keys, tp.decoder, tc), tp.cnn);
  const Tensor stylized = slice(generated, 0, 0, n);

  const auto& ep = *model.eval;
  const auto gen_features = extract_features(generated, ep, cfg.eval);
  const auto real_features = extract_features(concat({xs, xt}, 0), ep, cfg.eval);
  const auto f_stylized = slice_features(gen_features, 0, n);
  const auto f_self_source = slice_features(gen_features, n, n);
  const auto f_self_target = slice_features(gen_features, 2 * n, n);
  const auto f_source = slice_features(real_features, 0, n);
  const auto f_target = slice_features(real_features, n, n);

  out.content = content_distance(f_stylized, f_source, cfg.eval);
  out.style = style_distance(f_stylized, f_target, cfg.eval);
  out.identity = add(content_distance(f_self_source, f_source, cfg.eval),
                     content_distance(f_self_target, f_target, cfg.eval));

  std::vector<std::size_t> doubled = source.labels;
  doubled.insert(doubled.end(), source.labels.begin(), source.labels.end());
  out.ce = cross_entropy(predict(concat({xs, stylized}, 0), model.classifier, cfg.classifier),
                         one_hot(doubled, cfg.classes));

  out.total = add(add(add(out.content, scale(out.style, config.lambda)), scale(out.identity, config.nu)),
                  scale(out.ce, config.xi));
  return out;
}

void Adam::ensure_state(const ParamStore& store) {
  const auto& entries = store.entries();
  if (m_.size() == entries.size()) return;
  m_.assign(entries.size(), {});
  v_.assign(entries.size(), {});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    m_[i].assign(entries[i].tensor.size(), 0.0);
    v_[i].assign(entries[i].tensor.size(), 0.0);
  }
}

void Adam::step(ParamStore& store, double lr) {
  ensure_state(store);
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  auto& entries = store.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    auto& tensor = entries[i].tensor;
    const auto g = tensor.grad();
    if (g.empty()) continue;
    auto w = tensor.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
    }
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.entries()) {
    if (!p.trainable) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : store.entries()) {
      if (!p.trainable || p.tensor.grad().empty()) continue;
      // grad() is read-only for callers; the store owns the leaf, so scale in place.
      auto& g = p.tensor.node().grad;
      for (double& x : g) x *= factor;
    }
  }
  return norm;
}

StepMetrics train_step(Model& model, Adam& adam, const SourceBatch& source, const Tensor& target,
                       const TrainConfig& config, double learning_rate) {
  model.store.zero_grad();
  JointLoss loss;
  try {
    loss = joint_loss(model, source, target, config);
  } catch (const NumericError& e) {
    throw NumericError(std::string("non-finite loss during training step: ") + e.what());
  }
  StepMetrics metrics;
  metrics.loss = values_of(loss);
  loss.total.backward();
  metrics.grad_norm = clip_grad_norm(model.store, config.clip_norm);
  if (!std::isfinite(metrics.grad_norm)) {
    throw NumericError("non-finite gradient norm; components: " + describe(metrics.loss));
  }
  adam.step(model.store, learning_rate);
  return metrics;
}

std::vector<BatchIndices> pair_batches(std::size_t source_count, std::size_t target_count, std::size_t batch_size,
                                       Rng& rng) {
  if (source_count == 0) throw ShapeError("pair_batches: empty source pool");
  if (batch_size == 0) throw ConfigError("pair_batches: batch_size must be >= 1");
  const auto order = permutation(source_count, rng);
  std::vector<BatchIndices> batches;
  for (std::size_t start = 0; start < source_count; start += batch_size) {
    BatchIndices b;
    const std::size_t end = std::min(source_count, start + batch_size);
    b.source.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    if (target_count > 0) {
      for (std::size_t i = start; i < end; ++i) b.target.push_back(rng.below(target_count));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<std::size_t> predict_labels(const Model& model, const std::vector<const FeatureMatrix*>& rows,
                                        std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t end = std::min(rows.size(), start + batch_size);
    const std::vector<const FeatureMatrix*> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                                  rows.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor logits = classifier_logits(stack_features(chunk), model.classifier, model.config.classifier);
    const std::size_t p = logits.shape()[1];
    const auto v = logits.data();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto row = v.subspan(i * p, p);
      out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double accuracy(const Model& model, const std::vector<LabeledTrial>& trials, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  std::vector<const FeatureMatrix*> rows;
  for (auto i : indices) rows.push_back(&trials.at(i).features);
  const auto pred = predict_labels(model, rows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) correct += pred[i] == trials[indices[i]].label;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

TrainResult train(Model& model, TrainState& state, const std::vector<LabeledTrial>& source, const TargetPool& target,
                  const TrainConfig& config, const std::function<void(const MetricRow&)>& on_epoch) {
  config.validate();
  if (source.empty()) throw ShapeError("train: empty source set");
  if (!model.ablation && target.empty()) throw ShapeError("train: empty target pool");
  if (model.ablation && model.store.count_with_prefix("transfer.") != 0) {
    throw ConfigError("train: ablation model must not own transfer parameters");
  }

  // Fixed validation split drawn from the run's generator.
  Rng split_rng = state.rng.split(7);
  const auto order = permutation(source.size(), split_rng);
  std::size_t val_count = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(source.size())));
  if (val_count >= source.size()) val_count = source.size() - 1;
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
  const std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());

  TrainResult result;
  ParamSnapshot best;
  double best_val = -1.0;
  std::size_t since_best = 0;
  const std::size_t target_count = model.ablation ? 0 : target.size();

  for (std::size_t e = 0; e < config.epochs; ++e) {
    double lr = config.adam.learning_rate;
    if (config.cosine_schedule && config.epochs > 1) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / static_cast<double>(config.epochs)));
    }
    const auto batches = pair_batches(train_idx.size(), target_count, config.batch_size, state.rng);
    MetricRow row;
    row.epoch = state.epoch + 1;
    for (const auto& b : batches) {
      SourceBatch sb;
      std::vector<std::size_t> picked;
      for (auto i : b.source) {
        picked.push_back(train_idx[i]);
        sb.labels.push_back(source[train_idx[i]].label);
      }
      sb.features = stack_features(source, picked);
      const Tensor tb = model.ablation ? Tensor() : stack_features(target, b.target);
      const auto m = train_step(model, state.adam, sb, tb, config, lr);
      const double w = static_cast<double>(b.source.size()) / static_cast<double>(train_idx.size());
      row.loss.total += w * m.loss.total;
      row.loss.content += w * m.loss.content;
      row.loss.style += w * m.loss.style;
      row.loss.identity += w * m.loss.identity;
      row.loss.ce += w * m.loss.ce;
    }
    ++state.epoch;
    row.val_acc = val_idx.empty() ? 0.0 : accuracy(model, source, val_idx);
    result.trace.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_acc > best_val) {
      best_val = row.val_acc;
      result.best_epoch = row.epoch;
      since_best = 0;
      if (config.patience > 0) best = snapshot(model.store);
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (config.patience > 0 && !best.empty()) restore(model.store, best);
  result.best_val_acc = std::max(best_val, 0.0);
  return result;
}

}  // namespace e2stn
