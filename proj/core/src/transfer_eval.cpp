#include "e2stn/transfer_eval.hpp"

#include "e2stn/error.hpp"
#include "e2stn/ops.hpp"

namespace e2stn {

namespace {

constexpr double kLayers = 3.0;

Tensor per_sample_norm(const Tensor& diff, std::size_t feature_axes) {
  return l2_norm_last(diff, feature_axes);
}

double size_factor(const Tensor& feature, std::size_t feature_axes, const EvalConvConfig& config) {
  if (!config.normalize_by_size) return 1.0;
  std::size_t n = 1;
  for (std::size_t i = feature.rank() - feature_axes; i < feature.rank(); ++i) n *= feature.shape()[i];
  return 1.0 / static_cast<double>(n);
}

}  // namespace

EvalConvParams make_eval_params(const ModelConfig& config, ParamStore& store, Rng& rng) {
  const auto& e = config.eval;
  const std::size_t c = config.channels;
  const std::size_t fd = e.filters1 * e.depth;
  const bool trainable = !e.frozen;
  EvalConvParams p;
  p.frozen = e.frozen;
  p.standard = store.add("eval.standard", xavier_uniform({e.filters1, 1, 1, 3}, 3, e.filters1 * 3, rng), trainable);
  p.depthwise = store.add("eval.depthwise", xavier_uniform({fd, 1, c, 1}, c, e.depth * c, rng), trainable);
  p.separable_dw = store.add("eval.separable_dw", xavier_uniform({fd, 1, 1, 3}, 3, 3, rng), trainable);
  p.separable_pw = store.add("eval.separable_pw", xavier_uniform({e.filters2, fd, 1, 1}, fd, e.filters2, rng), trainable);
  return p;
}

EvalFeatures extract_features(const Tensor& x, const EvalConvParams& p, const EvalConvConfig& config) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("extract_features expects [C,B] or [N,C,B], got " + to_string(x.shape()));
  if (x.shape()[x.rank() - 2] != p.depthwise.shape()[2]) {
    throw ShapeError("extract_features: input has " + std::to_string(x.shape()[x.rank() - 2]) +
                     " channels, depthwise kernel spans " + std::to_string(p.depthwise.shape()[2]));
  }
  Shape maps = x.shape();
  maps.insert(maps.end() - 2, 1);
  const Padding same{0, 1};
  auto act = [&](const Tensor& t) { return config.elu ? elu(t) : t; };
  Tensor hc = act(conv2d(reshape(x, maps), p.standard, ConvKind::Standard, same));
  Tensor hdc = act(conv2d(hc, p.depthwise, ConvKind::Depthwise));
  Tensor hsc = conv2d(conv2d(hdc, p.separable_dw, ConvKind::Depthwise, same), p.separable_pw, ConvKind::Pointwise);
  return {hc, hdc, hsc};
}

Tensor content_distance(const EvalFeatures& a, const EvalFeatures& b, const EvalConvConfig& config) {
  Tensor total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor term = scale(per_sample_norm(sub(a[i], b[i]), 3), size_factor(a[i], 3, config));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(mean(total), 1.0 / kLayers);
}

Tensor style_distance(const EvalFeatures& a, const EvalFeatures& b, const EvalConvConfig& config) {
  Tensor total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor mu = l2_norm_last(sub(mean_last(a[i], 2), mean_last(b[i], 2)), 1);
    const Tensor var = l2_norm_last(sub(variance_last(a[i], 2), variance_last(b[i], 2)), 1);
    Tensor term = scale(add(mu, var), size_factor(a[i], 3, config));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(mean(total), 1.0 / kLayers);
}

Tensor content_loss(const Tensor& x_hat, const Tensor& x_source, const EvalConvParams& params,
                    const EvalConvConfig& config) {
  if (x_hat.shape() != x_source.shape()) throw ShapeError("content_loss: shape mismatch " + to_string(x_hat.shape()) + " vs " + to_string(x_source.shape()));
  return content_distance(extract_features(x_hat, params, config), extract_features(x_source, params, config), config);
}

Tensor style_loss(const Tensor& x_hat, const Tensor& x_target, const EvalConvParams& params,
                  const EvalConvConfig& config) {
  if (x_hat.shape() != x_target.shape()) throw ShapeError("style_loss: shape mismatch " + to_string(x_hat.shape()) + " vs " + to_string(x_target.shape()));
  return style_distance(extract_features(x_hat, params, config), extract_features(x_target, params, config), config);
}

Tensor identity_loss(const Tensor& x_source, const Tensor& x_target, const TransferParams& transfer,
                     const TransferConfig& transfer_config, const EvalConvParams& params,
                     const EvalConvConfig& config) {
  const Tensor ss = stylize(x_source, x_source, transfer, transfer_config);
  const Tensor tt = stylize(x_target, x_target, transfer, transfer_config);
  return add(content_loss(ss, x_source, params, config), content_loss(tt, x_target, params, config));
}

}  // namespace e2stn
