#pragma once

#include <array>

#include "e2stn/config.hpp"
#include "e2stn/params.hpp"
#include "e2stn/tensor.hpp"
#include "e2stn/transfer.hpp"

namespace e2stn {

/// Three-kernel convolutional feature extractor scoring transfer quality.
/// Feature maps are channel-first: [F, H, W] per sample.
struct EvalConvParams {
  Tensor standard;       // [F1, 1, 1, 3]    -> H_c  [F1, C, B]
  Tensor depthwise;      // [F1*D, 1, C, 1]  -> H_dc [F1*D, 1, B]
  Tensor separable_dw;   // [F1*D, 1, 1, 3]
  Tensor separable_pw;   // [F2, F1*D, 1, 1] -> H_sc [F2, 1, B]
  bool frozen = true;
};

/// Registers "eval.*" tensors; when `config.eval.frozen` they never train.
EvalConvParams make_eval_params(const ModelConfig& config, ParamStore& store, Rng& rng);

/// f_1, f_2, f_3 of an input [C, B] or [N, C, B].
using EvalFeatures = std::array<Tensor, 3>;

EvalFeatures extract_features(const Tensor& x, const EvalConvParams& params, const EvalConvConfig& config);

// Feature-level terms; each returns the batch mean of the per-sample value.

/// (1/3) sum_i || f_i(a) - f_i(b) ||_2
Tensor content_distance(const EvalFeatures& a, const EvalFeatures& b, const EvalConvConfig& config);
/// (1/3) sum_i ( ||mu_i(a) - mu_i(b)||_2 + ||var_i(a) - var_i(b)||_2 ), with
/// statistics per feature map pooled over its spatial axes.
Tensor style_distance(const EvalFeatures& a, const EvalFeatures& b, const EvalConvConfig& config);

Tensor content_loss(const Tensor& x_hat, const Tensor& x_source, const EvalConvParams& params,
                    const EvalConvConfig& config);
Tensor style_loss(const Tensor& x_hat, const Tensor& x_target, const EvalConvParams& params,
                  const EvalConvConfig& config);
/// Self-transfer fidelity: stylize(x_s, x_s) should reproduce x_s and
/// stylize(x_t, x_t) should reproduce x_t.
Tensor identity_loss(const Tensor& x_source, const Tensor& x_target, const TransferParams& transfer,
                     const TransferConfig& transfer_config, const EvalConvParams& params,
                     const EvalConvConfig& config);

}  // namespace e2stn
