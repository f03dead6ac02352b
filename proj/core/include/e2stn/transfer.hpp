#pragma once

#include <string>
#include <vector>

#include "e2stn/config.hpp"
#include "e2stn/params.hpp"
#include "e2stn/tensor.hpp"

namespace e2stn {

// Inputs are feature matrices [C, B] or batches [N, C, B]; every function
// here maps leading batch axes through unchanged.

struct AttentionProjections {
  Tensor query;   // [in, m]
  Tensor key;     // [in, m]
  Tensor value;   // [in, m]
  Tensor output;  // [m, m]
};

struct FeedForwardParams {
  Tensor w1;  // [m, d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff, m]
  Tensor b2;  // [m]
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct EncoderLayerParams {
  AttentionProjections attention;
  FeedForwardParams ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
};

/// One independent instance per domain.
struct EncoderParams {
  std::vector<EncoderLayerParams> layers;
};

struct DecoderLayerParams {
  AttentionProjections self_attention;
  AttentionProjections cross_attention;
  FeedForwardParams ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  LayerNormParams norm3;
};

struct DecoderParams {
  std::vector<DecoderLayerParams> layers;
};

/// Width projection m -> B, then two (1,3) same-padded convolutions over
/// the band axis (1 -> hidden -> 1 feature maps).
struct CnnDecoderParams {
  Tensor projection;       // [m, B]
  Tensor projection_bias;  // [B]
  Tensor conv1;            // [hidden, 1, 1, 3]
  Tensor conv1_bias;       // [hidden]
  Tensor conv2;            // [1, hidden, 1, 3]
  Tensor conv2_bias;       // [1]
};

struct TransferParams {
  EncoderParams source;
  EncoderParams target;
  DecoderParams decoder;
  CnnDecoderParams cnn;
};

/// Registers every transfer tensor under "transfer.*" in `store`.
TransferParams make_transfer_params(const ModelConfig& config, ParamStore& store, Rng& rng);

/// Collects the softmax matrices [.., h, C, C] produced during a forward pass.
struct AttentionTrace {
  std::vector<Tensor> probabilities;
};

/// Per-head softmax(Q_i K_i^T / sqrt(p)) V_i with heads concatenated back to
/// [.., C, m]; the output projection is applied by the caller.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool scaled = true,
                 AttentionTrace* trace = nullptr);

struct MultiHeadResult {
  Tensor output;  // heads projected by W_O
  Tensor query;   // Q projection, used by the query residual
};

MultiHeadResult multi_head_attention(const Tensor& query_input, const Tensor& key_value_input,
                                     const AttentionProjections& weights, const TransferConfig& config,
                                     AttentionTrace* trace = nullptr);

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

/// Domain encoder: [.., C, B] -> [.., C, m].
Tensor encode(const Tensor& x, const EncoderParams& params, const TransferConfig& config,
              AttentionTrace* trace = nullptr);

/// One decoder layer: self-attention on the query stream, cross-attention
/// against target features, then FFN; each followed by add & norm.
Tensor decoder_layer(const Tensor& stream, const Tensor& target_features, const DecoderLayerParams& p,
                     const TransferConfig& config, AttentionTrace* trace = nullptr);

/// Stacked decoder: the stream starts at the source features and keys/values
/// are always derived from the target features.
Tensor decode(const Tensor& source_features, const Tensor& target_features, const DecoderParams& params,
              const TransferConfig& config, AttentionTrace* trace = nullptr);

/// [.., C, m] -> [.., C, B].
Tensor reconstruct(const Tensor& h, const CnnDecoderParams& params);

/// reconstruct(decode(encode(x_s, source), encode(x_t, target))).
Tensor stylize(const Tensor& x_source, const Tensor& x_target, const TransferParams& params,
               const TransferConfig& config, AttentionTrace* trace = nullptr);

}  // namespace e2stn
