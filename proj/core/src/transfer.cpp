#include "e2stn/transfer.hpp"

#include <cmath>

#include "e2stn/error.hpp"
#include "e2stn/ops.hpp"

namespace e2stn {

namespace {

AttentionProjections make_projections(const std::string& prefix, std::size_t in, std::size_t m, ParamStore& store,
                                      Rng& rng) {
  AttentionProjections p;
  p.query = store.add(prefix + ".wq", xavier_uniform({in, m}, in, m, rng));
  p.key = store.add(prefix + ".wk", xavier_uniform({in, m}, in, m, rng));
  p.value = store.add(prefix + ".wv", xavier_uniform({in, m}, in, m, rng));
  p.output = store.add(prefix + ".wo", xavier_uniform({m, m}, m, m, rng));
  return p;
}

FeedForwardParams make_ffn(const std::string& prefix, std::size_t m, std::size_t hidden, ParamStore& store,
                           Rng& rng) {
  FeedForwardParams p;
  p.w1 = store.add(prefix + ".w1", xavier_uniform({m, hidden}, m, hidden, rng));
  p.b1 = store.add(prefix + ".b1", zeros_param({hidden}));
  p.w2 = store.add(prefix + ".w2", xavier_uniform({hidden, m}, hidden, m, rng));
  p.b2 = store.add(prefix + ".b2", zeros_param({m}));
  return p;
}

LayerNormParams make_norm(const std::string& prefix, std::size_t m, ParamStore& store) {
  return {store.add(prefix + ".gamma", ones_param({m})), store.add(prefix + ".beta", zeros_param({m}))};
}

EncoderParams make_encoder(const std::string& prefix, const ModelConfig& c, ParamStore& store, Rng& rng) {
  const auto& t = c.transfer;
  EncoderParams e;
  for (std::size_t l = 0; l < t.encoder_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    const std::size_t in = l == 0 ? c.bands : t.model_dim;
    EncoderLayerParams layer;
    layer.attention = make_projections(p + ".attn", in, t.model_dim, store, rng);
    layer.ffn = make_ffn(p + ".ffn", t.model_dim, t.ffn_dim, store, rng);
    layer.norm1 = make_norm(p + ".norm1", t.model_dim, store);
    layer.norm2 = make_norm(p + ".norm2", t.model_dim, store);
    e.layers.push_back(std::move(layer));
  }
  return e;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps) { return e2stn::layer_norm(x, p.gamma, p.beta, eps); }

void require_last_dim(const Tensor& x, std::size_t expected, const char* what) {
  if (x.rank() < 2 || x.shape().back() != expected) {
    throw ShapeError(std::string(what) + ": expected last axis " + std::to_string(expected) + ", got shape " +
                     to_string(x.shape()));
  }
}

}  // namespace

TransferParams make_transfer_params(const ModelConfig& config, ParamStore& store, Rng& rng) {
  config.validate();
  const auto& t = config.transfer;
  TransferParams p;
  p.source = make_encoder("transfer.encoder_source", config, store, rng);
  p.target = make_encoder("transfer.encoder_target", config, store, rng);
  for (std::size_t l = 0; l < t.decoder_layers; ++l) {
    const std::string prefix = "transfer.decoder.layer" + std::to_string(l);
    DecoderLayerParams layer;
    layer.self_attention = make_projections(prefix + ".self", t.model_dim, t.model_dim, store, rng);
    layer.cross_attention = make_projections(prefix + ".cross", t.model_dim, t.model_dim, store, rng);
    layer.ffn = make_ffn(prefix + ".ffn", t.model_dim, t.ffn_dim, store, rng);
    layer.norm1 = make_norm(prefix + ".norm1", t.model_dim, store);
    layer.norm2 = make_norm(prefix + ".norm2", t.model_dim, store);
    layer.norm3 = make_norm(prefix + ".norm3", t.model_dim, store);
    p.decoder.layers.push_back(std::move(layer));
  }
  const std::size_t m = t.model_dim;
  const std::size_t b = config.bands;
  const std::size_t hid = t.cnn_hidden;
  p.cnn.projection = store.add("transfer.cnn.projection", xavier_uniform({m, b}, m, b, rng));
  p.cnn.projection_bias = store.add("transfer.cnn.projection_bias", zeros_param({b}));
  p.cnn.conv1 = store.add("transfer.cnn.conv1", xavier_uniform({hid, 1, 1, 3}, 3, hid * 3, rng));
  p.cnn.conv1_bias = store.add("transfer.cnn.conv1_bias", zeros_param({hid}));
  p.cnn.conv2 = store.add("transfer.cnn.conv2", xavier_uniform({1, hid, 1, 3}, hid * 3, 3, rng));
  p.cnn.conv2_bias = store.add("transfer.cnn.conv2_bias", zeros_param({1}));
  return p;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool scaled,
                 AttentionTrace* trace) {
  if (q.shape() != v.shape() || k.shape() != v.shape()) {
    throw ShapeError("attention: Q, K, V shapes differ: " + to_string(q.shape()) + ", " + to_string(k.shape()) +
                     ", " + to_string(v.shape()));
  }
  const Tensor qh = split_heads(q, heads);
  const Tensor kh = split_heads(k, heads);
  const Tensor vh = split_heads(v, heads);
  Tensor logits = matmul(qh, transpose_last_two(kh));
  if (scaled) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(qh.shape().back())));
  const Tensor probs = softmax_rows(logits);
  if (trace) trace->probabilities.push_back(probs);
  return merge_heads(matmul(probs, vh));
}

MultiHeadResult multi_head_attention(const Tensor& query_input, const Tensor& key_value_input,
                                     const AttentionProjections& w, const TransferConfig& config,
                                     AttentionTrace* trace) {
  MultiHeadResult r;
  r.query = matmul(query_input, w.query);
  const Tensor k = matmul(key_value_input, w.key);
  const Tensor v = matmul(key_value_input, w.value);
  r.output = matmul(attention(r.query, k, v, config.heads, config.attn_scale, trace), w.output);
  return r;
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor encode(const Tensor& x, const EncoderParams& params, const TransferConfig& config, AttentionTrace* trace) {
  Tensor h = x;
  bool first = true;
  for (const auto& layer : params.layers) {
    require_last_dim(h, layer.attention.query.shape()[0], "encode");
    const auto mha = multi_head_attention(h, h, layer.attention, config, trace);
    // The first layer's input is B wide, so only the Q residual fits there.
    const Tensor& residual = (config.q_residual || first) ? mha.query : h;
    const Tensor h1 = layer_norm(add(mha.output, residual), layer.norm1, config.ln_eps);
    h = layer_norm(add(feed_forward(h1, layer.ffn), h1), layer.norm2, config.ln_eps);
    first = false;
  }
  return h;
}

Tensor decoder_layer(const Tensor& stream, const Tensor& target_features, const DecoderLayerParams& p,
                     const TransferConfig& config, AttentionTrace* trace) {
  const auto self = multi_head_attention(stream, stream, p.self_attention, config, trace);
  const Tensor s1 = layer_norm(add(self.output, config.q_residual ? self.query : stream), p.norm1, config.ln_eps);
  const auto cross = multi_head_attention(s1, target_features, p.cross_attention, config, trace);
  const Tensor s2 = layer_norm(add(cross.output, config.q_residual ? cross.query : s1), p.norm2, config.ln_eps);
  return layer_norm(add(feed_forward(s2, p.ffn), s2), p.norm3, config.ln_eps);
}

Tensor decode(const Tensor& source_features, const Tensor& target_features, const DecoderParams& params,
              const TransferConfig& config, AttentionTrace* trace) {
  if (source_features.shape() != target_features.shape()) {
    throw ShapeError("decode: source features " + to_string(source_features.shape()) +
                     " and target features " + to_string(target_features.shape()) + " differ");
  }
  require_last_dim(source_features, config.model_dim, "decode");
  Tensor h = source_features;
  for (const auto& layer : params.layers) h = decoder_layer(h, target_features, layer, config, trace);
  return h;
}

Tensor reconstruct(const Tensor& h, const CnnDecoderParams& p) {
  if (h.rank() != 2 && h.rank() != 3) throw ShapeError("reconstruct expects [C,m] or [N,C,m], got " + to_string(h.shape()));
  require_last_dim(h, p.projection.shape()[0], "reconstruct");
  const Tensor z = add(matmul(h, p.projection), p.projection_bias);  // [.., C, B]
  Shape maps = z.shape();
  maps.insert(maps.end() - 2, 1);  // single feature map
  const Padding same{0, 1};
  const Tensor c1 = elu(conv2d(reshape(z, maps), p.conv1, ConvKind::Standard, same, p.conv1_bias));
  const Tensor c2 = conv2d(c1, p.conv2, ConvKind::Standard, same, p.conv2_bias);
  return reshape(c2, z.shape());
}

Tensor stylize(const Tensor& x_source, const Tensor& x_target, const TransferParams& params,
               const TransferConfig& config, AttentionTrace* trace) {
  if (x_source.shape() != x_target.shape()) {
    throw ShapeError("stylize: source " + to_string(x_source.shape()) + " and target " + to_string(x_target.shape()) +
                     " shapes differ");
  }
  const Tensor hs = encode(x_source, params.source, config, trace);
  const Tensor ht = encode(x_target, params.target, config, trace);
  return reconstruct(decode(hs, ht, params.decoder, config, trace), params.cnn);
}

}  // namespace e2stn
