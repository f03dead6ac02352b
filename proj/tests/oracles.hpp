#pragma once

// Naive scalar-loop reference implementations. They share no code with the
// library beyond reading tensor values, so agreement is independent evidence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "e2stn/classifier.hpp"
#include "e2stn/config.hpp"
#include "e2stn/tensor.hpp"
#include "e2stn/transfer.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat mat(const e2stn::Tensor& t) {
  const std::size_t r = t.shape()[0], c = t.shape()[1];
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

inline std::vector<double> vec(const e2stn::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  return out;
}

inline Mat add_row(const Mat& a, const std::vector<double>& row) {
  Mat out = a;
  for (auto& r : out)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  return out;
}

inline Mat relu(Mat a) {
  for (auto& r : a)
    for (auto& v : r) v = std::max(0.0, v);
  return a;
}

inline Mat softmax_rows(Mat a) {
  for (auto& r : a) {
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& v : r) s += (v = std::exp(v - mx));
    for (auto& v : r) v /= s;
  }
  return a;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& gamma, const std::vector<double>& beta, double eps) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] = gamma[j] * (x[i][j] - mu) / std::sqrt(var + eps) + beta[j];
  }
  return out;
}

/// Per head: softmax(Q_i K_i^T / sqrt(p)) V_i; heads concatenated.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, bool scaled) {
  const std::size_t rows = q.size(), m = q[0].size(), p = m / heads;
  Mat out(rows, std::vector<double>(m, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    Mat logits(rows, std::vector<double>(k.size(), 0.0));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < k.size(); ++j) {
        for (std::size_t d = 0; d < p; ++d) logits[i][j] += q[i][h * p + d] * k[j][h * p + d];
        if (scaled) logits[i][j] /= std::sqrt(static_cast<double>(p));
      }
    const Mat w = softmax_rows(logits);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t d = 0; d < p; ++d)
        for (std::size_t j = 0; j < k.size(); ++j) out[i][h * p + d] += w[i][j] * v[j][h * p + d];
  }
  return out;
}

struct MhaOut {
  Mat output;
  Mat query;
};

inline MhaOut mha(const Mat& xq, const Mat& xkv, const e2stn::AttentionProjections& w, std::size_t heads,
                  bool scaled) {
  MhaOut r;
  r.query = matmul(xq, mat(w.query));
  const Mat k = matmul(xkv, mat(w.key));
  const Mat v = matmul(xkv, mat(w.value));
  r.output = matmul(attention(r.query, k, v, heads, scaled), mat(w.output));
  return r;
}

inline Mat ffn(const Mat& x, const e2stn::FeedForwardParams& p) {
  return add_row(matmul(relu(add_row(matmul(x, mat(p.w1)), vec(p.b1))), mat(p.w2)), vec(p.b2));
}

inline Mat norm(const Mat& x, const e2stn::LayerNormParams& p, double eps) {
  return layer_norm(x, vec(p.gamma), vec(p.beta), eps);
}

/// One encoder layer with the query residual.
inline Mat encoder_layer(const Mat& x, const e2stn::EncoderLayerParams& p, const e2stn::TransferConfig& cfg) {
  const auto a = mha(x, x, p.attention, cfg.heads, cfg.attn_scale);
  const Mat h1 = norm(add(a.output, a.query), p.norm1, cfg.ln_eps);
  return norm(add(ffn(h1, p.ffn), h1), p.norm2, cfg.ln_eps);
}

inline Mat decoder_layer(const Mat& s, const Mat& t, const e2stn::DecoderLayerParams& p,
                         const e2stn::TransferConfig& cfg) {
  const auto self = mha(s, s, p.self_attention, cfg.heads, cfg.attn_scale);
  const Mat s1 = norm(add(self.output, cfg.q_residual ? self.query : s), p.norm1, cfg.ln_eps);
  const auto cross = mha(s1, t, p.cross_attention, cfg.heads, cfg.attn_scale);
  const Mat s2 = norm(add(cross.output, cfg.q_residual ? cross.query : s1), p.norm2, cfg.ln_eps);
  return norm(add(ffn(s2, p.ffn), s2), p.norm3, cfg.ln_eps);
}

/// Stride-1 cross-correlation on a single [Cin, H, W] input.
/// kind: 0 standard, 1 depthwise (groups = Cin), 2 pointwise.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                                  const std::vector<double>& k, std::size_t cout, std::size_t kh, std::size_t kw,
                                  int kind, std::size_t ph, std::size_t pw, std::size_t* oh_out = nullptr,
                                  std::size_t* ow_out = nullptr) {
  const std::size_t oh = h + 2 * ph - kh + 1, ow = w + 2 * pw - kw + 1;
  if (oh_out) *oh_out = oh;
  if (ow_out) *ow_out = ow;
  const std::size_t per_in = kind == 1 ? 1 : cin;
  const std::size_t mult = kind == 1 ? cout / cin : 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < per_in; ++ci) {
          const std::size_t src = kind == 1 ? o / mult : ci;
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i + a) - static_cast<long>(ph);
              const long c = static_cast<long>(j + b) - static_cast<long>(pw);
              if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) continue;
              s += k[((o * per_in + ci) * kh + a) * kw + b] * x[(src * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(c)];
            }
        }
        out[(o * oh + i) * ow + j] = s;
      }
  return out;
}

/// G_b[i][j] = relu(((W_s x + Bias) W_f)[i][b*C + j]).
inline std::vector<Mat> build_graph(const Mat& x, const e2stn::ClassifierParams& p) {
  const Mat raw = relu(matmul(add(matmul(mat(p.spatial), x), mat(p.bias)), mat(p.frequency)));
  const std::size_t c = x.size(), bands = x[0].size();
  std::vector<Mat> g(bands, Mat(c, std::vector<double>(c)));
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) g[b][i][j] = raw[i][b * c + j];
  return g;
}

/// Explicit powers: term (b, k) = G_b^k x[:, b], with G_b row-normalized when
/// configured; mixed by theta (row b*K + k) or summed over k.
inline Mat cheb_conv(const Mat& x, std::vector<Mat> g, const e2stn::ClassifierParams& p,
                     const e2stn::ClassifierConfig& cfg) {
  const std::size_t c = x.size(), bands = x[0].size(), order = cfg.cheb_order;
  if (cfg.row_normalize) {
    for (auto& gb : g)
      for (auto& row : gb) {
        double s = cfg.row_eps;
        for (double v : row) s += v;
        for (double& v : row) v /= s;
      }
  }
  std::vector<std::vector<std::vector<double>>> terms(bands, std::vector<std::vector<double>>(order));
  for (std::size_t b = 0; b < bands; ++b) {
    Mat power(c, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < c; ++i) power[i][i] = 1.0;
    for (std::size_t k = 0; k < order; ++k) {
      std::vector<double> col(c, 0.0);
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) col[i] += power[i][j] * x[j][b];
      terms[b][k] = col;
      power = matmul(g[b], power);
    }
  }
  if (!cfg.use_theta) {
    Mat out(c, std::vector<double>(bands, 0.0));
    for (std::size_t b = 0; b < bands; ++b)
      for (std::size_t k = 0; k < order; ++k)
        for (std::size_t i = 0; i < c; ++i) out[i][b] += terms[b][k][i];
    return out;
  }
  const Mat theta = mat(p.theta);
  Mat out(c, std::vector<double>(theta[0].size(), 0.0));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t f = 0; f < theta[0].size(); ++f)
      for (std::size_t b = 0; b < bands; ++b)
        for (std::size_t k = 0; k < order; ++k) out[i][f] += terms[b][k][i] * theta[b * order + k][f];
  return out;
}

inline double max_abs_diff(const Mat& a, const std::vector<double>& b) {
  double d = 0.0;
  std::size_t n = 0;
  for (const auto& r : a)
    for (double v : r) d = std::max(d, std::abs(v - b[n++]));
  return n == b.size() ? d : INFINITY;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace oracle
