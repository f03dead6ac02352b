#include "e2stn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "e2stn/error.hpp"

namespace e2stn {

namespace {

using detail::Node;

// Gradient buffer of parent i, or nullptr when that parent is constant.
std::vector<double>* parent_grad(const Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& parent_value(const Node& out, std::size_t i) { return out.parents[i]->value; }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + " needs at least one axis");
  return x.shape().back();
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), op, {x}, [deriv](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    const auto& xin = parent_value(o, 0);
    for (std::size_t i = 0; i < xin.size(); ++i) (*gx)[i] += o.grad[i] * deriv(xin[i], o.value[i]);
  });
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw ShapeError(std::string(op) + ": shape " + to_string(b.shape()) +
                     " does not broadcast onto " + to_string(a.shape()));
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  const std::size_t inner = bv.size();
  const std::size_t outer = av.size() / inner;
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const double x = av[o * inner + i];
      const double y = bv[i];
      out[o * inner + i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), op, {a, b}, [kind, inner, outer](const Node& n) {
    auto* ga = parent_grad(n, 0);
    auto* gb = parent_grad(n, 1);
    const auto& av = parent_value(n, 0);
    const auto& bv = parent_value(n, 1);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = o * inner + i;
        const double g = n.grad[k];
        switch (kind) {
          case BinaryKind::Add:
            if (ga) (*ga)[k] += g;
            if (gb) (*gb)[i] += g;
            break;
          case BinaryKind::Sub:
            if (ga) (*ga)[k] += g;
            if (gb) (*gb)[i] -= g;
            break;
          case BinaryKind::Mul:
            if (ga) (*ga)[k] += g * bv[i];
            if (gb) (*gb)[i] += g * av[k];
            break;
        }
      }
    }
  });
}

struct ReduceGeometry {
  Shape out_shape;
  std::size_t outer = 1;
  std::size_t inner = 1;
};

ReduceGeometry reduce_geometry(const Tensor& x, std::size_t axes, const char* op) {
  const auto& s = x.shape();
  if (axes == 0 || axes > s.size()) {
    throw ShapeError(std::string(op) + ": cannot reduce " + std::to_string(axes) + " axes of shape " +
                     to_string(s));
  }
  ReduceGeometry g;
  g.out_shape.assign(s.begin(), s.end() - static_cast<std::ptrdiff_t>(axes));
  g.outer = numel(g.out_shape);
  g.inner = x.size() / g.outer;
  return g;
}

void matmul_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(as) + " and " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  Shape a_batch(as.begin(), as.end() - 2);
  Shape b_batch(bs.begin(), bs.end() - 2);
  if (k != k2 || (!a_batch.empty() && !b_batch.empty() && a_batch != b_batch)) {
    throw ShapeError("matmul dimension mismatch: " + to_string(as) + " x " + to_string(bs));
  }
  const Shape batch = a_batch.empty() ? b_batch : a_batch;
  const std::size_t nb = numel(batch);
  const std::size_t a_step = a_batch.empty() ? 0 : m * k;
  const std::size_t b_step = b_batch.empty() ? 0 : k * n;

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t t = 0; t < nb; ++t) matmul_kernel(ad + t * a_step, bd + t * b_step, out.data() + t * m * n, m, k, n);

  return Tensor::make_result(std::move(out_shape), std::move(out), "matmul", {a, b},
                             [nb, m, k, n, a_step, b_step](const Node& o) {
    auto* ga = parent_grad(o, 0);
    auto* gb = parent_grad(o, 1);
    const auto& av = parent_value(o, 0);
    const auto& bv = parent_value(o, 1);
    for (std::size_t t = 0; t < nb; ++t) {
      const double* g = o.grad.data() + t * m * n;
      const double* at = av.data() + t * a_step;
      const double* bt = bv.data() + t * b_step;
      if (ga) {
        // dA = dC * B^T
        double* da = ga->data() + t * a_step;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bt[p * n + j];
            da[i * k + p] += acc;
          }
        }
      }
      if (gb) {
        // dB = A^T * dC
        double* db = gb->data() + t * b_step;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aval = at[i * k + p];
            if (aval == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aval * g[i * n + j];
          }
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      x, "elu", [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(
      x, "log_clamped", [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = last_dim(x, "softmax_rows");
  const auto& xv = x.data();
  const std::size_t rows = xv.size() / n;
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return Tensor::make_result(x.shape(), std::move(out), "softmax_rows", {x}, [rows, n](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t m = last_dim(x, "layer_norm");
  if (m < 2) throw ShapeError("layer_norm needs a last axis of size >= 2, got " + to_string(x.shape()));
  if (gamma.shape() != Shape{m} || beta.shape() != Shape{m}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(m) + "], got " +
                     to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  }
  if (!(eps > 0.0)) throw ShapeError("layer_norm: eps must be positive");
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  const std::size_t rows = xv.size() / m;
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * m;
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += in[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < m; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * m + j] = h;
      out[r * m + j] = gv[j] * h + bv[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                             [rows, m, xhat, inv_std](const Node& o) {
    auto* gx = parent_grad(o, 0);
    auto* gg = parent_grad(o, 1);
    auto* gb = parent_grad(o, 2);
    const auto& gv = parent_value(o, 1);
    const double inv_m = 1.0 / static_cast<double>(m);
    std::vector<double> dxhat(m);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = o.grad.data() + r * m;
      const double* h = xhat->data() + r * m;
      double mean_d = 0.0;
      double mean_dh = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (gg) (*gg)[j] += g[j] * h[j];
        if (gb) (*gb)[j] += g[j];
        dxhat[j] = g[j] * gv[j];
        mean_d += dxhat[j];
        mean_dh += dxhat[j] * h[j];
      }
      if (!gx) continue;
      mean_d *= inv_m;
      mean_dh *= inv_m;
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < m; ++j) (*gx)[r * m + j] += is * (dxhat[j] - mean_d - h[j] * mean_dh);
    }
  });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  const std::size_t n = last_dim(x, "normalize_rows");
  const auto& xv = x.data();
  const std::size_t rows = xv.size() / n;
  std::vector<double> out(xv.size());
  auto denom = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = eps;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
    (*denom)[r] = s;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] / s;
  }
  return Tensor::make_result(x.shape(), std::move(out), "normalize_rows", {x}, [rows, n, denom](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = (*denom)[r];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += o.grad[r * n + j] * o.value[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += (o.grad[r * n + j] - dot) / d;
    }
  });
}

Tensor sum_last(const Tensor& x, std::size_t axes) {
  const auto geo = reduce_geometry(x, axes, "sum_last");
  const auto& xv = x.data();
  std::vector<double> out(geo.outer, 0.0);
  for (std::size_t o = 0; o < geo.outer; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < geo.inner; ++i) s += xv[o * geo.inner + i];
    out[o] = s;
  }
  const std::size_t inner = geo.inner;
  return Tensor::make_result(geo.out_shape, std::move(out), "sum", {x}, [inner](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < o.value.size(); ++r)
      for (std::size_t i = 0; i < inner; ++i) (*gx)[r * inner + i] += o.grad[r];
  });
}

Tensor mean_last(const Tensor& x, std::size_t axes) {
  const auto geo = reduce_geometry(x, axes, "mean_last");
  return scale(sum_last(x, axes), 1.0 / static_cast<double>(geo.inner));
}

Tensor variance_last(const Tensor& x, std::size_t axes) {
  const auto geo = reduce_geometry(x, axes, "variance_last");
  const auto& xv = x.data();
  const std::size_t inner = geo.inner;
  const double inv = 1.0 / static_cast<double>(inner);
  std::vector<double> out(geo.outer);
  auto means = std::make_shared<std::vector<double>>(geo.outer);
  for (std::size_t o = 0; o < geo.outer; ++o) {
    double mu = 0.0;
    for (std::size_t i = 0; i < inner; ++i) mu += xv[o * inner + i];
    mu *= inv;
    double v = 0.0;
    for (std::size_t i = 0; i < inner; ++i) v += (xv[o * inner + i] - mu) * (xv[o * inner + i] - mu);
    (*means)[o] = mu;
    out[o] = v * inv;
  }
  return Tensor::make_result(geo.out_shape, std::move(out), "variance", {x}, [inner, inv, means](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    const auto& xin = parent_value(o, 0);
    for (std::size_t r = 0; r < o.value.size(); ++r) {
      const double g = o.grad[r] * 2.0 * inv;
      for (std::size_t i = 0; i < inner; ++i) (*gx)[r * inner + i] += g * (xin[r * inner + i] - (*means)[r]);
    }
  });
}

Tensor l2_norm_last(const Tensor& x, std::size_t axes) {
  const auto geo = reduce_geometry(x, axes, "l2_norm_last");
  const auto& xv = x.data();
  const std::size_t inner = geo.inner;
  std::vector<double> out(geo.outer);
  for (std::size_t o = 0; o < geo.outer; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += xv[o * inner + i] * xv[o * inner + i];
    out[o] = std::sqrt(s);
  }
  return Tensor::make_result(geo.out_shape, std::move(out), "l2_norm", {x}, [inner](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    const auto& xin = parent_value(o, 0);
    for (std::size_t r = 0; r < o.value.size(); ++r) {
      const double norm = o.value[r];
      if (norm == 0.0) continue;
      const double g = o.grad[r] / norm;
      for (std::size_t i = 0; i < inner; ++i) (*gx)[r * inner + i] += g * xin[r * inner + i];
    }
  });
}

Tensor sum(const Tensor& x) { return x.rank() == 0 ? x : sum_last(x, x.rank()); }
Tensor mean(const Tensor& x) { return x.rank() == 0 ? x : mean_last(x, x.rank()); }

Tensor variance(const Tensor& x) {
  if (x.rank() == 0) return scale(x, 0.0);
  return variance_last(x, x.rank());
}

Tensor l2_norm(const Tensor& x) { return l2_norm_last(x.rank() == 0 ? reshape(x, {1}) : x, std::max<std::size_t>(x.rank(), 1)); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    out_shape[ax] += s[ax];
    widths.push_back(s[ax]);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[ax];

  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].data();
    const std::size_t w = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
    offset += widths[k];
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), "concat", parts,
                             [widths, outer, inner, total](const Node& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto* g = parent_grad(o, k);
      const std::size_t w = widths[k] * inner;
      if (g) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t i = 0; i < w; ++i) (*g)[r * w + i] += o.grad[r * total * inner + off * inner + i];
      }
      off += widths[k];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  for (auto d : shape)
    if (d == 0) throw ShapeError("reshape to zero-sized axis " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {x}, [](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw ShapeError("permute: rank mismatch for " + to_string(s));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid axis permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // src[k] = flat input index of output element k.
  auto src = std::make_shared<std::vector<std::size_t>>(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    std::size_t flat = 0;
    for (std::size_t i = 0; i < r; ++i) flat += idx[i] * in_strides[perm[i]];
    (*src)[k] = flat;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto& xv = x.data();
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[(*src)[k]];
  return Tensor::make_result(std::move(out_shape), std::move(out), "permute", {x}, [src](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t k = 0; k < o.grad.size(); ++k) (*gx)[(*src)[k]] += o.grad[k];
  });
}

Tensor transpose_last_two(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw ShapeError("transpose_last_two needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(x, perm);
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (length == 0 || start + length > s[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(s[ax]));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[ax];
  Shape out_shape = s;
  out_shape[ax] = length;
  const auto& xv = x.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return Tensor::make_result(std::move(out_shape), std::move(out), "slice", {x},
                             [outer, inner, full, start, length](const Node& o) {
    auto* gx = parent_grad(o, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t i = 0; i < length * inner; ++i)
        (*gx)[(r * full + start) * inner + i] += o.grad[r * length * inner + i];
  });
}

Tensor slice_band(const Tensor& x, std::size_t start, std::size_t length) { return slice(x, -1, start, length); }

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("split_heads needs rank >= 2, got " + to_string(s));
  const std::size_t c = s[s.size() - 2];
  const std::size_t m = s.back();
  if (heads == 0 || m % heads != 0) {
    throw ConfigError("model width " + std::to_string(m) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  Shape split(s.begin(), s.end() - 2);
  const std::size_t lead = split.size();
  split.insert(split.end(), {c, heads, m / heads});
  std::vector<std::size_t> perm(lead);
  std::iota(perm.begin(), perm.end(), 0);
  perm.insert(perm.end(), {lead + 1, lead, lead + 2});
  return permute(reshape(x, split), perm);
}

Tensor merge_heads(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 3) throw ShapeError("merge_heads needs rank >= 3, got " + to_string(s));
  const std::size_t lead = s.size() - 3;
  std::vector<std::size_t> perm(lead);
  std::iota(perm.begin(), perm.end(), 0);
  perm.insert(perm.end(), {lead + 1, lead, lead + 2});
  Tensor t = permute(x, perm);  // [..., C, h, p]
  Shape merged(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lead));
  merged.push_back(s[lead + 1]);
  merged.push_back(s[lead] * s[lead + 2]);
  return reshape(t, merged);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, ConvKind kind, Padding padding, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 && xs.size() != 4) {
    throw ShapeError("conv2d input must be [Cin,H,W] or [N,Cin,H,W], got " + to_string(xs));
  }
  if (ws.size() != 4) throw ShapeError("conv2d weight must be rank 4, got " + to_string(ws));
  const bool batched = xs.size() == 4;
  const std::size_t batch = batched ? xs[0] : 1;
  const std::size_t cin = xs[xs.size() - 3];
  const std::size_t h = xs[xs.size() - 2];
  const std::size_t w = xs.back();
  const std::size_t cout = ws[0];
  const std::size_t kh = ws[2];
  const std::size_t kw = ws[3];

  std::size_t groups = 1;
  switch (kind) {
    case ConvKind::Standard:
      if (ws[1] != cin) throw ShapeError("conv2d weight " + to_string(ws) + " expects " + std::to_string(ws[1]) + " input channels, got " + std::to_string(cin));
      break;
    case ConvKind::Pointwise:
      if (ws[1] != cin || kh != 1 || kw != 1) throw ShapeError("pointwise conv needs [Cout," + std::to_string(cin) + ",1,1] weights, got " + to_string(ws));
      break;
    case ConvKind::Depthwise:
      if (ws[1] != 1 || cout % cin != 0) throw ShapeError("depthwise conv needs [Cin*D,1,kh,kw] weights for Cin=" + std::to_string(cin) + ", got " + to_string(ws));
      groups = cin;
      break;
  }
  if (kh > h + 2 * padding.height || kw > w + 2 * padding.width) {
    throw ShapeError("conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + std::to_string(h + 2 * padding.height) + "x" +
                     std::to_string(w + 2 * padding.width));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d bias must be [" + std::to_string(cout) + "], got " + to_string(bias.shape()));
  }
  const std::size_t oh = h + 2 * padding.height - kh + 1;
  const std::size_t ow = w + 2 * padding.width - kw + 1;
  const std::size_t cin_g = cin / groups;
  const std::size_t cout_g = cout / groups;
  const long ph = static_cast<long>(padding.height);
  const long pw = static_cast<long>(padding.width);

  Shape out_shape = batched ? Shape{batch, cout, oh, ow} : Shape{cout, oh, ow};
  std::vector<double> out(batch * cout * oh * ow, 0.0);
  const auto& xv = x.data();
  const auto& wv = weight.data();

  // Visits every (output, input, weight) index triple contributing a product.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < cout; ++o) {
        const std::size_t g = o / cout_g;
        for (std::size_t cl = 0; cl < cin_g; ++cl) {
          const std::size_t c = g * cin_g + cl;
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const std::size_t widx = ((o * cin_g + cl) * kh + u) * kw + v;
              for (std::size_t i = 0; i < oh; ++i) {
                const long yi = static_cast<long>(i + u) - ph;
                if (yi < 0 || yi >= static_cast<long>(h)) continue;
                for (std::size_t j = 0; j < ow; ++j) {
                  const long xj = static_cast<long>(j + v) - pw;
                  if (xj < 0 || xj >= static_cast<long>(w)) continue;
                  const std::size_t xidx = ((n * cin + c) * h + static_cast<std::size_t>(yi)) * w + static_cast<std::size_t>(xj);
                  const std::size_t oidx = ((n * cout + o) * oh + i) * ow + j;
                  fn(oidx, xidx, widx);
                }
              }
            }
        }
      }
  };

  for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) { out[oi] += wv[wi] * xv[xi]; });
  if (bias.defined()) {
    const auto& bv = bias.data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t k = 0; k < oh * ow; ++k) out[(n * cout + o) * oh * ow + k] += bv[o];
  }

  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make_result(std::move(out_shape), std::move(out), "conv2d", parents,
                             [for_each_tap, has_bias, batch, cout, oh, ow](const Node& o) {
    auto* gx = parent_grad(o, 0);
    auto* gw = parent_grad(o, 1);
    const auto& xin = parent_value(o, 0);
    const auto& win = parent_value(o, 1);
    if (gx || gw) {
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) {
        const double g = o.grad[oi];
        if (gx) (*gx)[xi] += g * win[wi];
        if (gw) (*gw)[wi] += g * xin[xi];
      });
    }
    if (has_bias) {
      if (auto* gb = parent_grad(o, 2)) {
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t k = 0; k < oh * ow; ++k) (*gb)[c] += o.grad[(n * cout + c) * oh * ow + k];
      }
    }
  });
}

Tensor cross_entropy(const Tensor& probs, const Tensor& one_hot) {
  if (probs.shape() != one_hot.shape() || probs.rank() < 1 || probs.rank() > 2) {
    throw ShapeError("cross_entropy expects matching [P] or [N,P] shapes, got " + to_string(probs.shape()) +
                     " and " + to_string(one_hot.shape()));
  }
  const std::size_t p = probs.shape().back();
  const std::size_t rows = probs.size() / p;
  const auto& yv = one_hot.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < p; ++j) {
      const double y = yv[r * p + j];
      if (y == 1.0) {
        ++ones;
      } else if (y != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw ConfigError("cross_entropy: label row " + std::to_string(r) + " is not one-hot");
  }
  constexpr double kFloor = 1e-12;
  return mean(scale(sum_last(mul(log_clamped(probs, kFloor), one_hot), 1), -1.0));
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  if (labels.empty()) throw ShapeError("one_hot of an empty label list");
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(classes) +
                        " classes");
    }
    v[i * classes + labels[i]] = 1.0;
  }
  return Tensor::from({labels.size(), classes}, std::move(v));
}

}  // namespace e2stn
