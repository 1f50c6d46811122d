#include "csta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace csta {
namespace {

using std::size_t;

Tensor make_out(Shape shape, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), false);
  t.d->requires_grad = requires_grad;
  return t;
}

void expect_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw std::invalid_argument(std::string(who) + ": undefined tensor");
}

// True when `small` tiles the trailing block of `big`: after stripping leading
// length-1 dims, small's shape must equal the trailing dims of big's shape.
bool tiles_into(const Shape& big, const Shape& small) {
  size_t lo = 0;
  while (lo < small.size() && small[lo] == 1) ++lo;
  size_t sn = small.size() - lo;
  if (sn > big.size()) return false;
  for (size_t i = 0; i < sn; ++i) {
    if (small[lo + i] != big[big.size() - sn + i]) return false;
  }
  return true;
}

// Elementwise binary op with leading-1 tiling broadcast. f is the value map,
// dfa/dfb the partials w.r.t. each operand evaluated at the input values.
template <typename F, typename DFA, typename DFB>
Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, F f, DFA dfa, DFB dfb) {
  expect_defined(a, name);
  expect_defined(b, name);
  const Shape &as = a.shape(), &bs = b.shape();
  const Shape* out_shape;
  if (a.numel() >= b.numel()) {
    if (!tiles_into(as, bs)) {
      throw std::invalid_argument(std::string(name) + ": shapes " + shape_str(as) + " and " +
                                  shape_str(bs) + " are not tile-compatible");
    }
    out_shape = &as;
  } else {
    if (!tiles_into(bs, as)) {
      throw std::invalid_argument(std::string(name) + ": shapes " + shape_str(as) + " and " +
                                  shape_str(bs) + " are not tile-compatible");
    }
    out_shape = &bs;
  }
  bool rg = grad_enabled() && (a.requires_grad() || b.requires_grad());
  Tensor out = make_out(*out_shape, rg);
  const size_t on = out.d->values.size(), an = a.d->values.size(), bn = b.d->values.size();
  const double *av = a.d->values.data(), *bv = b.d->values.data();
  double* ov = out.d->values.data();
  for (size_t i = 0; i < on; ++i) ov[i] = f(av[i % an], bv[i % bn]);
  if (rg) {
    auto ad = a.d, bd = b.d, od = out.d;
    tape().record(od, [ad, bd, od, an, bn, on, dfa, dfb] {
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (size_t i = 0; i < on; ++i)
          ad->grad[i % an] += od->grad[i] * dfa(ad->values[i % an], bd->values[i % bn]);
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (size_t i = 0; i < on; ++i)
          bd->grad[i % bn] += od->grad[i] * dfb(ad->values[i % an], bd->values[i % bn]);
      }
    });
  }
  return out;
}

// Elementwise unary op; df is d(out)/d(in) at the input value.
template <typename F, typename DF>
Tensor ew_unary(const char* name, const Tensor& a, F f, DF df) {
  expect_defined(a, name);
  bool rg = grad_enabled() && a.requires_grad();
  Tensor out = make_out(a.shape(), rg);
  const size_t n = a.d->values.size();
  for (size_t i = 0; i < n; ++i) out.d->values[i] = f(a.d->values[i]);
  if (rg) {
    auto ad = a.d, od = out.d;
    tape().record(od, [ad, od, n, df] {
      ad->ensure_grad();
      for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * df(ad->values[i]);
    });
  }
  return out;
}

void expect_rank2(const Tensor& t, const char* who) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(who) + ": expected rank 2, got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary("sub", a, b, [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary("mul", a, b, [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return ew_binary("div", a, b, [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return ew_unary("add_scalar", a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return ew_unary("mul_scalar", a, [s](double x) { return x * s; }, [s](double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  expect_defined(a, "matmul");
  expect_defined(b, "matmul");
  expect_rank2(a, "matmul");
  expect_rank2(b, "matmul");
  const std::int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  if (b.shape()[0] != K) {
    throw std::invalid_argument("matmul: inner dims of " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  }
  bool rg = grad_enabled() && (a.requires_grad() || b.requires_grad());
  Tensor out = make_out({M, N}, rg);
  const double *av = a.d->values.data(), *bv = b.d->values.data();
  double* ov = out.d->values.data();
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t k = 0; k < K; ++k) {
      const double aik = av[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = bv + k * N;
      double* orow = ov + i * N;
      for (std::int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  }
  if (rg) {
    auto ad = a.d, bd = b.d, od = out.d;
    tape().record(od, [ad, bd, od, M, K, N] {
      const double* gv = od->grad.data();
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::int64_t i = 0; i < M; ++i) {
          for (std::int64_t k = 0; k < K; ++k) {
            const double *grow = gv + i * N, *brow = bd->values.data() + k * N;
            double s = 0.0;
            for (std::int64_t j = 0; j < N; ++j) s += grow[j] * brow[j];
            ad->grad[i * K + k] += s;
          }
        }
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::int64_t i = 0; i < M; ++i) {
          for (std::int64_t k = 0; k < K; ++k) {
            const double aik = ad->values[i * K + k];
            if (aik == 0.0) continue;
            const double* grow = gv + i * N;
            double* brow = bd->grad.data() + k * N;
            for (std::int64_t j = 0; j < N; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  expect_defined(a, "transpose");
  expect_rank2(a, "transpose");
  const std::int64_t M = a.shape()[0], N = a.shape()[1];
  bool rg = grad_enabled() && a.requires_grad();
  Tensor out = make_out({N, M}, rg);
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) out.d->values[j * M + i] = a.d->values[i * N + j];
  if (rg) {
    auto ad = a.d, od = out.d;
    tape().record(od, [ad, od, M, N] {
      ad->ensure_grad();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) ad->grad[i * N + j] += od->grad[j * M + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  expect_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  }
  bool rg = grad_enabled() && a.requires_grad();
  Tensor out = make_out(std::move(shape), rg);
  out.d->values = a.d->values;
  if (rg) {
    auto ad = a.d, od = out.d;
    tape().record(od, [ad, od] {
      ad->ensure_grad();
      for (size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += od->grad[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  for (const Tensor& p : parts) expect_defined(p, "concat");
  const size_t rank = parts[0].shape().size();
  if (rank != 1 && rank != 2) {
    throw std::invalid_argument("concat: rank must be 1 or 2, got " + shape_str(parts[0].shape()));
  }
  if (axis < 0 || axis >= static_cast<std::int64_t>(rank)) {
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(parts[0].shape()));
  }
  bool rg = false;
  std::int64_t cat = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != rank) {
      throw std::invalid_argument("concat: rank mismatch between " + shape_str(parts[0].shape()) +
                                  " and " + shape_str(p.shape()));
    }
    for (size_t dim = 0; dim < rank; ++dim) {
      if (static_cast<std::int64_t>(dim) != axis && p.shape()[dim] != parts[0].shape()[dim]) {
        throw std::invalid_argument("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                                    shape_str(p.shape()) + " differ off axis " + std::to_string(axis));
      }
    }
    cat += p.shape()[axis];
    rg = rg || p.requires_grad();
  }
  rg = rg && grad_enabled();
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = cat;
  Tensor out = make_out(out_shape, rg);

  if (rank == 1 || axis == 0) {
    size_t off = 0;
    for (const Tensor& p : parts) {
      const auto& v = p.d->values;
      std::copy(v.begin(), v.end(), out.d->values.begin() + off);
      off += v.size();
    }
  } else {  // rank 2, axis 1: interleave rows
    const std::int64_t R = out_shape[0], C = out_shape[1];
    std::int64_t col = 0;
    for (const Tensor& p : parts) {
      const std::int64_t pc = p.shape()[1];
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < pc; ++c)
          out.d->values[r * C + col + c] = p.d->values[r * pc + c];
      col += pc;
    }
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorData>> pds;
    for (const Tensor& p : parts) pds.push_back(p.d);
    auto od = out.d;
    tape().record(od, [pds, od, rank, axis, out_shape] {
      if (rank == 1 || axis == 0) {
        size_t off = 0;
        for (auto& pd : pds) {
          if (pd->requires_grad) {
            pd->ensure_grad();
            for (size_t i = 0; i < pd->values.size(); ++i) pd->grad[i] += od->grad[off + i];
          }
          off += pd->values.size();
        }
      } else {
        const std::int64_t R = out_shape[0], C = out_shape[1];
        std::int64_t col = 0;
        for (auto& pd : pds) {
          const std::int64_t pc = pd->shape[1];
          if (pd->requires_grad) {
            pd->ensure_grad();
            for (std::int64_t r = 0; r < R; ++r)
              for (std::int64_t c = 0; c < pc; ++c) pd->grad[r * pc + c] += od->grad[r * C + col + c];
          }
          col += pc;
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& indices) {
  expect_defined(x, "gather_rows");
  expect_rank2(x, "gather_rows");
  const std::int64_t R = x.shape()[0], C = x.shape()[1];
  for (std::int64_t idx : indices) {
    if (idx < 0 || idx >= R) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) + " outside " +
                                  shape_str(x.shape()));
    }
  }
  bool rg = grad_enabled() && x.requires_grad();
  Tensor out = make_out({static_cast<std::int64_t>(indices.size()), C}, rg);
  for (size_t i = 0; i < indices.size(); ++i) {
    const double* src = x.d->values.data() + indices[i] * C;
    std::copy(src, src + C, out.d->values.begin() + static_cast<std::int64_t>(i) * C);
  }
  if (rg) {
    auto xd = x.d, od = out.d;
    tape().record(od, [xd, od, indices, C] {
      xd->ensure_grad();
      for (size_t i = 0; i < indices.size(); ++i) {
        const double* g = od->grad.data() + static_cast<std::int64_t>(i) * C;
        double* dst = xd->grad.data() + indices[i] * C;
        for (std::int64_t c = 0; c < C; ++c) dst[c] += g[c];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len) {
  expect_defined(x, "slice_cols");
  expect_rank2(x, "slice_cols");
  const std::int64_t R = x.shape()[0], C = x.shape()[1];
  if (start < 0 || len <= 0 || start + len > C) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside " + shape_str(x.shape()));
  }
  bool rg = grad_enabled() && x.requires_grad();
  Tensor out = make_out({R, len}, rg);
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t c = 0; c < len; ++c) out.d->values[r * len + c] = x.d->values[r * C + start + c];
  if (rg) {
    auto xd = x.d, od = out.d;
    tape().record(od, [xd, od, R, C, start, len] {
      xd->ensure_grad();
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < len; ++c) xd->grad[r * C + start + c] += od->grad[r * len + c];
    });
  }
  return out;
}

Tensor mean_axis0(const Tensor& x) {
  expect_defined(x, "mean_axis0");
  expect_rank2(x, "mean_axis0");
  const std::int64_t R = x.shape()[0], C = x.shape()[1];
  bool rg = grad_enabled() && x.requires_grad();
  Tensor out = make_out({C}, rg);
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t c = 0; c < C; ++c) out.d->values[c] += x.d->values[r * C + c];
  for (std::int64_t c = 0; c < C; ++c) out.d->values[c] /= static_cast<double>(R);
  if (rg) {
    auto xd = x.d, od = out.d;
    tape().record(od, [xd, od, R, C] {
      xd->ensure_grad();
      const double inv = 1.0 / static_cast<double>(R);
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) xd->grad[r * C + c] += od->grad[c] * inv;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  expect_defined(a, "sum_all");
  bool rg = grad_enabled() && a.requires_grad();
  double s = 0.0;
  for (double v : a.d->values) s += v;
  Tensor out = Tensor::scalar(s);
  out.d->requires_grad = rg;
  if (rg) {
    auto ad = a.d, od = out.d;
    tape().record(od, [ad, od] {
      ad->ensure_grad();
      for (double& g : ad->grad) g += od->grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  expect_defined(a, "mean_all");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor log(const Tensor& a) {
  return ew_unary("log", a, [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return ew_unary("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return ew_unary("clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
                  [lo](double x) { return x < lo ? 0.0 : 1.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return ew_unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor softmax(const Tensor& a) {
  expect_defined(a, "softmax");
  if (a.shape().empty()) throw std::invalid_argument("softmax: rank-0 input");
  const std::int64_t C = a.shape().back();
  const std::int64_t R = a.numel() / C;
  bool rg = grad_enabled() && a.requires_grad();
  Tensor out = make_out(a.shape(), rg);
  for (std::int64_t r = 0; r < R; ++r) {
    const double* xr = a.d->values.data() + r * C;
    double* yr = out.d->values.data() + r * C;
    double m = xr[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, xr[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < C; ++c) z += (yr[c] = std::exp(xr[c] - m));
    for (std::int64_t c = 0; c < C; ++c) yr[c] /= z;
  }
  if (rg) {
    auto ad = a.d, od = out.d;
    tape().record(od, [ad, od, R, C] {
      ad->ensure_grad();
      for (std::int64_t r = 0; r < R; ++r) {
        const double *yr = od->values.data() + r * C, *gr = od->grad.data() + r * C;
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
        for (std::int64_t c = 0; c < C; ++c) ad->grad[r * C + c] += (gr[c] - dot) * yr[c];
      }
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  expect_defined(x, "layernorm");
  expect_defined(gamma, "layernorm");
  expect_defined(beta, "layernorm");
  if (x.shape().empty()) throw std::invalid_argument("layernorm: rank-0 input");
  const std::int64_t C = x.shape().back();
  if (gamma.numel() != C || beta.numel() != C) {
    throw std::invalid_argument("layernorm: gamma " + shape_str(gamma.shape()) + " / beta " +
                                shape_str(beta.shape()) + " do not match last dim of " +
                                shape_str(x.shape()));
  }
  const std::int64_t R = x.numel() / C;
  bool rg = grad_enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor out = make_out(x.shape(), rg);
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(R));
  for (std::int64_t r = 0; r < R; ++r) {
    const double* xr = x.d->values.data() + r * C;
    double mu = 0.0;
    for (std::int64_t c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::int64_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (std::int64_t c = 0; c < C; ++c) {
      const double h = (xr[c] - mu) * is;
      xhat[static_cast<size_t>(r * C + c)] = h;
      out.d->values[r * C + c] = h * gamma.d->values[c] + beta.d->values[c];
    }
  }
  if (rg) {
    auto xd = x.d, gd = gamma.d, bd = beta.d, od = out.d;
    tape().record(od, [xd, gd, bd, od, R, C, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      if (gd->requires_grad) gd->ensure_grad();
      if (bd->requires_grad) bd->ensure_grad();
      if (xd->requires_grad) xd->ensure_grad();
      for (std::int64_t r = 0; r < R; ++r) {
        const double* gr = od->grad.data() + r * C;
        const double* hr = xhat.data() + r * C;
        if (gd->requires_grad || bd->requires_grad) {
          for (std::int64_t c = 0; c < C; ++c) {
            if (gd->requires_grad) gd->grad[c] += gr[c] * hr[c];
            if (bd->requires_grad) bd->grad[c] += gr[c];
          }
        }
        if (xd->requires_grad) {
          double mean_dh = 0.0, mean_dhh = 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const double dh = gr[c] * gd->values[c];
            mean_dh += dh;
            mean_dhh += dh * hr[c];
          }
          mean_dh /= static_cast<double>(C);
          mean_dhh /= static_cast<double>(C);
          const double is = inv_std[static_cast<size_t>(r)];
          for (std::int64_t c = 0; c < C; ++c) {
            const double dh = gr[c] * gd->values[c];
            xd->grad[r * C + c] += (dh - mean_dh - hr[c] * mean_dhh) * is;
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::int64_t label) {
  expect_defined(logits, "cross_entropy");
  if (logits.shape().size() != 1) {
    throw std::invalid_argument("cross_entropy: expected rank-1 logits, got " +
                                shape_str(logits.shape()));
  }
  const std::int64_t C = logits.numel();
  if (label < 0 || label >= C) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " outside " +
                                shape_str(logits.shape()));
  }
  const double* lv = logits.d->values.data();
  double m = lv[0];
  for (std::int64_t c = 1; c < C; ++c) m = std::max(m, lv[c]);
  double z = 0.0;
  std::vector<double> probs(static_cast<size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) z += (probs[static_cast<size_t>(c)] = std::exp(lv[c] - m));
  for (double& p : probs) p /= z;
  const double loss = m + std::log(z) - lv[label];
  bool rg = grad_enabled() && logits.requires_grad();
  Tensor out = Tensor::scalar(loss);
  out.d->requires_grad = rg;
  if (rg) {
    auto ld = logits.d, od = out.d;
    tape().record(od, [ld, od, label, probs = std::move(probs)] {
      ld->ensure_grad();
      const double g = od->grad[0];
      for (size_t c = 0; c < probs.size(); ++c) {
        ld->grad[c] += g * (probs[c] - (static_cast<std::int64_t>(c) == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  expect_defined(p_logits, "kl_divergence");
  expect_defined(q_logits, "kl_divergence");
  if (p_logits.shape() != q_logits.shape() || p_logits.shape().size() != 1) {
    throw std::invalid_argument("kl_divergence: need equal rank-1 logits, got " +
                                shape_str(p_logits.shape()) + " and " + shape_str(q_logits.shape()));
  }
  constexpr double kFloor = 1e-12;
  const std::int64_t C = p_logits.numel();
  auto probs_of = [C](const double* lv) {
    double m = lv[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, lv[c]);
    double z = 0.0;
    std::vector<double> pr(static_cast<size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) z += (pr[static_cast<size_t>(c)] = std::exp(lv[c] - m));
    for (double& v : pr) v /= z;
    return pr;
  };
  std::vector<double> p = probs_of(p_logits.d->values.data());
  std::vector<double> q = probs_of(q_logits.d->values.data());
  std::vector<double> t(p.size());  // log(p/q) with the floor applied inside both logs
  double kl = 0.0;
  for (size_t c = 0; c < p.size(); ++c) {
    t[c] = std::log(std::max(p[c], kFloor)) - std::log(std::max(q[c], kFloor));
    kl += p[c] * t[c];
  }
  bool rg = grad_enabled() && (p_logits.requires_grad() || q_logits.requires_grad());
  Tensor out = Tensor::scalar(kl);
  out.d->requires_grad = rg;
  if (rg) {
    auto pd = p_logits.d, qd = q_logits.d, od = out.d;
    // backward uses the reduced forms p*(t - kl) and q - p, which cancel
    // bitwise when the two logit vectors coincide instead of leaving the
    // ~1e-19 residue a chained softmax/log backward would
    tape().record(od, [pd, qd, od, kl, p = std::move(p), q = std::move(q), t = std::move(t)] {
      const double g = od->grad[0];
      if (pd->requires_grad) {
        pd->ensure_grad();
        for (size_t c = 0; c < p.size(); ++c) pd->grad[c] += g * p[c] * (t[c] - kl);
      }
      if (qd->requires_grad) {
        qd->ensure_grad();
        for (size_t c = 0; c < q.size(); ++c) qd->grad[c] += g * (q[c] - p[c]);
      }
    });
  }
  return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, bool* zero_flag) {
  expect_defined(a, "cosine_similarity");
  expect_defined(b, "cosine_similarity");
  if (a.numel() != b.numel()) {
    throw std::invalid_argument("cosine_similarity: lengths " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  }
  const size_t n = a.d->values.size();
  const double *av = a.d->values.data(), *bv = b.d->values.data();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  constexpr double kEps = 1e-12;
  if (na < kEps || nb < kEps) {
    if (zero_flag) *zero_flag = true;
    return Tensor::scalar(0.0);  // degenerate direction: constant, no grad path
  }
  if (zero_flag) *zero_flag = false;
  const double cosv = dot / (na * nb);
  bool rg = grad_enabled() && (a.requires_grad() || b.requires_grad());
  Tensor out = Tensor::scalar(cosv);
  out.d->requires_grad = rg;
  if (rg) {
    auto ad = a.d, bd = b.d, od = out.d;
    tape().record(od, [ad, bd, od, n, na, nb, cosv] {
      const double g = od->grad[0];
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          ad->grad[i] += g * (bd->values[i] / (na * nb) - cosv * ad->values[i] / (na * na));
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          bd->grad[i] += g * (ad->values[i] / (na * nb) - cosv * bd->values[i] / (nb * nb));
      }
    });
  }
  return out;
}

Tensor mean_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_scalars: no operands");
  std::vector<Tensor> rows;
  rows.reserve(xs.size());
  for (const Tensor& x : xs) {
    if (x.numel() != 1) {
      throw std::invalid_argument("mean_scalars: operand shape " + shape_str(x.shape()) +
                                  " is not scalar");
    }
    rows.push_back(reshape(x, {1}));
  }
  return mul_scalar(sum_all(concat(rows, 0)), 1.0 / static_cast<double>(xs.size()));
}

}  // namespace csta
