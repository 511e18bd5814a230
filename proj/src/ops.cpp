#include "cilforge/ops.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "cilforge/errors.hpp"

namespace cilforge::ops {

namespace {

bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!grad_recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record(std::vector<Tensor> inputs, const Tensor& out, BackwardFn fn) {
  Tape::active()->record(std::move(inputs), out, std::move(fn));
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Index maps from each output element to its source element in a and b.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t pos = r - 1 - k;
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[pos] = std::max(da, db);
    sa[pos] = da == 1 ? 0 : stride_a;
    sb[pos] = db == 1 ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
  const std::size_t n = numel(p.out);
  p.ia.resize(n);
  p.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.ia[i] = oa;
    p.ib[i] = ob;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return p;
}

template <class F>
std::vector<double> apply_binary(const Broadcast& p, std::span<const double> a,
                                 std::span<const double> b, F f) {
  const std::size_t n = numel(p.out);
  std::vector<double> out(n);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a[p.ia[i]], b[p.ib[i]]);
  }
  return out;
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  auto p = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  std::vector<double> v;
  switch (op) {
    case BinOp::kAdd: v = apply_binary(*p, a.data(), b.data(), std::plus<>()); break;
    case BinOp::kSub: v = apply_binary(*p, a.data(), b.data(), std::minus<>()); break;
    case BinOp::kMul: v = apply_binary(*p, a.data(), b.data(), std::multiplies<>()); break;
    case BinOp::kDiv: v = apply_binary(*p, a.data(), b.data(), std::divides<>()); break;
  }
  Tensor out(p->out, std::move(v));
  if (!tracks({&a, &b})) return out;
  record({a, b}, out, [p, op](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto av = ctx.input(0).data();
    const auto bv = ctx.input(1).data();
    const std::size_t n = g.size();
    auto ia = [&](std::size_t i) { return p->same ? i : p->ia[i]; };
    auto ib = [&](std::size_t i) { return p->same ? i : p->ib[i]; };
    if (ctx.needs(0)) {
      auto ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::kAdd:
          case BinOp::kSub: ga[ia(i)] += g[i]; break;
          case BinOp::kMul: ga[ia(i)] += g[i] * bv[ib(i)]; break;
          case BinOp::kDiv: ga[ia(i)] += g[i] / bv[ib(i)]; break;
        }
      }
    }
    if (ctx.needs(1)) {
      auto gb = ctx.grad_in(1);
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::kAdd: gb[ib(i)] += g[i]; break;
          case BinOp::kSub: gb[ib(i)] -= g[i]; break;
          case BinOp::kMul: gb[ib(i)] += g[i] * av[ia(i)]; break;
          case BinOp::kDiv: {
            const double d = bv[ib(i)];
            gb[ib(i)] -= g[i] * av[ia(i)] / (d * d);
            break;
          }
        }
      }
    }
  });
  return out;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> v(xv.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(xv[i]);
  Tensor out(x.shape(), std::move(v));
  if (!tracks({&x})) return out;
  record({x}, out, [deriv](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto xv = ctx.input(0).data();
    const auto yv = ctx.output().data();
    auto gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
  return out;
}

void check_finite(const Tensor& x, const char* op) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericInputError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) throw mismatch();
  const std::size_t batch = a.numel() / (m * k);
  bool shared = b.rank() == 2;
  if (!shared) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw mismatch();
    }
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> c(batch * m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* A = av.data() + s * m * k;
    const double* B = bv.data() + (shared ? 0 : s * k * n);
    double* C = c.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  Tensor out(std::move(out_shape), std::move(c));
  if (!tracks({&a, &b})) return out;
  record({a, b}, out, [batch, m, k, n, shared](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto av = ctx.input(0).data();
    const auto bv = ctx.input(1).data();
    const bool need_a = ctx.needs(0), need_b = ctx.needs(1);
    std::span<double> ga = need_a ? ctx.grad_in(0) : std::span<double>();
    std::span<double> gb = need_b ? ctx.grad_in(1) : std::span<double>();
    for (std::size_t s = 0; s < batch; ++s) {
      const double* A = av.data() + s * m * k;
      const double* B = bv.data() + (shared ? 0 : s * k * n);
      const double* G = g.data() + s * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          if (need_a) {
            const double* brow = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[s * m * k + i * k + p] += acc;
          }
          if (need_b) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            double* gbrow = gb.data() + (shared ? 0 : s * k * n) + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1);
  const std::size_t batch = x.numel() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> v(x.numel());
  const auto xv = x.data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) v[s * r * c + j * r + i] = xv[s * r * c + i * c + j];
    }
  }
  Tensor out(std::move(shape), std::move(v));
  if (!tracks({&x})) return out;
  record({x}, out, [batch, r, c](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[s * r * c + i * c + j] += g[s * r * c + j * r + i];
      }
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.values());
  if (!tracks({&x})) return out;
  record({x}, out, [](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax needs rank >= 1");
  check_finite(x, "softmax");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  Tensor out(x.shape(), std::move(y));
  if (!tracks({&x})) return out;
  record({x}, out, [rows, n](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto yv = ctx.output().data();
    auto gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < n; ++j) dotp += g[r * n + j] * yv[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[r * n + j] * (g[r * n + j] - dotp);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("log_softmax needs rank >= 1");
  check_finite(x, "log_softmax");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[j] = in[j] - lz;
  }
  Tensor out(x.shape(), std::move(y));
  if (!tracks({&x})) return out;
  record({x}, out, [rows, n](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto yv = ctx.output().data();
    auto gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        gx[r * n + j] += g[r * n + j] - std::exp(yv[r * n + j]) * gs;
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  if (!tracks({&x, &gamma, &beta})) return out;
  record({x, gamma, beta}, out, [rows, d, xhat, rstd](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    const auto gv = ctx.input(1).data();
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * d;
      const double* hr = xhat->data() + r * d;
      if (ctx.needs(1)) {
        auto gg = ctx.grad_in(1);
        for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
      }
      if (ctx.needs(2)) {
        auto gb = ctx.grad_in(2);
        for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
      }
      if (ctx.needs(0)) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = gr[j] * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * hr[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        auto gx = ctx.grad_in(0);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += (*rstd)[r] * (dxhat[j] - m1 - hr[j] * m2);
        }
      }
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  const std::size_t ax = norm_axis(axis, ref.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= ref[i];
  for (std::size_t i = ax + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(ref) +
                           " along axis " + std::to_string(ax));
    }
    widths.push_back(s[ax] * inner);
    total += s[ax];
  }
  Shape shape = ref;
  shape[ax] = total;
  const std::size_t row = total * inner;
  std::vector<double> v(outer * row);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * widths[k], widths[k], v.data() + o * row + off);
    }
    off += widths[k];
  }
  Tensor out(std::move(shape), std::move(v));
  bool any = false;
  if (grad_recording()) {
    for (const Tensor& p : parts) any = any || p.requires_grad();
  }
  if (!any) return out;
  record(parts, out, [outer, row, widths](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (ctx.needs(k)) {
        auto gk = ctx.grad_in(k);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[o * widths[k] + j] += g[o * row + off + j];
        }
      }
      off += widths[k];
    }
  });
  return out;
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  if (length == 0 || start + length > s[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(ax) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[ax] * inner, dst_row = length * inner, skip = start * inner;
  Shape shape = s;
  shape[ax] = length;
  std::vector<double> v(outer * dst_row);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + o * src_row + skip, dst_row, v.data() + o * dst_row);
  }
  Tensor out(std::move(shape), std::move(v));
  if (!tracks({&x})) return out;
  record({x}, out, [outer, src_row, dst_row, skip](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < dst_row; ++j) gx[o * src_row + skip + j] += g[o * dst_row + j];
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (!tracks({&x})) return out;
  record({x}, out, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& v : ctx.grad_in(0)) v += g;
  });
  return out;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) shape.push_back(s[i]);
    else if (keepdim) shape.push_back(1);
  }
  std::vector<double> v(outer * inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = xv.data() + (o * n + k) * inner;
      double* dst = v.data() + o * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  }
  Tensor out(std::move(shape), std::move(v));
  if (!tracks({&x})) return out;
  record({x}, out, [outer, n, inner](BackwardContext& ctx) {
    const auto g = ctx.grad_out();
    auto gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < inner; ++j) gx[(o * n + k) * inner + j] += g[o * inner + j];
      }
    }
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

// ---------------------------------------------------------------------------

namespace {
Tensor target_weights(const Tensor& logits, std::span<const int> targets,
                      std::span<const double> weights) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy expects [B x C] logits, got " + shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  }
  std::vector<double> w(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw LabelError("target " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
    }
    const double wi = weights.empty() ? 1.0 : weights[i];
    w[i * c + static_cast<std::size_t>(t)] = -wi / static_cast<double>(b);
  }
  return Tensor({b, c}, std::move(w));
}
}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  Tensor w = target_weights(logits, targets, {});
  return sum(mul(log_softmax(logits), w));
}

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights) {
  if (weights.size() != targets.size()) throw DimensionError("weighted_cross_entropy: weight count");
  Tensor w = target_weights(logits, targets, weights);
  return sum(mul(log_softmax(logits), w));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError("dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return sum(mul(a, reshape(b, a.shape())));
}

Tensor normalize(const Tensor& x) {
  Tensor sq = sum(mul(x, x), -1, true);
  return div(x, sqrt(add_scalar(sq, 1e-24)));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError("cosine_similarity: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double na = 0.0, nb = 0.0;
  for (double v : a.data()) na += v * v;
  for (double v : b.data()) nb += v * v;
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("cosine_similarity: zero-norm operand, returning 0");
    return Tensor::scalar(0.0);
  }
  Tensor num = dot(a, b);
  Tensor den = mul(sqrt(sum(mul(a, a))), sqrt(sum(mul(b, b))));
  return div(num, den);
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  return matmul(normalize(a), transpose(normalize(b)));
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor expand(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return add(Tensor::zeros(shape), x);
}

}  // namespace cilforge::ops
