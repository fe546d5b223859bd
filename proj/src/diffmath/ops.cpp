#include "hpm/diffmath/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "hpm/error.hpp"

namespace hpm::diff {

namespace {

void require_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

double stable_logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k)
    throw DimensionError("matmul: inner extents disagree, " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.data() + i * n;
    const double* arow = A.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return a.tape().record("matmul", std::move(C), {a, b}, [m, k, n](BackwardContext& ctx) {
    const Tensor& G = ctx.out_grad();
    const Tensor& A = ctx.in_value(0);
    const Tensor& B = ctx.in_value(1);
    if (ctx.in_needs_grad(0)) {
      Tensor& dA = ctx.in_grad(0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.data() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[j] * brow[j];
          dA[i * k + p] += s;
        }
      }
    }
    if (ctx.in_needs_grad(1)) {
      Tensor& dB = ctx.in_grad(1);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          double* db = dB.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) db[j] += av * g[j];
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.in_needs_grad(k)) continue;
      Tensor& d = ctx.in_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      Tensor& d = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (ctx.in_needs_grad(1)) {
      Tensor& d = ctx.in_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      Tensor& d = ctx.in_grad(0);
      const Tensor& other = ctx.in_value(1);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
    if (ctx.in_needs_grad(1)) {
      Tensor& d = ctx.in_grad(1);
      const Tensor& other = ctx.in_value(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.tape().record("scale", std::move(out), {a}, [s](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    Tensor& d = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

Var add_row(Var x, Var b) {
  require_same_tape("add_row", x, b);
  const Tensor& X = x.value();
  require_matrix("add_row", X);
  const std::size_t rows = X.rows(), d = X.cols();
  if (b.value().size() != d)
    throw DimensionError("add_row: bias " + shape_str(b.value().shape()) + " does not match " +
                         shape_str(X.shape()));
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += b.value()[c];
  return x.tape().record("add_row", std::move(out), {x, b}, [rows, d](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      Tensor& dx = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (ctx.in_needs_grad(1)) {
      Tensor& db = ctx.in_grad(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) db[c] += g[r * d + c];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    for (double& d : ctx.in_grad(0).values()) d += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("mean", Tensor::scalar(s / n), {x}, [n](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0] / n;
    for (double& d : ctx.in_grad(0).values()) d += g;
  });
}

Var row_mean(Var x) {
  const Tensor& X = x.value();
  require_matrix("row_mean", X);
  const std::size_t rows = X.rows(), d = X.cols();
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += X[r * d + c];
    out[r] = s / static_cast<double>(d);
  }
  return x.tape().record("row_mean", std::move(out), {x}, [rows, d](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double gr = g[r] / static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += gr;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape("layer_norm", x, gain);
  require_same_tape("layer_norm", x, bias);
  const Tensor& X = x.value();
  require_matrix("layer_norm", X);
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = X.rows(), d = X.cols();
  if (d == 0) throw DimensionError("layer_norm: empty feature dimension");
  if (gain.value().size() != d || bias.value().size() != d)
    throw DimensionError("layer_norm: affine parameters " + shape_str(gain.value().shape()) +
                         " / " + shape_str(bias.value().shape()) + " do not match " +
                         shape_str(X.shape()));
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Tensor out(X.shape());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mu) * rs;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * G[c] + B[c];
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias}, [rows, d, xhat, rstd](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        const Tensor& G = ctx.in_value(1);
        if (ctx.in_needs_grad(0)) {
          Tensor& dx = ctx.in_grad(0);
          std::vector<double> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dh[c] = g[r * d + c] * G[c];
              m1 += dh[c];
              m2 += dh[c] * (*xhat)[r * d + c];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c)
              dx[r * d + c] += (*rstd)[r] * (dh[c] - m1 - (*xhat)[r * d + c] * m2);
          }
        }
        if (ctx.in_needs_grad(1)) {
          Tensor& dg = ctx.in_grad(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) dg[c] += g[r * d + c] * (*xhat)[r * d + c];
        }
        if (ctx.in_needs_grad(2)) {
          Tensor& db = ctx.in_grad(2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) db[c] += g[r * d + c];
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = gelu_value(v);
  return x.tape().record("gelu", std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& X = ctx.in_value(0);
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      dx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var logistic(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = stable_logistic(v);
  return x.tape().record("logistic", std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& y = ctx.out_value();
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var log_logistic(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = -stable_softplus(-v);
  return x.tape().record("log_logistic", std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& X = ctx.in_value(0);
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * stable_logistic(-X[i]);
  });
}

Var softplus(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = stable_softplus(v);
  return x.tape().record("softplus", std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& X = ctx.in_value(0);
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * stable_logistic(X[i]);
  });
}

Var l2_normalize_rows(Var x, double eps) {
  if (eps <= 0.0) throw ContractError("l2_normalize_rows: eps must be positive");
  const Tensor& X = x.value();
  require_matrix("l2_normalize_rows", X);
  const std::size_t rows = X.rows(), d = X.cols();
  auto denom = std::make_shared<std::vector<double>>(rows);
  auto clamped = std::make_shared<std::vector<char>>(rows);
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) n2 += X[r * d + c] * X[r * d + c];
    const double n = std::sqrt(n2);
    (*clamped)[r] = n < eps;
    (*denom)[r] = std::max(n, eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = X[r * d + c] / (*denom)[r];
  }
  return x.tape().record(
      "l2_normalize_rows", std::move(out), {x}, [rows, d, denom, clamped](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        const Tensor& y = ctx.out_value();
        Tensor& dx = ctx.in_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double inv = 1.0 / (*denom)[r];
          double dot = 0.0;
          if (!(*clamped)[r])
            for (std::size_t c = 0; c < d; ++c) dot += y[r * d + c] * g[r * d + c];
          for (std::size_t c = 0; c < d; ++c)
            dx[r * d + c] += inv * (g[r * d + c] - y[r * d + c] * dot);
        }
      });
}

Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  require_matrix("softmax_rows", X);
  const std::size_t rows = X.rows(), d = X.cols();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double* yr = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < d; ++c) yr[c] /= s;
  }
  return x.tape().record("softmax_rows", std::move(out), {x}, [rows, d](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    const Tensor& y = ctx.out_value();
    Tensor& dx = ctx.in_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> ids) {
  const Tensor& X = x.value();
  if (X.rank() < 1) throw DimensionError("gather_rows: rank-0 input");
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  const std::size_t rows = X.rows(), d = X.cols();
  for (std::size_t id : ids)
    if (id >= rows)
      throw IndexError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(rows) + ")");
  Shape shape = X.shape();
  shape[0] = ids.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(X.data() + ids[r] * d, d, out.data() + r * d);
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return x.tape().record("gather_rows", std::move(out), {x},
                         [saved = std::move(saved), d](BackwardContext& ctx) {
                           const Tensor& g = ctx.out_grad();
                           Tensor& dx = ctx.in_grad(0);
                           for (std::size_t r = 0; r < saved.size(); ++r)
                             for (std::size_t c = 0; c < d; ++c)
                               dx[saved[r] * d + c] += g[r * d + c];
                         });
}

Var concat_rows(Var a, Var b) {
  require_same_tape("concat_rows", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols())
    throw DimensionError("concat_rows: column mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  const std::size_t d = A.cols();
  std::vector<double> v(A.storage());
  v.insert(v.end(), B.storage().begin(), B.storage().end());
  Tensor out({A.rows() + B.rows(), d}, std::move(v));
  const std::size_t split = A.size();
  return a.tape().record("concat_rows", std::move(out), {a, b}, [split](BackwardContext& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      Tensor& da = ctx.in_grad(0);
      for (std::size_t i = 0; i < split; ++i) da[i] += g[i];
    }
    if (ctx.in_needs_grad(1)) {
      Tensor& db = ctx.in_grad(1);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[split + i];
    }
  });
}

Var attention(Var q, Var k, Var v, std::size_t heads, std::size_t seg_len) {
  require_same_tape("attention", q, k);
  require_same_tape("attention", q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_matrix("attention", Q);
  require_same_shape("attention", Q, K);
  require_same_shape("attention", Q, V);
  const std::size_t rows = Q.rows(), d = Q.cols();
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  if (seg_len == 0 || rows % seg_len != 0)
    throw DimensionError("attention: " + std::to_string(rows) + " rows not a multiple of segment " +
                         std::to_string(seg_len));
  const std::size_t dh = d / heads, segs = rows / seg_len, L = seg_len;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<double>>(segs * heads * L * L);
  Tensor out({rows, d});
  std::vector<double> srow(L);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + (s * heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const double* qi = Q.data() + (s * L + i) * d + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < L; ++j) {
          const double* kj = K.data() + (s * L + j) * d + h * dh;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          srow[j] = dot * sc;
          mx = std::max(mx, srow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) z += (srow[j] = std::exp(srow[j] - mx));
        double* oi = out.data() + (s * L + i) * d + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          const double p = srow[j] / z;
          P[i * L + j] = p;
          const double* vj = V.data() + (s * L + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return q.tape().record(
      "attention", std::move(out), {q, k, v},
      [=](BackwardContext& ctx) {
        const Tensor& G = ctx.out_grad();
        const Tensor& Q = ctx.in_value(0);
        const Tensor& K = ctx.in_value(1);
        const Tensor& V = ctx.in_value(2);
        Tensor* dQ = ctx.in_needs_grad(0) ? &ctx.in_grad(0) : nullptr;
        Tensor* dK = ctx.in_needs_grad(1) ? &ctx.in_grad(1) : nullptr;
        Tensor* dV = ctx.in_needs_grad(2) ? &ctx.in_grad(2) : nullptr;
        std::vector<double> dS(L * L);
        for (std::size_t s = 0; s < segs; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs->data() + (s * heads + h) * L * L;
            for (std::size_t i = 0; i < L; ++i) {
              const double* gi = G.data() + (s * L + i) * d + h * dh;
              double rowdot = 0.0;
              for (std::size_t j = 0; j < L; ++j) {
                const double* vj = V.data() + (s * L + j) * d + h * dh;
                double dp = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dp += gi[c] * vj[c];
                dS[i * L + j] = dp;
                rowdot += dp * P[i * L + j];
                if (dV) {
                  double* dvj = dV->data() + (s * L + j) * d + h * dh;
                  const double p = P[i * L + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * gi[c];
                }
              }
              for (std::size_t j = 0; j < L; ++j)
                dS[i * L + j] = P[i * L + j] * (dS[i * L + j] - rowdot) * sc;
            }
            for (std::size_t i = 0; i < L; ++i) {
              const double* qi = Q.data() + (s * L + i) * d + h * dh;
              double* dqi = dQ ? dQ->data() + (s * L + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < L; ++j) {
                const double w = dS[i * L + j];
                const double* kj = K.data() + (s * L + j) * d + h * dh;
                if (dqi)
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += w * kj[c];
                if (dK) {
                  double* dkj = dK->data() + (s * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += w * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace hpm::diff
