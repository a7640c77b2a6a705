#include "muser/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <string>

#include "muser/error.hpp"

namespace muser::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

constexpr const char* kPrimitives[] = {
    "matmul",     "add",        "sub",           "mul",        "scale",           "tanh",
    "elu",        "abs",        "layer_norm",    "embedding",  "softmax",         "cross_entropy",
    "concat_cols", "slice_cols", "concat_rows",  "gather_rows", "shift_rows",     "transpose",
    "block_transpose", "reshape", "sum",         "mean",       "dropout",         "straight_through",
    "pairwise_diff", "linear_attention"};

void ensure_registered() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    for (const char* name : kPrimitives) register_primitive(name);
  });
}

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected rank-2 tensor, got " + t.shape_string());
}

// C (+)= op(A) * op(B), honouring the tape precision.
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c, bool accumulate, Precision prec) {
  const auto ar = static_cast<Eigen::Index>(a.rows()), ac = static_cast<Eigen::Index>(a.cols());
  const auto br = static_cast<Eigen::Index>(b.rows()), bc = static_cast<Eigen::Index>(b.cols());
  MapC A(a.data(), ar, ac);
  MapC B(b.data(), br, bc);
  Map C(c.data(), static_cast<Eigen::Index>(c.rows()), static_cast<Eigen::Index>(c.cols()));
  if (prec == Precision::f32) {
    RowMatF Af = A.cast<float>();
    RowMatF Bf = B.cast<float>();
    RowMatF Cf;
    if (ta && tb) Cf.noalias() = Af.transpose() * Bf.transpose();
    else if (ta) Cf.noalias() = Af.transpose() * Bf;
    else if (tb) Cf.noalias() = Af * Bf.transpose();
    else Cf.noalias() = Af * Bf;
    if (accumulate) C += Cf.cast<double>();
    else C = Cf.cast<double>();
    return;
  }
  if (!accumulate) C.setZero();
  if (ta && tb) C.noalias() += A.transpose() * B.transpose();
  else if (ta) C.noalias() += A.transpose() * B;
  else if (tb) C.noalias() += A * B.transpose();
  else C.noalias() += A * B;
}

template <class F, class G>
Var unary(Var a, const char* name, F forward, G derivative) {
  ensure_registered();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  return a.tape().record(name, std::move(out), {a}, [derivative](Tape& t, std::uint32_t self) {
    const auto in = t.input(self, 0);
    Tensor* gx = t.grad_slot(in);
    if (!gx) return;
    const Tensor& x = t.value(in);
    const Tensor& y = t.value(self);
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g[i] * derivative(x[i], y[i]);
  });
}

}  // namespace

void register_builtin_primitives() { ensure_registered(); }

Var matmul(Var a, Var b) {
  ensure_registered();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  require(A.cols() == B.rows(), "matmul: inner dimensions differ: " + A.shape_string() + " x " + B.shape_string());
  Tensor out({A.rows(), B.cols()});
  const Precision prec = a.tape().precision();
  gemm(A, false, B, false, out, false, prec);
  return a.tape().record("matmul", std::move(out), {a, b}, [prec](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) gemm(g, false, t.value(ib), true, *ga, true, prec);
    if (Tensor* gb = t.grad_slot(ib)) gemm(t.value(ia), true, g, false, *gb, true, prec);
  });
}

Var add(Var a, Var b) {
  ensure_registered();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out = A;
  if (A.same_shape(B)) {
    for (std::size_t i = 0; i < A.size(); ++i) out[i] += B[i];
  } else {
    require(A.cols() == B.cols() && B.rows() > 0 && A.rows() % B.rows() == 0,
            "add: cannot broadcast " + B.shape_string() + " onto " + A.shape_string());
    const std::size_t br = B.rows(), c = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r) {
      const double* src = B.data() + (r % br) * c;
      double* dst = out.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  }
  return a.tape().record("add", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      if (gb->size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
      } else {
        const std::size_t br = gb->rows(), c = gb->cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double* src = g.data() + r * c;
          double* dst = gb->data() + (r % br) * c;
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
    }
  });
}

Var sub(Var a, Var b) {
  ensure_registered();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "sub: shape mismatch " + A.shape_string() + " vs " + B.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < A.size(); ++i) out[i] -= B[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(t.input(self, 0))) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_slot(t.input(self, 1))) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  ensure_registered();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "mul: shape mismatch " + A.shape_string() + " vs " + B.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < A.size(); ++i) out[i] *= B[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& B = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      const Tensor& A = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  ensure_registered();
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.tape().record("scale", std::move(out), {a}, [s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(t.input(self, 0))) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var elu(Var a) {
  return unary(
      a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var abs(Var a) {
  return unary(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "layer_norm");
  const std::size_t n = X.rows(), c = X.cols();
  require(gain.value().size() == c && bias.value().size() == c, "layer_norm: gain/bias width mismatch");
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  Tensor out({n, c});
  // Saved per-row statistics: xhat and 1/sigma.
  Tensor xhat({n, c});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = X.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat.at(r, j) = h;
      out.at(r, j) = h * G[j] + B[j];
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c](Tape& t, std::uint32_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& G = t.value(t.input(self, 1));
        if (Tensor* gg = t.grad_slot(t.input(self, 1))) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gg)[j] += g.at(r, j) * xhat.at(r, j);
        }
        if (Tensor* gb = t.grad_slot(t.input(self, 2))) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g.at(r, j);
        }
        if (Tensor* gx = t.grad_slot(t.input(self, 0))) {
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dh = g.at(r, j) * G[j];
              s1 += dh;
              s2 += dh * xhat.at(r, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double dh = g.at(r, j) * G[j];
              gx->at(r, j) += inv_std[r] * (dh - inv_c * s1 - xhat.at(r, j) * inv_c * s2);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const std::int32_t> indices) {
  ensure_registered();
  const Tensor& T = table.value();
  require_matrix(T, "embedding");
  const std::size_t d = T.cols();
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    require(idx >= 0 && static_cast<std::size_t>(idx) < T.rows(),
            "embedding: index " + std::to_string(idx) + " out of range " + std::to_string(T.rows()));
    std::copy_n(T.data() + static_cast<std::size_t>(idx) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> saved(indices.begin(), indices.end());
  return table.tape().record("embedding", std::move(out), {table},
                             [saved = std::move(saved), d](Tape& t, std::uint32_t self) {
                               Tensor* gt = t.grad_slot(t.input(self, 0));
                               if (!gt) return;
                               const Tensor& g = t.out_grad(self);
                               for (std::size_t i = 0; i < saved.size(); ++i) {
                                 double* dst = gt->data() + static_cast<std::size_t>(saved[i]) * d;
                                 const double* src = g.data() + i * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                               }
                             });
}

Var softmax(Var x) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "softmax");
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    const auto xr = X.row(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out.at(r, j) = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) /= z;
  }
  return x.tape().record("softmax", std::move(out), {x}, [n, c](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.out_grad(self);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(r, j) * y.at(r, j);
      for (std::size_t j = 0; j < c; ++j) gx->at(r, j) += y.at(r, j) * (g.at(r, j) - dot);
    }
  });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const double> weights) {
  ensure_registered();
  const Tensor& X = logits.value();
  require_matrix(X, "cross_entropy");
  const std::size_t n = X.rows(), c = X.cols();
  require(targets.size() == n, "cross_entropy: expected " + std::to_string(n) + " targets");
  require(weights.empty() || weights.size() == n, "cross_entropy: weight count mismatch");
  Tensor probs({n, c});
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  double wsum = 0.0, loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto tr = targets[r];
    require(tr >= 0 && static_cast<std::size_t>(tr) < c, "cross_entropy: target out of range");
    const auto xr = X.row(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs.at(r, j) = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs.at(r, j) /= z;
    if (w[r] != 0.0) {
      loss += w[r] * (std::log(z) + mx - xr[static_cast<std::size_t>(tr)]);
      wsum += w[r];
    }
  }
  const double inv = wsum > 0.0 ? 1.0 / wsum : 0.0;
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss * inv), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), inv, n, c](Tape& t, std::uint32_t self) {
        Tensor* gx = t.grad_slot(t.input(self, 0));
        if (!gx) return;
        const double g = t.out_grad(self)[0] * inv;
        for (std::size_t r = 0; r < n; ++r) {
          if (w[r] == 0.0) continue;
          const double s = g * w[r];
          for (std::size_t j = 0; j < c; ++j) gx->at(r, j) += s * probs.at(r, j);
          gx->at(r, static_cast<std::size_t>(tgt[r])) -= s;
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  ensure_registered();
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    require(p.value().rows() == n, "concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(P.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  return parts.front().tape().record("concat_cols", std::move(out), parts,
                                     [widths, n, total](Tape& t, std::uint32_t self) {
                                       const Tensor& g = t.out_grad(self);
                                       std::size_t off = 0;
                                       for (std::size_t k = 0; k < widths.size(); ++k) {
                                         if (Tensor* gp = t.grad_slot(t.input(self, k))) {
                                           for (std::size_t r = 0; r < n; ++r) {
                                             const double* src = g.data() + r * total + off;
                                             double* dst = gp->data() + r * widths[k];
                                             for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
                                           }
                                         }
                                         off += widths[k];
                                       }
                                     });
}

Var slice_cols(Var x, std::size_t begin, std::size_t width) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "slice_cols");
  const std::size_t n = X.rows(), c = X.cols();
  require(begin + width <= c, "slice_cols: range exceeds width");
  Tensor out({n, width});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(X.data() + r * c + begin, width, out.data() + r * width);
  return x.tape().record("slice_cols", std::move(out), {x}, [n, c, begin, width](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < width; ++j) gx->at(r, begin + j) += g.at(r, j);
    (void)c;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  ensure_registered();
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_rows");
    require(p.value().cols() == c, "concat_rows: column count mismatch");
    total += p.value().rows();
  }
  Tensor out({total, c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
  }
  return parts.front().tape().record("concat_rows", std::move(out), parts, [](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < t.inputs(self).size(); ++k) {
      const auto in = t.input(self, k);
      const std::size_t sz = t.value(in).size();
      if (Tensor* gp = t.grad_slot(in)) {
        for (std::size_t i = 0; i < sz; ++i) (*gp)[i] += g[off + i];
      }
      off += sz;
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "gather_rows");
  const std::size_t c = X.cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < X.rows(), "gather_rows: row index out of range");
    std::copy_n(X.data() + rows[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return x.tape().record("gather_rows", std::move(out), {x}, [saved = std::move(saved), c](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx->at(saved[i], j) += g.at(i, j);
  });
}

Var shift_rows(Var x, std::size_t segment) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "shift_rows");
  require(segment > 0 && X.rows() % segment == 0, "shift_rows: rows not a multiple of segment");
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    if (r % segment == 0) continue;
    std::copy_n(X.data() + (r - 1) * c, c, out.data() + r * c);
  }
  return x.tape().record("shift_rows", std::move(out), {x}, [n, c, segment](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t r = 0; r < n; ++r) {
      if (r % segment == 0) continue;
      for (std::size_t j = 0; j < c; ++j) gx->at(r - 1, j) += g.at(r, j);
    }
  });
}

Var transpose(Var x) { return block_transpose(x, x.value().rows()); }

Var block_transpose(Var x, std::size_t block_rows) {
  ensure_registered();
  const Tensor& X = x.value();
  require_matrix(X, "block_transpose");
  require(block_rows > 0 && X.rows() % block_rows == 0, "block_transpose: rows not a multiple of block size");
  const std::size_t blocks = X.rows() / block_rows, c = X.cols();
  Tensor out({blocks * c, block_rows});
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = 0; r < block_rows; ++r)
      for (std::size_t j = 0; j < c; ++j) out.at(b * c + j, r) = X.at(b * block_rows + r, j);
  const char* name = blocks == 1 ? "transpose" : "block_transpose";
  return x.tape().record(name, std::move(out), {x}, [blocks, block_rows, c](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t r = 0; r < block_rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gx->at(b * block_rows + r, j) += g.at(b * c + j, r);
  });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  ensure_registered();
  Tensor out = x.value();
  out.reshape(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var sum(Var x) {
  ensure_registered();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const double g = t.out_grad(self)[0];
    for (double& v : gx->values()) v += g;
  });
}

Var mean(Var x) {
  ensure_registered();
  const std::size_t n = x.value().size();
  require(n > 0, "mean: empty tensor");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("mean", Tensor::scalar(s / static_cast<double>(n)), {x}, [n](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const double g = t.out_grad(self)[0] / static_cast<double>(n);
    for (double& v : gx->values()) v += g;
  });
}

Var dropout(Var x, double p) {
  ensure_registered();
  require(p >= 0.0 && p < 1.0, "dropout: probability must be in [0, 1)");
  if (!x.tape().training() || p == 0.0) return x;
  const Tensor& X = x.value();
  Tensor mask(X.shape());
  Tensor out(X.shape());
  const double keep = 1.0 / (1.0 - p);
  auto& rng = x.tape().rng();
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u >= p ? keep : 0.0;
    out[i] = X[i] * mask[i];
  }
  return x.tape().record("dropout", std::move(out), {x}, [mask = std::move(mask)](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

Var straight_through(Var x, const Tensor& quantized) {
  ensure_registered();
  require(x.value().same_shape(quantized), "straight_through: shape mismatch");
  return x.tape().record("straight_through", quantized, {x}, [](Tape& t, std::uint32_t self) {
    Tensor* gx = t.grad_slot(t.input(self, 0));
    if (!gx) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var pairwise_diff(Var z) {
  ensure_registered();
  const Tensor& Z = z.value();
  require_matrix(Z, "pairwise_diff");
  const std::size_t m = Z.rows(), n = Z.cols();
  Tensor out({m, m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < n; ++t) out[(i * m + j) * n + t] = Z.at(i, t) - Z.at(j, t);
  return z.tape().record("pairwise_diff", std::move(out), {z}, [m, n](Tape& t, std::uint32_t self) {
    Tensor* gz = t.grad_slot(t.input(self, 0));
    if (!gz) return;
    const Tensor& g = t.out_grad(self);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t s = 0; s < n; ++s) {
          const double v = g[(i * m + j) * n + s];
          gz->at(i, s) += v;
          gz->at(j, s) -= v;
        }
  });
}

}  // namespace muser::num
