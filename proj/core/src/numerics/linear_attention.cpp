#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "muser/error.hpp"
#include "muser/numerics/ops.hpp"

namespace muser::num {

namespace {

inline double feature(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

struct Geometry {
  std::size_t sequences, q_seg, kv_seg, heads, dk, dv, d_model_k, d_model_v;
};

}  // namespace

Var linear_attention(Var q, Var k, Var v, const LinearAttentionOptions& options) {
  register_builtin_primitives();
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2) throw UsageError("linear_attention: expected rank-2 inputs");
  if (Q.rows() == 0 || K.rows() == 0) throw UsageError("linear_attention: zero-length sequence");
  if (Q.cols() != K.cols()) throw UsageError("linear_attention: query/key widths differ");
  if (K.rows() != V.rows()) throw UsageError("linear_attention: key/value lengths differ");

  Geometry g{};
  g.q_seg = options.q_segment ? options.q_segment : Q.rows();
  g.kv_seg = options.kv_segment ? options.kv_segment : K.rows();
  if (Q.rows() % g.q_seg || K.rows() % g.kv_seg) throw UsageError("linear_attention: rows not a multiple of segment");
  g.sequences = Q.rows() / g.q_seg;
  if (K.rows() / g.kv_seg != g.sequences) throw UsageError("linear_attention: query/key sequence counts differ");
  if (options.causal && g.q_seg != g.kv_seg) throw UsageError("linear_attention: causal mode needs equal lengths");
  g.heads = options.heads;
  if (g.heads == 0 || Q.cols() % g.heads || V.cols() % g.heads) {
    throw UsageError("linear_attention: widths not divisible by head count");
  }
  g.d_model_k = Q.cols();
  g.d_model_v = V.cols();
  g.dk = Q.cols() / g.heads;
  g.dv = V.cols() / g.heads;
  const bool causal = options.causal;

  Tensor fq(Q.shape()), fk(K.shape());
  for (std::size_t i = 0; i < Q.size(); ++i) fq[i] = feature(Q[i]);
  for (std::size_t i = 0; i < K.size(); ++i) fk[i] = feature(K[i]);

  Tensor out({Q.rows(), V.cols()});
  std::vector<double> den(Q.rows() * g.heads);
  std::vector<double> S(g.dk * g.dv), z(g.dk);

  for (std::size_t b = 0; b < g.sequences; ++b) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      std::fill(S.begin(), S.end(), 0.0);
      std::fill(z.begin(), z.end(), 0.0);
      auto add_kv = [&](std::size_t s) {
        const double* kr = fk.data() + s * g.d_model_k + h * g.dk;
        const double* vr = V.data() + s * g.d_model_v + h * g.dv;
        for (std::size_t i = 0; i < g.dk; ++i) {
          z[i] += kr[i];
          double* Si = S.data() + i * g.dv;
          for (std::size_t j = 0; j < g.dv; ++j) Si[j] += kr[i] * vr[j];
        }
      };
      if (!causal) {
        for (std::size_t s = 0; s < g.kv_seg; ++s) add_kv(b * g.kv_seg + s);
      }
      for (std::size_t t = 0; t < g.q_seg; ++t) {
        const std::size_t row = b * g.q_seg + t;
        if (causal) add_kv(b * g.kv_seg + t);
        const double* qr = fq.data() + row * g.d_model_k + h * g.dk;
        double d = 0.0;
        for (std::size_t i = 0; i < g.dk; ++i) d += qr[i] * z[i];
        den[row * g.heads + h] = d;
        const double inv = 1.0 / std::max(d, kAttentionDenominatorFloor);
        double* o = out.data() + row * g.d_model_v + h * g.dv;
        for (std::size_t j = 0; j < g.dv; ++j) o[j] = 0.0;
        for (std::size_t i = 0; i < g.dk; ++i) {
          const double* Si = S.data() + i * g.dv;
          for (std::size_t j = 0; j < g.dv; ++j) o[j] += qr[i] * Si[j];
        }
        for (std::size_t j = 0; j < g.dv; ++j) o[j] *= inv;
      }
    }
  }

  return q.tape().record(
      "linear_attention", std::move(out), {q, k, v},
      [g, causal, fq = std::move(fq), fk = std::move(fk), den = std::move(den)](Tape& t, std::uint32_t self) {
        const auto iq = t.input(self, 0), ik = t.input(self, 1), iv = t.input(self, 2);
        Tensor* gq = t.grad_slot(iq);
        Tensor* gk = t.grad_slot(ik);
        Tensor* gv = t.grad_slot(iv);
        const Tensor& V = t.value(iv);
        const Tensor& O = t.value(self);
        const Tensor& G = t.out_grad(self);

        std::vector<double> S(g.dk * g.dv), z(g.dk), Gs(g.dk * g.dv), hs(g.dk);
        std::vector<double> dnum(g.q_seg * g.dv), dden(g.q_seg);
        std::vector<double> dfq(g.dk), dfk(g.dk);

        for (std::size_t b = 0; b < g.sequences; ++b) {
          for (std::size_t h = 0; h < g.heads; ++h) {
            // Upstream gradient split into numerator and denominator parts.
            for (std::size_t tt = 0; tt < g.q_seg; ++tt) {
              const std::size_t row = b * g.q_seg + tt;
              const double d = den[row * g.heads + h];
              const double D = std::max(d, kAttentionDenominatorFloor);
              const double* gr = G.data() + row * g.d_model_v + h * g.dv;
              const double* orow = O.data() + row * g.d_model_v + h * g.dv;
              double go = 0.0;
              for (std::size_t j = 0; j < g.dv; ++j) {
                dnum[tt * g.dv + j] = gr[j] / D;
                go += gr[j] * orow[j];
              }
              dden[tt] = d > kAttentionDenominatorFloor ? -go / D : 0.0;
            }

            auto kv_row = [&](std::size_t s) { return b * g.kv_seg + s; };

            // Query gradients need the (prefix) state S_t, z_t.
            if (gq) {
              std::fill(S.begin(), S.end(), 0.0);
              std::fill(z.begin(), z.end(), 0.0);
              auto add_kv = [&](std::size_t s) {
                const double* kr = fk.data() + kv_row(s) * g.d_model_k + h * g.dk;
                const double* vr = V.data() + kv_row(s) * g.d_model_v + h * g.dv;
                for (std::size_t i = 0; i < g.dk; ++i) {
                  z[i] += kr[i];
                  double* Si = S.data() + i * g.dv;
                  for (std::size_t j = 0; j < g.dv; ++j) Si[j] += kr[i] * vr[j];
                }
              };
              if (!causal) {
                for (std::size_t s = 0; s < g.kv_seg; ++s) add_kv(s);
              }
              for (std::size_t tt = 0; tt < g.q_seg; ++tt) {
                if (causal) add_kv(tt);
                const std::size_t row = b * g.q_seg + tt;
                const double* dn = dnum.data() + tt * g.dv;
                const double* qraw = t.value(iq).data() + row * g.d_model_k + h * g.dk;
                const double* qf = fq.data() + row * g.d_model_k + h * g.dk;
                double* gqr = gq->data() + row * g.d_model_k + h * g.dk;
                for (std::size_t i = 0; i < g.dk; ++i) {
                  const double* Si = S.data() + i * g.dv;
                  double acc = z[i] * dden[tt];
                  for (std::size_t j = 0; j < g.dv; ++j) acc += Si[j] * dn[j];
                  gqr[i] += acc * (qraw[i] > 0.0 ? 1.0 : qf[i]);
                }
              }
            }

            // Key/value gradients need suffix sums over the queries.
            if (gk || gv) {
              std::fill(Gs.begin(), Gs.end(), 0.0);
              std::fill(hs.begin(), hs.end(), 0.0);
              auto add_q = [&](std::size_t tt) {
                const std::size_t row = b * g.q_seg + tt;
                const double* qf = fq.data() + row * g.d_model_k + h * g.dk;
                const double* dn = dnum.data() + tt * g.dv;
                for (std::size_t i = 0; i < g.dk; ++i) {
                  hs[i] += qf[i] * dden[tt];
                  double* Gi = Gs.data() + i * g.dv;
                  for (std::size_t j = 0; j < g.dv; ++j) Gi[j] += qf[i] * dn[j];
                }
              };
              if (!causal) {
                for (std::size_t tt = 0; tt < g.q_seg; ++tt) add_q(tt);
              }
              for (std::size_t s = g.kv_seg; s-- > 0;) {
                if (causal) add_q(s);
                const std::size_t row = kv_row(s);
                const double* kf = fk.data() + row * g.d_model_k + h * g.dk;
                const double* vr = V.data() + row * g.d_model_v + h * g.dv;
                if (gk) {
                  const double* kraw = t.value(ik).data() + row * g.d_model_k + h * g.dk;
                  double* gkr = gk->data() + row * g.d_model_k + h * g.dk;
                  for (std::size_t i = 0; i < g.dk; ++i) {
                    const double* Gi = Gs.data() + i * g.dv;
                    double acc = hs[i];
                    for (std::size_t j = 0; j < g.dv; ++j) acc += Gi[j] * vr[j];
                    gkr[i] += acc * (kraw[i] > 0.0 ? 1.0 : kf[i]);
                  }
                }
                if (gv) {
                  double* gvr = gv->data() + row * g.d_model_v + h * g.dv;
                  for (std::size_t i = 0; i < g.dk; ++i) {
                    const double* Gi = Gs.data() + i * g.dv;
                    for (std::size_t j = 0; j < g.dv; ++j) gvr[j] += Gi[j] * kf[i];
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace muser::num
