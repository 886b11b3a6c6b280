#include "ple/numeric/ops.hpp"

#include <cmath>
#include <memory>

#include "ple/error.hpp"
#include "ple/numeric/kernels.hpp"

namespace ple::ops {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) shape_error("matmul", av, bv);
  Tensor out({m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  return tape.push("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      // ga[i][p] += sum_j g[i][j] * b[p][j]
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      // gb[p][:] += a[i][p] * g[i][:]
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          double* __restrict row = gb.data().data() + p * n;
          const double* __restrict gr = g.data().data() + i * n;
          for (std::size_t j = 0; j < n; ++j) row[j] += s * gr[j];
        }
      }
    }
  });
}

Var linear(Var x, Var w) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank2("linear", xv);
  require_rank2("linear", wv);
  const std::size_t rows = xv.shape()[0], in = xv.shape()[1], out_dim = wv.shape()[0];
  if (wv.shape()[1] != in) shape_error("linear", xv, wv);
  Tensor out({rows, out_dim});
  kernels::linear_rows(xv.data(), kernels::transpose(wv), out.data(), rows);
  return tape.push("linear", std::move(out), {x, w},
                   [x, w, rows, in, out_dim](Tape& t, const Tensor& g) {
                     const Tensor& xv = t.value(x);
                     const Tensor& wv = t.value(w);
                     if (t.requires_grad(x)) {
                       Tensor& gx = t.grad_buffer(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double* __restrict gxr = gx.data().data() + r * in;
                         for (std::size_t o = 0; o < out_dim; ++o) {
                           const double s = g[r * out_dim + o];
                           const double* __restrict wr = wv.data().data() + o * in;
                           for (std::size_t i = 0; i < in; ++i) gxr[i] += s * wr[i];
                         }
                       }
                     }
                     if (t.requires_grad(w)) {
                       Tensor& gw = t.grad_buffer(w);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* __restrict xr = xv.data().data() + r * in;
                         for (std::size_t o = 0; o < out_dim; ++o) {
                           const double s = g[r * out_dim + o];
                           double* __restrict gwr = gw.data().data() + o * in;
                           for (std::size_t i = 0; i < in; ++i) gwr[i] += s * xr[i];
                         }
                       }
                     }
                   });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->push("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape->push("scale", std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->push("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.data()) v += g[0];
  });
}

Var silu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = kernels::silu(v);
  return x.tape->push("silu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * kernels::silu_grad(xv[i]);
  });
}

Var rms_norm(Var x, Var gain) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (gv.rank() != 1 || gv.size() != xv.cols()) shape_error("rms_norm", xv, gv);
  const std::size_t rows = xv.rows(), n = xv.cols();
  Tensor out(xv.shape());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    (*inv)[r] = kernels::rms_norm_row(xv.row(r), gv.data(), out.row(r));
  }
  return x.tape->push(
      "rms_norm", std::move(out), {x, gain}, [x, gain, inv, rows, n](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gain);
        const bool need_x = t.requires_grad(x);
        const bool need_g = t.requires_grad(gain);
        Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
        Tensor* gg = need_g ? &t.grad_buffer(gain) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const double ir = (*inv)[r];
          const double* xr = xv.data().data() + r * n;
          const double* gr = g.data().data() + r * n;
          if (need_g) {
            for (std::size_t i = 0; i < n; ++i) (*gg)[i] += gr[i] * xr[i] * ir;
          }
          if (need_x) {
            double a = 0.0;
            for (std::size_t i = 0; i < n; ++i) a += gr[i] * gv[i] * xr[i];
            const double c = ir * ir * ir * a / static_cast<double>(n);
            double* gxr = gx->data().data() + r * n;
            for (std::size_t i = 0; i < n; ++i) gxr[i] += ir * gv[i] * gr[i] - c * xr[i];
          }
        }
      });
}

Var embedding(Var table, std::span<const TokenId> ids) {
  const Tensor& tv = table.value();
  require_rank2("embedding", tv);
  const std::size_t vocab = tv.shape()[0], d = tv.shape()[1];
  Tensor out({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    auto src = tv.row(static_cast<std::size_t>(ids[t]));
    std::copy(src.begin(), src.end(), out.row(t).begin());
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return table.tape->push("embedding", std::move(out), {table},
                          [table, saved = std::move(saved), d](Tape& t, const Tensor& g) {
                            Tensor& gt = t.grad_buffer(table);
                            for (std::size_t r = 0; r < saved.size(); ++r) {
                              double* dst = gt.data().data() + static_cast<std::size_t>(saved[r]) * d;
                              for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
                            }
                          });
}

Var rope(Var x, std::size_t n_heads, double base, std::size_t start_pos) {
  const Tensor& xv = x.value();
  require_rank2("rope", xv);
  if (n_heads == 0 || xv.cols() % n_heads != 0) {
    throw DimensionError("rope: width " + std::to_string(xv.cols()) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    kernels::rope_row(out.row(r), n_heads, start_pos + r, base);
  }
  return x.tape->push("rope", std::move(out), {x},
                      [x, n_heads, base, start_pos](Tape& t, const Tensor& g) {
                        Tensor back = g;
                        for (std::size_t r = 0; r < back.rows(); ++r) {
                          kernels::rope_row(back.row(r), n_heads, start_pos + r, base, true);
                        }
                        Tensor& gx = t.grad_buffer(x);
                        for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
                      });
}

Var causal_attention(Var q, Var k, Var v, std::size_t n_heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank2("causal_attention", qv);
  if (kv.shape() != qv.shape()) shape_error("causal_attention", qv, kv);
  if (vv.shape() != qv.shape()) shape_error("causal_attention", qv, vv);
  const std::size_t T = qv.rows(), d = qv.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  // probs[h][t][s] for s <= t
  auto probs = std::make_shared<std::vector<double>>(n_heads * T * T, 0.0);
  Tensor out({T, d});
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      std::span<double> p(probs->data() + (h * T + t) * T, t + 1);
      kernels::attend_row(qv.row(t).subspan(h * hd, hd), kv.data().data() + h * hd,
                          vv.data().data() + h * hd, t + 1, d, hd, p,
                          out.row(t).subspan(h * hd, hd));
    }
  }
  return q.tape->push(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, probs, n_heads, T, d, hd](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        const bool nq = t.requires_grad(q), nk = t.requires_grad(k), nv = t.requires_grad(v);
        Tensor* gq = nq ? &t.grad_buffer(q) : nullptr;
        Tensor* gk = nk ? &t.grad_buffer(k) : nullptr;
        Tensor* gv = nv ? &t.grad_buffer(v) : nullptr;
        const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < T; ++i) {
            const double* p = probs->data() + (h * T + i) * T;
            const double* go = g.data().data() + i * d + off;
            double dot = 0.0;
            for (std::size_t s = 0; s <= i; ++s) {
              const double* vr = vv.data().data() + s * d + off;
              double acc = 0.0;
              for (std::size_t c = 0; c < hd; ++c) acc += go[c] * vr[c];
              dp[s] = acc;
              dot += p[s] * acc;
              if (nv) {
                double* gvr = gv->data().data() + s * d + off;
                for (std::size_t c = 0; c < hd; ++c) gvr[c] += p[s] * go[c];
              }
            }
            for (std::size_t s = 0; s <= i; ++s) {
              const double ds = p[s] * (dp[s] - dot) * sc;
              if (nq) {
                const double* kr = kv.data().data() + s * d + off;
                double* gqr = gq->data().data() + i * d + off;
                for (std::size_t c = 0; c < hd; ++c) gqr[c] += ds * kr[c];
              }
              if (nk) {
                const double* qr = qv.data().data() + i * d + off;
                double* gkr = gk->data().data() + s * d + off;
                for (std::size_t c = 0; c < hd; ++c) gkr[c] += ds * qr[c];
              }
            }
          }
        }
      });
}

Var softmax_cross_entropy(Var logits, std::span<const TokenId> targets,
                          const std::vector<bool>& mask, Reduction reduction) {
  const Tensor& lv = logits.value();
  require_rank2("softmax_cross_entropy", lv);
  const std::size_t T = lv.rows(), V = lv.cols();
  if (targets.size() != T || mask.size() != T) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(T) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
      throw IndexError("softmax_cross_entropy: target id " + std::to_string(targets[t]) +
                       " at position " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(V));
    }
    ++count;
  }
  const double weight =
      reduction == Reduction::kMean ? (count == 0 ? 0.0 : 1.0 / static_cast<double>(count)) : 1.0;
  auto lse = std::make_shared<std::vector<double>>(T, 0.0);
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    (*lse)[t] = kernels::log_sum_exp(lv.row(t));
    loss += (*lse)[t] - lv.at(t, static_cast<std::size_t>(targets[t]));
  }
  loss *= weight;
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  return logits.tape->push(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [logits, lse, tgt = std::move(tgt), mask, weight, V](Tape& t, const Tensor& g) {
        const Tensor& lv = t.value(logits);
        Tensor& gl = t.grad_buffer(logits);
        const double w = weight * g[0];
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (!mask[r]) continue;
          const double* row = lv.data().data() + r * V;
          double* gr = gl.data().data() + r * V;
          for (std::size_t c = 0; c < V; ++c) gr[c] += w * std::exp(row[c] - (*lse)[r]);
          gr[static_cast<std::size_t>(tgt[r])] -= w;
        }
      });
}

}  // namespace ple::ops
