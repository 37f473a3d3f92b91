// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chunkflow/error.hpp"

namespace chunkflow {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, grad_enabled_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) fail(ErrorKind::kShape, "op mixes values from different tapes");
      needs = needs || nodes_[v.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate(std::size_t id, std::size_t offset, std::span<const double> g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[offset + i] += g[i];
}

void Tape::backward(Var root) {
  if (root.tape() != this) fail(ErrorKind::kShape, "backward root belongs to another tape");
  if (root.value().size() != 1) fail(ErrorKind::kShape, "backward root must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = Tensor(root.value().shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

namespace ad {

namespace {

void same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor out = a.value() + b.value();
  const Var in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor out = a.value() - b.value();
  const Var in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -1.0 * g);
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Var in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    Tensor ga = g, gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= t.value(ib)[i];
      gb[i] *= t.value(ia)[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var scale(Var a, double s) {
  Tensor out = s * a.value();
  const Var in[] = {a};
  return a.tape()->record(std::move(out), in,
                          [ia = a.id(), s](Tape& t, const Tensor& g) { t.accumulate(ia, s * g); });
}

Var matmul(Var a, Var b) {
  const std::size_t m = a.value().rows(), k = a.value().cols();
  if (b.value().rows() != k)
    fail(ErrorKind::kShape, "matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  const std::size_t n = b.value().cols();
  Tensor out(Shape{m, n}, 0.0);
  gemm(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  const Var in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id(), m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor ga(av.shape(), 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] = s;
        }
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb(bv.shape(), 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      t.accumulate(ib, gb);
    }
  });
}

Var add_bias(Var x, Var bias) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.value().size() != n) fail(ErrorKind::kShape, "add_bias: width mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  const Var in[] = {x, bias};
  return x.tape()->record(std::move(out), in, [ix = x.id(), ib = bias.id(), m, n](Tape& t, const Tensor& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) {
      Tensor gb(t.value(ib).shape(), 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      t.accumulate(ib, gb);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gain.value().size() != n || bias.value().size() != n)
    fail(ErrorKind::kShape, "layer_norm: parameter width mismatch");
  Tensor xhat(Shape{m, n});
  std::vector<double> inv_std(m);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.value().data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xi[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.value()[j] + bias.value()[j];
    }
  }
  const Var in[] = {x, gain, bias};
  return x.tape()->record(
      std::move(out), in,
      [ix = x.id(), ig = gain.id(), ib = bias.id(), m, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(ig);
        Tensor gx(t.value(ix).shape(), 0.0), gg(gv.shape(), 0.0), gbias(gv.shape(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[i * n + j] * gv[j];
            s1 += dxh;
            s2 += dxh * xhat[i * n + j];
            gg[j] += g[i * n + j] * xhat[i * n + j];
            gbias[j] += g[i * n + j];
          }
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[i * n + j] * gv[j];
            gx[i * n + j] = inv_std[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
          }
        }
        t.accumulate(ix, gx);
        t.accumulate(ig, gg);
        t.accumulate(ib, gbias);
      });
}

Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double u = c * (v + 0.044715 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  const Var in[] = {x};
  return x.tape()->record(std::move(out), in, [ix = x.id()](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      gx[i] = g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    t.accumulate(ix, gx);
  });
}

Var attention(Var q, Var k, Var v, const Tensor& bias, std::size_t heads) {
  const std::size_t lq = q.value().rows(), lk = k.value().rows(), d = q.value().cols();
  if (k.value().cols() != d || v.value().cols() != d || v.value().rows() != lk)
    fail(ErrorKind::kShape, "attention: q/k/v extents disagree");
  if (heads == 0 || d % heads != 0) fail(ErrorKind::kShape, "attention: width not divisible by heads");
  if (bias.size() != heads * lq * lk) fail(ErrorKind::kShape, "attention: bias extent mismatch");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qd = q.value().data().data();
  const double* kd = k.value().data().data();
  const double* vd = v.value().data().data();
  Tensor probs(Shape{heads, lq, lk}, 0.0);
  Tensor out(Shape{lq, d}, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      double* p = probs.data().data() + (h * lq + i) * lk;
      const double* b = bias.data().data() + (h * lq + i) * lk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < lk; ++j) {
        if (std::isinf(b[j])) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qd[i * d + h * dh + c] * kd[j * d + h * dh + c];
        p[j] = s * inv_sqrt + b[j];
        mx = std::max(mx, p[j]);
      }
      if (std::isinf(mx)) fail(ErrorKind::kShape, "attention: fully masked query row");
      double z = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (std::isinf(b[j])) continue;
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < lk; ++j) {
        if (std::isinf(b[j])) continue;
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + h * dh + c] += p[j] * vd[j * d + h * dh + c];
      }
    }
  }
  const Var in[] = {q, k, v};
  return q.tape()->record(
      std::move(out), in,
      [iq = q.id(), ik = k.id(), iv = v.id(), probs = std::move(probs), lq, lk, d, dh, heads,
       inv_sqrt](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        Tensor gq(qv.shape(), 0.0), gk(kv.shape(), 0.0), gv(vv.shape(), 0.0);
        std::vector<double> dp(lk);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < lq; ++i) {
            const double* p = probs.data().data() + (h * lq + i) * lk;
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
              if (p[j] == 0.0) { dp[j] = 0.0; continue; }
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                s += g[i * d + h * dh + c] * vv[j * d + h * dh + c];
                gv[j * d + h * dh + c] += p[j] * g[i * d + h * dh + c];
              }
              dp[j] = s;
              dot += p[j] * s;
            }
            for (std::size_t j = 0; j < lk; ++j) {
              if (p[j] == 0.0) continue;
              const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
              for (std::size_t c = 0; c < dh; ++c) {
                gq[i * d + h * dh + c] += ds * kv[j * d + h * dh + c];
                gk[j * d + h * dh + c] += ds * qv[i * d + h * dh + c];
              }
            }
          }
        }
        t.accumulate(iq, gq);
        t.accumulate(ik, gk);
        t.accumulate(iv, gv);
      });
}

Var sum(Var x) {
  const Var in[] = {x};
  return x.tape()->record(Tensor::scalar(x.value().sum()), in, [ix = x.id()](Tape& t, const Tensor& g) {
    t.accumulate(ix, Tensor(t.value(ix).shape(), g[0]));
  });
}

Var sum_squares(Var x) {
  const Var in[] = {x};
  return x.tape()->record(Tensor::scalar(x.value().squared_norm()), in,
                          [ix = x.id()](Tape& t, const Tensor& g) {
                            t.accumulate(ix, (2.0 * g[0]) * t.value(ix));
                          });
}

Var stop_gradient(Var x) { return x.tape()->constant(x.value()); }

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat_rows: no parts");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tensor out = chunkflow::concat_rows(values);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, size)
  for (const Var& p : parts) spans.emplace_back(p.id(), p.value().size());
  return parts.front().tape()->record(std::move(out), parts, [spans](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& [id, n] : spans) {
      t.accumulate(id, 0, g.data().subspan(off, n));
      off += n;
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const std::size_t c = x.value().cols();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= x.value().rows()) fail(ErrorKind::kShape, "gather_rows: row out of range");
    const auto src = x.value().data().subspan(r * c, c);
    data.insert(data.end(), src.begin(), src.end());
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  const Var in[] = {x};
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape()->record(Tensor(std::move(shape), std::move(data)), in,
                          [ix = x.id(), idx = std::move(idx), c](Tape& t, const Tensor& g) {
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              t.accumulate(ix, idx[i] * c, g.data().subspan(i * c, c));
                          });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const Var in[] = {x};
  return x.tape()->record(std::move(out), in, [ix = x.id()](Tape& t, const Tensor& g) {
    t.accumulate(ix, 0, g.data());
  });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    fail(ErrorKind::kShape, "weighted_sum: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) fail(ErrorKind::kShape, "weighted_sum: non-scalar input");
    s += weights[i] * scalars[i].value()[0];
  }
  std::vector<std::size_t> ids;
  for (const Var& v : scalars) ids.push_back(v.id());
  std::vector<double> w(weights.begin(), weights.end());
  return scalars.front().tape()->record(Tensor::scalar(s), scalars,
                                        [ids = std::move(ids), w = std::move(w)](Tape& t, const Tensor& g) {
                                          for (std::size_t i = 0; i < ids.size(); ++i)
                                            t.accumulate(ids[i], Tensor::scalar(w[i] * g[0]));
                                        });
}

Var select_rows(Var a, Var b, const std::vector<bool>& take_b) {
  same_shape(a, b, "select_rows");
  const std::size_t m = a.value().rows(), c = a.value().cols();
  if (take_b.size() != m) fail(ErrorKind::kShape, "select_rows: selector length mismatch");
  Tensor out = a.value();
  for (std::size_t r = 0; r < m; ++r)
    if (take_b[r])
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] = b.value()[r * c + j];
  const Var in[] = {a, b};
  return a.tape()->record(std::move(out), in,
                          [ia = a.id(), ib = b.id(), take_b, c](Tape& t, const Tensor& g) {
                            for (std::size_t r = 0; r < take_b.size(); ++r)
                              t.accumulate(take_b[r] ? ib : ia, r * c, g.data().subspan(r * c, c));
                          });
}

}  // namespace ad
}  // namespace chunkflow
