#include "distill/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "distill/error.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool tracked = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw ContractError("operand belongs to a different tape");
    tracked = tracked || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to a different tape");
  if (backward_done_) throw ContractError("backward: already called on this tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + lv.shape_string());
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

const Tensor& Tape::grad(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Tensor& dst = grad_buffer(v);
  if (dst.size() != g.size()) {
    throw DimensionError("gradient shape " + g.shape_string() + " does not match " + dst.shape_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

// ---- helpers -------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void require_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) throw NumericDomainError(std::string(op) + ": non-finite input");
}

std::vector<std::size_t> matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

template <typename F>
Var unary_elementwise(const Var& x, F f, auto df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape().record(std::move(out), {x}, [x, df](Tape& t, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

// ---- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + av.shape_string() + " x " +
                         bv.shape_string());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(matrix_shape(m, n));
  kernels::matmul(av.values(), bv.values(), out.values(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      // dA += G * B^T
      kernels::matmul_nt_acc(g.values(), t.value(b).values(), t.grad_buffer(a).values(), m, n, k);
    }
    if (t.requires_grad(b)) {
      // dB += A^T * G
      kernels::matmul_tn_acc(t.value(a).values(), g.values(), t.grad_buffer(b).values(), k, m, n);
    }
  });
}

Var spmm(std::shared_ptr<const CsrMatrix> s, const Var& dense) {
  const Tensor& dv = dense.value();
  if (s->cols != dv.rows()) {
    throw DimensionError("spmm: sparse [" + std::to_string(s->rows) + "x" + std::to_string(s->cols) +
                         "] x " + dv.shape_string());
  }
  const std::size_t n = dv.cols();
  Tensor out(matrix_shape(s->rows, n));
  kernels::spmm(*s, dv.values(), out.values(), n);
  return dense.tape().record(std::move(out), {dense}, [s, dense, n](Tape& t, const Tensor& g) {
    const CsrMatrix st = s->transposed();
    kernels::spmm_acc(st, g.values(), t.grad_buffer(dense).values(), n);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      const Tensor& bv = t.value(b);
      Tensor& da = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      const Tensor& av = t.value(a);
      Tensor& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  const Tensor& bv = bias.value();
  if (bv.size() != x.value().cols()) {
    throw DimensionError("add_row_bias: bias " + bv.shape_string() + " vs input " +
                         x.value().shape_string());
  }
  Tensor out = x.value();
  const std::size_t r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += bv[j];
  return x.tape().record(std::move(out), {x, bias}, [x, bias, r, c](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) {
      Tensor& db = t.grad_buffer(bias);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += g.at(i, j);
    }
  });
}

Var mul_constant(const Var& a, const Tensor& c) {
  require_same_shape("mul_constant", a.value(), c);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    Tensor& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c[i];
  });
}

// ---- activations ---------------------------------------------------------

Var relu(const Var& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary_elementwise(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var gelu(const Var& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary_elementwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v) {
        const double th = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * k * v * v);
      });
}

// ---- reductions ----------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (double& v : dx.values()) v += g[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// ---- softmax family ------------------------------------------------------

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  require_finite("softmax", xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  kernels::softmax_rows(xv.values(), out.values(), r, c);
  Tensor saved = out;
  return x.tape().record(std::move(out), {x}, [x, p = std::move(saved), r, c](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * p.at(i, j);
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  require_finite("log_softmax", xv);
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  kernels::log_softmax_rows(xv.values(), out.values(), r, c);
  Tensor probs(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) probs[i] = std::exp(out[i]);
  return x.tape().record(std::move(out), {x}, [x, probs = std::move(probs), r, c](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g.at(i, j);
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) += g.at(i, j) - probs.at(i, j) * gs;
    }
  });
}

// ---- normalization / reshaping -------------------------------------------

Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || offset.value().size() != c) {
    throw DimensionError("layer_norm: gain/offset width does not match input " + xv.shape_string());
  }
  Tensor normalized(xv.shape());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) normalized.at(i, j) = (xv.at(i, j) - mu) * inv_std[i];
  }
  const Tensor& gv = gain.value();
  const Tensor& ov = offset.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = normalized.at(i, j) * gv[j] + ov[j];

  return x.tape().record(
      std::move(out), {x, gain, offset},
      [x, gain, offset, normalized = std::move(normalized), inv_std = std::move(inv_std), r, c](
          Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(gain)) {
          Tensor& dg = t.grad_buffer(gain);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dg[j] += g.at(i, j) * normalized.at(i, j);
        }
        if (t.requires_grad(offset)) {
          Tensor& db = t.grad_buffer(offset);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) db[j] += g.at(i, j);
        }
        if (t.requires_grad(x)) {
          Tensor& dx = t.grad_buffer(x);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dn = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g.at(i, j) * gv[j];
              mean_d += d;
              mean_dn += d * normalized.at(i, j);
            }
            mean_d *= inv_c;
            mean_dn *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g.at(i, j) * gv[j];
              dx.at(i, j) += inv_std[i] * (d - mean_d - normalized.at(i, j) * mean_dn);
            }
          }
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != r) throw DimensionError("concat_cols: row counts differ");
    total += p.value().cols();
  }
  Tensor out(matrix_shape(r, total));
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += pv.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts, r](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& dp = t.grad_buffer(p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) dp.at(i, j) += g.at(i, offset + j);
      }
      offset += w;
    }
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t width) {
  const Tensor& xv = x.value();
  if (width == 0 || start + width > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") outside " + xv.shape_string());
  }
  const std::size_t r = xv.rows();
  Tensor out(matrix_shape(r, width));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = xv.at(i, start + j);
  return x.tape().record(std::move(out), {x}, [x, start, width, r](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j) dx.at(i, start + j) += g.at(i, j);
  });
}

Var dropout(const Var& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: probability must be in [0, 1)");
  if (p == 0.0) return x;
  Tensor mask(x.value().shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = hashed_uniform(seed, i) < p ? 0.0 : keep_scale;
  return mul_constant(x, mask);
}

// ---- attention -----------------------------------------------------------

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, AttentionDropout drop,
                         Tensor* weights_out) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.cols() != kv.cols() || kv.rows() != vv.rows()) {
    throw DimensionError("attention: Q " + qv.shape_string() + ", K " + kv.shape_string() + ", V " +
                         vv.shape_string());
  }
  if (drop.p < 0.0 || drop.p >= 1.0) throw ContractError("attention: dropout must be in [0, 1)");
  const std::size_t n = qv.rows(), m = kv.rows(), dk = qv.cols(), dv = vv.cols();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  auto probs = std::make_shared<Tensor>(matrix_shape(n, m));
  {
    Tensor scores(matrix_shape(n, m));
    kernels::matmul_nt_acc(qv.values(), kv.values(), scores.values(), n, dk, m);
    for (double& s : scores.values()) s *= inv_sqrt;
    require_finite("attention", scores);
    kernels::softmax_rows(scores.values(), probs->values(), n, m);
  }
  if (weights_out) *weights_out = *probs;

  const double keep_scale = drop.p > 0.0 ? 1.0 / (1.0 - drop.p) : 1.0;
  auto dropped = [drop, keep_scale](const Tensor& p) {
    Tensor out = p;
    if (drop.p > 0.0) {
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = hashed_uniform(drop.seed, i) < drop.p ? 0.0 : out[i] * keep_scale;
    }
    return out;
  };

  Tensor out(matrix_shape(n, dv));
  {
    const Tensor pd = dropped(*probs);
    kernels::matmul(pd.values(), vv.values(), out.values(), n, m, dv);
  }

  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, probs, dropped, drop, keep_scale, n, m, dk, dv, inv_sqrt](Tape& t, const Tensor& g) {
        const Tensor& p = *probs;
        if (t.requires_grad(v)) {
          const Tensor pd = dropped(p);
          kernels::matmul_tn_acc(pd.values(), g.values(), t.grad_buffer(v).values(), m, n, dv);
        }
        if (!t.requires_grad(q) && !t.requires_grad(k)) return;
        // dP (through dropout), then the softmax Jacobian row by row.
        Tensor ds(matrix_shape(n, m));
        kernels::matmul_nt_acc(g.values(), t.value(v).values(), ds.values(), n, dv, m);
        if (drop.p > 0.0) {
          for (std::size_t i = 0; i < ds.size(); ++i)
            ds[i] = hashed_uniform(drop.seed, i) < drop.p ? 0.0 : ds[i] * keep_scale;
        }
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += ds.at(i, j) * p.at(i, j);
          for (std::size_t j = 0; j < m; ++j) ds.at(i, j) = p.at(i, j) * (ds.at(i, j) - dot) * inv_sqrt;
        }
        if (t.requires_grad(q)) {
          Tensor dq(matrix_shape(n, dk));
          kernels::matmul(ds.values(), t.value(k).values(), dq.values(), n, m, dk);
          t.accumulate(q, dq);
        }
        if (t.requires_grad(k)) {
          kernels::matmul_tn_acc(ds.values(), t.value(q).values(), t.grad_buffer(k).values(), m, n, dk);
        }
      });
}

// ---- layer input ---------------------------------------------------------

Var LayerInput::project(const Var& w) const {
  if (sparse_) {
    if (sparse_->cols != w.rows()) {
      throw DimensionError("layer input width " + std::to_string(sparse_->cols) + " does not match weight " +
                           w.value().shape_string());
    }
    return spmm(sparse_, w);
  }
  return matmul(dense_, w);
}

std::size_t LayerInput::cols() const { return sparse_ ? sparse_->cols : dense_.cols(); }

}  // namespace distill
