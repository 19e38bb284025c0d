#include "distill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "distill/error.hpp"
#include "distill/kernels.hpp"

namespace distill {

void DistillConfig::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(lambda)) throw ConfigError("lambda must be in [0, 1]");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive and finite");
  if (schedule == LambdaSchedule::Linear && (!in_unit(lambda_start) || !in_unit(lambda_end))) {
    throw ConfigError("lambda schedule endpoints must be in [0, 1]");
  }
}

// ---- KL ------------------------------------------------------------------

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_div: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw ContractError("kl_div: negative probability");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
    throw ContractError("kl_div: inputs must sum to 1 within 1e-6");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw NumericDomainError("kl_div: q is zero where p is positive");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

double kl_div_log(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) throw DimensionError("kl_div_log: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double p = std::exp(log_p[i]);
    if (p > 0.0) kl += p * (log_p[i] - log_q[i]);
  }
  return kl;
}

namespace {

Tensor log_softmax_scaled(const Tensor& logits, double inv_tau) {
  Tensor scaled = logits;
  if (inv_tau != 1.0)
    for (double& v : scaled.values()) v *= inv_tau;
  Tensor out(logits.shape());
  kernels::log_softmax_rows(scaled.values(), out.values(), logits.rows(), logits.cols());
  return out;
}

void require_logits(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": teacher " + a.shape_string() + " vs student " + b.shape_string());
  }
}

void require_edges(const char* op, const std::vector<Edge>& edges, std::size_t n) {
  for (const Edge& e : edges) {
    if (e.u >= n || e.v >= n) throw DimensionError(std::string(op) + ": edge endpoint out of range");
  }
}

/// Softmax over a flat vector, in log space.
std::vector<double> log_softmax_vector(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  kernels::log_softmax_rows(x, out, 1, x.size());
  return out;
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d += std::abs(a[j] - b[j]);
  return d;
}

}  // namespace

// ---- classification ------------------------------------------------------

Var cls_loss(const Var& logits, const std::vector<int>& labels, const std::vector<bool>& mask) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), c = z.cols();
  if (labels.size() != n || mask.size() != n) throw DimensionError("cls_loss: labels/mask length != rows");
  const auto nodes = mask_indices(mask);
  if (nodes.empty()) throw ContractError("cls_loss: empty mask");
  for (std::size_t v : nodes) {
    if (labels[v] < 0 || static_cast<std::size_t>(labels[v]) >= c) throw ContractError("cls_loss: label out of range");
  }

  Tensor logp(z.shape());
  kernels::log_softmax_rows(z.values(), logp.values(), n, c);
  double total = 0.0;
  for (std::size_t v : nodes) total -= logp.at(v, static_cast<std::size_t>(labels[v]));
  const double inv = 1.0 / static_cast<double>(nodes.size());

  return logits.tape().record(
      Tensor::scalar(total * inv), {logits},
      [logits, logp = std::move(logp), nodes, labels, inv, c](Tape& t, const Tensor& g) {
        Tensor& dz = t.grad_buffer(logits);
        const double s = g[0] * inv;
        for (std::size_t v : nodes) {
          for (std::size_t j = 0; j < c; ++j) dz.at(v, j) += s * std::exp(logp.at(v, j));
          dz.at(v, static_cast<std::size_t>(labels[v])) -= s;
        }
      });
}

// ---- micro ---------------------------------------------------------------

Var micro_loss(const Tensor& teacher_logits, const Var& student_logits, const std::vector<Edge>& edges,
               double tau, bool* degenerate) {
  if (!(tau > 0.0)) throw ContractError("micro_loss: tau must be positive");
  const Tensor& zs = student_logits.value();
  require_logits("micro_loss", teacher_logits, zs);
  require_edges("micro_loss", edges, zs.rows());
  if (degenerate) *degenerate = edges.empty();
  if (edges.empty()) return student_logits.tape().constant(Tensor::scalar(0.0));

  const std::size_t c = zs.cols();
  Tensor log_t = log_softmax_scaled(teacher_logits, 1.0 / tau);
  Tensor log_s(zs.shape());
  kernels::log_softmax_rows(zs.values(), log_s.values(), zs.rows(), c);

  double total = 0.0;
  for (const Edge& e : edges) total += kl_div_log(log_t.row(e.v), log_s.row(e.u));
  const double inv = 1.0 / static_cast<double>(edges.size());

  return student_logits.tape().record(
      Tensor::scalar(total * inv), {student_logits},
      [student_logits, log_t = std::move(log_t), log_s = std::move(log_s), edges, inv, c](Tape& t,
                                                                                            const Tensor& g) {
        // d/dz_u KL(p || softmax(z_u)) = softmax(z_u) - p
        Tensor& dz = t.grad_buffer(student_logits);
        const double s = g[0] * inv;
        for (const Edge& e : edges) {
          for (std::size_t j = 0; j < c; ++j)
            dz.at(e.u, j) += s * (std::exp(log_s.at(e.u, j)) - std::exp(log_t.at(e.v, j)));
        }
      });
}

// ---- macro ---------------------------------------------------------------

Var macro_loss(const Tensor& teacher_logits, const Var& student_logits, const std::vector<Edge>& edges,
               double tau, bool* degenerate) {
  if (!(tau > 0.0)) throw ContractError("macro_loss: tau must be positive");
  const Tensor& zs = student_logits.value();
  require_logits("macro_loss", teacher_logits, zs);
  require_edges("macro_loss", edges, zs.rows());
  if (degenerate) *degenerate = edges.size() < 2;
  if (edges.size() < 2) return student_logits.tape().constant(Tensor::scalar(0.0));

  const std::size_t m = edges.size();
  std::vector<double> ds(m), dt(m);
  for (std::size_t e = 0; e < m; ++e) {
    ds[e] = l1_distance(zs.row(edges[e].u), zs.row(edges[e].v)) / tau;
    dt[e] = l1_distance(teacher_logits.row(edges[e].u), teacher_logits.row(edges[e].v)) / tau;
  }
  std::vector<double> log_qs = log_softmax_vector(ds);
  const std::vector<double> log_qt = log_softmax_vector(dt);
  const double loss = kl_div_log(log_qs, log_qt);

  return student_logits.tape().record(
      Tensor::scalar(loss), {student_logits},
      [student_logits, log_qs = std::move(log_qs), log_qt, edges, loss, tau](Tape& t, const Tensor& g) {
        // dL/dd_e = q_e (log q_e - log qT_e - L), then d d_e / d z through the L1 norm.
        const Tensor& zs = t.value(student_logits);
        Tensor& dz = t.grad_buffer(student_logits);
        const std::size_t c = zs.cols();
        for (std::size_t e = 0; e < edges.size(); ++e) {
          const double q = std::exp(log_qs[e]);
          const double gd = g[0] * q * (log_qs[e] - log_qt[e] - loss) / tau;
          const std::size_t u = edges[e].u, v = edges[e].v;
          for (std::size_t j = 0; j < c; ++j) {
            const double diff = zs.at(u, j) - zs.at(v, j);
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            dz.at(u, j) += gd * sgn;
            dz.at(v, j) -= gd * sgn;
          }
        }
      });
}

// ---- multi-scale ---------------------------------------------------------

std::vector<double> edge_distribution(const Tensor& embeddings, const std::vector<Edge>& edges, bool affinity) {
  require_edges("edge_distribution", edges, embeddings.rows());
  std::vector<double> d(edges.size());
  const double sign = affinity ? -1.0 : 1.0;
  for (std::size_t e = 0; e < edges.size(); ++e)
    d[e] = sign * l1_distance(embeddings.row(edges[e].u), embeddings.row(edges[e].v));
  std::vector<double> p(d.size());
  kernels::softmax_rows(d, p, 1, d.size());
  return p;
}

double multiscale_from_distributions(const std::vector<std::vector<double>>& distributions) {
  if (distributions.empty()) throw ContractError("multiscale: at least one scale required");
  const std::size_t m = distributions.front().size();
  std::vector<double> mean(m, 0.0);
  for (const auto& d : distributions) {
    if (d.size() != m) throw DimensionError("multiscale: distributions differ in length");
    for (std::size_t e = 0; e < m; ++e) mean[e] += d[e];
  }
  const double inv_k = 1.0 / static_cast<double>(distributions.size());
  for (double& x : mean) x *= inv_k;
  double total = 0.0;
  for (const auto& d : distributions) total += kl_div(d, mean);
  return total * inv_k;
}

double multiscale_loss(const std::vector<Tensor>& layer_embeddings, const std::vector<Edge>& edges,
                       std::size_t scales, bool affinity) {
  if (scales == 0) throw ContractError("multiscale_loss: scales must be >= 1");
  if (scales > layer_embeddings.size()) {
    throw ContractError("multiscale_loss: " + std::to_string(scales) + " scales requested but only " +
                        std::to_string(layer_embeddings.size()) + " layers available");
  }
  if (edges.empty()) return 0.0;
  std::vector<std::vector<double>> dists;
  dists.reserve(scales);
  for (std::size_t k = 0; k < scales; ++k) dists.push_back(edge_distribution(layer_embeddings[k], edges, affinity));
  return multiscale_from_distributions(dists);
}

// ---- combination ---------------------------------------------------------

double effective_lambda(const DistillConfig& cfg, int epoch, int max_epochs) {
  if (cfg.schedule == LambdaSchedule::Constant) return cfg.lambda;
  if (max_epochs <= 1) return cfg.lambda_start;
  const double frac = std::clamp(static_cast<double>(epoch) / static_cast<double>(max_epochs - 1), 0.0, 1.0);
  return cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * frac;
}

TotalLoss total_loss(const LossTerms& terms, double lambda_eff) {
  if (!(lambda_eff >= 0.0 && lambda_eff <= 1.0)) throw ContractError("total_loss: lambda must be in [0, 1]");
  const Var distill_sum = add(add(terms.micro, terms.macro), terms.multi);
  Var total = add(scale(terms.cls, lambda_eff), scale(distill_sum, 1.0 - lambda_eff));
  LossBreakdown b;
  b.cls = terms.cls.value()[0];
  b.micro = terms.micro.value()[0];
  b.macro = terms.macro.value()[0];
  b.multi = terms.multi.value()[0];
  b.total = total.value()[0];
  b.lambda_eff = lambda_eff;
  return {total, b};
}

TotalLoss total_loss(const LossTerms& terms, const DistillConfig& cfg, int epoch, int max_epochs) {
  return total_loss(terms, effective_lambda(cfg, epoch, max_epochs));
}

}  // namespace distill
