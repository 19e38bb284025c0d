#pragma once

// Distillation objective: supervised classification plus three structural
// alignment terms, all reduced to KL divergences between softmax
// distributions computed in log space.
//
//   cls    mean over labeled nodes of -log softmax(z^S_v)[y_v]
//   micro  mean over edges (u, v) of KL(softmax(z^T_v / tau) || softmax(z^S_u))
//   macro  KL(q_S || q_T), q = softmax over edges of ||z_u - z_v||_1 / tau
//   multi  mean over scales k of KL(m_k || mean_k m_k), m_k an edge
//          distribution built from teacher layer k
//   total  lambda * cls + (1 - lambda) * (micro + macro + multi)
//
// Teacher-side quantities are plain tensors, so no gradient reaches them.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "distill/autograd.hpp"
#include "distill/graph.hpp"
#include "distill/tensor.hpp"

namespace distill {

enum class LambdaSchedule { Constant, Linear };

struct DistillConfig {
  double lambda = 0.7;
  double tau = 2.0;
  /// Number of teacher layers used by the multi-scale term; 0 means all.
  std::size_t scales = 0;
  LambdaSchedule schedule = LambdaSchedule::Constant;
  double lambda_start = 0.7;
  double lambda_end = 0.7;
  /// true: m_k from negated L1 distances (affinity); false: from distances.
  bool multiscale_affinity = true;

  /// Throws ConfigError on lambda outside [0, 1] or non-positive tau.
  void validate() const;
};

struct LossBreakdown {
  double cls = 0.0;
  double micro = 0.0;
  double macro = 0.0;
  double multi = 0.0;
  double total = 0.0;
  double lambda_eff = 0.0;
};

/// KL(p || q) for probability vectors. Both must be non-negative and sum to
/// 1 within 1e-6; 0 log 0 is taken as 0.
double kl_div(std::span<const double> p, std::span<const double> q);

/// KL(p || q) from log-probabilities.
double kl_div_log(std::span<const double> log_p, std::span<const double> log_q);

/// Mean negative log-likelihood of the true class over masked nodes.
Var cls_loss(const Var& logits, const std::vector<int>& labels, const std::vector<bool>& mask);

/// Edge-wise alignment. `degenerate` is set when the edge set is empty
/// (the loss is then 0).
Var micro_loss(const Tensor& teacher_logits, const Var& student_logits, const std::vector<Edge>& edges,
               double tau, bool* degenerate = nullptr);

/// Graph-level alignment of L1 edge-difference distributions. `degenerate`
/// is set for fewer than two edges (the loss is then 0).
Var macro_loss(const Tensor& teacher_logits, const Var& student_logits, const std::vector<Edge>& edges,
               double tau, bool* degenerate = nullptr);

/// Scale-k edge distribution: softmax over edges of -||h_u - h_v||_1
/// (or +||.||_1 when `affinity` is false).
std::vector<double> edge_distribution(const Tensor& embeddings, const std::vector<Edge>& edges,
                                      bool affinity = true);

/// Mean over scales of KL(m_k || m_bar) for precomputed distributions.
double multiscale_from_distributions(const std::vector<std::vector<double>>& distributions);

/// Multi-scale consistency over the first `scales` layer embeddings.
double multiscale_loss(const std::vector<Tensor>& layer_embeddings, const std::vector<Edge>& edges,
                       std::size_t scales, bool affinity = true);

/// lambda in effect at `epoch` (0-based) of a run of `max_epochs`.
double effective_lambda(const DistillConfig& cfg, int epoch, int max_epochs);

struct LossTerms {
  Var cls;
  Var micro;
  Var macro;
  Var multi;
};

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

TotalLoss total_loss(const LossTerms& terms, double lambda_eff);
TotalLoss total_loss(const LossTerms& terms, const DistillConfig& cfg, int epoch, int max_epochs);

}  // namespace distill
