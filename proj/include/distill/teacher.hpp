#pragma once

// GNN teachers: GCN, GraphSAGE (mean aggregator) and GAT, each a stack of
// message-passing layers AGGREGATE -> UPDATE, trained full-batch for node
// classification and then frozen into TeacherArtifacts.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "distill/autograd.hpp"
#include "distill/graph.hpp"
#include "distill/optimizer.hpp"
#include "distill/sparse.hpp"
#include "distill/tensor.hpp"

namespace distill {

enum class TeacherKind { Gcn, Sage, Gat };

std::string to_string(TeacherKind kind);
/// Accepts "gcn", "sage", "gat"; throws ConfigError otherwise.
TeacherKind parse_teacher_kind(const std::string& name);

struct TeacherConfig {
  TeacherKind kind = TeacherKind::Gcn;
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t gat_hidden_heads = 8;
  std::size_t gat_output_heads = 1;
  double leaky_slope = 0.2;
  double dropout = 0.5;
  double learning_rate = 0.01;
  /// L2 coefficient on first-layer weights only.
  double weight_decay = 5e-4;
  int max_epochs = 400;
  int patience = 50;

  void validate() const;
};

/// Weights of one layer. GCN uses `weight`; SAGE uses `weight` (self) and
/// `weight_neigh`; GAT uses the per-head `head_weights` / `head_attention`
/// (attention vectors are 1 x 2F, source half first).
struct TeacherLayerParams {
  Tensor weight;
  Tensor weight_neigh;
  std::vector<Tensor> head_weights;
  std::vector<Tensor> head_attention;
  bool concat_heads = true;
};

struct TeacherParams {
  TeacherKind kind = TeacherKind::Gcn;
  std::vector<TeacherLayerParams> layers;
  double leaky_slope = 0.2;

  std::size_t depth() const noexcept { return layers.size(); }
  /// Every tensor, in a fixed order (layer-major).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Glorot-uniform initialization; widths d -> hidden -> ... -> num_classes.
TeacherParams init_teacher(const TeacherConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                           std::uint64_t seed);

/// Frozen teacher outputs. layer_embeddings[k] is the post-activation output
/// of layer k+1; logits equals the last entry (the final layer has no
/// activation).
struct TeacherArtifacts {
  TeacherKind kind = TeacherKind::Gcn;
  std::vector<Tensor> layer_embeddings;
  Tensor logits;

  std::size_t depth() const noexcept { return layer_embeddings.size(); }
  friend bool operator==(const TeacherArtifacts&, const TeacherArtifacts&) = default;
};

/// FNV-1a over the raw bytes of every stored value.
std::uint64_t checksum(const TeacherArtifacts& artifacts);

/// Graph operators a teacher needs, built once per graph.
struct GraphOperators {
  std::shared_ptr<const CsrMatrix> normalized_adjacency;
  std::shared_ptr<const CsrMatrix> neighbor_mean;
  std::shared_ptr<const CsrMatrix> incoming;  // with self-loops, rows = destinations

  static GraphOperators build(const Graph& g);
};

/// act(A_hat H W); rectifier unless `final_layer`.
Var gcn_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> adj, const Var& w, bool final_layer);

/// act(H W_self + mean_{u in N(v)} H_u W_neigh); isolated nodes get a zero mean.
Var sage_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> neighbor_mean, const Var& w_self,
               const Var& w_neigh, bool final_layer);

/// One attention head over projected features z = H W:
/// e_uv = leaky(a_src . z_u + a_dst . z_v), alpha_uv = softmax over incoming
/// u of v (self-loop included), out_v = sum_u alpha_uv z_u.
/// `alpha_out`, if given, receives alpha in the CSR order of `incoming`.
Var gat_attention(const Var& z, const Var& attention, std::shared_ptr<const CsrMatrix> incoming, double slope,
                  std::vector<double>* alpha_out = nullptr);

/// Multi-head GAT layer: heads concatenated (hidden) or averaged (final),
/// rectifier unless `final_layer`.
Var gat_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> incoming, const std::vector<Var>& head_weights,
              const std::vector<Var>& head_attention, bool concat, bool final_layer, double slope);

/// Records the whole teacher on `tape`. `param_vars` follows
/// TeacherParams::tensors() order. Returns per-layer outputs.
std::vector<Var> teacher_forward_tape(Tape& tape, std::shared_ptr<const CsrMatrix> features, const GraphOperators& ops,
                                      const TeacherParams& params, const std::vector<Var>& param_vars,
                                      ForwardDropout dropout = {});

/// Inference forward (no dropout) producing frozen artifacts.
TeacherArtifacts teacher_forward(const Graph& g, const TeacherParams& params);
TeacherArtifacts teacher_forward(const Tensor& features, const GraphOperators& ops, const TeacherParams& params);
TeacherArtifacts teacher_forward(std::shared_ptr<const CsrMatrix> features, const GraphOperators& ops,
                                 const TeacherParams& params);

struct TrainedTeacher {
  TeacherParams params;
  TeacherArtifacts artifacts;
  double val_accuracy = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

/// Full-batch Adam on the masked NLL with early stopping on validation
/// accuracy; returns the best-validation parameters. Throws TrainingError
/// on a non-finite loss.
TrainedTeacher train_teacher(const Graph& g, const TeacherConfig& cfg, std::uint64_t seed);

}  // namespace distill
