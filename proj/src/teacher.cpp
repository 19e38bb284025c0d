#include "distill/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "distill/error.hpp"
#include "distill/losses.hpp"
#include "distill/metrics.hpp"
#include "distill/rng.hpp"

namespace distill {

std::string to_string(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::Gcn: return "gcn";
    case TeacherKind::Sage: return "sage";
    case TeacherKind::Gat: return "gat";
  }
  return "unknown";
}

TeacherKind parse_teacher_kind(const std::string& name) {
  if (name == "gcn") return TeacherKind::Gcn;
  if (name == "sage") return TeacherKind::Sage;
  if (name == "gat") return TeacherKind::Gat;
  throw ConfigError("unknown teacher kind '" + name + "' (expected gcn, sage or gat)");
}

void TeacherConfig::validate() const {
  if (layers < 1 || layers > 4) throw ConfigError("teacher layers must be in [1, 4]");
  if (hidden == 0) throw ConfigError("teacher hidden width must be positive");
  if (kind == TeacherKind::Gat) {
    if (gat_hidden_heads == 0 || gat_output_heads == 0) throw ConfigError("GAT head counts must be positive");
    if (hidden % gat_hidden_heads != 0) throw ConfigError("teacher hidden width must be divisible by GAT heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("teacher dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("teacher learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("teacher weight decay must be non-negative");
  if (max_epochs < 1 || patience < 1) throw ConfigError("teacher epochs and patience must be positive");
}

// ---- parameters ----------------------------------------------------------

std::vector<Tensor*> TeacherParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& layer : layers) {
    switch (kind) {
      case TeacherKind::Gcn: out.push_back(&layer.weight); break;
      case TeacherKind::Sage:
        out.push_back(&layer.weight);
        out.push_back(&layer.weight_neigh);
        break;
      case TeacherKind::Gat:
        for (std::size_t h = 0; h < layer.head_weights.size(); ++h) {
          out.push_back(&layer.head_weights[h]);
          out.push_back(&layer.head_attention[h]);
        }
        break;
    }
  }
  return out;
}

std::vector<const Tensor*> TeacherParams::tensors() const {
  auto mutable_ptrs = const_cast<TeacherParams*>(this)->tensors();
  return {mutable_ptrs.begin(), mutable_ptrs.end()};
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

TeacherParams init_teacher(const TeacherConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                           std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TeacherParams p;
  p.kind = cfg.kind;
  p.leaky_slope = cfg.leaky_slope;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const bool last = l + 1 == cfg.layers;
    const std::size_t out = last ? num_classes : cfg.hidden;
    TeacherLayerParams layer;
    switch (cfg.kind) {
      case TeacherKind::Gcn: layer.weight = glorot(in, out, rng); break;
      case TeacherKind::Sage:
        layer.weight = glorot(in, out, rng);
        layer.weight_neigh = glorot(in, out, rng);
        break;
      case TeacherKind::Gat: {
        const std::size_t heads = last ? cfg.gat_output_heads : cfg.gat_hidden_heads;
        const std::size_t width = last ? out : out / heads;
        layer.concat_heads = !last;
        for (std::size_t h = 0; h < heads; ++h) {
          layer.head_weights.push_back(glorot(in, width, rng));
          layer.head_attention.push_back(glorot(1, 2 * width, rng));
        }
        break;
      }
    }
    p.layers.push_back(std::move(layer));
    in = out;
  }
  return p;
}

std::uint64_t checksum(const TeacherArtifacts& artifacts) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
      }
    }
  };
  for (const Tensor& t : artifacts.layer_embeddings) mix(t);
  mix(artifacts.logits);
  return h;
}

GraphOperators GraphOperators::build(const Graph& g) {
  GraphOperators ops;
  ops.normalized_adjacency = std::make_shared<const CsrMatrix>(normalize_adjacency(g));
  ops.neighbor_mean = std::make_shared<const CsrMatrix>(neighbor_mean_operator(g));
  ops.incoming = std::make_shared<const CsrMatrix>(incoming_with_self_loops(g));
  return ops;
}

// ---- layers --------------------------------------------------------------

Var gcn_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> adj, const Var& w, bool final_layer) {
  Var out = spmm(std::move(adj), h.project(w));
  return final_layer ? out : relu(out);
}

Var sage_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> neighbor_mean, const Var& w_self,
               const Var& w_neigh, bool final_layer) {
  if (w_self.rows() != w_neigh.rows() || w_self.cols() != w_neigh.cols()) {
    throw DimensionError("sage_layer: W_self " + w_self.value().shape_string() + " vs W_neigh " +
                         w_neigh.value().shape_string());
  }
  // mean(H_N(v)) W = M (H W) since M is linear.
  Var out = add(h.project(w_self), spmm(std::move(neighbor_mean), h.project(w_neigh)));
  return final_layer ? out : relu(out);
}

Var gat_attention(const Var& z, const Var& attention, std::shared_ptr<const CsrMatrix> incoming, double slope,
                  std::vector<double>* alpha_out) {
  const Tensor& zv = z.value();
  const Tensor& av = attention.value();
  const std::size_t n = zv.rows(), f = zv.cols();
  if (av.size() != 2 * f) {
    throw DimensionError("gat_attention: attention vector " + av.shape_string() + " for feature width " +
                         std::to_string(f));
  }
  if (incoming->rows != n || incoming->cols != n) throw DimensionError("gat_attention: operator size mismatch");

  // Per-node source/destination scores.
  std::vector<double> src(n, 0.0), dst(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      src[i] += av[j] * zv.at(i, j);
      dst[i] += av[f + j] * zv.at(i, j);
    }
  }

  const CsrMatrix& in = *incoming;
  std::vector<double> pre(in.nnz()), alpha(in.nnz());
  Tensor out({n, f});
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t b = in.row_offsets[v], e = in.row_offsets[v + 1];
    if (b == e) throw ContractError("gat_attention: node without incoming edges");
    double mx = -INFINITY;
    for (std::size_t p = b; p < e; ++p) {
      const double s = src[in.col_indices[p]] + dst[v];
      pre[p] = s;
      alpha[p] = s > 0.0 ? s : slope * s;
      mx = std::max(mx, alpha[p]);
    }
    double sum = 0.0;
    for (std::size_t p = b; p < e; ++p) {
      alpha[p] = std::exp(alpha[p] - mx);
      sum += alpha[p];
    }
    for (std::size_t p = b; p < e; ++p) {
      alpha[p] /= sum;
      const std::size_t u = in.col_indices[p];
      for (std::size_t j = 0; j < f; ++j) out.at(v, j) += alpha[p] * zv.at(u, j);
    }
  }
  if (alpha_out) *alpha_out = alpha;

  return z.tape().record(
      std::move(out), {z, attention},
      [z, attention, incoming, pre = std::move(pre), alpha = std::move(alpha), slope, n, f](Tape& t,
                                                                                             const Tensor& g) {
        const CsrMatrix& in = *incoming;
        const Tensor& zv = t.value(z);
        const Tensor& av = t.value(attention);
        Tensor dz({n, f});
        std::vector<double> dsrc(n, 0.0), ddst(n, 0.0);
        for (std::size_t v = 0; v < n; ++v) {
          const std::size_t b = in.row_offsets[v], e = in.row_offsets[v + 1];
          // d alpha_uv = g_v . z_u; softmax Jacobian per destination row.
          double dot = 0.0;
          std::vector<double> dalpha(e - b);
          for (std::size_t p = b; p < e; ++p) {
            const std::size_t u = in.col_indices[p];
            double s = 0.0;
            for (std::size_t j = 0; j < f; ++j) {
              s += g.at(v, j) * zv.at(u, j);
              dz.at(u, j) += alpha[p] * g.at(v, j);
            }
            dalpha[p - b] = s;
            dot += alpha[p] * s;
          }
          for (std::size_t p = b; p < e; ++p) {
            const double de = alpha[p] * (dalpha[p - b] - dot);
            const double dpre = de * (pre[p] > 0.0 ? 1.0 : slope);
            dsrc[in.col_indices[p]] += dpre;
            ddst[v] += dpre;
          }
        }
        if (t.requires_grad(attention)) {
          Tensor& da = t.grad_buffer(attention);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < f; ++j) {
              da[j] += dsrc[i] * zv.at(i, j);
              da[f + j] += ddst[i] * zv.at(i, j);
            }
          }
        }
        if (t.requires_grad(z)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) dz.at(i, j) += dsrc[i] * av[j] + ddst[i] * av[f + j];
          t.accumulate(z, dz);
        }
      });
}

Var gat_layer(const LayerInput& h, std::shared_ptr<const CsrMatrix> incoming, const std::vector<Var>& head_weights,
              const std::vector<Var>& head_attention, bool concat, bool final_layer, double slope) {
  if (head_weights.empty() || head_weights.size() != head_attention.size()) {
    throw DimensionError("gat_layer: head weight/attention counts differ");
  }
  std::vector<Var> heads;
  heads.reserve(head_weights.size());
  for (std::size_t i = 0; i < head_weights.size(); ++i) {
    heads.push_back(gat_attention(h.project(head_weights[i]), head_attention[i], incoming, slope));
  }
  Var out;
  if (concat) {
    out = heads.size() == 1 ? heads.front() : concat_cols(heads);
  } else {
    out = heads.front();
    for (std::size_t i = 1; i < heads.size(); ++i) out = add(out, heads[i]);
    if (heads.size() > 1) out = scale(out, 1.0 / static_cast<double>(heads.size()));
  }
  return final_layer ? out : relu(out);
}

// ---- whole model ---------------------------------------------------------

namespace {

std::shared_ptr<const CsrMatrix> drop_sparse(const std::shared_ptr<const CsrMatrix>& x, double p,
                                             std::uint64_t seed) {
  auto out = std::make_shared<CsrMatrix>(*x);
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = hashed_uniform(seed, i) < p ? 0.0 : out->values[i] * keep;
  return out;
}

}  // namespace

std::vector<Var> teacher_forward_tape(Tape& tape, std::shared_ptr<const CsrMatrix> features, const GraphOperators& ops,
                                      const TeacherParams& params, const std::vector<Var>& param_vars,
                                      ForwardDropout dropout) {
  const bool drop = dropout.p > 0.0;
  std::shared_ptr<const CsrMatrix> x0 = drop ? drop_sparse(features, dropout.p, mix_seed(dropout.seed, 0)) : features;
  LayerInput input(tape, x0);
  std::vector<Var> outputs;
  std::size_t cursor = 0;
  for (std::size_t l = 0; l < params.depth(); ++l) {
    const bool last = l + 1 == params.depth();
    const TeacherLayerParams& lp = params.layers[l];
    Var out;
    switch (params.kind) {
      case TeacherKind::Gcn: out = gcn_layer(input, ops.normalized_adjacency, param_vars.at(cursor++), last); break;
      case TeacherKind::Sage: {
        const Var& ws = param_vars.at(cursor++);
        const Var& wn = param_vars.at(cursor++);
        out = sage_layer(input, ops.neighbor_mean, ws, wn, last);
        break;
      }
      case TeacherKind::Gat: {
        std::vector<Var> ws, as;
        for (std::size_t h = 0; h < lp.head_weights.size(); ++h) {
          ws.push_back(param_vars.at(cursor++));
          as.push_back(param_vars.at(cursor++));
        }
        out = gat_layer(input, ops.incoming, ws, as, lp.concat_heads, last, params.leaky_slope);
        break;
      }
    }
    outputs.push_back(out);
    input = LayerInput(drop && !last ? distill::dropout(out, dropout.p, mix_seed(dropout.seed, l + 1)) : out);
  }
  return outputs;
}

TeacherArtifacts teacher_forward(std::shared_ptr<const CsrMatrix> features, const GraphOperators& ops,
                                 const TeacherParams& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.tensors()) vars.push_back(tape.constant(*t));
  const auto outs = teacher_forward_tape(tape, std::move(features), ops, params, vars);
  TeacherArtifacts a;
  a.kind = params.kind;
  for (const Var& v : outs) a.layer_embeddings.push_back(v.value());
  a.logits = a.layer_embeddings.back();
  return a;
}

TeacherArtifacts teacher_forward(const Tensor& features, const GraphOperators& ops, const TeacherParams& params) {
  return teacher_forward(std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(features)), ops, params);
}

TeacherArtifacts teacher_forward(const Graph& g, const TeacherParams& params) {
  return teacher_forward(g.features, GraphOperators::build(g), params);
}

// ---- training ------------------------------------------------------------

TrainedTeacher train_teacher(const Graph& g, const TeacherConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  g.validate();
  TeacherParams params = init_teacher(cfg, g.feature_dim(), g.num_classes, mix_seed(seed, 1));
  const GraphOperators ops = GraphOperators::build(g);
  const auto features = std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(g.features));

  OptimizerState state(AdamConfig{.learning_rate = cfg.learning_rate});
  {
    // Decay applies to the first layer's weights only (tensors() is layer-major).
    const TeacherLayerParams& first = params.layers.front();
    const std::size_t first_count = params.kind == TeacherKind::Gcn    ? 1
                                    : params.kind == TeacherKind::Sage ? 2
                                                                       : 2 * first.head_weights.size();
    state.weight_decay.assign(params.tensors().size(), 0.0);
    for (std::size_t i = 0; i < first_count; ++i) state.weight_decay[i] = cfg.weight_decay;
  }

  auto validation_accuracy = [&](const TeacherParams& p) {
    const TeacherArtifacts a = teacher_forward(features, ops, p);
    return evaluate(a.logits, g.labels, g.val_mask);
  };

  TrainedTeacher best;
  best.params = params;
  best.val_accuracy = -1.0;
  int since_best = 0;
  const std::uint64_t dropout_seed = mix_seed(seed, 2);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* t : params.tensors()) vars.push_back(tape.variable(*t));
    const auto outs = teacher_forward_tape(tape, features, ops, params, vars,
                                           {cfg.dropout, mix_seed(dropout_seed, static_cast<std::uint64_t>(epoch))});
    Var loss = cls_loss(outs.back(), g.labels, g.train_mask);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      throw TrainingError("teacher loss became non-finite at epoch " + std::to_string(epoch), epoch);
    }
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (const Var& v : vars) grads.push_back(v.grad());
    const auto ptrs = params.tensors();
    adam_step(ptrs, grads, state);

    best.epochs_run = epoch + 1;
    const double acc = validation_accuracy(params);
    if (acc > best.val_accuracy) {
      best.val_accuracy = acc;
      best.params = params;
      best.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  best.artifacts = teacher_forward(features, ops, best.params);
  return best;
}

}  // namespace distill
