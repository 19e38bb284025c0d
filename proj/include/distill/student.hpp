#pragma once

// Transformer encoder student over nodes-as-tokens (one sequence of N
// tokens, full self-attention, no positional encoding), and the two-layer
// perceptron baseline.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "distill/autograd.hpp"
#include "distill/sparse.hpp"
#include "distill/tensor.hpp"

namespace distill {

enum class InputMode { TeacherLatent, RawFeatures };

std::string to_string(InputMode mode);
/// Accepts "teacher-latent" and "raw-features".
InputMode parse_input_mode(const std::string& name);

struct StudentConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t layers = 2;
  double dropout = 0.2;

  /// d_k = d_v = d_model / heads.
  std::size_t head_dim() const noexcept { return d_model / heads; }
  void validate() const;
};

struct EncoderLayerParams {
  Tensor norm1_gain, norm1_offset;
  std::vector<Tensor> w_query, w_key, w_value;  // per head, d_model x head_dim
  Tensor w_output;                              // heads*head_dim x d_model
  Tensor norm2_gain, norm2_offset;
  Tensor ff1, ff1_bias, ff2, ff2_bias;
};

struct StudentParams {
  Tensor input_proj, input_bias;
  std::vector<EncoderLayerParams> layers;
  Tensor classifier, classifier_bias;
  std::size_t heads = 1;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

StudentParams init_student(const StudentConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                           std::uint64_t seed);

/// Tape handles for one encoder layer, in EncoderLayerParams field order.
struct EncoderLayerVars {
  Var norm1_gain, norm1_offset;
  std::vector<Var> w_query, w_key, w_value;
  Var w_output;
  Var norm2_gain, norm2_offset;
  Var ff1, ff1_bias, ff2, ff2_bias;
};

struct StudentVars {
  Var input_proj, input_bias;
  std::vector<EncoderLayerVars> layers;
  Var classifier, classifier_bias;
};

/// Registers every parameter on `tape` (tracked if `trainable`).
StudentVars bind_student(Tape& tape, const StudentParams& params, bool trainable);

/// Handles in StudentParams::tensors() order.
std::vector<Var> flatten(const StudentVars& vars);

/// Concat(head_1..head_h) W^O, head_i = Attention(X W_i^Q, X W_i^K, X W_i^V).
/// If `attention_weights` is given it receives each head's weight matrix.
Var multi_head(const Var& x, const EncoderLayerVars& layer, AttentionDropout drop = {},
               std::vector<Tensor>* attention_weights = nullptr);

struct StudentOutput {
  Var logits;
  std::vector<Var> token_embeddings;         // after each encoder block
  std::vector<Tensor> attention_weights;     // every head of every layer, when requested
};

/// project -> [x + MHA(LN(x)); x + FF(LN(x))] x layers -> classifier.
/// Dropout (attention weights and feed-forward output) only when training.
StudentOutput student_forward(const LayerInput& input, const StudentVars& vars, ForwardDropout dropout = {}, bool keep_attention = false);

/// Inference-mode logits.
Tensor student_logits(const Tensor& input, const StudentParams& params);
Tensor student_logits(std::shared_ptr<const CsrMatrix> input, const StudentParams& params);

// ---- perceptron baseline -------------------------------------------------

struct MlpParams {
  Tensor w1, b1, w2, b2;

  std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Tensor*> tensors() const { return {&w1, &b1, &w2, &b2}; }
};

MlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, std::uint64_t seed);

/// relu(X W1 + b1) W2 + b2; no graph access. `vars` follows MlpParams::tensors().
Var mlp_forward(const LayerInput& x, const std::vector<Var>& vars, ForwardDropout dropout = {});
Tensor mlp_baseline_forward(const Tensor& x, const MlpParams& params);
Tensor mlp_baseline_forward(std::shared_ptr<const CsrMatrix> x, const MlpParams& params);

}  // namespace distill
