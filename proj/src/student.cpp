#include "distill/student.hpp"

#include <cmath>

#include "distill/error.hpp"
#include "distill/rng.hpp"

namespace distill {

std::string to_string(InputMode mode) {
  return mode == InputMode::TeacherLatent ? "teacher-latent" : "raw-features";
}

InputMode parse_input_mode(const std::string& name) {
  if (name == "teacher-latent") return InputMode::TeacherLatent;
  if (name == "raw-features") return InputMode::RawFeatures;
  throw ConfigError("unknown input mode '" + name + "' (expected teacher-latent or raw-features)");
}

void StudentConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_ff == 0) throw ConfigError("student widths must be positive");
  if (d_model % heads != 0) throw ConfigError("student d_model must be divisible by the head count");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("student dropout must be in [0, 1)");
}

// ---- parameters ----------------------------------------------------------

std::vector<Tensor*> StudentParams::tensors() {
  std::vector<Tensor*> out{&input_proj, &input_bias};
  for (auto& l : layers) {
    out.push_back(&l.norm1_gain);
    out.push_back(&l.norm1_offset);
    for (auto& w : l.w_query) out.push_back(&w);
    for (auto& w : l.w_key) out.push_back(&w);
    for (auto& w : l.w_value) out.push_back(&w);
    out.push_back(&l.w_output);
    out.push_back(&l.norm2_gain);
    out.push_back(&l.norm2_offset);
    out.push_back(&l.ff1);
    out.push_back(&l.ff1_bias);
    out.push_back(&l.ff2);
    out.push_back(&l.ff2_bias);
  }
  out.push_back(&classifier);
  out.push_back(&classifier_bias);
  return out;
}

std::vector<const Tensor*> StudentParams::tensors() const {
  auto ptrs = const_cast<StudentParams*>(this)->tensors();
  return {ptrs.begin(), ptrs.end()};
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

Tensor row(std::size_t n, double fill) { return Tensor({1, n}, fill); }

}  // namespace

StudentParams init_student(const StudentConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                           std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.d_model, hd = cfg.head_dim();
  StudentParams p;
  p.heads = cfg.heads;
  p.input_proj = glorot(input_dim, d, rng);
  p.input_bias = row(d, 0.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams e;
    e.norm1_gain = row(d, 1.0);
    e.norm1_offset = row(d, 0.0);
    for (std::size_t h = 0; h < cfg.heads; ++h) e.w_query.push_back(glorot(d, hd, rng));
    for (std::size_t h = 0; h < cfg.heads; ++h) e.w_key.push_back(glorot(d, hd, rng));
    for (std::size_t h = 0; h < cfg.heads; ++h) e.w_value.push_back(glorot(d, hd, rng));
    e.w_output = glorot(cfg.heads * hd, d, rng);
    e.norm2_gain = row(d, 1.0);
    e.norm2_offset = row(d, 0.0);
    e.ff1 = glorot(d, cfg.d_ff, rng);
    e.ff1_bias = row(cfg.d_ff, 0.0);
    e.ff2 = glorot(cfg.d_ff, d, rng);
    e.ff2_bias = row(d, 0.0);
    p.layers.push_back(std::move(e));
  }
  p.classifier = glorot(d, num_classes, rng);
  p.classifier_bias = row(num_classes, 0.0);
  return p;
}

StudentVars bind_student(Tape& tape, const StudentParams& params, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  StudentVars v;
  v.input_proj = bind(params.input_proj);
  v.input_bias = bind(params.input_bias);
  for (const auto& l : params.layers) {
    EncoderLayerVars e;
    e.norm1_gain = bind(l.norm1_gain);
    e.norm1_offset = bind(l.norm1_offset);
    for (const auto& w : l.w_query) e.w_query.push_back(bind(w));
    for (const auto& w : l.w_key) e.w_key.push_back(bind(w));
    for (const auto& w : l.w_value) e.w_value.push_back(bind(w));
    e.w_output = bind(l.w_output);
    e.norm2_gain = bind(l.norm2_gain);
    e.norm2_offset = bind(l.norm2_offset);
    e.ff1 = bind(l.ff1);
    e.ff1_bias = bind(l.ff1_bias);
    e.ff2 = bind(l.ff2);
    e.ff2_bias = bind(l.ff2_bias);
    v.layers.push_back(std::move(e));
  }
  v.classifier = bind(params.classifier);
  v.classifier_bias = bind(params.classifier_bias);
  return v;
}

std::vector<Var> flatten(const StudentVars& v) {
  std::vector<Var> out{v.input_proj, v.input_bias};
  for (const auto& l : v.layers) {
    out.push_back(l.norm1_gain);
    out.push_back(l.norm1_offset);
    out.insert(out.end(), l.w_query.begin(), l.w_query.end());
    out.insert(out.end(), l.w_key.begin(), l.w_key.end());
    out.insert(out.end(), l.w_value.begin(), l.w_value.end());
    out.push_back(l.w_output);
    out.push_back(l.norm2_gain);
    out.push_back(l.norm2_offset);
    out.push_back(l.ff1);
    out.push_back(l.ff1_bias);
    out.push_back(l.ff2);
    out.push_back(l.ff2_bias);
  }
  out.push_back(v.classifier);
  out.push_back(v.classifier_bias);
  return out;
}

// ---- forward -------------------------------------------------------------

Var multi_head(const Var& x, const EncoderLayerVars& layer, AttentionDropout drop,
               std::vector<Tensor>* attention_weights) {
  const std::size_t h = layer.w_query.size();
  if (h == 0 || layer.w_key.size() != h || layer.w_value.size() != h) {
    throw DimensionError("multi_head: inconsistent head projections");
  }
  std::vector<Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    AttentionDropout head_drop{drop.p, mix_seed(drop.seed, i)};
    Tensor weights;
    heads.push_back(scaled_dot_attention(matmul(x, layer.w_query[i]), matmul(x, layer.w_key[i]),
                                         matmul(x, layer.w_value[i]), head_drop,
                                         attention_weights ? &weights : nullptr));
    if (attention_weights) attention_weights->push_back(std::move(weights));
  }
  return matmul(h == 1 ? heads.front() : concat_cols(heads), layer.w_output);
}

StudentOutput student_forward(const LayerInput& input, const StudentVars& vars, ForwardDropout dropout, bool keep_attention) {
  StudentOutput out;
  Var x = add_row_bias(input.project(vars.input_proj), vars.input_bias);
  const bool training = dropout.p > 0.0;
  for (std::size_t l = 0; l < vars.layers.size(); ++l) {
    const EncoderLayerVars& layer = vars.layers[l];
    const std::uint64_t layer_seed = mix_seed(dropout.seed, l);
    AttentionDropout attn_drop{training ? dropout.p : 0.0, mix_seed(layer_seed, 1)};

    Var attn = multi_head(layer_norm(x, layer.norm1_gain, layer.norm1_offset), layer, attn_drop,
                          keep_attention ? &out.attention_weights : nullptr);
    x = add(x, attn);

    Var hidden = gelu(add_row_bias(matmul(layer_norm(x, layer.norm2_gain, layer.norm2_offset), layer.ff1),
                                   layer.ff1_bias));
    Var ff = add_row_bias(matmul(hidden, layer.ff2), layer.ff2_bias);
    if (training) ff = distill::dropout(ff, dropout.p, mix_seed(layer_seed, 2));
    x = add(x, ff);
    out.token_embeddings.push_back(x);
  }
  out.logits = add_row_bias(matmul(x, vars.classifier), vars.classifier_bias);
  return out;
}

Tensor student_logits(const Tensor& input, const StudentParams& params) {
  Tape tape;
  const StudentVars vars = bind_student(tape, params, false);
  return student_forward(LayerInput(tape.constant(input)), vars).logits.value();
}

Tensor student_logits(std::shared_ptr<const CsrMatrix> input, const StudentParams& params) {
  Tape tape;
  const StudentVars vars = bind_student(tape, params, false);
  return student_forward(LayerInput(tape, std::move(input)), vars).logits.value();
}

// ---- perceptron ----------------------------------------------------------

MlpParams init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, std::uint64_t seed) {
  Rng rng(seed);
  MlpParams p;
  p.w1 = glorot(input_dim, hidden, rng);
  p.b1 = row(hidden, 0.0);
  p.w2 = glorot(hidden, num_classes, rng);
  p.b2 = row(num_classes, 0.0);
  return p;
}

Var mlp_forward(const LayerInput& x, const std::vector<Var>& vars, ForwardDropout dropout) {
  if (vars.size() != 4) throw DimensionError("mlp_forward: expected 4 parameter tensors");
  Var h = relu(add_row_bias(x.project(vars[0]), vars[1]));
  if (dropout.p > 0.0) h = distill::dropout(h, dropout.p, mix_seed(dropout.seed, 1));
  return add_row_bias(matmul(h, vars[2]), vars[3]);
}

Tensor mlp_baseline_forward(const Tensor& x, const MlpParams& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.tensors()) vars.push_back(tape.constant(*t));
  return mlp_forward(LayerInput(tape.constant(x)), vars).value();
}

Tensor mlp_baseline_forward(std::shared_ptr<const CsrMatrix> x, const MlpParams& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor* t : params.tensors()) vars.push_back(tape.constant(*t));
  return mlp_forward(LayerInput(tape, std::move(x)), vars).value();
}

}  // namespace distill
