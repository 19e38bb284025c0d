#include "distill/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "distill/error.hpp"
#include "distill/metrics.hpp"
#include "distill/optimizer.hpp"
#include "distill/rng.hpp"

namespace distill {

using nlohmann::json;

// ---- configuration -------------------------------------------------------

void ExperimentConfig::validate() const {
  if (teachers.empty()) throw ConfigError("teacher: at least one teacher kind is required");
  if (runs < 1) throw ConfigError("runs: must be >= 1");
  teacher.validate();
  student.validate();
  distill.validate();
  if (mlp.hidden == 0) throw ConfigError("mlp.hidden: must be positive");
  if (mlp.dropout < 0.0 || mlp.dropout >= 1.0) throw ConfigError("mlp.dropout: must be in [0, 1)");
  auto check_fit = [](const FitConfig& fit, const std::string& at) {
    if (!(fit.learning_rate > 0.0)) throw ConfigError(at + ".learning_rate: must be positive");
    if (fit.weight_decay < 0.0) throw ConfigError(at + ".weight_decay: must be >= 0");
    if (fit.max_epochs < 1) throw ConfigError(at + ".epochs: must be >= 1");
    if (fit.patience < 1) throw ConfigError(at + ".patience: must be >= 1");
  };
  check_fit(student_fit, "student");
  check_fit(mlp_fit, "mlp");
  if (data.empty()) {
    if (synth.num_nodes < 2 || synth.num_classes < 1 || synth.num_classes > synth.num_nodes) {
      throw ConfigError("synth: need 2 <= n and 1 <= classes <= n");
    }
    if (synth.p_in < 0.0 || synth.p_in > 1.0 || synth.p_out < 0.0 || synth.p_out > 1.0) {
      throw ConfigError("synth: probabilities must be in [0, 1]");
    }
  }
}

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where, std::initializer_list<const char*> allowed) : obj_(obj) {
    where_ = std::move(where);
    if (!obj.is_object()) throw ConfigError(label("") + "expected an object");
    for (const auto& [key, value] : obj.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) throw ConfigError(label(key) + "unknown key");
    }
  }

  template <typename T>
  void read(const char* key, T& dst) const {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(label(key) + "expected true or false");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError(label(key) + "expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(label(key) + "expected an integer");
      }
      dst = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(label(key) + "wrong type");
    }
  }

  const json* child(const char* key) const {
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string label(const std::string& key) const {
    const std::string path = where_.empty() ? key : key.empty() ? where_ : where_ + "." + key;
    return path.empty() ? "config: " : path + ": ";
  }

 private:
  const json& obj_;
  std::string where_;
};

template <typename Parse>
auto parse_enum(const ObjectReader& r, const char* key, Parse parse) {
  std::string name;
  r.read(key, name);
  try {
    return parse(name);
  } catch (const ConfigError& e) {
    throw ConfigError(r.label(key) + e.what());
  }
}

void read_fit(const json& j, const std::string& where, FitConfig& fit) {
  ObjectReader r(j, where, {"learning_rate", "weight_decay", "epochs", "patience"});
  r.read("learning_rate", fit.learning_rate);
  r.read("weight_decay", fit.weight_decay);
  r.read("epochs", fit.max_epochs);
  r.read("patience", fit.patience);
}

json fit_json(const FitConfig& f) {
  return {{"learning_rate", f.learning_rate},
          {"weight_decay", f.weight_decay},
          {"epochs", f.max_epochs},
          {"patience", f.patience}};
}

std::string schedule_name(LambdaSchedule s) { return s == LambdaSchedule::Constant ? "constant" : "linear"; }

LambdaSchedule parse_schedule(const std::string& name) {
  if (name == "constant") return LambdaSchedule::Constant;
  if (name == "linear") return LambdaSchedule::Linear;
  throw ConfigError("unknown schedule '" + name + "' (expected constant or linear)");
}

json config_json(const ExperimentConfig& c) {
  json teachers = json::array();
  for (TeacherKind k : c.teachers) teachers.push_back(to_string(k));
  const TeacherConfig& t = c.teacher;
  const StudentConfig& s = c.student;
  const DistillConfig& d = c.distill;
  json student = fit_json(c.student_fit);
  student.update(json{{"d_model", s.d_model}, {"heads", s.heads}, {"d_ff", s.d_ff}, {"layers", s.layers},
                      {"dropout", s.dropout}});
  json mlp = fit_json(c.mlp_fit);
  mlp.update(json{{"hidden", c.mlp.hidden}, {"dropout", c.mlp.dropout}});
  return {
      {"teacher", teachers},
      {"input_mode", to_string(c.input_mode)},
      {"teacher_config",
       {{"layers", t.layers},
        {"hidden", t.hidden},
        {"gat_hidden_heads", t.gat_hidden_heads},
        {"gat_output_heads", t.gat_output_heads},
        {"leaky_slope", t.leaky_slope},
        {"dropout", t.dropout},
        {"learning_rate", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"epochs", t.max_epochs},
        {"patience", t.patience}}},
      {"student", student},
      {"mlp", mlp},
      {"distill",
       {{"lambda", d.lambda},
        {"tau", d.tau},
        {"scales", d.scales},
        {"schedule", schedule_name(d.schedule)},
        {"lambda_start", d.lambda_start},
        {"lambda_end", d.lambda_end},
        {"multiscale_affinity", d.multiscale_affinity}}},
      {"seed", c.seed},
      {"runs", c.runs},
      {"data", c.data},
      {"normalize_features", c.normalize_features},
      {"synth",
       {{"seed", c.synth.seed},
        {"n", c.synth.num_nodes},
        {"classes", c.synth.num_classes},
        {"p_in", c.synth.p_in},
        {"p_out", c.synth.p_out},
        {"feature_dim", c.synth.feature_dim},
        {"feature_signal", c.synth.feature_signal}}},
      {"out", c.out},
      {"format", to_string(c.format)},
      {"log_dir", c.log_dir},
  };
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(doc, "",
                 {"teacher", "input_mode", "teacher_config", "student", "mlp", "distill", "seed", "runs", "data",
                  "normalize_features", "synth", "out", "format", "log_dir"});
  if (const json* t = r.child("teacher")) {
    c.teachers.clear();
    const json list = t->is_array() ? *t : json::array({*t});
    for (const auto& item : list) {
      if (!item.is_string()) throw ConfigError("teacher: expected a kind name or a list of them");
      try {
        c.teachers.push_back(parse_teacher_kind(item.get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("teacher: ") + e.what());
      }
    }
  }
  if (r.child("input_mode")) c.input_mode = parse_enum(r, "input_mode", parse_input_mode);
  if (const json* t = r.child("teacher_config")) {
    ObjectReader tr(*t, "teacher_config",
                    {"layers", "hidden", "gat_hidden_heads", "gat_output_heads", "leaky_slope", "dropout",
                     "learning_rate", "weight_decay", "epochs", "patience"});
    tr.read("layers", c.teacher.layers);
    tr.read("hidden", c.teacher.hidden);
    tr.read("gat_hidden_heads", c.teacher.gat_hidden_heads);
    tr.read("gat_output_heads", c.teacher.gat_output_heads);
    tr.read("leaky_slope", c.teacher.leaky_slope);
    tr.read("dropout", c.teacher.dropout);
    tr.read("learning_rate", c.teacher.learning_rate);
    tr.read("weight_decay", c.teacher.weight_decay);
    tr.read("epochs", c.teacher.max_epochs);
    tr.read("patience", c.teacher.patience);
  }
  if (const json* s = r.child("student")) {
    ObjectReader sr(*s, "student",
                    {"d_model", "heads", "d_ff", "layers", "dropout", "learning_rate", "weight_decay", "epochs",
                     "patience"});
    sr.read("d_model", c.student.d_model);
    sr.read("heads", c.student.heads);
    sr.read("d_ff", c.student.d_ff);
    sr.read("layers", c.student.layers);
    sr.read("dropout", c.student.dropout);
    json fit = *s;
    for (const char* k : {"d_model", "heads", "d_ff", "layers", "dropout"}) fit.erase(k);
    read_fit(fit, "student", c.student_fit);
  }
  if (const json* m = r.child("mlp")) {
    ObjectReader mr(*m, "mlp", {"hidden", "dropout", "learning_rate", "weight_decay", "epochs", "patience"});
    mr.read("hidden", c.mlp.hidden);
    mr.read("dropout", c.mlp.dropout);
    json fit = *m;
    for (const char* k : {"hidden", "dropout"}) fit.erase(k);
    read_fit(fit, "mlp", c.mlp_fit);
  }
  if (const json* d = r.child("distill")) {
    ObjectReader dr(*d, "distill",
                    {"lambda", "tau", "scales", "schedule", "lambda_start", "lambda_end", "multiscale_affinity"});
    dr.read("lambda", c.distill.lambda);
    dr.read("tau", c.distill.tau);
    dr.read("scales", c.distill.scales);
    if (dr.child("schedule")) c.distill.schedule = parse_enum(dr, "schedule", parse_schedule);
    dr.read("lambda_start", c.distill.lambda_start);
    dr.read("lambda_end", c.distill.lambda_end);
    dr.read("multiscale_affinity", c.distill.multiscale_affinity);
  }
  r.read("seed", c.seed);
  r.read("runs", c.runs);
  r.read("data", c.data);
  r.read("normalize_features", c.normalize_features);
  if (const json* s = r.child("synth")) {
    ObjectReader sr(*s, "synth", {"seed", "n", "classes", "p_in", "p_out", "feature_dim", "feature_signal"});
    sr.read("seed", c.synth.seed);
    sr.read("n", c.synth.num_nodes);
    sr.read("classes", c.synth.num_classes);
    sr.read("p_in", c.synth.p_in);
    sr.read("p_out", c.synth.p_out);
    sr.read("feature_dim", c.synth.feature_dim);
    sr.read("feature_signal", c.synth.feature_signal);
  }
  r.read("out", c.out);
  if (r.child("format")) c.format = parse_enum(r, "format", parse_report_format);
  r.read("log_dir", c.log_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

std::string fingerprint(const ExperimentConfig& cfg) {
  json j = config_json(cfg);
  for (const char* k : {"out", "format", "log_dir"}) j.erase(k);
  j.erase(cfg.data.empty() ? "normalize_features" : "synth");
  json& d = j["distill"];
  if (cfg.distill.schedule == LambdaSchedule::Constant) {
    d.erase("lambda_start");
    d.erase("lambda_end");
  } else {
    d.erase("lambda");
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::filesystem::path resolve_data_path(const std::string& data) {
  std::filesystem::path p(data);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DISTILL_DATA_DIR"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

Graph load_experiment_graph(const ExperimentConfig& cfg) {
  if (cfg.data.empty()) return synth_graph(cfg.synth);
  Graph g = load_graph(resolve_data_path(cfg.data));
  if (cfg.normalize_features) g.features = row_normalize(g.features);
  return g;
}

// ---- student input -------------------------------------------------------

LayerInput StudentInput::bind(Tape& tape) const {
  if (sparse) return LayerInput(tape, sparse);
  return LayerInput(tape.constant(dense));
}

StudentInput make_student_input(const Graph& g, const TeacherArtifacts& artifacts, InputMode mode) {
  StudentInput in;
  if (mode == InputMode::RawFeatures) {
    in.sparse = std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(g.features));
  } else {
    if (artifacts.depth() == 0) throw ContractError("teacher artifacts hold no layers");
    in.dense = artifacts.depth() >= 2 ? artifacts.layer_embeddings[artifacts.depth() - 2] : artifacts.logits;
    if (in.dense.rows() != g.num_nodes) throw DimensionError("teacher artifacts do not match the graph size");
  }
  return in;
}

// ---- training loop -------------------------------------------------------

namespace {

struct StepOutput {
  Var loss;
  std::vector<Var> vars;
  LossBreakdown breakdown;
};

template <typename Params>
struct FitOutcome {
  Params best;
  double val_accuracy = -1.0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

std::string breakdown_text(const LossBreakdown& b) {
  std::ostringstream s;
  s << "cls=" << b.cls << " micro=" << b.micro << " macro=" << b.macro << " multi=" << b.multi
    << " total=" << b.total;
  return s.str();
}

// step(tape, params, epoch) records the loss; eval(params) returns validation accuracy.
template <typename Params, typename Step, typename Eval>
FitOutcome<Params> fit(Params params, const FitConfig& fc, const char* what, Step&& step, Eval&& eval) {
  const auto ptrs = params.tensors();
  OptimizerState state(AdamConfig{.learning_rate = fc.learning_rate});
  state.weight_decay.resize(ptrs.size());
  for (std::size_t i = 0; i < ptrs.size(); ++i) state.weight_decay[i] = ptrs[i]->rows() > 1 ? fc.weight_decay : 0.0;

  FitOutcome<Params> out;
  out.best = params;
  int since_best = 0;
  std::vector<Tensor> grads;
  for (int epoch = 0; epoch < fc.max_epochs; ++epoch) {
    Tape tape;
    StepOutput s = step(tape, params, epoch);
    if (!std::isfinite(s.breakdown.total)) {
      throw TrainingError(std::string(what) + " loss became non-finite at epoch " + std::to_string(epoch) + " (" +
                              breakdown_text(s.breakdown) + ")",
                          epoch);
    }
    tape.backward(s.loss);
    grads.clear();
    for (const Var& v : s.vars) grads.push_back(v.grad());
    adam_step(ptrs, grads, state);

    const double acc = eval(params);
    out.history.push_back({epoch, s.breakdown, acc});
    if (acc > out.val_accuracy) {
      out.val_accuracy = acc;
      out.best = params;
      out.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= fc.patience) {
      break;
    }
  }
  return out;
}

Tensor student_eval_logits(const StudentInput& input, const StudentParams& params) {
  Tape tape;
  const StudentVars vars = bind_student(tape, params, false);
  return student_forward(input.bind(tape), vars).logits.value();
}

std::size_t effective_scales(const DistillConfig& d, const TeacherArtifacts& a) {
  return d.scales == 0 ? a.depth() : d.scales;
}

// Everything the total loss needs that does not depend on the student.
struct DistillTargets {
  const Graph* graph;
  const TeacherArtifacts* artifacts;
  double multi = 0.0;
};

TotalLoss record_total(Tape& tape, const StudentOutput& out, const DistillTargets& t, const DistillConfig& d,
                       int epoch, int max_epochs) {
  const Graph& g = *t.graph;
  LossTerms terms;
  terms.cls = cls_loss(out.logits, g.labels, g.train_mask);
  terms.micro = micro_loss(t.artifacts->logits, out.logits, g.edges, d.tau);
  terms.macro = macro_loss(t.artifacts->logits, out.logits, g.edges, d.tau);
  terms.multi = tape.constant(Tensor::scalar(t.multi));
  return total_loss(terms, d, epoch, max_epochs);
}

}  // namespace

DistillResult distill_train(const Graph& g, const TeacherArtifacts& artifacts, const ExperimentConfig& cfg,
                            std::uint64_t seed) {
  cfg.student.validate();
  cfg.distill.validate();
  const StudentInput input = make_student_input(g, artifacts, cfg.input_mode);
  DistillTargets targets{&g, &artifacts,
                         multiscale_loss(artifacts.layer_embeddings, g.edges, effective_scales(cfg.distill, artifacts),
                                         cfg.distill.multiscale_affinity)};
  const std::uint64_t dropout_seed = mix_seed(seed, 2);
  const int max_epochs = cfg.student_fit.max_epochs;

  auto step = [&](Tape& tape, const StudentParams& params, int epoch) {
    const StudentVars vars = bind_student(tape, params, true);
    const StudentOutput out = student_forward(
        input.bind(tape), vars, {cfg.student.dropout, mix_seed(dropout_seed, static_cast<std::uint64_t>(epoch))});
    TotalLoss tl = record_total(tape, out, targets, cfg.distill, epoch, max_epochs);
    return StepOutput{tl.total, flatten(vars), tl.breakdown};
  };
  auto eval = [&](const StudentParams& params) {
    return evaluate(student_eval_logits(input, params), g.labels, g.val_mask);
  };
  auto fitted = fit(init_student(cfg.student, input.cols(), g.num_classes, mix_seed(seed, 1)), cfg.student_fit,
                    "student", step, eval);
  return {std::move(fitted.best), std::move(fitted.history), fitted.val_accuracy, fitted.best_epoch};
}

std::string training_log_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream s;
  s.precision(17);
  s << "epoch,cls,micro,macro,multi,total,lambda_eff,val_acc\n";
  for (const EpochRecord& r : history) {
    s << r.epoch << ',' << r.loss.cls << ',' << r.loss.micro << ',' << r.loss.macro << ',' << r.loss.multi << ','
      << r.loss.total << ',' << r.loss.lambda_eff << ',' << r.val_acc << '\n';
  }
  return s.str();
}

void write_training_log(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open training log " + path.string());
  out << training_log_csv(history);
  if (!out) throw IoError("write failed: " + path.string());
}

MlpResult train_mlp(const Graph& g, const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto x = std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(g.features));
  const std::uint64_t dropout_seed = mix_seed(seed, 2);
  auto step = [&](Tape& tape, const MlpParams& params, int epoch) {
    std::vector<Var> vars;
    for (const Tensor* t : params.tensors()) vars.push_back(tape.variable(*t));
    Var logits = mlp_forward(LayerInput(tape, x), vars,
                             {cfg.mlp.dropout, mix_seed(dropout_seed, static_cast<std::uint64_t>(epoch))});
    Var loss = cls_loss(logits, g.labels, g.train_mask);
    const double v = loss.value()[0];
    return StepOutput{loss, std::move(vars), LossBreakdown{v, 0.0, 0.0, 0.0, v, 1.0}};
  };
  auto eval = [&](const MlpParams& params) { return evaluate(mlp_baseline_forward(x, params), g.labels, g.val_mask); };
  auto fitted = fit(init_mlp(g.feature_dim(), cfg.mlp.hidden, g.num_classes, mix_seed(seed, 1)), cfg.mlp_fit, "mlp",
                    step, eval);
  return {std::move(fitted.best), fitted.val_accuracy, fitted.best_epoch};
}

// ---- experiment ----------------------------------------------------------

namespace {

const char* const kMethods[] = {"teacher", "mlp", "student-distilled", "student-undistilled"};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Graph& g, const ProgressFn& progress) {
  cfg.validate();
  g.validate();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const std::string print = fingerprint(cfg);
  const auto features = std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(g.features));
  ExperimentResult result;

  // The perceptron ignores the teacher, so its runs are shared across kinds.
  std::vector<double> mlp_acc;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    const std::uint64_t seed = cfg.seed + r;
    try {
      const MlpResult m = train_mlp(g, cfg, seed);
      mlp_acc.push_back(evaluate(mlp_baseline_forward(features, m.params), g.labels, g.test_mask));
      say("mlp run " + std::to_string(r) + ": test " + std::to_string(mlp_acc.back()));
    } catch (const Error& e) {
      result.failures.push_back("mlp run " + std::to_string(r) + ": " + e.what());
    }
  }

  ExperimentConfig undistilled = cfg;
  undistilled.distill.lambda = 1.0;
  undistilled.distill.schedule = LambdaSchedule::Constant;

  for (TeacherKind kind : cfg.teachers) {
    const std::string name = to_string(kind);
    TeacherConfig tcfg = cfg.teacher;
    tcfg.kind = kind;
    std::vector<double> acc[4];
    acc[1] = mlp_acc;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      const std::uint64_t seed = cfg.seed + r;
      const std::string tag = name + " run " + std::to_string(r);
      TrainedTeacher teacher;
      try {
        teacher = train_teacher(g, tcfg, seed);
      } catch (const Error& e) {
        result.failures.push_back(tag + " teacher: " + e.what());
        continue;
      }
      acc[0].push_back(evaluate(teacher.artifacts.logits, g.labels, g.test_mask));
      say(tag + " teacher: test " + std::to_string(acc[0].back()) + " (best epoch " +
          std::to_string(teacher.best_epoch) + ")");
      const std::uint64_t before = checksum(teacher.artifacts);
      const std::uint64_t student_seed = mix_seed(seed, 7);
      for (int m = 2; m < 4; ++m) {
        const ExperimentConfig& scfg = m == 2 ? cfg : undistilled;
        try {
          const DistillResult d = distill_train(g, teacher.artifacts, scfg, student_seed);
          const StudentInput input = make_student_input(g, teacher.artifacts, scfg.input_mode);
          acc[m].push_back(evaluate(student_eval_logits(input, d.params), g.labels, g.test_mask));
          say(tag + " " + kMethods[m] + ": test " + std::to_string(acc[m].back()) + " (best epoch " +
              std::to_string(d.best_epoch) + ")");
          if (!cfg.log_dir.empty()) {
            std::filesystem::create_directories(cfg.log_dir);
            write_training_log(d.history, std::filesystem::path(cfg.log_dir) /
                                              (name + "-" + kMethods[m] + "-run" + std::to_string(r) + ".csv"));
          }
        } catch (const TrainingError& e) {
          result.failures.push_back(tag + " " + kMethods[m] + ": " + e.what());
        }
      }
      if (checksum(teacher.artifacts) != before) {
        throw ContractError("teacher artifacts changed during distillation (" + tag + ")");
      }
    }
    for (int m = 0; m < 4; ++m) {
      if (acc[m].empty()) continue;
      const Summary s = summarize(acc[m]);
      result.rows.push_back({name, kMethods[m], s.mean, s.std, acc[m].size(), print});
    }
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  return run_experiment(cfg, load_experiment_graph(cfg), progress);
}

// ---- gradient check ------------------------------------------------------

GradCheckResult grad_check(const ExperimentConfig& cfg, std::size_t n) {
  if (n < 2 || n > 8) throw ContractError("grad_check: instance size must be in [2, 8]");
  cfg.student.validate();
  cfg.distill.validate();
  cfg.teacher.validate();

  // First seed offset giving two or more undirected edges, so every loss term is live.
  Graph g;
  SynthConfig sc{cfg.seed, n, n >= 6 ? std::size_t{3} : std::size_t{2}, 0.7, 0.3, 6, 1.0};
  for (std::uint64_t k = 0;; ++k) {
    sc.seed = mix_seed(cfg.seed, k);
    g = synth_graph(sc);
    if (g.edges.size() >= 4) break;
  }
  g.train_mask.assign(n, true);

  TeacherConfig tcfg = cfg.teacher;
  tcfg.kind = cfg.teachers.front();
  const TeacherArtifacts artifacts =
      teacher_forward(g, init_teacher(tcfg, g.feature_dim(), g.num_classes, mix_seed(cfg.seed, 3)));
  const StudentInput input = make_student_input(g, artifacts, cfg.input_mode);
  StudentParams params = init_student(cfg.student, input.cols(), g.num_classes, mix_seed(cfg.seed, 4));
  const DistillTargets targets{
      &g, &artifacts,
      multiscale_loss(artifacts.layer_embeddings, g.edges, effective_scales(cfg.distill, artifacts),
                      cfg.distill.multiscale_affinity)};
  const ForwardDropout drop{cfg.student.dropout, mix_seed(cfg.seed, 5)};
  const int max_epochs = cfg.student_fit.max_epochs;

  auto loss_value = [&]() {
    Tape tape;
    const StudentVars vars = bind_student(tape, params, false);
    const StudentOutput out = student_forward(input.bind(tape), vars, drop);
    return record_total(tape, out, targets, cfg.distill, 0, max_epochs).total.value()[0];
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    const StudentVars vars = bind_student(tape, params, true);
    const StudentOutput out = student_forward(input.bind(tape), vars, drop);
    TotalLoss tl = record_total(tape, out, targets, cfg.distill, 0, max_epochs);
    tape.backward(tl.total);
    for (const Var& v : flatten(vars)) analytic.push_back(v.grad());
  }

  GradCheckResult res;
  const auto ptrs = params.tensors();
  for (std::size_t p = 0; p < ptrs.size(); ++p) {
    Tensor& t = *ptrs[p];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      auto at = [&](double offset) {
        t[i] = saved + offset;
        const double v = loss_value();
        t[i] = saved;
        return v;
      };
      const double h = kGradCheckStep;
      const double a = analytic[p][i];
      const double d1 = at(h) - at(-h);
      double numeric = d1 / (2.0 * h);
      auto rel = [&](double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradCheckFloor}); };
      if (rel(numeric) > kGradCheckRefine) {
        const double d2 = at(2.0 * h) - at(-2.0 * h);
        numeric = (8.0 * d1 - d2) / (12.0 * h);
        ++res.entries_refined;
      }
      const double err = rel(numeric);
      ++res.entries_checked;
      if (err > res.max_relative_error) {
        res.max_relative_error = err;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "tensor %zu entry %zu (analytic %.6e, numeric %.6e)", p, i, a, numeric);
        res.worst_parameter = buf;
      }
    }
  }
  return res;
}

}  // namespace distill
