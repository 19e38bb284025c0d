// distill run | gradcheck | synth
//
// Exit status: 0 success, 1 gradient check above tolerance or unexpected
// error, 2 configuration error, 3 data error, 4 training divergence.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "distill/error.hpp"
#include "distill/graph.hpp"
#include "distill/report.hpp"
#include "distill/trainer.hpp"

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct Overrides {
  std::string config;
  std::optional<std::string> teacher, input_mode, data, out, format;
  std::optional<double> lambda, tau;
  std::optional<std::size_t> scales, runs;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> log_dir;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--teacher", o.teacher, "gcn|sage|gat, or a comma-separated list");
  cmd->add_option("--lambda", o.lambda, "classification weight in [0, 1]");
  cmd->add_option("--tau", o.tau, "distillation temperature");
  cmd->add_option("--scales", o.scales, "teacher layers used by the multi-scale term (0 = all)");
  cmd->add_option("--input-mode", o.input_mode, "teacher-latent|raw-features");
  cmd->add_option("--epochs", o.epochs, "maximum student and perceptron epochs");
  cmd->add_option("--seed", o.seed, "base seed; run r uses seed + r");
  cmd->add_option("--runs", o.runs, "repeated runs per method");
  cmd->add_option("--data", o.data, "GraphJSON dataset (relative paths resolve against DISTILL_DATA_DIR)");
  cmd->add_option("--out", o.out, "report path (stdout when omitted)");
  cmd->add_option("--format", o.format, "csv|json");
  cmd->add_option("--log-dir", o.log_dir, "directory for per-run training logs");
}

distill::ExperimentConfig build_config(const Overrides& o) {
  using namespace distill;
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.teacher) {
    c.teachers.clear();
    std::string rest = *o.teacher;
    for (std::size_t pos; (pos = rest.find(',')) != std::string::npos; rest.erase(0, pos + 1)) {
      c.teachers.push_back(parse_teacher_kind(rest.substr(0, pos)));
    }
    c.teachers.push_back(parse_teacher_kind(rest));
  }
  if (o.lambda) c.distill.lambda = *o.lambda;
  if (o.tau) c.distill.tau = *o.tau;
  if (o.scales) c.distill.scales = *o.scales;
  if (o.input_mode) c.input_mode = parse_input_mode(*o.input_mode);
  if (o.epochs) c.student_fit.max_epochs = c.mlp_fit.max_epochs = *o.epochs;
  if (o.seed) c.seed = *o.seed;
  if (o.runs) c.runs = *o.runs;
  if (o.data) c.data = *o.data;
  if (o.out) c.out = *o.out;
  if (o.format) c.format = parse_report_format(*o.format);
  if (o.log_dir) c.log_dir = *o.log_dir;
  c.validate();
  if (!c.data.empty() && !std::filesystem::exists(resolve_data_path(c.data))) {
    throw IoError("dataset not found: " + resolve_data_path(c.data).string());
  }
  return c;
}

int run_command(const Overrides& o) {
  using namespace distill;
  const ExperimentConfig cfg = build_config(o);
  std::cerr << "config fingerprint " << fingerprint(cfg) << "\n";
  const Graph g = load_experiment_graph(cfg);
  std::cerr << "graph: " << g.num_nodes << " nodes, " << g.edges.size() << " directed edges, " << g.num_classes
            << " classes\n";
  const ExperimentResult result = run_experiment(cfg, g, [](const std::string& msg) { std::cerr << msg << "\n"; });
  for (const std::string& f : result.failures) std::cerr << "FAILED " << f << "\n";
  if (!result.rows.empty()) {
    if (cfg.out.empty()) {
      std::cout << (cfg.format == ReportFormat::Csv ? report_csv(result.rows) : report_json(result.rows));
    } else {
      emit_report(result.rows, cfg.format, cfg.out);
    }
  }
  return result.failures.empty() ? kOk : kDiverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-to-transformer knowledge distillation"};
  app.require_subcommand(1);

  Overrides run_opts;
  CLI::App* run = app.add_subcommand("run", "train teachers, baselines and students; write the report");
  add_override_flags(run, run_opts);

  Overrides grad_opts;
  std::size_t grad_n = 5;
  double tolerance = 1e-4;
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of every student gradient");
  grad->add_option("--n", grad_n, "instance size (2..8)");
  grad->add_option("--tolerance", tolerance, "maximum accepted relative error");
  add_override_flags(grad, grad_opts);

  distill::SynthConfig synth_cfg;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "write a stochastic block model graph as GraphJSON");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--n", synth_cfg.num_nodes, "number of nodes");
  synth->add_option("--classes", synth_cfg.num_classes, "number of classes (balanced)");
  synth->add_option("--p-in", synth_cfg.p_in, "edge probability within a class");
  synth->add_option("--p-out", synth_cfg.p_out, "edge probability across classes");
  synth->add_option("--features", synth_cfg.feature_dim, "feature dimension");
  synth->add_option("--signal", synth_cfg.feature_signal, "std of class-mean feature components");
  synth->add_option("--out", synth_out, "output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return run_command(run_opts);
    if (*grad) {
      const distill::ExperimentConfig cfg = build_config(grad_opts);
      const distill::GradCheckResult r = distill::grad_check(cfg, grad_n);
      std::printf("max_relative_error %.3e entries %zu refined %zu worst %s\n", r.max_relative_error,
                  r.entries_checked, r.entries_refined, r.worst_parameter.c_str());
      return r.max_relative_error < tolerance ? kOk : kFailed;
    }
    if (*synth) {
      const distill::Graph g = distill::synth_graph(synth_cfg);
      if (synth_out.empty()) {
        std::cout << distill::graph_to_json(g) << "\n";
      } else {
        distill::save_graph(g, synth_out);
      }
      return kOk;
    }
  } catch (const distill::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const distill::TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const distill::ContractError& e) {
    // Bad synth parameters and similar argument-level violations.
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const distill::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
