#pragma once

// Experiment orchestration: configuration, student and baseline training,
// repeated seeded runs and the gradient-check harness.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "distill/graph.hpp"
#include "distill/losses.hpp"
#include "distill/report.hpp"
#include "distill/student.hpp"
#include "distill/teacher.hpp"

namespace distill {

/// Optimizer and stopping settings for one trainable model.
struct FitConfig {
  double learning_rate = 0.01;
  /// Coupled L2 on weight matrices (biases, norm gains and offsets are exempt).
  double weight_decay = 5e-4;
  int max_epochs = 300;
  int patience = 50;
};

struct MlpConfig {
  std::size_t hidden = 64;
  double dropout = 0.5;
};

struct ExperimentConfig {
  std::vector<TeacherKind> teachers{TeacherKind::Gcn};
  InputMode input_mode = InputMode::TeacherLatent;
  TeacherConfig teacher;
  StudentConfig student;
  FitConfig student_fit{0.005, 5e-4, 300, 100};
  MlpConfig mlp;
  FitConfig mlp_fit{0.01, 5e-4, 400, 50};
  DistillConfig distill;
  std::uint64_t seed = 0;
  std::size_t runs = 5;
  /// GraphJSON dataset. Empty selects the synthetic graph below.
  std::string data;
  /// L1 row normalization of loaded dataset features. Synthetic features
  /// are signed Gaussians and are used as generated.
  bool normalize_features = true;
  SynthConfig synth;
  std::string out;
  ReportFormat format = ReportFormat::Csv;
  /// Directory for per-run training logs; empty disables them.
  std::string log_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses a JSON config document; absent keys keep their defaults, unknown
/// keys are rejected. Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Canonical JSON of every field (keys sorted).
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical JSON of the semantic fields.
/// Output location, report format and log directory are excluded.
std::string fingerprint(const ExperimentConfig& cfg);

/// Absolute paths pass through; relative ones resolve against
/// DISTILL_DATA_DIR when it is set.
std::filesystem::path resolve_data_path(const std::string& data);

/// Loads the configured dataset (row-normalized unless disabled) or
/// generates the synthetic one.
Graph load_experiment_graph(const ExperimentConfig& cfg);

/// Token inputs for the student under an input mode.
struct StudentInput {
  Tensor dense;
  std::shared_ptr<const CsrMatrix> sparse;

  std::size_t cols() const noexcept { return sparse ? sparse->cols : dense.cols(); }
  LayerInput bind(Tape& tape) const;
};

/// teacher-latent: the last hidden embedding (the logits for a one-layer
/// teacher); raw-features: the node features.
StudentInput make_student_input(const Graph& g, const TeacherArtifacts& artifacts, InputMode mode);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double val_acc = 0.0;
};

struct DistillResult {
  StudentParams params;
  std::vector<EpochRecord> history;
  double val_accuracy = 0.0;
  int best_epoch = 0;
};

/// Full-batch Adam on the total loss with early stopping on validation
/// accuracy. Throws TrainingError on a non-finite loss.
DistillResult distill_train(const Graph& g, const TeacherArtifacts& artifacts, const ExperimentConfig& cfg,
                            std::uint64_t seed);

/// Per-epoch training log: epoch,cls,micro,macro,multi,total,lambda_eff,val_acc.
std::string training_log_csv(const std::vector<EpochRecord>& history);
void write_training_log(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

struct MlpResult {
  MlpParams params;
  double val_accuracy = 0.0;
  int best_epoch = 0;
};

MlpResult train_mlp(const Graph& g, const ExperimentConfig& cfg, std::uint64_t seed);

struct ExperimentResult {
  std::vector<ReportRow> rows;
  /// One entry per failed sub-run; rows then aggregate successful runs only.
  std::vector<std::string> failures;
};

using ProgressFn = std::function<void(const std::string&)>;

/// For each teacher kind and each run r (seed + r): trains the teacher, the
/// perceptron, the distilled student and the lambda = 1 student, and reports
/// mean and population std of test accuracy per method.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Graph& g, const ProgressFn& progress = {});
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t entries_checked = 0;
  std::size_t entries_refined = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// central-difference gradients. Entries whose two-point estimate differs by
/// more than kGradCheckRefine are re-estimated with the fourth-order stencil.
inline constexpr double kGradCheckFloor = 1e-6;
inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kGradCheckRefine = 1e-6;

/// Compares analytic gradients of the total loss with central differences
/// for every student parameter entry on a synthetic graph of `n` <= 8 nodes.
GradCheckResult grad_check(const ExperimentConfig& cfg, std::size_t n);

}  // namespace distill
