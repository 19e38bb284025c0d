#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "distill/error.hpp"
#include "distill/metrics.hpp"
#include "distill/report.hpp"
#include "distill/sidecar.hpp"
#include "distill/trainer.hpp"
#include "support.hpp"

using distill::ExperimentConfig;
using distill::ReportRow;
using distill::Tensor;

namespace {

// Small enough for a unit test, large enough to exercise every code path.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.synth = {.seed = 2, .num_nodes = 60, .num_classes = 3, .p_in = 0.2, .p_out = 0.02, .feature_dim = 6,
             .feature_signal = 1.0};
  c.teacher.hidden = 8;
  c.teacher.gat_hidden_heads = 2;
  c.teacher.max_epochs = 30;
  c.student.d_model = 8;
  c.student.heads = 2;
  c.student.d_ff = 8;
  c.student.layers = 1;
  c.student_fit.max_epochs = 15;
  c.mlp.hidden = 8;
  c.mlp_fit.max_epochs = 15;
  c.runs = 2;
  return c;
}

std::vector<ReportRow> twelve_rows() {
  std::vector<ReportRow> rows;
  for (const char* t : {"gcn", "sage", "gat"})
    for (const char* m : {"teacher", "mlp", "student-distilled", "student-undistilled"})
      rows.push_back({t, m, 0.1 + 0.01 * static_cast<double>(rows.size()), 0.01, 5, "0123456789abcdef"});
  return rows;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct TempDir {
  TempDir() : path(std::filesystem::temp_directory_path() / ("distill_test_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path path;
};

}  // namespace

TEST_CASE("evaluate counts arg-max hits over the mask") {
  const Tensor z = Tensor::matrix({{2, 1}, {0, 3}, {1, 1}, {5, 0}});
  CHECK(distill::evaluate(z, {0, 1, 0, 1}, {true, true, true, true}) == doctest::Approx(0.75));
  CHECK(distill::evaluate(z, {0, 1, 1, 1}, {false, false, true, false}) == 0.0);  // ties go to class 0
  CHECK_THROWS_AS(distill::evaluate(z, {0, 1, 0, 1}, {false, false, false, false}), distill::ContractError);
}

TEST_CASE("report csv has a header and one line per row") {
  const auto rows = twelve_rows();
  const std::string csv = distill::report_csv(rows);
  CHECK(count_lines(csv) == 13);
  CHECK(csv.rfind("teacher,method,mean_acc,std_acc,runs,fingerprint\n", 0) == 0);
  CHECK(csv.find("\ngcn,teacher,0.1,0.01,5,0123456789abcdef\n") != std::string::npos);
}

TEST_CASE("report json round trip, summary statistics, emission errors") {
  const auto rows = twelve_rows();
  CHECK(distill::parse_report_json(distill::report_json(rows)) == rows);
  CHECK_THROWS_AS(distill::parse_report_json("{\"x\": 1}"), distill::ParseError);

  const auto s = distill::summarize({1, 2, 3, 4});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));

  TempDir dir;
  CHECK_THROWS_AS(distill::emit_report({}, distill::ReportFormat::Csv, dir.path / "r.csv"), distill::ContractError);
  CHECK_THROWS_AS(distill::emit_report(rows, distill::ReportFormat::Csv, dir.path / "missing" / "r.csv"),
                  distill::IoError);
  distill::emit_report(rows, distill::ReportFormat::Json, dir.path / "r.json");
  std::ifstream in(dir.path / "r.json");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(distill::parse_report_json(ss.str()) == rows);
  CHECK(distill::parse_report_format("json") == distill::ReportFormat::Json);
  CHECK_THROWS_AS(distill::parse_report_format("xml"), distill::ConfigError);
}

TEST_CASE("config parsing is strict and names the offending field") {
  const auto c = distill::parse_experiment_config(
      R"({"teacher": ["gat", "sage"], "distill": {"lambda": 0.4, "multiscale_affinity": false}, "runs": 3,
          "student": {"heads": 2, "epochs": 7}})");
  CHECK(c.teachers == std::vector{distill::TeacherKind::Gat, distill::TeacherKind::Sage});
  CHECK(c.distill.lambda == 0.4);
  CHECK_FALSE(c.distill.multiscale_affinity);
  CHECK(c.runs == 3);
  CHECK(c.student.heads == 2);
  CHECK(c.student_fit.max_epochs == 7);

  auto message = [](const std::string& doc) {
    try {
      distill::parse_experiment_config(doc);
    } catch (const distill::ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"distill": {"lamda": 0.5}})").find("distill.lamda") != std::string::npos);
  CHECK(message(R"({"runs": -1})").find("runs") != std::string::npos);
  CHECK(message(R"({"distill": {"lambda": 1.5}})").find("lambda") != std::string::npos);
  CHECK(message(R"({"distill": {"tau": 0}})").find("tau") != std::string::npos);
  CHECK(message(R"({"teacher": "gin"})").find("teacher") != std::string::npos);
  CHECK(message(R"({"normalize_features": 1})").find("normalize_features") != std::string::npos);
  CHECK(message("{") != "no error");
  CHECK(message(R"({"student": {"d_model": 10, "heads": 4}})") != "no error");
}

TEST_CASE("fingerprint ignores key order and output settings, tracks semantic fields") {
  const auto a = distill::parse_experiment_config(R"({"seed": 3, "distill": {"tau": 1.5, "lambda": 0.6}})");
  const auto b = distill::parse_experiment_config(R"({"distill": {"lambda": 0.6, "tau": 1.5}, "seed": 3})");
  CHECK(distill::fingerprint(a) == distill::fingerprint(b));
  CHECK(distill::fingerprint(a).size() == 16);

  ExperimentConfig c = a;
  c.out = "elsewhere.csv";
  c.format = distill::ReportFormat::Json;
  c.log_dir = "/tmp/logs";
  CHECK(distill::fingerprint(c) == distill::fingerprint(a));
  c = a;
  c.distill.tau = 1.6;
  CHECK(distill::fingerprint(c) != distill::fingerprint(a));
  c = a;
  c.student.dropout = 0.1;
  CHECK(distill::fingerprint(c) != distill::fingerprint(a));

  // Round trip through the canonical JSON keeps the fingerprint.
  CHECK(distill::fingerprint(distill::parse_experiment_config(distill::experiment_config_to_json(a))) ==
        distill::fingerprint(a));
}

TEST_CASE("relative dataset paths resolve against the data directory variable") {
  ::setenv("DISTILL_DATA_DIR", "/data/root", 1);
  CHECK(distill::resolve_data_path("citeseer.json") == std::filesystem::path("/data/root/citeseer.json"));
  CHECK(distill::resolve_data_path("/abs/x.json") == std::filesystem::path("/abs/x.json"));
  ::unsetenv("DISTILL_DATA_DIR");
  CHECK(distill::resolve_data_path("citeseer.json") == std::filesystem::path("citeseer.json"));
}

TEST_CASE("loaded datasets are row-normalized unless disabled") {
  TempDir dir;
  const auto g = distill::synth_graph({.seed = 1, .num_nodes = 12, .num_classes = 2, .feature_dim = 3});
  distill::save_graph(g, dir.path / "g.json");
  ExperimentConfig c;
  c.data = (dir.path / "g.json").string();
  CHECK(distill::load_experiment_graph(c).features == distill::row_normalize(g.features));
  c.normalize_features = false;
  CHECK(distill::load_experiment_graph(c).features == g.features);
}

TEST_CASE("student input modes") {
  const auto c = tiny_config();
  const auto g = distill::synth_graph(c.synth);
  const auto teacher = distill::train_teacher(g, c.teacher, 1);
  const auto latent = distill::make_student_input(g, teacher.artifacts, distill::InputMode::TeacherLatent);
  CHECK(latent.dense == teacher.artifacts.layer_embeddings[0]);
  const auto raw = distill::make_student_input(g, teacher.artifacts, distill::InputMode::RawFeatures);
  REQUIRE(raw.sparse);
  CHECK(raw.sparse->to_dense() == g.features);
}

TEST_CASE("distillation leaves the teacher artifacts untouched and logs every epoch" *
          doctest::test_suite("property")) {
  const auto c = tiny_config();
  const auto g = distill::synth_graph(c.synth);
  const auto teacher = distill::train_teacher(g, c.teacher, 1);
  const std::uint64_t before = distill::checksum(teacher.artifacts);
  const auto result = distill::distill_train(g, teacher.artifacts, c, 5);
  CHECK(distill::checksum(teacher.artifacts) == before);
  CHECK(result.history.size() >= 1);
  const std::string log = distill::training_log_csv(result.history);
  CHECK(log.rfind("epoch,cls,micro,macro,multi,total,lambda_eff,val_acc\n", 0) == 0);
  CHECK(count_lines(log) == result.history.size() + 1);
  for (const auto& rec : result.history) {
    const auto& l = rec.loss;
    CHECK(l.total == doctest::Approx(l.lambda_eff * l.cls + (1 - l.lambda_eff) * (l.micro + l.macro + l.multi)));
    for (double v : {l.cls, l.micro, l.macro, l.multi}) CHECK(v >= -1e-12);
  }
}

TEST_CASE("at lambda = 1 the teacher outputs have no influence on training" *
          doctest::test_suite("property")) {
  // Raw-feature input, so only the distillation terms could see the teacher.
  auto c = tiny_config();
  c.input_mode = distill::InputMode::RawFeatures;
  c.distill.lambda = 1.0;
  const auto g = distill::synth_graph(c.synth);
  const auto teacher = distill::train_teacher(g, c.teacher, 1);
  auto scrambled = teacher.artifacts;
  distill::Rng rng(9);
  for (Tensor& t : scrambled.layer_embeddings)
    for (double& v : t.values()) v = rng.normal() * 10;
  scrambled.logits = scrambled.layer_embeddings.back();

  const auto a = distill::distill_train(g, teacher.artifacts, c, 4);
  const auto b = distill::distill_train(g, scrambled, c, 4);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(std::abs(a.history[e].loss.cls - b.history[e].loss.cls) <= 1e-9);
    CHECK(std::abs(a.history[e].loss.total - b.history[e].loss.cls) <= 1e-9);
    CHECK(a.history[e].val_acc == b.history[e].val_acc);
  }
  const auto pa = a.params.tensors();
  const auto pb = b.params.tensors();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(distill::max_abs_diff(*pa[i], *pb[i]) <= 1e-9);
}

TEST_CASE("perceptron never reads the edges") {
  const auto c = tiny_config();
  const auto g = distill::synth_graph(c.synth);
  auto h = g;
  h.edges = distill::symmetrize_edges({{0, 1}});
  const auto a = distill::train_mlp(g, c, 3), b = distill::train_mlp(h, c, 3);
  CHECK(a.val_accuracy == b.val_accuracy);
  CHECK(a.params.w1 == b.params.w1);
}

TEST_CASE("experiments: reports are byte-identical across repeated runs; teachers ignore distillation settings" *
          doctest::test_suite("property")) {
  auto c = tiny_config();
  c.teachers = {distill::TeacherKind::Gcn, distill::TeacherKind::Sage, distill::TeacherKind::Gat};
  const auto first = distill::run_experiment(c);
  const auto second = distill::run_experiment(c);
  CHECK(first.failures.empty());
  REQUIRE(first.rows.size() == 12);
  CHECK(distill::report_csv(first.rows) == distill::report_csv(second.rows));
  CHECK(distill::report_json(first.rows) == distill::report_json(second.rows));
  for (const auto& row : first.rows) {
    CHECK(row.runs == 2);
    CHECK(row.fingerprint == distill::fingerprint(c));
    CHECK(row.mean_acc >= 0.0);
    CHECK(row.mean_acc <= 1.0);
  }

  auto d = c;
  d.teachers = {distill::TeacherKind::Sage};
  d.distill.lambda = 0.2;
  d.distill.tau = 5.0;
  const auto other = distill::run_experiment(d);
  REQUIRE(other.rows.size() == 4);
  CHECK(other.rows[0].method == "teacher");
  CHECK(other.rows[0].mean_acc == first.rows[4].mean_acc);
  CHECK(other.rows[0].std_acc == first.rows[4].std_acc);
}

TEST_CASE("sidecar round trips and rejects corrupt input") {
  const auto c = tiny_config();
  const auto g = distill::synth_graph(c.synth);
  distill::TeacherConfig tc = c.teacher;
  tc.max_epochs = 3;
  const auto artifacts = distill::train_teacher(g, tc, 1).artifacts;
  const auto student = distill::init_student(c.student, 6, 3, 4);

  TempDir dir;
  distill::save_artifacts(artifacts, dir.path / "teacher.bin");
  CHECK(distill::load_artifacts(dir.path / "teacher.bin") == artifacts);
  distill::save_student(student, dir.path / "student.bin");
  const auto loaded = distill::load_student(dir.path / "student.bin");
  CHECK(loaded.heads == student.heads);
  const auto a = student.tensors(), b = loaded.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);

  const std::string bytes = distill::encode_sidecar(distill::to_sidecar(artifacts));
  CHECK_THROWS_AS(distill::decode_sidecar(bytes.substr(0, bytes.size() - 3)), distill::ParseError);
  CHECK_THROWS_AS(distill::decode_sidecar(bytes + "x"), distill::ParseError);
  CHECK_THROWS_AS(distill::decode_sidecar("NOTASIDE" + bytes.substr(8)), distill::ParseError);
  CHECK_THROWS_AS(distill::student_params_from(distill::to_sidecar(artifacts)), distill::ParseError);
  CHECK_THROWS_AS(distill::load_artifacts(dir.path / "absent.bin"), distill::IoError);
}

TEST_CASE("gradient check passes on a small student at the lambda endpoints") {
  auto c = tiny_config();
  for (double lambda : {0.0, 0.5, 1.0}) {
    c.distill.lambda = lambda;
    const auto r = distill::grad_check(c, 5);
    INFO("lambda ", lambda, " worst ", r.worst_parameter);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.entries_checked > 0);
  }
  CHECK_THROWS_AS(distill::grad_check(c, 9), distill::ContractError);
}
