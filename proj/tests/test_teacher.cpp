#include <doctest.h>

#include <cmath>

#include "distill/error.hpp"
#include "distill/metrics.hpp"
#include "distill/teacher.hpp"
#include "support.hpp"

using distill::Graph;
using distill::Tape;
using distill::TeacherKind;
using distill::Tensor;
using distill::Var;

namespace {

Tensor relu(Tensor t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
  return t;
}

Tensor dense_gcn_operator(const Graph& g) {
  Tensor a = testing::dense_adjacency(g);
  for (std::size_t i = 0; i < g.num_nodes; ++i) a.at(i, i) += 1.0;
  std::vector<double> deg(g.num_nodes, 0.0);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j = 0; j < g.num_nodes; ++j) deg[i] += a.at(i, j);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j = 0; j < g.num_nodes; ++j) a.at(i, j) /= std::sqrt(deg[i] * deg[j]);
  return a;
}

std::vector<std::vector<std::size_t>> neighbors(const Graph& g) {
  std::vector<std::vector<std::size_t>> nb(g.num_nodes);
  for (const auto& e : g.edges) nb[e.v].push_back(e.u);
  return nb;
}

double leaky(double x, double s) { return x > 0 ? x : s * x; }

// One GAT head by explicit enumeration of incoming edges plus the self-loop.
Tensor oracle_gat_head(const Graph& g, const Tensor& h, const Tensor& w, const Tensor& a, double slope) {
  const Tensor z = testing::dense_matmul(h, w);
  const std::size_t f = z.cols();
  const auto nb = neighbors(g);
  Tensor out({g.num_nodes, f});
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    std::vector<std::size_t> sources = nb[v];
    sources.push_back(v);
    std::vector<double> e;
    for (std::size_t u : sources) {
      double s = 0.0;
      for (std::size_t j = 0; j < f; ++j) s += a[j] * z.at(u, j) + a[f + j] * z.at(v, j);
      e.push_back(leaky(s, slope));
    }
    const double m = *std::max_element(e.begin(), e.end());
    double total = 0.0;
    for (double& x : e) total += (x = std::exp(x - m));
    for (std::size_t i = 0; i < sources.size(); ++i)
      for (std::size_t j = 0; j < f; ++j) out.at(v, j) += e[i] / total * z.at(sources[i], j);
  }
  return out;
}

Graph graph_from_edges(std::size_t n, std::vector<distill::Edge> edges, std::size_t dim, distill::Rng& rng) {
  Graph g = testing::random_graph(rng, n, 2, dim, 0.0);
  g.edges = distill::symmetrize_edges(std::move(edges));
  return g;
}

}  // namespace

TEST_CASE("gcn layer oracles") {
  Tape tape;
  const Tensor h = Tensor::matrix({{1.5, -2.0}});
  auto single = std::make_shared<const distill::CsrMatrix>(distill::CsrMatrix::from_dense(Tensor::matrix({{1}})));
  CHECK(distill::gcn_layer(tape.constant(h), single, tape.constant(Tensor::identity(2)), true).value() == h);

  distill::Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const Graph g = testing::random_graph(rng, 4, 2, 3, 0.5);
    const auto ops = distill::GraphOperators::build(g);
    const Tensor w = testing::random_tensor(rng, 3, 5);
    const Tensor expected = testing::dense_matmul(testing::dense_matmul(dense_gcn_operator(g), g.features), w);
    const Tensor hidden =
        distill::gcn_layer(tape.constant(g.features), ops.normalized_adjacency, tape.constant(w), false).value();
    const Tensor last =
        distill::gcn_layer(tape.constant(g.features), ops.normalized_adjacency, tape.constant(w), true).value();
    CHECK(distill::max_abs_diff(hidden, relu(expected)) < 1e-10);
    CHECK(distill::max_abs_diff(last, expected) < 1e-10);
  }

  // Two-node clique with equal rows keeps them equal.
  const Graph clique = graph_from_edges(2, {{0, 1}}, 3, rng);
  Tensor same({2, 3}, 0.7);
  const auto ops = distill::GraphOperators::build(clique);
  const Tensor out = distill::gcn_layer(tape.constant(same), ops.normalized_adjacency,
                                        tape.constant(testing::random_tensor(rng, 3, 2)), false)
                         .value();
  CHECK(out.at(0, 0) == out.at(1, 0));
  CHECK(out.at(0, 1) == out.at(1, 1));

  CHECK_THROWS_AS(distill::gcn_layer(tape.constant(same), ops.normalized_adjacency,
                                     tape.constant(Tensor({2, 2})), false),
                  distill::DimensionError);
}

TEST_CASE("sage layer oracles") {
  distill::Rng rng(2);
  Tape tape;
  for (int t = 0; t < 10; ++t) {
    const Graph g = testing::random_graph(rng, 5, 2, 3, 0.4);
    const auto ops = distill::GraphOperators::build(g);
    const Tensor ws = testing::random_tensor(rng, 3, 4), wn = testing::random_tensor(rng, 3, 4);
    const auto nb = neighbors(g);
    Tensor expected({5, 4});
    for (std::size_t v = 0; v < 5; ++v) {
      for (std::size_t j = 0; j < 4; ++j) {
        double self = 0.0, neigh = 0.0;
        for (std::size_t p = 0; p < 3; ++p) {
          self += g.features.at(v, p) * ws.at(p, j);
          double mean = 0.0;
          for (std::size_t u : nb[v]) mean += g.features.at(u, p);
          if (!nb[v].empty()) neigh += mean / static_cast<double>(nb[v].size()) * wn.at(p, j);
        }
        expected.at(v, j) = std::max(self + neigh, 0.0);
      }
    }
    const Tensor got = distill::sage_layer(tape.constant(g.features), ops.neighbor_mean, tape.constant(ws),
                                           tape.constant(wn), false)
                           .value();
    CHECK(distill::max_abs_diff(got, expected) < 1e-10);
  }

  // Node 2 is isolated; nodes 0 and 1 share identical features.
  Graph g = graph_from_edges(3, {{0, 1}}, 2, rng);
  g.features = Tensor::matrix({{1, 2}, {1, 2}, {-1, 3}});
  const auto ops = distill::GraphOperators::build(g);
  const Tensor ws = testing::random_tensor(rng, 2, 2), wn = testing::random_tensor(rng, 2, 2);
  const Tensor got =
      distill::sage_layer(tape.constant(g.features), ops.neighbor_mean, tape.constant(ws), tape.constant(wn), true)
          .value();
  Tensor wsum = ws;
  for (std::size_t i = 0; i < wsum.size(); ++i) wsum[i] += wn[i];
  const Tensor combined = testing::dense_matmul(g.features, wsum);
  const Tensor self_only = testing::dense_matmul(g.features, ws);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(got.at(0, j) == doctest::Approx(combined.at(0, j)));
    CHECK(got.at(2, j) == doctest::Approx(self_only.at(2, j)));
  }
}

TEST_CASE("gat attention oracles") {
  distill::Rng rng(3);
  Tape tape;
  for (int t = 0; t < 10; ++t) {
    const Graph g = testing::random_graph(rng, 4, 2, 3, 0.5);
    const auto ops = distill::GraphOperators::build(g);
    std::vector<Var> ws, as;
    std::vector<Tensor> heads;
    for (int h = 0; h < 2; ++h) {
      const Tensor w = testing::random_tensor(rng, 3, 2), a = testing::random_tensor(rng, 1, 4);
      ws.push_back(tape.constant(w));
      as.push_back(tape.constant(a));
      heads.push_back(oracle_gat_head(g, g.features, w, a, 0.2));
    }
    const Tensor concat = distill::gat_layer(tape.constant(g.features), ops.incoming, ws, as, true, true, 0.2).value();
    const Tensor avg = distill::gat_layer(tape.constant(g.features), ops.incoming, ws, as, false, true, 0.2).value();
    for (std::size_t v = 0; v < 4; ++v) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(std::abs(concat.at(v, j) - heads[0].at(v, j)) < 1e-10);
        CHECK(std::abs(concat.at(v, 2 + j) - heads[1].at(v, j)) < 1e-10);
        CHECK(std::abs(avg.at(v, j) - 0.5 * (heads[0].at(v, j) + heads[1].at(v, j))) < 1e-10);
      }
    }
  }
}

TEST_CASE("gat attention rows are distributions; zero attention is uniform; lone node attends to itself" *
          doctest::test_suite("property")) {
  distill::Rng rng(4);
  Tape tape;
  const Graph g = testing::random_graph(rng, 9, 2, 3, 0.3);
  const auto ops = distill::GraphOperators::build(g);
  const Var z = tape.constant(testing::random_tensor(rng, 9, 4));
  std::vector<double> alpha;
  distill::gat_attention(z, tape.constant(testing::random_tensor(rng, 1, 8, 3.0)), ops.incoming, 0.2, &alpha);
  for (std::size_t v = 0; v < 9; ++v) {
    double s = 0.0;
    for (std::size_t k = ops.incoming->row_offsets[v]; k < ops.incoming->row_offsets[v + 1]; ++k) s += alpha[k];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  distill::gat_attention(z, tape.constant(Tensor({1, 8})), ops.incoming, 0.2, &alpha);
  for (std::size_t v = 0; v < 9; ++v) {
    const std::size_t deg = ops.incoming->row_offsets[v + 1] - ops.incoming->row_offsets[v];
    for (std::size_t k = ops.incoming->row_offsets[v]; k < ops.incoming->row_offsets[v + 1]; ++k)
      CHECK(alpha[k] == doctest::Approx(1.0 / static_cast<double>(deg)));
  }

  const Graph lone = graph_from_edges(3, {{0, 1}}, 2, rng);
  const auto lops = distill::GraphOperators::build(lone);
  const Tensor zl = testing::random_tensor(rng, 3, 2);
  const Tensor out =
      distill::gat_attention(tape.constant(zl), tape.constant(testing::random_tensor(rng, 1, 4)), lops.incoming, 0.2)
          .value();
  CHECK(out.at(2, 0) == doctest::Approx(zl.at(2, 0)));
  CHECK(out.at(2, 1) == doctest::Approx(zl.at(2, 1)));
}

TEST_CASE("every teacher kind is permutation equivariant" * doctest::test_suite("property")) {
  distill::Rng rng(5);
  for (TeacherKind kind : {TeacherKind::Gcn, TeacherKind::Sage, TeacherKind::Gat}) {
    for (int t = 0; t < 8; ++t) {
      const std::size_t n = 2 + rng.below(9);
      const Graph g = testing::random_graph(rng, n, 3, 4, 0.4);
      const auto perm = testing::random_permutation(rng, n);
      const Graph h = testing::permute_graph(g, perm);
      distill::TeacherConfig cfg;
      cfg.kind = kind;
      cfg.layers = 2 + rng.below(2);
      cfg.hidden = 8;
      cfg.gat_hidden_heads = 2;
      const auto params = distill::init_teacher(cfg, 4, 3, rng.next_u64());
      const auto a = distill::teacher_forward(g, params);
      const auto b = distill::teacher_forward(h, params);
      REQUIRE(a.depth() == cfg.layers);
      for (std::size_t k = 0; k < a.depth(); ++k)
        CHECK(distill::max_abs_diff(testing::permute_rows(a.layer_embeddings[k], perm), b.layer_embeddings[k]) <
              1e-12);
    }
  }
}

TEST_CASE("artifacts: logits are the last layer, K = 1 is a single layer") {
  distill::Rng rng(6);
  const Graph g = testing::random_graph(rng, 7, 3, 4, 0.4);
  distill::TeacherConfig cfg;
  cfg.layers = 1;
  const auto params = distill::init_teacher(cfg, 4, 3, 9);
  const auto art = distill::teacher_forward(g, params);
  CHECK(art.depth() == 1);
  CHECK(art.logits == art.layer_embeddings.back());
  Tape tape;
  const auto ops = distill::GraphOperators::build(g);
  const Tensor single =
      distill::gcn_layer(tape.constant(g.features), ops.normalized_adjacency, tape.constant(params.layers[0].weight), true)
          .value();
  CHECK(distill::max_abs_diff(art.logits, single) < 1e-12);
  CHECK(art.logits.rows() == 7);
  CHECK(art.logits.cols() == 3);

  auto other = art;
  CHECK(distill::checksum(other) == distill::checksum(art));
  other.logits[0] += 1e-12;
  CHECK_FALSE(distill::checksum(other) == distill::checksum(art));
}

TEST_CASE("teacher training is deterministic and separates a clean graph") {
  const Graph g = distill::synth_graph({.seed = 1, .num_nodes = 150, .p_in = 0.1, .p_out = 0.0, .feature_signal = 1.0});
  for (TeacherKind kind : {TeacherKind::Gcn, TeacherKind::Sage, TeacherKind::Gat}) {
    distill::TeacherConfig cfg;
    cfg.kind = kind;
    cfg.hidden = 16;
    cfg.gat_hidden_heads = 2;
    cfg.max_epochs = 100;
    const auto a = distill::train_teacher(g, cfg, 3);
    const auto b = distill::train_teacher(g, cfg, 3);
    CHECK(a.artifacts == b.artifacts);
    const double acc = distill::evaluate(a.artifacts.logits, g.labels, g.test_mask);
    INFO(distill::to_string(kind));
    CHECK(acc >= 0.95);
  }
}

TEST_CASE("teacher kind names") {
  CHECK(distill::parse_teacher_kind("sage") == TeacherKind::Sage);
  CHECK(distill::to_string(TeacherKind::Gat) == "gat");
  CHECK_THROWS_AS(distill::parse_teacher_kind("gin"), distill::ConfigError);
}
