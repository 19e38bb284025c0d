#pragma once

// Shared helpers for the unit tests: seeded random inputs, a finite
// difference checker, permutations and small graph builders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "distill/autograd.hpp"
#include "distill/graph.hpp"
#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace testing {

using distill::Tensor;

inline Tensor random_tensor(distill::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Random permutation of 0..n-1.
inline std::vector<std::size_t> random_permutation(distill::Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p.begin(), p.end());
  return p;
}

/// out.row(perm[i]) = t.row(i)
inline Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(perm[i], j) = t.at(i, j);
  return out;
}

/// Node i of g becomes node perm[i].
inline distill::Graph permute_graph(const distill::Graph& g, const std::vector<std::size_t>& perm) {
  distill::Graph h = g;
  h.features = permute_rows(g.features, perm);
  std::vector<distill::Edge> edges;
  for (const auto& e : g.edges) edges.push_back({perm[e.u], perm[e.v]});
  h.edges = distill::symmetrize_edges(edges);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    h.labels[perm[i]] = g.labels[i];
    h.train_mask[perm[i]] = g.train_mask[i];
    h.val_mask[perm[i]] = g.val_mask[i];
    h.test_mask[perm[i]] = g.test_mask[i];
  }
  return h;
}

/// Random graph with n nodes, each unordered pair an edge with probability p.
inline distill::Graph random_graph(distill::Rng& rng, std::size_t n, std::size_t classes, std::size_t dim,
                                   double p) {
  distill::Graph g;
  g.num_nodes = n;
  g.num_classes = classes;
  g.features = random_tensor(rng, n, dim);
  std::vector<distill::Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (rng.uniform() < p) edges.push_back({u, v});
  g.edges = distill::symmetrize_edges(edges);
  for (std::size_t i = 0; i < n; ++i) g.labels.push_back(static_cast<int>(rng.below(classes)));
  g.train_mask.assign(n, false);
  g.val_mask.assign(n, false);
  g.test_mask.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 3 == 0) g.train_mask[i] = true;
    else if (i % 3 == 1) g.val_mask[i] = true;
    else g.test_mask[i] = true;
  }
  return g;
}

/// Dense adjacency (0/1) of a graph.
inline Tensor dense_adjacency(const distill::Graph& g) {
  Tensor a({g.num_nodes, g.num_nodes});
  for (const auto& e : g.edges) a.at(e.u, e.v) = 1.0;
  return a;
}

inline Tensor dense_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

using ScalarFn = std::function<distill::Var(distill::Tape&, const std::vector<distill::Var>&)>;

/// Largest relative error |a - n| / max(|a|, |n|, 1e-6) between the analytic
/// gradient and a fourth-order central difference, over every input entry.
inline double gradient_error(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-4) {
  std::vector<Tensor> analytic;
  {
    distill::Tape tape;
    std::vector<distill::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    distill::Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&]() {
    distill::Tape tape;
    std::vector<distill::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      auto at = [&](double d) {
        inputs[k][i] = saved + d;
        const double v = eval();
        inputs[k][i] = saved;
        return v;
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

}  // namespace testing
