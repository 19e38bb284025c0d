#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "distill/sparse.hpp"
#include "distill/tensor.hpp"

namespace distill {

struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Node-classification graph. Edges are stored symmetrized (both directions),
/// sorted and free of duplicates and self-loops.
struct Graph {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  Tensor features;  // num_nodes x feature_dim
  std::vector<Edge> edges;
  std::vector<int> labels;
  std::vector<bool> train_mask;
  std::vector<bool> val_mask;
  std::vector<bool> test_mask;

  std::size_t feature_dim() const noexcept { return features.cols(); }

  /// Throws ValidationError naming the first violated invariant.
  void validate() const;

  friend bool operator==(const Graph&, const Graph&) = default;
};

/// Sorts, removes self-loops and duplicates, and adds the reverse of every edge.
std::vector<Edge> symmetrize_edges(std::vector<Edge> edges);

/// Reads a GraphJSON document; the result is validated and symmetrized.
Graph load_graph(const std::filesystem::path& path);
Graph parse_graph_json(const std::string& text);
std::string graph_to_json(const Graph& g);
void save_graph(const Graph& g, const std::filesystem::path& path);

/// Each feature row divided by its L1 norm; all-zero rows stay zero.
Tensor row_normalize(const Tensor& features);

/// D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
using NormalizedAdjacency = CsrMatrix;
NormalizedAdjacency normalize_adjacency(const Graph& g);

/// Row-stochastic neighbor-mean operator (no self-loops); isolated rows are empty.
CsrMatrix neighbor_mean_operator(const Graph& g);

/// Incoming neighbor lists with self-loops: row v lists every u with (u, v)
/// an edge, plus v itself. Values are all 1.
CsrMatrix incoming_with_self_loops(const Graph& g);

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t num_nodes = 600;
  std::size_t num_classes = 3;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t feature_dim = 32;
  /// Standard deviation of the class-mean components; unit noise per feature.
  double feature_signal = 0.25;
};

/// Stochastic block model with class-correlated Gaussian features. Labels
/// cycle through the classes (balanced); masks split 60/20/20 over a
/// seeded shuffle of node ids.
Graph synth_graph(const SynthConfig& cfg);

}  // namespace distill
