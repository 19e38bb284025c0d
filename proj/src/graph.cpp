#include "distill/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

#include "distill/error.hpp"
#include "distill/rng.hpp"

namespace distill {

using nlohmann::json;

void Graph::validate() const {
  auto fail = [](const std::string& rule) { throw ValidationError(rule); };
  if (num_nodes == 0) fail("num_nodes must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (features.rows() != num_nodes) {
    fail("features must have num_nodes rows (got " + std::to_string(features.rows()) + ")");
  }
  if (!features.all_finite()) fail("features must be finite");
  if (labels.size() != num_nodes) fail("labels must have num_nodes entries");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      fail("label in [0, num_classes): labels[" + std::to_string(i) + "] = " + std::to_string(labels[i]));
    }
  }
  for (const auto* m : {&train_mask, &val_mask, &test_mask}) {
    if (m->size() != num_nodes) fail("masks must have num_nodes entries");
  }
  bool any_train = false;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const int count = int(train_mask[i]) + int(val_mask[i]) + int(test_mask[i]);
    if (count > 1) fail("masks must be pairwise disjoint: node " + std::to_string(i));
    any_train = any_train || train_mask[i];
  }
  if (!any_train) fail("train_mask must contain at least one node");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    if (e.u >= num_nodes || e.v >= num_nodes) {
      fail("edge endpoint in [0, num_nodes): edges[" + std::to_string(i) + "] = (" + std::to_string(e.u) +
           ", " + std::to_string(e.v) + ")");
    }
    if (e.u == e.v) fail("no self-loops in stored edges: node " + std::to_string(e.u));
  }
}

std::vector<Edge> symmetrize_edges(std::vector<Edge> edges) {
  std::vector<Edge> out;
  out.reserve(edges.size() * 2);
  for (const Edge& e : edges) {
    if (e.u == e.v) continue;
    out.push_back(e);
    out.push_back({e.v, e.u});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---- GraphJSON -----------------------------------------------------------

namespace {

const json& field(const json& doc, const char* name) {
  auto it = doc.find(name);
  if (it == doc.end()) throw ParseError(std::string(name) + ": missing field");
  return *it;
}

std::int64_t as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ParseError(path + ": expected integer");
  return v.get<std::int64_t>();
}

double as_real(const json& v, const std::string& path) {
  if (!v.is_number()) throw ParseError(path + ": expected number");
  return v.get<double>();
}

const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw ParseError(path + ": expected array");
  return v;
}

std::size_t as_count(const json& v, const std::string& path) {
  const auto x = as_int(v, path);
  if (x < 0) throw ParseError(path + ": expected non-negative integer");
  return static_cast<std::size_t>(x);
}

std::vector<bool> parse_mask(const json& doc, const char* name) {
  const json& arr = as_array(field(doc, name), name);
  std::vector<bool> mask;
  mask.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_boolean()) throw ParseError(std::string(name) + "[" + std::to_string(i) + "]: expected bool");
    mask.push_back(arr[i].get<bool>());
  }
  return mask;
}

}  // namespace

Graph parse_graph_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("$: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("$: expected object");

  Graph g;
  g.num_nodes = as_count(field(doc, "num_nodes"), "num_nodes");
  g.num_classes = as_count(field(doc, "num_classes"), "num_classes");
  const std::size_t dim = as_count(field(doc, "feature_dim"), "feature_dim");
  if (dim == 0) throw ValidationError("feature_dim must be positive");

  const json& feats = as_array(field(doc, "features"), "features");
  if (feats.size() != g.num_nodes) {
    throw ValidationError("features must have num_nodes rows (got " + std::to_string(feats.size()) + ")");
  }
  if (g.num_nodes == 0) throw ValidationError("num_nodes must be positive");
  g.features = Tensor({g.num_nodes, dim});
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const std::string row_path = "features[" + std::to_string(i) + "]";
    const json& row = as_array(feats[i], row_path);
    if (row.size() != dim) throw ValidationError(row_path + " must have feature_dim entries");
    for (std::size_t j = 0; j < dim; ++j) g.features.at(i, j) = as_real(row[j], row_path + "[" + std::to_string(j) + "]");
  }

  const json& edges = as_array(field(doc, "edges"), "edges");
  std::vector<Edge> raw;
  raw.reserve(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string path = "edges[" + std::to_string(i) + "]";
    const json& pair = as_array(edges[i], path);
    if (pair.size() != 2) throw ParseError(path + ": expected [u, v]");
    const auto u = as_int(pair[0], path + "[0]");
    const auto v = as_int(pair[1], path + "[1]");
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= g.num_nodes ||
        static_cast<std::size_t>(v) >= g.num_nodes) {
      throw ValidationError("edge endpoint in [0, num_nodes): " + path + " = (" + std::to_string(u) + ", " +
                            std::to_string(v) + ")");
    }
    raw.push_back({static_cast<std::size_t>(u), static_cast<std::size_t>(v)});
  }
  g.edges = symmetrize_edges(std::move(raw));

  const json& labels = as_array(field(doc, "labels"), "labels");
  g.labels.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    g.labels.push_back(static_cast<int>(as_int(labels[i], "labels[" + std::to_string(i) + "]")));
  }
  g.train_mask = parse_mask(doc, "train_mask");
  g.val_mask = parse_mask(doc, "val_mask");
  g.test_mask = parse_mask(doc, "test_mask");
  g.validate();
  return g;
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_graph_json(ss.str());
}

std::string graph_to_json(const Graph& g) {
  json doc;
  doc["num_nodes"] = g.num_nodes;
  doc["num_classes"] = g.num_classes;
  doc["feature_dim"] = g.feature_dim();
  json feats = json::array();
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto row = g.features.row(i);
    feats.push_back(std::vector<double>(row.begin(), row.end()));
  }
  doc["features"] = std::move(feats);
  json edges = json::array();
  for (const Edge& e : g.edges) edges.push_back({e.u, e.v});
  doc["edges"] = std::move(edges);
  doc["labels"] = g.labels;
  doc["train_mask"] = g.train_mask;
  doc["val_mask"] = g.val_mask;
  doc["test_mask"] = g.test_mask;
  return doc.dump();
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write graph file: " + path.string());
  out << graph_to_json(g) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ---- derived operators ---------------------------------------------------

Tensor row_normalize(const Tensor& features) {
  Tensor out = features;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    if (s > 0.0)
      for (double& v : row) v /= s;
  }
  return out;
}

NormalizedAdjacency normalize_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes;
  std::vector<double> degree(n, 1.0);  // self-loop
  for (const Edge& e : g.edges) degree[e.u] += 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::vector<double> values;
  coords.reserve(g.edges.size() + n);
  values.reserve(g.edges.size() + n);
  for (std::size_t i = 0; i < n; ++i) {
    coords.emplace_back(i, i);
    values.push_back(inv_sqrt[i] * inv_sqrt[i]);
  }
  for (const Edge& e : g.edges) {
    coords.emplace_back(e.u, e.v);
    values.push_back(inv_sqrt[e.u] * inv_sqrt[e.v]);
  }
  return CsrMatrix::from_triplets(n, n, std::move(coords), std::move(values));
}

CsrMatrix neighbor_mean_operator(const Graph& g) {
  const std::size_t n = g.num_nodes;
  std::vector<double> degree(n, 0.0);
  for (const Edge& e : g.edges) degree[e.v] += 1.0;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::vector<double> values;
  for (const Edge& e : g.edges) {
    // Row v averages over the sources u of its incoming edges.
    coords.emplace_back(e.v, e.u);
    values.push_back(1.0 / degree[e.v]);
  }
  return CsrMatrix::from_triplets(n, n, std::move(coords), std::move(values));
}

CsrMatrix incoming_with_self_loops(const Graph& g) {
  const std::size_t n = g.num_nodes;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < n; ++i) coords.emplace_back(i, i);
  for (const Edge& e : g.edges) coords.emplace_back(e.v, e.u);
  std::vector<double> ones(coords.size(), 1.0);
  return CsrMatrix::from_triplets(n, n, std::move(coords), std::move(ones));
}

std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

// ---- synthetic graphs ----------------------------------------------------

Graph synth_graph(const SynthConfig& cfg) {
  if (!(cfg.p_out >= 0.0 && cfg.p_out <= cfg.p_in && cfg.p_in <= 1.0)) {
    throw ContractError("synth_graph: requires 0 <= p_out <= p_in <= 1");
  }
  if (cfg.num_classes < 2) throw ContractError("synth_graph: classes must be >= 2");
  if (cfg.num_nodes < cfg.num_classes) throw ContractError("synth_graph: n must be >= classes");
  if (cfg.feature_dim == 0) throw ContractError("synth_graph: feature_dim must be positive");

  Rng rng(cfg.seed);
  Graph g;
  g.num_nodes = cfg.num_nodes;
  g.num_classes = cfg.num_classes;
  g.labels.resize(cfg.num_nodes);
  for (std::size_t i = 0; i < cfg.num_nodes; ++i) g.labels[i] = static_cast<int>(i % cfg.num_classes);

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < cfg.num_nodes; ++i) {
    for (std::size_t j = i + 1; j < cfg.num_nodes; ++j) {
      const double p = g.labels[i] == g.labels[j] ? cfg.p_in : cfg.p_out;
      if (rng.uniform() < p) edges.push_back({i, j});
    }
  }
  g.edges = symmetrize_edges(std::move(edges));

  Tensor means({cfg.num_classes, cfg.feature_dim});
  for (double& v : means.values()) v = cfg.feature_signal * rng.normal();
  g.features = Tensor({cfg.num_nodes, cfg.feature_dim});
  for (std::size_t i = 0; i < cfg.num_nodes; ++i)
    for (std::size_t j = 0; j < cfg.feature_dim; ++j)
      g.features.at(i, j) = means.at(static_cast<std::size_t>(g.labels[i]), j) + rng.normal();

  std::vector<std::size_t> order(cfg.num_nodes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  const std::size_t n_train = std::max<std::size_t>(1, cfg.num_nodes * 6 / 10);
  const std::size_t n_val = cfg.num_nodes * 2 / 10;
  g.train_mask.assign(cfg.num_nodes, false);
  g.val_mask.assign(cfg.num_nodes, false);
  g.test_mask.assign(cfg.num_nodes, false);
  for (std::size_t r = 0; r < cfg.num_nodes; ++r) {
    const std::size_t node = order[r];
    if (r < n_train)
      g.train_mask[node] = true;
    else if (r < n_train + n_val)
      g.val_mask[node] = true;
    else
      g.test_mask[node] = true;
  }
  g.validate();
  return g;
}

}  // namespace distill
