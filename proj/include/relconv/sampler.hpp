#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "relconv/error.hpp"
#include "relconv/relgraph.hpp"
#include "relconv/rng.hpp"
#include "relconv/sparse.hpp"

namespace relconv {

/// Result of layered neighbor sampling for one mini-batch.
///
/// `layers[k]` is B^(k); layers[K] is the batch and layers[0] the final node
/// set, with B^(k) a prefix of B^(k-1). `adjacency[r]` is the submatrix of the
/// graph's normalized adjacency for relation r restricted to layers[0], in
/// layers[0] order. The first `batch.size()` rows are the batch.
struct Subgraph {
  std::vector<std::vector<std::size_t>> layers;
  std::vector<SparseMatrix> adjacency;

  const std::vector<std::size_t>& nodes() const { return layers.front(); }
  const std::vector<std::size_t>& batch() const { return layers.back(); }
  std::size_t depth() const { return layers.size() - 1; }
};

inline void check_nodes(const RelationGraph& graph, std::span<const std::size_t> nodes) {
  std::unordered_set<std::size_t> seen;
  for (std::size_t v : nodes) {
    if (v >= graph.node_count()) throw GraphError("unknown node index " + std::to_string(v));
    if (!seen.insert(v).second) throw GraphError("node index " + std::to_string(v) + " listed twice");
  }
}

/// Per-relation submatrices of the global normalized adjacency on `nodes`.
/// Entries are copied, not renormalized.
inline std::vector<SparseMatrix> extract_subgraph(const RelationGraph& graph, std::span<const std::size_t> nodes) {
  check_nodes(graph, nodes);
  std::unordered_map<std::size_t, std::size_t> local;
  local.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) local.emplace(nodes[i], i);
  std::vector<SparseMatrix> out;
  for (const Relation& rel : graph.relations()) {
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (const Triplet& e : rel.adjacency.row(nodes[i])) {
        if (auto it = local.find(e.col); it != local.end()) t.push_back({i, it->second, e.value});
      }
    }
    out.emplace_back(nodes.size(), nodes.size(), std::move(t));
  }
  return out;
}

/// Draws min(n, |N_r(v)|) distinct neighbors of v under relation r. The draw
/// depends only on (seed, layer, relation, node), never on iteration order.
inline std::vector<std::size_t> sample_neighbors(const SparseMatrix& adjacency, std::size_t v, std::size_t n,
                                                 std::uint64_t seed, std::size_t layer, std::size_t relation) {
  const auto row = adjacency.row(v);
  const std::size_t take = std::min(n, row.size());
  std::vector<std::size_t> pool;
  pool.reserve(row.size());
  for (const Triplet& t : row) pool.push_back(t.col);
  SplitMix64 rng{seed, layer, relation, v};
  // partial Fisher-Yates: the first `take` slots become the sample
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

/// Layered neighbor sampling for a K-layer model. For k = K..1, every node of
/// B^(k) draws up to `n` neighbors per relation (relations in declaration
/// order, nodes in B^(k) order) and the union, in discovery order, forms
/// B^(k-1). The self connection is never sampled.
inline Subgraph expand_batch(const RelationGraph& graph, std::span<const std::size_t> batch, std::size_t depth,
                             std::size_t n, std::uint64_t seed) {
  if (batch.empty()) throw GraphError("expand_batch: empty batch");
  if (depth == 0) throw GraphError("expand_batch: depth must be at least 1");
  check_nodes(graph, batch);

  Subgraph sg;
  sg.layers.assign(depth + 1, {});
  sg.layers[depth].assign(batch.begin(), batch.end());
  for (std::size_t k = depth; k >= 1; --k) {
    std::vector<std::size_t> next = sg.layers[k];
    std::unordered_set<std::size_t> member(next.begin(), next.end());
    for (std::size_t r = 0; r < graph.relation_count(); ++r) {
      for (std::size_t v : sg.layers[k]) {
        for (std::size_t u : sample_neighbors(graph.relation(r).adjacency, v, n, seed, k, r)) {
          if (member.insert(u).second) next.push_back(u);
        }
      }
    }
    sg.layers[k - 1] = std::move(next);
  }
  sg.adjacency = extract_subgraph(graph, sg.layers[0]);
  return sg;
}

inline Subgraph expand_batch(const RelationGraph& graph, const std::vector<std::string>& batch_ids, std::size_t depth,
                             std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (const auto& id : batch_ids) idx.push_back(graph.index_of(id));
  return expand_batch(graph, idx, depth, n, seed);
}

/// Subgraph holding the batch and every neighbor within `depth` hops.
inline Subgraph exhaustive_batch(const RelationGraph& graph, std::span<const std::size_t> batch, std::size_t depth) {
  std::size_t widest = 0;
  for (const auto& rel : graph.relations())
    for (std::size_t v = 0; v < graph.node_count(); ++v) widest = std::max(widest, rel.adjacency.row(v).size());
  return expand_batch(graph, batch, depth, widest, 0);
}

inline nlohmann::json subgraph_to_json(const RelationGraph& graph, const Subgraph& sg) {
  nlohmann::json j;
  auto ids = [&](const std::vector<std::size_t>& nodes) {
    std::vector<std::string> out;
    for (std::size_t v : nodes) out.push_back(graph.node_ids()[v]);
    return out;
  };
  j["depth"] = sg.depth();
  j["batch"] = ids(sg.batch());
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : sg.layers) j["layers"].push_back(ids(layer));
  j["relations"] = nlohmann::json::array();
  for (std::size_t r = 0; r < sg.adjacency.size(); ++r) {
    nlohmann::json jr;
    jr["name"] = graph.relation(r).spec.name;
    jr["triplets"] = nlohmann::json::array();
    for (const Triplet& t : sg.adjacency[r].triplets()) jr["triplets"].push_back({t.row, t.col, t.value});
    j["relations"].push_back(std::move(jr));
  }
  return j;
}

}  // namespace relconv
