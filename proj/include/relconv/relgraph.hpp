#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relconv/error.hpp"
#include "relconv/records.hpp"
#include "relconv/sparse.hpp"

namespace relconv {

enum class RelationKey { PatientId, Age, Gender, View, Custom };

/// A named equivalence relation: two images are related when their key
/// values are equal.
struct RelationSpec {
  std::string name;
  RelationKey key = RelationKey::PatientId;
  std::function<std::string(const ImageRecord&)> custom;

  std::string key_of(const ImageRecord& r) const {
    switch (key) {
      case RelationKey::PatientId: return r.patient_id;
      case RelationKey::Age: return std::to_string(r.age);
      case RelationKey::Gender: return std::string(to_string(r.gender));
      case RelationKey::View: return std::string(to_string(r.view));
      case RelationKey::Custom:
        if (!custom) throw GraphError("relation '" + name + "' has a custom key without a selector");
        return custom(r);
    }
    return {};
  }
};

/// person, age, gender, view
inline std::vector<RelationSpec> default_relations() {
  return {{"person", RelationKey::PatientId, {}},
          {"age", RelationKey::Age, {}},
          {"gender", RelationKey::Gender, {}},
          {"view", RelationKey::View, {}}};
}

/// Symmetric normalization D^{-1/2} A D^{-1/2} of a 0/1 adjacency given as
/// sorted neighbor lists. Nodes of degree zero get empty rows.
inline SparseMatrix normalize_neighbors(const std::vector<std::vector<std::size_t>>& neighbors) {
  const std::size_t n = neighbors.size();
  std::vector<double> inv_sqrt(n, 0.0);
  std::size_t edges = 0;
  for (std::size_t i = 0; i < n; ++i) {
    edges += neighbors[i].size();
    if (!neighbors[i].empty()) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(neighbors[i].size()));
  }
  std::vector<Triplet> t;
  t.reserve(edges);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : neighbors[i]) t.push_back({i, j, inv_sqrt[i] * inv_sqrt[j]});
  return SparseMatrix(n, n, std::move(t));
}

inline std::vector<std::vector<std::size_t>> cluster_neighbors(std::span<const std::size_t> partition) {
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < partition.size(); ++i) members[partition[i]].push_back(i);
  std::vector<std::vector<std::size_t>> nb(partition.size());
  for (const auto& [cluster, nodes] : members)
    for (std::size_t i : nodes)
      for (std::size_t j : nodes)
        if (i != j) nb[i].push_back(j);
  return nb;
}

/// Normalized adjacency of the cluster graph induced by `partition`
/// (node -> cluster id): every pair of distinct nodes in one cluster is
/// joined, with no self loops. A cluster of size m yields entries 1/(m-1).
inline SparseMatrix normalize_adjacency(std::span<const std::size_t> partition) {
  return normalize_neighbors(cluster_neighbors(partition));
}

struct Relation {
  RelationSpec spec;
  /// node -> cluster id; ids are dense, in order of first appearance.
  std::vector<std::size_t> partition;
  std::map<std::string, std::size_t> cluster_of_key;
  SparseMatrix adjacency;

  std::size_t cluster_count() const { return cluster_of_key.size(); }
};

/// Multi-relational image graph. Nodes [0, base_count) come from the build;
/// nodes appended by extend_graph attach to base nodes only (optionally also
/// to each other).
class RelationGraph {
 public:
  RelationGraph() = default;

  std::size_t node_count() const noexcept { return node_ids_.size(); }
  std::size_t base_count() const noexcept { return base_count_; }
  const std::vector<std::string>& node_ids() const noexcept { return node_ids_; }
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  const Relation& relation(std::size_t r) const { return relations_.at(r); }
  std::size_t relation_count() const noexcept { return relations_.size(); }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw GraphError("unknown node '" + id + "'");
    return it->second;
  }

  std::vector<SparseMatrix> adjacencies() const {
    std::vector<SparseMatrix> out;
    for (const auto& r : relations_) out.push_back(r.adjacency);
    return out;
  }

  friend RelationGraph build_relation_graph(std::span<const ImageRecord> records, std::span<const RelationSpec> specs);
  friend RelationGraph extend_graph(const RelationGraph& graph, std::span<const ImageRecord> new_records,
                                    bool link_new_nodes);
  friend RelationGraph graph_from_parts(std::vector<std::string> node_ids, std::size_t base_count,
                                        std::vector<Relation> relations);

 private:
  void add_node(const std::string& id) {
    if (!index_.emplace(id, node_ids_.size()).second) throw GraphError("duplicate image id '" + id + "'");
    node_ids_.push_back(id);
  }

  std::vector<std::string> node_ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t base_count_ = 0;
  std::vector<Relation> relations_;
};

/// One equality partition per spec over `records`, node order = input order.
inline RelationGraph build_relation_graph(std::span<const ImageRecord> records, std::span<const RelationSpec> specs) {
  if (records.empty()) throw GraphError("build_relation_graph: no records");
  if (specs.empty()) throw GraphError("build_relation_graph: no relations");
  RelationGraph g;
  for (const auto& r : records) g.add_node(r.image_id);
  g.base_count_ = g.node_ids_.size();
  for (const auto& spec : specs) {
    Relation rel;
    rel.spec = spec;
    for (const auto& r : records) {
      const auto [it, inserted] = rel.cluster_of_key.emplace(spec.key_of(r), rel.cluster_of_key.size());
      rel.partition.push_back(it->second);
    }
    rel.adjacency = normalize_adjacency(rel.partition);
    g.relations_.push_back(std::move(rel));
  }
  return g;
}

/// Appends `new_records` as nodes. Under each relation a new node is joined to
/// every base node of its cluster; new nodes are joined to each other only if
/// `link_new_nodes` is set. All adjacencies are renormalized.
inline RelationGraph extend_graph(const RelationGraph& graph, std::span<const ImageRecord> new_records,
                                  bool link_new_nodes = false) {
  RelationGraph g = graph;
  const std::size_t old_n = graph.node_count();
  for (const auto& r : new_records) g.add_node(r.image_id);
  const std::size_t n = g.node_count();

  for (auto& rel : g.relations_) {
    std::vector<std::vector<std::size_t>> nb(n);
    for (const Triplet& t : rel.adjacency.triplets()) nb[t.row].push_back(t.col);

    std::map<std::size_t, std::vector<std::size_t>> base_members;
    for (std::size_t i = 0; i < g.base_count_; ++i) base_members[rel.partition[i]].push_back(i);
    std::map<std::size_t, std::vector<std::size_t>> new_members;

    for (std::size_t k = 0; k < new_records.size(); ++k) {
      const std::size_t v = old_n + k;
      const auto [it, inserted] =
          rel.cluster_of_key.emplace(rel.spec.key_of(new_records[k]), rel.cluster_of_key.size());
      const std::size_t cluster = it->second;
      rel.partition.push_back(cluster);
      if (auto bm = base_members.find(cluster); bm != base_members.end()) {
        for (std::size_t u : bm->second) {
          nb[v].push_back(u);
          nb[u].push_back(v);
        }
      }
      if (link_new_nodes) {
        for (std::size_t u : new_members[cluster]) {
          nb[v].push_back(u);
          nb[u].push_back(v);
        }
        new_members[cluster].push_back(v);
      }
    }
    for (auto& row : nb) std::sort(row.begin(), row.end());
    rel.adjacency = normalize_neighbors(nb);
  }
  return g;
}

inline RelationGraph graph_from_parts(std::vector<std::string> node_ids, std::size_t base_count,
                                      std::vector<Relation> relations) {
  RelationGraph g;
  for (const auto& id : node_ids) g.add_node(id);
  g.base_count_ = base_count;
  for (auto& r : relations) {
    if (r.adjacency.rows() != g.node_count() || r.partition.size() != g.node_count()) {
      throw GraphError("relation '" + r.spec.name + "' does not match node count");
    }
  }
  g.relations_ = std::move(relations);
  return g;
}

}  // namespace relconv
