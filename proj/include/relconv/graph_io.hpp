#pragma once

// On-disk graph dump: graph.json holds node ids and partitions, and each
// relation's normalized adjacency is a flat little-endian triplet file
// (u64 row, u64 col, f64 value per entry, sorted by (row, col)).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relconv/error.hpp"
#include "relconv/relgraph.hpp"

namespace relconv {

namespace detail {

static_assert(std::endian::native == std::endian::little, "triplet files assume a little-endian host");

inline std::string key_name(RelationKey k) {
  switch (k) {
    case RelationKey::PatientId: return "patient_id";
    case RelationKey::Age: return "age";
    case RelationKey::Gender: return "gender";
    case RelationKey::View: return "view";
    case RelationKey::Custom: return "custom";
  }
  return "custom";
}

inline RelationKey parse_key_name(const std::string& s) {
  if (s == "patient_id") return RelationKey::PatientId;
  if (s == "age") return RelationKey::Age;
  if (s == "gender") return RelationKey::Gender;
  if (s == "view") return RelationKey::View;
  if (s == "custom") return RelationKey::Custom;
  throw GraphError("unknown relation key '" + s + "'");
}

}  // namespace detail

inline void write_triplets(const std::filesystem::path& path, const SparseMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Triplet& t : m.triplets()) {
    const std::uint64_t row = t.row, col = t.col;
    out.write(reinterpret_cast<const char*>(&row), 8);
    out.write(reinterpret_cast<const char*>(&col), 8);
    out.write(reinterpret_cast<const char*>(&t.value), 8);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline SparseMatrix read_triplets(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Triplet> t;
  char buf[24];
  while (in.read(buf, 24)) {
    std::uint64_t row, col;
    double value;
    std::memcpy(&row, buf, 8);
    std::memcpy(&col, buf + 8, 8);
    std::memcpy(&value, buf + 16, 8);
    t.push_back({static_cast<std::size_t>(row), static_cast<std::size_t>(col), value});
  }
  if (in.gcount() != 0) throw IoError("truncated triplet file " + path.string());
  return SparseMatrix(n, n, std::move(t));
}

inline void save_graph(const std::filesystem::path& dir, const RelationGraph& g) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["node_ids"] = g.node_ids();
  j["base_count"] = g.base_count();
  j["relations"] = nlohmann::json::array();
  for (const Relation& r : g.relations()) {
    const std::string file = "adjacency_" + r.spec.name + ".bin";
    write_triplets(dir / file, r.adjacency);
    nlohmann::json jr;
    jr["name"] = r.spec.name;
    jr["key"] = detail::key_name(r.spec.key);
    jr["partition"] = r.partition;
    jr["clusters"] = r.cluster_of_key;
    jr["adjacency_file"] = file;
    jr["nnz"] = r.adjacency.nnz();
    j["relations"].push_back(std::move(jr));
  }
  std::ofstream out(dir / "graph.json");
  if (!out) throw IoError("cannot write " + (dir / "graph.json").string());
  out << j.dump(2) << '\n';
}

inline RelationGraph load_graph(const std::filesystem::path& dir) {
  std::ifstream in(dir / "graph.json");
  if (!in) throw IoError("cannot read " + (dir / "graph.json").string());
  const nlohmann::json j = nlohmann::json::parse(in);
  auto ids = j.at("node_ids").get<std::vector<std::string>>();
  std::vector<Relation> rels;
  for (const auto& jr : j.at("relations")) {
    Relation r;
    r.spec.name = jr.at("name").get<std::string>();
    r.spec.key = detail::parse_key_name(jr.at("key").get<std::string>());
    r.partition = jr.at("partition").get<std::vector<std::size_t>>();
    r.cluster_of_key = jr.at("clusters").get<std::map<std::string, std::size_t>>();
    r.adjacency = read_triplets(dir / jr.at("adjacency_file").get<std::string>(), ids.size());
    rels.push_back(std::move(r));
  }
  return graph_from_parts(std::move(ids), j.at("base_count").get<std::size_t>(), std::move(rels));
}

}  // namespace relconv
