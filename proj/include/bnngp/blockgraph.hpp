#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "bnngp/error.hpp"
#include "bnngp/geometry.hpp"

namespace bnngp {

/// Block DAG: neighbors[k] lists past blocks (indices < k) that block k conditions on,
/// nearest centroid first.
struct BlockGraph {
  int nb = 0;
  std::vector<std::vector<int>> neighbors;

  int size() const { return static_cast<int>(neighbors.size()); }
  const std::vector<int>& of(int k) const { return neighbors[static_cast<std::size_t>(k)]; }

  /// (from, to) edges: block `from` is a neighbor (parent) of block `to`.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int k = 0; k < size(); ++k)
      for (int p : of(k)) out.emplace_back(p, k);
    return out;
  }
};

/// For each block, the min(nb, k) past blocks with the closest centroids.
inline BlockGraph build_graph(const BlockPartition& part, int nb) {
  if (nb < 0) throw Error("number of neighbor blocks must be >= 0");
  BlockGraph graph;
  graph.nb = nb;
  graph.neighbors.resize(static_cast<std::size_t>(part.size()));
  std::vector<std::pair<double, int>> cand;
  for (int k = 1; k < part.size(); ++k) {
    const int take = std::min(nb, k);
    if (take == 0) continue;
    cand.clear();
    for (int j = 0; j < k; ++j)
      cand.emplace_back(distance(part.centroids[static_cast<std::size_t>(k)], part.centroids[static_cast<std::size_t>(j)]), j);
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    auto& out = graph.neighbors[static_cast<std::size_t>(k)];
    for (int t = 0; t < take; ++t) out.push_back(cand[static_cast<std::size_t>(t)].second);
  }
  return graph;
}

/// Locations of the neighbor blocks of block k, concatenated in neighbor order.
inline std::vector<int> neighbor_locations(const BlockGraph& graph, const BlockPartition& part, int k) {
  std::vector<int> out;
  for (int p : graph.of(k)) {
    const auto& m = part.members[static_cast<std::size_t>(p)];
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

/// Everything location `loc` depends on: the rest of its block, then the neighbor blocks.
inline std::vector<int> location_conditioning_set(const BlockGraph& graph, const BlockPartition& part, int loc) {
  const int k = part.block_of.at(static_cast<std::size_t>(loc));
  std::vector<int> out;
  for (int i : part.members[static_cast<std::size_t>(k)])
    if (i != loc) out.push_back(i);
  auto nbr = neighbor_locations(graph, part, k);
  out.insert(out.end(), nbr.begin(), nbr.end());
  return out;
}

/// Conditioning set of an arbitrary site: the locations of the block whose region
/// contains it. Sites outside the bounding box, or in a dropped grid cell, fall back
/// to the block with the nearest centroid and are flagged.
struct SiteNeighbors {
  std::vector<int> indices;
  int block = -1;
  bool outside = false;
};

inline SiteNeighbors neighbor_set_for_site(const Coord& u, const BlockPartition& part) {
  SiteNeighbors out;
  out.outside = !part.box.contains(u);
  out.block = out.outside ? -1 : part.block_at(u);
  if (out.block < 0) {
    out.outside = true;
    out.block = part.nearest_block(u);
  }
  out.indices = part.members[static_cast<std::size_t>(out.block)];
  return out;
}

/// Kahn topological sort over the block DAG; false if a cycle exists.
inline bool is_acyclic(const BlockGraph& graph) {
  const int m = graph.size();
  std::vector<int> indegree(static_cast<std::size_t>(m), 0);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(m));
  for (auto [from, to] : graph.edges()) {
    if (from < 0 || from >= m) return false;
    children[static_cast<std::size_t>(from)].push_back(to);
    ++indegree[static_cast<std::size_t>(to)];
  }
  std::vector<int> ready;
  for (int k = 0; k < m; ++k)
    if (indegree[static_cast<std::size_t>(k)] == 0) ready.push_back(k);
  int visited = 0;
  while (!ready.empty()) {
    const int k = ready.back();
    ready.pop_back();
    ++visited;
    for (int c : children[static_cast<std::size_t>(k)])
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
  }
  return visited == m;
}

}  // namespace bnngp
