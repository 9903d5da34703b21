#pragma once

#include "geocorr/core.hpp"
#include "geocorr/mesh.hpp"

#include <algorithm>
#include <limits>
#include <queue>
#include <unordered_map>
#include <utility>
#include <vector>

namespace geocorr {

/// Undirected edge graph over mesh vertices, weighted by Euclidean edge
/// length. Surface distances are shortest paths on this graph; vertices in
/// disconnected components are at infinite distance.
struct EdgeGraph {
  int vertex_count = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;  // (neighbor, length)

  explicit EdgeGraph(const TriangleMesh& mesh) {
    vertex_count = mesh.vertex_count();
    adj.resize(static_cast<size_t>(vertex_count));
    auto add_edge = [&](int a, int b) {
      if (a > b) std::swap(a, b);
      auto& list = adj[static_cast<size_t>(a)];
      for (const auto& [n, w] : list)
        if (n == b) return;  // already present
      const double len = (mesh.vertices[static_cast<size_t>(a)] -
                          mesh.vertices[static_cast<size_t>(b)])
                             .norm();
      adj[static_cast<size_t>(a)].emplace_back(b, len);
      adj[static_cast<size_t>(b)].emplace_back(a, len);
    };
    for (const auto& f : mesh.faces) {
      add_edge(f[0], f[1]);
      add_edge(f[1], f[2]);
      add_edge(f[0], f[2]);
    }
  }
};

/// Single-source shortest path distances (Dijkstra). Unreachable vertices get
/// +infinity.
inline std::vector<double> geodesic_distances(const EdgeGraph& graph, int source) {
  require(source >= 0 && source < graph.vertex_count,
          "geodesic_distances: source vertex out of range");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<size_t>(graph.vertex_count), inf);
  using Item = std::pair<double, int>;  // (distance, vertex)
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[static_cast<size_t>(source)] = 0.0;
  pq.emplace(0.0, source);
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<size_t>(u)]) continue;
    for (const auto& [v, w] : graph.adj[static_cast<size_t>(u)]) {
      const double nd = d + w;
      if (nd < dist[static_cast<size_t>(v)]) {
        dist[static_cast<size_t>(v)] = nd;
        pq.emplace(nd, v);
      }
    }
  }
  return dist;
}

/// Lazy per-source cache of geodesic distance rows for one mesh.
class GeodesicCache {
 public:
  explicit GeodesicCache(const TriangleMesh& mesh) : graph_(mesh) {}

  const std::vector<double>& from(int source) {
    auto it = rows_.find(source);
    if (it != rows_.end()) return it->second;
    return rows_.emplace(source, geodesic_distances(graph_, source)).first->second;
  }

  const EdgeGraph& graph() const { return graph_; }

 private:
  EdgeGraph graph_;
  std::unordered_map<int, std::vector<double>> rows_;
};

}  // namespace geocorr
