#pragma once

// Density-based hierarchical clustering: mutual-reachability distances, a minimum
// spanning tree, the condensed cluster tree, and excess-of-mass flat extraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

namespace artikin::cluster {

struct HdbscanParams {
  int min_cluster_size = 20;
  int min_samples = 10;
  /// Lets the root become the single selected cluster when nothing splits off it stably.
  bool allow_single_cluster = true;
};

/// Row-major point cloud, `dim` coordinates per point.
struct PointCloud {
  int dim = 0;
  std::vector<double> coords;

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  const double* point(std::size_t i) const { return coords.data() + i * dim; }
};

inline double sq_distance(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

struct MstEdge {
  std::size_t a, b;
  double weight;
};

namespace detail {

// Distance to the k-th nearest neighbour, counting the point itself as the first.
inline std::vector<double> core_distances(const PointCloud& pts, int min_samples) {
  const std::size_t n = pts.size();
  const std::size_t k = std::min<std::size_t>(std::max(min_samples, 1), n);
  std::vector<double> core(n, 0.0);
  if (k <= 1) return core;
  std::priority_queue<double> heap;  // max-heap holding the k-1 smallest distances to others
  for (std::size_t i = 0; i < n; ++i) {
    heap = {};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = sq_distance(pts.point(i), pts.point(j), pts.dim);
      if (heap.size() < k - 1) {
        heap.push(d);
      } else if (d < heap.top()) {
        heap.pop();
        heap.push(d);
      }
    }
    core[i] = std::sqrt(heap.top());
  }
  return core;
}

// Prim's algorithm on the dense mutual-reachability graph, O(n^2) time, O(n) memory.
inline std::vector<MstEdge> mutual_reachability_mst(const PointCloud& pts, const std::vector<double>& core) {
  const std::size_t n = pts.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    double next_w = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double d = std::max({std::sqrt(sq_distance(pts.point(current), pts.point(j), pts.dim)), core[current], core[j]});
      if (d < best[j]) {
        best[j] = d;
        from[j] = current;
      }
      if (best[j] < next_w || next == n) {
        next_w = best[j];
        next = j;
      }
    }
    in_tree[next] = 1;
    edges.push_back({from[next], next, next_w});
    current = next;
  }
  return edges;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
};

// Single-linkage dendrogram. Nodes 0..n-1 are points, n.. are merges in order.
struct Dendrogram {
  std::size_t n_points = 0;
  std::vector<std::size_t> left, right, size;
  std::vector<double> distance;
};

inline Dendrogram single_linkage(std::size_t n, std::vector<MstEdge> mst) {
  std::stable_sort(mst.begin(), mst.end(), [](const MstEdge& a, const MstEdge& b) { return a.weight < b.weight; });
  Dendrogram t;
  t.n_points = n;
  const std::size_t total = 2 * n - 1;
  t.left.assign(total, 0);
  t.right.assign(total, 0);
  t.size.assign(total, 1);
  t.distance.assign(total, 0.0);
  UnionFind uf(total);
  std::size_t next = n;
  for (const MstEdge& e : mst) {
    const std::size_t ra = uf.find(e.a), rb = uf.find(e.b);
    t.left[next] = ra;
    t.right[next] = rb;
    t.size[next] = t.size[ra] + t.size[rb];
    t.distance[next] = e.weight;
    uf.parent[ra] = uf.parent[rb] = next;
    ++next;
  }
  return t;
}

inline double to_lambda(double distance) {
  constexpr double kMinDistance = 1e-12;
  return 1.0 / std::max(distance, kMinDistance);
}

struct CondensedTree {
  // Cluster 0 is the root. parent[c] = -1 for the root.
  std::vector<int> parent;
  std::vector<double> birth_lambda;
  std::vector<double> stability;
  std::vector<std::vector<int>> children;
  // Per point: cluster it fell out of and the lambda at which it left.
  std::vector<int> point_cluster;
  std::vector<double> point_lambda;
};

inline CondensedTree condense(const Dendrogram& t, std::size_t min_cluster_size) {
  const std::size_t n = t.n_points;
  CondensedTree ct;
  ct.point_cluster.assign(n, 0);
  ct.point_lambda.assign(n, 0.0);
  ct.parent.push_back(-1);
  ct.birth_lambda.push_back(0.0);
  ct.children.emplace_back();
  const std::size_t root = 2 * n - 2;

  auto drop_subtree = [&](std::size_t node, int cluster, double lambda) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      if (v < n) {
        ct.point_cluster[v] = cluster;
        ct.point_lambda[v] = lambda;
      } else {
        stack.push_back(t.left[v]);
        stack.push_back(t.right[v]);
      }
    }
  };

  // (dendrogram node, cluster label it belongs to)
  std::vector<std::pair<std::size_t, int>> work{{root, 0}};
  while (!work.empty()) {
    auto [node, cluster] = work.back();
    work.pop_back();
    if (node < n) {
      // Singleton reached without a split: it leaves at its cluster's deepest level.
      ct.point_cluster[node] = cluster;
      ct.point_lambda[node] = to_lambda(0.0);
      continue;
    }
    const double lambda = to_lambda(t.distance[node]);
    const std::size_t l = t.left[node], r = t.right[node];
    const bool big_l = t.size[l] >= min_cluster_size, big_r = t.size[r] >= min_cluster_size;
    if (big_l && big_r) {
      for (std::size_t child : {l, r}) {
        const int id = int(ct.parent.size());
        ct.parent.push_back(cluster);
        ct.birth_lambda.push_back(lambda);
        ct.children.emplace_back();
        ct.children[cluster].push_back(id);
        work.push_back({child, id});
      }
    } else if (big_l) {
      drop_subtree(r, cluster, lambda);
      work.push_back({l, cluster});
    } else if (big_r) {
      drop_subtree(l, cluster, lambda);
      work.push_back({r, cluster});
    } else {
      drop_subtree(l, cluster, lambda);
      drop_subtree(r, cluster, lambda);
    }
  }

  // Stability: sum over everything leaving a cluster of (lambda_leave - lambda_birth) * size.
  ct.stability.assign(ct.parent.size(), 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const int c = ct.point_cluster[p];
    ct.stability[c] += ct.point_lambda[p] - ct.birth_lambda[c];
  }
  // Count subtree point sizes per cluster for the parent contribution.
  std::vector<std::size_t> subtree_points(ct.parent.size(), 0);
  for (std::size_t p = 0; p < n; ++p) ++subtree_points[ct.point_cluster[p]];
  for (std::size_t c = ct.parent.size(); c-- > 1;) subtree_points[ct.parent[c]] += subtree_points[c];
  for (std::size_t c = 1; c < ct.parent.size(); ++c) {
    const int par = ct.parent[c];
    ct.stability[par] += double(subtree_points[c]) * (ct.birth_lambda[c] - ct.birth_lambda[par]);
  }
  return ct;
}

}  // namespace detail

/// Labels each point with a cluster id 0..K-1, or -1 for noise.
inline std::vector<int> hdbscan(const PointCloud& pts, const HdbscanParams& params) {
  const std::size_t n = pts.size();
  std::vector<int> labels(n, -1);
  if (n == 0 || n < std::size_t(std::max(params.min_cluster_size, 1))) return labels;
  if (n == 1) {
    labels[0] = 0;
    return labels;
  }
  const auto core = detail::core_distances(pts, params.min_samples);
  const auto mst = detail::mutual_reachability_mst(pts, core);
  const auto tree = detail::single_linkage(n, mst);
  const auto ct = detail::condense(tree, std::size_t(std::max(params.min_cluster_size, 2)));

  // Excess of mass, leaves first. Cluster ids are created parent-before-child.
  const std::size_t nc = ct.parent.size();
  std::vector<double> best(ct.stability);
  std::vector<char> selected(nc, 0);
  for (std::size_t c = nc; c-- > 0;) {
    if (ct.children[c].empty()) {
      selected[c] = 1;
      continue;
    }
    double child_sum = 0.0;
    for (int ch : ct.children[c]) child_sum += best[ch];
    const bool eligible = c != 0 || params.allow_single_cluster;
    if (eligible && ct.stability[c] >= child_sum) {
      selected[c] = 1;
      std::vector<int> stack(ct.children[c].begin(), ct.children[c].end());
      while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        selected[v] = 0;
        for (int ch : ct.children[v]) stack.push_back(ch);
      }
    } else {
      best[c] = child_sum;
    }
  }
  if (nc > 1 && !params.allow_single_cluster) selected[0] = 0;

  std::vector<int> flat_id(nc, -1);
  int next = 0;
  for (std::size_t c = 0; c < nc; ++c)
    if (selected[c]) flat_id[c] = next++;
  for (std::size_t p = 0; p < n; ++p) {
    int c = ct.point_cluster[p];
    while (c >= 0 && !selected[c]) c = ct.parent[c];
    labels[p] = c >= 0 ? flat_id[c] : -1;
  }
  return labels;
}

}  // namespace artikin::cluster
