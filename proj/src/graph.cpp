#include "pggcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pggcn {

SkeletonGraph::SkeletonGraph(int joints, std::vector<std::pair<int, int>> edge_list,
                             int center, int partition_count)
    : num_joints(joints), edges(std::move(edge_list)), center_joint(center),
      partitions(partition_count) {
  validate_edges();
  if (!connected_from_center()) {
    throw std::invalid_argument("SkeletonGraph: graph is not connected from the center joint");
  }
}

SkeletonGraph SkeletonGraph::unchecked(int joints, std::vector<std::pair<int, int>> edge_list,
                                       int center, int partition_count) {
  SkeletonGraph g;
  g.num_joints = joints;
  g.edges = std::move(edge_list);
  g.center_joint = center;
  g.partitions = partition_count;
  g.validate_edges();
  return g;
}

void SkeletonGraph::validate_edges() const {
  if (num_joints <= 0) {
    throw std::invalid_argument("SkeletonGraph: num_joints must be positive");
  }
  if (center_joint < 0 || center_joint >= num_joints) {
    throw std::invalid_argument("SkeletonGraph: center joint out of range");
  }
  if (partitions != 1 && partitions != 3) {
    throw std::invalid_argument("SkeletonGraph: partition count must be 1 or 3");
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= num_joints || b >= num_joints) {
      throw std::invalid_argument("SkeletonGraph: edge index out of range");
    }
    if (a == b) {
      throw std::invalid_argument("SkeletonGraph: self-loop edges are not allowed");
    }
    auto key = std::minmax(a, b);
    if (!seen.insert(key).second) {
      throw std::invalid_argument("SkeletonGraph: duplicate edge");
    }
  }
}

SkeletonGraph SkeletonGraph::ntu25(int partition_count) {
  // 0-based kinematic tree of the 25-joint Kinect-v2 body; center joint 1 is
  // the middle of the spine.
  std::vector<std::pair<int, int>> e = {
      {0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},
      {6, 5},   {7, 6},   {8, 20},  {9, 8},   {10, 9},  {11, 10},
      {12, 0},  {13, 12}, {14, 13}, {15, 14}, {16, 0},  {17, 16},
      {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
  return SkeletonGraph(25, std::move(e), 1, partition_count);
}

SkeletonGraph SkeletonGraph::chain(int n, int partition_count) {
  std::vector<std::pair<int, int>> e;
  e.reserve(static_cast<size_t>(std::max(0, n - 1)));
  for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return SkeletonGraph(n, std::move(e), n / 2, partition_count);
}

std::vector<int> SkeletonGraph::hop_distance_from_center() const {
  std::vector<std::vector<int>> adj(static_cast<size_t>(num_joints));
  for (const auto& [a, b] : edges) {
    adj[static_cast<size_t>(a)].push_back(b);
    adj[static_cast<size_t>(b)].push_back(a);
  }
  std::vector<int> dist(static_cast<size_t>(num_joints), -1);
  std::deque<int> queue{center_joint};
  dist[static_cast<size_t>(center_joint)] = 0;
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    for (int w : adj[static_cast<size_t>(v)]) {
      if (dist[static_cast<size_t>(w)] < 0) {
        dist[static_cast<size_t>(w)] = dist[static_cast<size_t>(v)] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

std::vector<int> SkeletonGraph::parents_from_center() const {
  std::vector<std::vector<int>> adj(static_cast<size_t>(num_joints));
  for (const auto& [a, b] : edges) {
    adj[static_cast<size_t>(a)].push_back(b);
    adj[static_cast<size_t>(b)].push_back(a);
  }
  std::vector<int> parent(static_cast<size_t>(num_joints), -1);
  std::vector<char> visited(static_cast<size_t>(num_joints), 0);
  std::deque<int> queue{center_joint};
  visited[static_cast<size_t>(center_joint)] = 1;
  parent[static_cast<size_t>(center_joint)] = center_joint;
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    for (int w : adj[static_cast<size_t>(v)]) {
      if (!visited[static_cast<size_t>(w)]) {
        visited[static_cast<size_t>(w)] = 1;
        parent[static_cast<size_t>(w)] = v;
        queue.push_back(w);
      }
    }
  }
  for (int v = 0; v < num_joints; ++v) {
    if (parent[static_cast<size_t>(v)] < 0) parent[static_cast<size_t>(v)] = v;
  }
  return parent;
}

bool SkeletonGraph::connected_from_center() const {
  auto dist = hop_distance_from_center();
  return std::none_of(dist.begin(), dist.end(), [](int d) { return d < 0; });
}

Tensor AdjacencyStack::sum() const {
  if (mats.empty()) throw std::logic_error("AdjacencyStack::sum: empty stack");
  Tensor out = mats[0];
  for (size_t k = 1; k < mats.size(); ++k) {
    ConstMatrixMap m = mats[k].as_matrix();
    out.as_matrix() += m;
  }
  return out;
}

AdjacencyStack normalize_adjacency(const SkeletonGraph& g) {
  const int n = g.num_joints;
  Tensor a_hat = Tensor::zeros({n, n});
  MatrixMap a = a_hat.as_matrix();
  for (const auto& [i, j] : g.edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  for (int i = 0; i < n; ++i) a(i, i) = 1.0;  // self-loops

  Eigen::VectorXd inv_sqrt_deg(n);
  for (int i = 0; i < n; ++i) {
    double deg = a.row(i).sum();
    inv_sqrt_deg(i) = 1.0 / std::sqrt(deg);  // deg >= 1 thanks to the self-loop
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a(i, j) *= inv_sqrt_deg(i) * inv_sqrt_deg(j);
    }
  }

  AdjacencyStack stack;
  stack.num_joints = n;
  if (g.partitions == 1) {
    stack.mats.push_back(a_hat);
    return stack;
  }

  // Spatial-configuration split: entry (i, j) lands in the subset picked by
  // comparing the neighbor's hop distance to the center against the target's.
  auto hop = g.hop_distance_from_center();
  stack.mats.assign(3, Tensor::zeros({n, n}));
  MatrixMap root = stack.mats[0].as_matrix();
  MatrixMap centripetal = stack.mats[1].as_matrix();
  MatrixMap centrifugal = stack.mats[2].as_matrix();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double v = a(i, j);
      if (v == 0.0) continue;
      if (hop[static_cast<size_t>(j)] == hop[static_cast<size_t>(i)]) {
        root(i, j) = v;
      } else if (hop[static_cast<size_t>(j)] < hop[static_cast<size_t>(i)]) {
        centripetal(i, j) = v;
      } else {
        centrifugal(i, j) = v;
      }
    }
  }
  return stack;
}

AdjacencyStack identity_stack(int num_joints) {
  if (num_joints <= 0) throw std::invalid_argument("identity_stack: num_joints must be positive");
  AdjacencyStack stack;
  stack.num_joints = num_joints;
  Tensor eye = Tensor::zeros({num_joints, num_joints});
  for (int i = 0; i < num_joints; ++i) eye.as_matrix()(i, i) = 1.0;
  stack.mats.push_back(std::move(eye));
  return stack;
}

namespace {

int parse_int_token(const std::string& token, const char* what) {
  std::size_t consumed = 0;
  int value = 0;
  try {
    value = std::stoi(token, &consumed);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("load_graph_file: ") + what +
                             " is not an integer: " + token);
  }
  if (consumed != token.size()) {
    throw std::runtime_error(std::string("load_graph_file: ") + what +
                             " has trailing characters: " + token);
  }
  return value;
}

}  // namespace

SkeletonGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_graph_file: cannot open " + path);
  std::string line;
  int n = -1;
  int center = -1;
  std::vector<std::pair<int, int>> edges;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;  // blank line
    if (n < 0) {
      n = parse_int_token(first, "joint count");
      if (n <= 0) throw std::runtime_error("load_graph_file: joint count must be positive");
      continue;
    }
    if (first == "center") {
      if (!(ls >> center)) throw std::runtime_error("load_graph_file: malformed center line");
      continue;
    }
    int i = parse_int_token(first, "edge endpoint");
    int j = 0;
    if (!(ls >> j)) throw std::runtime_error("load_graph_file: malformed edge line: " + line);
    edges.emplace_back(i, j);
  }
  if (n < 0) throw std::runtime_error("load_graph_file: missing joint count in " + path);
  if (center < 0) center = n / 2;
  return SkeletonGraph(n, std::move(edges), center);
}

}  // namespace pggcn
