#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pggcn/tensor.hpp"

namespace pggcn {

/// Undirected skeleton topology. Joints are 0-based; the edge list carries no
/// self-loops or duplicates and the graph must be connected from the center
/// joint (test-only construction may relax connectivity).
struct SkeletonGraph {
  int num_joints = 0;
  std::vector<std::pair<int, int>> edges;
  int center_joint = 0;
  int partitions = 3;  // adjacency subset count K

  SkeletonGraph(int joints, std::vector<std::pair<int, int>> edge_list, int center,
                int partition_count = 3);

  /// The 25-joint body layout used by Kinect-v2 captures, with its 24
  /// kinematic edges. Joint ordering and tree follow the public NTU RGB+D
  /// toolbox definition (github.com/shahroudy/NTURGB-D).
  static SkeletonGraph ntu25(int partition_count = 3);

  /// Chain 0-1-...-(n-1), centered at n/2. Used by synthetic datasets.
  static SkeletonGraph chain(int n, int partition_count = 3);

  /// Test-only constructor that skips the connectivity check, so isolated
  /// joints can be exercised.
  static SkeletonGraph unchecked(int joints, std::vector<std::pair<int, int>> edge_list,
                                 int center, int partition_count = 3);

  /// BFS hop distance from the center joint; unreachable joints get -1.
  std::vector<int> hop_distance_from_center() const;

  /// Parent of each joint in the BFS tree rooted at the center; the center
  /// (and any unreachable joint) is its own parent.
  std::vector<int> parents_from_center() const;

  bool connected_from_center() const;

 private:
  SkeletonGraph() = default;
  void validate_edges() const;
};

/// K adjacency subsets that sum to the symmetric-normalized adjacency with
/// self-loops, D^(-1/2) (A + I) D^(-1/2).
struct AdjacencyStack {
  int num_joints = 0;
  std::vector<Tensor> mats;  // each [N x N]

  int size() const { return static_cast<int>(mats.size()); }
  Tensor sum() const;
};

/// Normalizes A + I symmetrically and splits the result by spatial
/// configuration: K=3 separates same-distance, centripetal and centrifugal
/// entries by hop distance to the center joint; K=1 keeps a single subset.
AdjacencyStack normalize_adjacency(const SkeletonGraph& g);

/// Single identity subset — turns a graph convolution into a plain per-joint
/// channel mix (used by the no-attention pose concatenation).
AdjacencyStack identity_stack(int num_joints);

/// Plain-text graph description: line 1 holds N, each following non-empty
/// line one "i j" edge pair. An optional "center K" line overrides the
/// default center joint N/2.
SkeletonGraph load_graph_file(const std::string& path);

}  // namespace pggcn
