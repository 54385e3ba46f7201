#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pggcn/attention.hpp"
#include "pggcn/blocks.hpp"
#include "pggcn/graph.hpp"

namespace pggcn {

/// Skeleton-derived input encodings fed to the three sub-stream towers.
enum class Substream { joint, velocity, bone };

Substream substream_from_string(const std::string& s);
std::string to_string(Substream s);
int substream_channels_of(Substream s);  // joint 3, velocity 6, bone 6

struct PggcnConfig {
  int num_classes = 0;
  int num_joints = 25;
  int max_frames = 200;
  int embed_channels = 64;    // ST-GCN + GCN embedding width
  int classifier_mid = 128;   // first classifier GCN width
  int classifier_out = 256;   // second classifier GCN width (pre-pooling)
  int temporal_kernel = 9;
  int partitions = 3;
  AttentionMode attention = AttentionMode::dynamic;
  bool use_pose = true;
  std::vector<Substream> substreams = {Substream::joint, Substream::velocity, Substream::bone};
  std::uint64_t seed = 1;

  void validate() const;
};

/// Canonical `key = value` text form, stable field order; round-trips exactly.
std::string config_to_text(const PggcnConfig& config);
PggcnConfig config_from_text(const std::string& text);

/// joint = raw 3-D positions; velocity = concat(x[t+1]-x[t], x[t+2]-x[t])
/// zero-padded at the tail; bone = concat(b, b/(|b|+1e-8)) with
/// b[j] = x[j] - x[parent(j)] along the tree rooted at the center joint
/// (the center's own bone is zero). Accepts [T,N,3] or batched [B,T,N,3].
Tensor substream_encode(const Tensor& skeleton, Substream kind,
                        const std::vector<int>& parents);

struct SubstreamSet {
  Tensor joint;     // [T,N,3]
  Tensor velocity;  // [T,N,6]
  Tensor bone;      // [T,N,6]
};
SubstreamSet preprocess_substreams(const Tensor& skeleton, const SkeletonGraph& g);

/// Input batch norm + ST-GCN block + two GCN blocks.
struct EmbeddingTower {
  STGCNBlock stgcn;
  GCNBlock g1;
  GCNBlock g2;

  EmbeddingTower(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_embed,
                 int kernel_t, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void set_training(bool on);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

/// Full network: per-stream input BN + embedding towers, pose-guided fusion,
/// channel concatenation, two classifier GCN blocks, global average pooling
/// (then averaging body instances of the same sample) and a final linear map.
class PggcnModel {
 public:
  PggcnModel(PggcnConfig config, const SkeletonGraph& graph);
  PggcnModel(const PggcnModel&) = delete;
  PggcnModel& operator=(const PggcnModel&) = delete;

  /// skeleton: [B,T,N,3] with B = num_samples * bodies_per_sample (ignored in
  /// a pose-only config); pose: [B,T,N,2] (ignored when pose is unused).
  /// Returns logits [num_samples, num_classes].
  Tensor forward(const Tensor& skeleton, const Tensor& pose, int bodies_per_sample);

  /// Accumulates parameter gradients from dlogits [num_samples, num_classes].
  void backward(const Tensor& dlogits);

  /// Argmax class of a single sample (bodies stacked in the batch axis),
  /// lowest index on ties.
  int predict(const Tensor& skeleton, const Tensor& pose, int bodies_per_sample);

  void set_training(bool on);
  bool is_training() const { return training_; }
  ParamRegistry registry();
  void zero_grads();
  Param& fc_weight() { return fc_weight_; }
  Param& fc_bias() { return fc_bias_; }

  const PggcnConfig& config() const { return config_; }
  const SkeletonGraph& graph() const { return graph_; }

  /// Test hook: drop the pose contribution (attention fusion or the pose half
  /// of the no-attention concatenation) while keeping everything else intact.
  bool disable_fusion = false;

 private:
  struct StreamUnit {
    Substream kind;
    BatchNormLayer input_bn;
    EmbeddingTower tower;
    std::unique_ptr<PgamModule> pgam;         // vanilla / dynamic with pose
    std::unique_ptr<GraphConvLayer> pose_mix;  // attention `none` with pose

    StreamUnit(Substream kind_arg, std::shared_ptr<const AdjacencyStack> adjacency,
               const PggcnConfig& config,
               std::shared_ptr<const AdjacencyStack> identity_adj, Rng& rng);
  };

  PggcnConfig config_;
  SkeletonGraph graph_;
  std::vector<int> parents_;
  std::shared_ptr<const AdjacencyStack> adjacency_;
  std::shared_ptr<const AdjacencyStack> identity_adj_;

  std::vector<std::unique_ptr<StreamUnit>> streams_;
  std::unique_ptr<BatchNormLayer> pose_bn_;
  std::unique_ptr<EmbeddingTower> pose_tower_;
  std::unique_ptr<GCNBlock> cls1_;
  std::unique_ptr<GCNBlock> cls2_;
  Param fc_weight_;  // [classifier_out x num_classes]
  Param fc_bias_;    // [num_classes]

  bool training_ = true;

  // forward caches (training mode only)
  bool has_cache_ = false;
  int cached_bodies_ = 1;
  int cached_samples_ = 0;
  int cached_frames_ = 0;
  Tensor cached_pooled_;          // [num_samples, classifier_out]
  std::vector<int> merge_sizes_;  // channel split of the merged tensor
  bool cached_pose_used_ = false;
};

}  // namespace pggcn
