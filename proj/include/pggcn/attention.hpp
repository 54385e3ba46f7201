#pragma once

#include <string>
#include <vector>

#include "pggcn/blocks.hpp"
#include "pggcn/tensor.hpp"

namespace pggcn {

/// Ablation switch for the pose-guided attention module: `none` bypasses the
/// module, `vanilla` uses the feature-driven affinity alone, `dynamic`
/// modulates it with the learned matrices M and M'.
enum class AttentionMode { none, vanilla, dynamic };

AttentionMode attention_mode_from_string(const std::string& s);
std::string to_string(AttentionMode mode);

/// Learned state of one attention module. M starts all-ones and M' all-zeros
/// so the dynamic affinity coincides with the vanilla affinity at step 0;
/// both are trainable only in dynamic mode and never weight-decayed.
struct PgamState {
  Param m;        // [N x N]
  Param m_prime;  // [N x N]
  AttentionMode mode = AttentionMode::dynamic;

  PgamState(int num_joints, AttentionMode mode_arg);
  int num_joints() const { return m.value.dim(0); }
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

/// [T, N, C] feature map -> joint-major [N, T*C] matrix (row j concatenates
/// joint j's channel vectors over all frames). unflatten is its exact inverse.
Tensor flatten_joint_major(const Tensor& fmap);
Tensor unflatten_joint_major(const Tensor& flat, int frames, int channels);

/// Row-stochastic affinity softmax(F_s F_p^T) on the flattened views.
Tensor vanilla_affinity(const Tensor& f_s, const Tensor& f_p);

/// Elementwise A_vanilla ⊙ (M + M'); equals A_vanilla bitwise at fresh init.
Tensor dynamic_affinity(const Tensor& a_vanilla, const PgamState& state);

/// F_s' = A·F_p + F_s on the flattened views, returned as [T, N, C].
Tensor fuse(const Tensor& a, const Tensor& f_p, const Tensor& f_s);

struct PgamGrads {
  Tensor d_fs;
  Tensor d_fp;
};

/// Trainable attention module over batched feature maps [B, T, N, C] (rank-3
/// inputs are a batch of one). Attention is computed independently per batch
/// element — bodies never attend across instances — with M and M' shared.
class PgamModule {
 public:
  PgamModule(int num_joints, AttentionMode mode);

  /// Skeleton features f_s attend over pose features f_p (same shape).
  /// Mode none returns f_s untouched.
  Tensor forward(const Tensor& f_s, const Tensor& f_p);

  /// Gradients w.r.t. both inputs; accumulates into M / M' grads in dynamic
  /// mode. Requires a training-mode forward.
  PgamGrads backward(const Tensor& dout);

  void set_training(bool on) { training_ = on; }
  void register_params(ParamRegistry& reg, const std::string& prefix);
  bool passthrough() const { return state.mode == AttentionMode::none; }

  PgamState state;

 private:
  struct Cache {
    Tensor s;    // [N, T*C]
    Tensor p;    // [N, T*C]
    Tensor a_v;  // [N, N]
    Tensor a;    // [N, N] affinity actually applied
  };
  bool training_ = true;
  std::vector<Cache> caches_;
  std::vector<int> cached_fs_shape_;
  std::vector<int> cached_fp_shape_;
  bool has_cache_ = false;
};

}  // namespace pggcn
