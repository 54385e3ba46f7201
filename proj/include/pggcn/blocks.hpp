#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pggcn/graph.hpp"
#include "pggcn/rng.hpp"
#include "pggcn/tensor.hpp"

namespace pggcn {

/// Stable, ordered name -> storage table used by checkpoints and the
/// optimizer. Params come first, persistent non-trainable buffers (batch-norm
/// running statistics) after; registration order defines serialization order.
struct ParamRegistry {
  struct NamedParam {
    std::string name;
    Param* param;
  };
  struct NamedBuffer {
    std::string name;
    Tensor* tensor;
  };
  std::vector<NamedParam> params;
  std::vector<NamedBuffer> buffers;

  void add(const std::string& name, Param& p) { params.push_back({name, &p}); }
  void add_buffer(const std::string& name, Tensor& t) { buffers.push_back({name, &t}); }
  Param* find(const std::string& name) const;
  Tensor* find_buffer(const std::string& name) const;
  std::int64_t trainable_count() const;
};

/// Activations flow through layers as [B, T, N, C] (batch, frames, joints,
/// channels); a rank-3 [T, N, C] input is treated as a batch of one and the
/// output keeps the caller's rank. Backward passes accumulate into Param.grad
/// and require a training-mode forward first (caches are only written while
/// training, so shared layers are safe to read concurrently in eval mode).

/// Spatial aggregation Y_t = sum_k A_hat_k X_t W_k + b per frame.
class GraphConvLayer {
 public:
  GraphConvLayer(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_out,
                 Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void set_training(bool on) { training_ = on; }
  void register_params(ParamRegistry& reg, const std::string& prefix);

  int in_channels() const { return c_in_; }
  int out_channels() const { return c_out_; }
  const AdjacencyStack& adjacency() const { return *adjacency_; }

  std::vector<Param> weights;  // K matrices [C_in x C_out]
  Param bias;                  // [C_out]

 private:
  std::shared_ptr<const AdjacencyStack> adjacency_;
  int c_in_ = 0;
  int c_out_ = 0;
  bool training_ = true;
  Tensor cached_x_;
  bool has_cache_ = false;
};

/// 1-D convolution along the frame axis, independently per joint; zero
/// padding of (K_t - 1)/2 frames keeps T fixed at stride 1. No bias: a
/// batch-norm always follows inside the blocks.
class TemporalConvLayer {
 public:
  TemporalConvLayer(int channels, int kernel_t, int stride, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void set_training(bool on) { training_ = on; }
  void register_params(ParamRegistry& reg, const std::string& prefix);

  int channels() const { return channels_; }
  int kernel_size() const { return kernel_t_; }
  int stride() const { return stride_; }
  int output_frames(int t_in) const;

  Param kernel;  // [K_t x C x C]

 private:
  int channels_ = 0;
  int kernel_t_ = 0;
  int stride_ = 1;
  bool training_ = true;
  Tensor cached_x_;
  bool has_cache_ = false;
};

/// Per-channel standardization over (batch, frames, joints) with learned
/// scale/shift. Train mode uses batch statistics (batch >= 2) and refreshes
/// the running estimates; eval mode reads the running estimates only.
class BatchNormLayer {
 public:
  explicit BatchNormLayer(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void set_training(bool on) { training_ = on; }
  bool is_training() const { return training_; }
  void register_params(ParamRegistry& reg, const std::string& prefix);

  int channels() const { return channels_; }

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  /// Test hook: pass activations through untouched (both directions).
  bool bypass = false;

 private:
  int channels_ = 0;
  bool training_ = true;
  Tensor cached_xhat_;
  Tensor cached_inv_std_;  // [C], train-mode batch stats
  bool has_cache_ = false;
};

/// GraphConv -> BN -> ReLU -> TemporalConv -> BN -> ReLU, with an identity
/// residual added before the final ReLU when the channel widths match at
/// stride 1.
class STGCNBlock {
 public:
  STGCNBlock(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_out,
             int kernel_t, int stride, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void set_training(bool on);
  void register_params(ParamRegistry& reg, const std::string& prefix);
  bool has_residual() const { return residual_; }

  GraphConvLayer gconv;
  BatchNormLayer bn1;
  TemporalConvLayer tconv;
  BatchNormLayer bn2;

 private:
  bool residual_ = false;
  bool training_ = true;
  Tensor cached_pre1_;  // pre-ReLU after bn1
  Tensor cached_pre2_;  // pre-ReLU after bn2 (+ residual)
  bool has_cache_ = false;
};

/// GraphConv -> BN -> ReLU.
class GCNBlock {
 public:
  GCNBlock(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_out, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void set_training(bool on);
  void register_params(ParamRegistry& reg, const std::string& prefix);

  GraphConvLayer gconv;
  BatchNormLayer bn;

 private:
  bool training_ = true;
  Tensor cached_pre_;  // pre-ReLU
  bool has_cache_ = false;
};

}  // namespace pggcn
