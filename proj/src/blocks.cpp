#include "pggcn/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "pggcn/ops.hpp"

namespace pggcn {

Param* ParamRegistry::find(const std::string& name) const {
  for (const auto& e : params) {
    if (e.name == name) return e.param;
  }
  return nullptr;
}

Tensor* ParamRegistry::find_buffer(const std::string& name) const {
  for (const auto& e : buffers) {
    if (e.name == name) return e.tensor;
  }
  return nullptr;
}

std::int64_t ParamRegistry::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& e : params) {
    if (e.param->trainable) n += e.param->value.size();
  }
  return n;
}

namespace {

struct Btnc {
  int b, t, n, c;
  bool batched;  // caller passed rank 4
};

Btnc dims_of(const Tensor& x, const char* who) {
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  throw_dim_error(std::string(who) + ": expected [B,T,N,C] or [T,N,C], got " +
                  shape_string(x.shape()));
}

std::vector<int> like_shape(const Btnc& d, int frames, int channels) {
  if (d.batched) return {d.b, frames, d.n, channels};
  return {frames, d.n, channels};
}

/// dst[f] (+)= M * src[f] for every frame slab f, where each slab is an
/// [N x channels] contiguous block. transpose_m mixes with M^T instead.
void mix_joints(ConstMatrixMap m, const double* src, double* dst, std::int64_t frames,
                int n, int channels, bool accumulate, bool transpose_m) {
  const std::int64_t slab = static_cast<std::int64_t>(n) * channels;
  for (std::int64_t f = 0; f < frames; ++f) {
    ConstMatrixMap in(src + f * slab, n, channels);
    MatrixMap out(dst + f * slab, n, channels);
    if (accumulate) {
      if (transpose_m) {
        out.noalias() += m.transpose() * in;
      } else {
        out.noalias() += m * in;
      }
    } else {
      if (transpose_m) {
        out.noalias() = m.transpose() * in;
      } else {
        out.noalias() = m * in;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// GraphConvLayer

GraphConvLayer::GraphConvLayer(std::shared_ptr<const AdjacencyStack> adjacency, int c_in,
                               int c_out, Rng& rng)
    : adjacency_(std::move(adjacency)), c_in_(c_in), c_out_(c_out) {
  if (!adjacency_ || adjacency_->size() < 1) {
    throw std::invalid_argument("GraphConvLayer: adjacency stack missing or empty");
  }
  if (c_in <= 0 || c_out <= 0) {
    throw std::invalid_argument("GraphConvLayer: channel counts must be positive");
  }
  const int k = adjacency_->size();
  weights.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    weights.emplace_back(he_uniform({c_in, c_out}, c_in * k, rng));
  }
  bias = Param(Tensor::zeros({c_out}), true, /*decay=*/false);
}

Tensor GraphConvLayer::forward(const Tensor& x) {
  const Btnc d = dims_of(x, "graph_conv");
  if (d.c != c_in_) {
    throw_dim_error("graph_conv: input has " + std::to_string(d.c) + " channels, layer expects " +
                    std::to_string(c_in_));
  }
  if (d.n != adjacency_->num_joints) {
    throw_dim_error("graph_conv: input has " + std::to_string(d.n) + " joints, adjacency has " +
                    std::to_string(adjacency_->num_joints));
  }
  const std::int64_t frames = static_cast<std::int64_t>(d.b) * d.t;
  const std::int64_t rows = frames * d.n;

  Tensor out = Tensor::zeros(like_shape(d, d.t, c_out_));
  Tensor mixed({static_cast<int>(rows), c_in_});
  MatrixMap out_mat = out.as_matrix(static_cast<int>(rows), c_out_);
  for (size_t k = 0; k < weights.size(); ++k) {
    mix_joints(adjacency_->mats[k].as_matrix(), x.data(), mixed.data(), frames, d.n, c_in_,
               /*accumulate=*/false, /*transpose_m=*/false);
    out_mat.noalias() += mixed.as_matrix() * weights[k].value.as_matrix();
  }
  out_mat.rowwise() += ConstVectorMap(bias.value.data(), c_out_).transpose();

  if (training_) {
    cached_x_ = x;
    has_cache_ = true;
  }
  return out;
}

Tensor GraphConvLayer::backward(const Tensor& dy) {
  if (!has_cache_) {
    throw std::logic_error("graph_conv backward: no cached forward (training mode required)");
  }
  const Btnc d = dims_of(cached_x_, "graph_conv");
  if (dy.rank() != cached_x_.rank() || dims_of(dy, "graph_conv").c != c_out_) {
    throw_dim_error("graph_conv backward: upstream shape " + shape_string(dy.shape()) +
                    " does not match output of " + shape_string(cached_x_.shape()));
  }
  const std::int64_t frames = static_cast<std::int64_t>(d.b) * d.t;
  const std::int64_t rows = frames * d.n;

  ConstMatrixMap dy_mat = dy.as_matrix(static_cast<int>(rows), c_out_);
  bias.grad.as_vector() += dy_mat.colwise().sum().transpose();

  Tensor dx = Tensor::zeros(cached_x_.shape());
  Tensor mixed({static_cast<int>(rows), c_in_});
  Tensor v({static_cast<int>(rows), c_in_});
  for (size_t k = 0; k < weights.size(); ++k) {
    ConstMatrixMap a_k = adjacency_->mats[k].as_matrix();
    mix_joints(a_k, cached_x_.data(), mixed.data(), frames, d.n, c_in_, false, false);
    weights[k].grad.as_matrix().noalias() += mixed.as_matrix().transpose() * dy_mat;
    v.as_matrix().noalias() = dy_mat * weights[k].value.as_matrix().transpose();
    mix_joints(a_k, v.data(), dx.data(), frames, d.n, c_in_, /*accumulate=*/true,
               /*transpose_m=*/true);
  }
  return dx;
}

void GraphConvLayer::register_params(ParamRegistry& reg, const std::string& prefix) {
  for (size_t k = 0; k < weights.size(); ++k) {
    reg.add(prefix + ".w" + std::to_string(k), weights[k]);
  }
  reg.add(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// TemporalConvLayer

TemporalConvLayer::TemporalConvLayer(int channels, int kernel_t, int stride, Rng& rng)
    : channels_(channels), kernel_t_(kernel_t), stride_(stride) {
  if (channels <= 0) throw std::invalid_argument("TemporalConvLayer: channels must be positive");
  if (kernel_t < 1 || kernel_t % 2 == 0) {
    throw std::invalid_argument("TemporalConvLayer: kernel size must be odd and >= 1");
  }
  if (stride < 1) throw std::invalid_argument("TemporalConvLayer: stride must be positive");
  kernel = Param(he_uniform({kernel_t, channels, channels}, kernel_t * channels, rng));
}

int TemporalConvLayer::output_frames(int t_in) const {
  // zero padding of (K_t - 1)/2 on both sides
  return (t_in - 1) / stride_ + 1;
}

Tensor TemporalConvLayer::forward(const Tensor& x) {
  const Btnc d = dims_of(x, "temporal_conv");
  if (d.c != channels_) {
    throw_dim_error("temporal_conv: input has " + std::to_string(d.c) +
                    " channels, layer expects " + std::to_string(channels_));
  }
  const int t_out = output_frames(d.t);
  const int pad = (kernel_t_ - 1) / 2;
  const std::int64_t slab = static_cast<std::int64_t>(d.n) * channels_;
  const int cc = channels_ * channels_;

  Tensor out = Tensor::zeros(like_shape(d, t_out, channels_));
  for (int b = 0; b < d.b; ++b) {
    const double* xb = x.data() + static_cast<std::int64_t>(b) * d.t * slab;
    double* yb = out.data() + static_cast<std::int64_t>(b) * t_out * slab;
    for (int to = 0; to < t_out; ++to) {
      MatrixMap y_blk(yb + static_cast<std::int64_t>(to) * slab, d.n, channels_);
      for (int tap = 0; tap < kernel_t_; ++tap) {
        const int ti = to * stride_ + tap - pad;
        if (ti < 0 || ti >= d.t) continue;
        ConstMatrixMap x_blk(xb + static_cast<std::int64_t>(ti) * slab, d.n, channels_);
        ConstMatrixMap k_tap(kernel.value.data() + static_cast<std::int64_t>(tap) * cc,
                             channels_, channels_);
        y_blk.noalias() += x_blk * k_tap;
      }
    }
  }

  if (training_) {
    cached_x_ = x;
    has_cache_ = true;
  }
  return out;
}

Tensor TemporalConvLayer::backward(const Tensor& dy) {
  if (!has_cache_) {
    throw std::logic_error("temporal_conv backward: no cached forward (training mode required)");
  }
  const Btnc d = dims_of(cached_x_, "temporal_conv");
  const int t_out = output_frames(d.t);
  const int pad = (kernel_t_ - 1) / 2;
  const std::int64_t slab = static_cast<std::int64_t>(d.n) * channels_;
  const int cc = channels_ * channels_;

  Tensor dx = Tensor::zeros(cached_x_.shape());
  for (int b = 0; b < d.b; ++b) {
    const double* xb = cached_x_.data() + static_cast<std::int64_t>(b) * d.t * slab;
    const double* gb = dy.data() + static_cast<std::int64_t>(b) * t_out * slab;
    double* db = dx.data() + static_cast<std::int64_t>(b) * d.t * slab;
    for (int to = 0; to < t_out; ++to) {
      ConstMatrixMap g_blk(gb + static_cast<std::int64_t>(to) * slab, d.n, channels_);
      for (int tap = 0; tap < kernel_t_; ++tap) {
        const int ti = to * stride_ + tap - pad;
        if (ti < 0 || ti >= d.t) continue;
        ConstMatrixMap x_blk(xb + static_cast<std::int64_t>(ti) * slab, d.n, channels_);
        MatrixMap kg(kernel.grad.data() + static_cast<std::int64_t>(tap) * cc, channels_,
                     channels_);
        kg.noalias() += x_blk.transpose() * g_blk;
        ConstMatrixMap k_tap(kernel.value.data() + static_cast<std::int64_t>(tap) * cc,
                             channels_, channels_);
        MatrixMap dx_blk(db + static_cast<std::int64_t>(ti) * slab, d.n, channels_);
        dx_blk.noalias() += g_blk * k_tap.transpose();
      }
    }
  }
  return dx;
}

void TemporalConvLayer::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".kernel", kernel);
}

// ---------------------------------------------------------------------------
// BatchNormLayer

BatchNormLayer::BatchNormLayer(int channels, double momentum_arg, double eps_arg)
    : momentum(momentum_arg), eps(eps_arg), channels_(channels) {
  if (channels <= 0) throw std::invalid_argument("BatchNormLayer: channels must be positive");
  if (momentum < 0.0 || momentum > 1.0) {
    throw std::invalid_argument("BatchNormLayer: momentum must lie in [0, 1]");
  }
  if (eps <= 0.0) throw std::invalid_argument("BatchNormLayer: eps must be positive");
  gamma = Param(Tensor::ones({channels}), true, /*decay=*/false);
  beta = Param(Tensor::zeros({channels}), true, /*decay=*/false);
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::ones({channels});
}

Tensor BatchNormLayer::forward(const Tensor& x) {
  if (bypass) return x;
  const Btnc d = dims_of(x, "batchnorm");
  if (d.c != channels_) {
    throw_dim_error("batchnorm: input has " + std::to_string(d.c) + " channels, layer expects " +
                    std::to_string(channels_));
  }
  const std::int64_t rows = static_cast<std::int64_t>(d.b) * d.t * d.n;
  const int c = channels_;
  Tensor y(x.shape());

  if (!training_) {
    std::vector<double> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) {
      const double inv = 1.0 / std::sqrt(running_var[j] + eps);
      scale[static_cast<size_t>(j)] = gamma.value[j] * inv;
      shift[static_cast<size_t>(j)] = beta.value[j] - running_mean[j] * scale[static_cast<size_t>(j)];
    }
    const double* xp = x.data();
    double* yp = y.data();
    for (std::int64_t r = 0; r < rows; ++r, xp += c, yp += c) {
      for (int j = 0; j < c; ++j) yp[j] = xp[j] * scale[static_cast<size_t>(j)] + shift[static_cast<size_t>(j)];
    }
    return y;
  }

  if (rows < 2) {
    throw std::invalid_argument(
        "batchnorm: train mode needs at least 2 samples per channel to estimate variance");
  }
  std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  {
    const double* xp = x.data();
    for (std::int64_t r = 0; r < rows; ++r, xp += c) {
      for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += xp[j];
    }
    for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(rows);
    xp = x.data();
    for (std::int64_t r = 0; r < rows; ++r, xp += c) {
      for (int j = 0; j < c; ++j) {
        const double dvc = xp[j] - mean[static_cast<size_t>(j)];
        var[static_cast<size_t>(j)] += dvc * dvc;
      }
    }
    for (int j = 0; j < c; ++j) var[static_cast<size_t>(j)] /= static_cast<double>(rows);
  }

  cached_xhat_ = Tensor(x.shape());
  cached_inv_std_ = Tensor({c});
  for (int j = 0; j < c; ++j) {
    cached_inv_std_[j] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + eps);
  }
  {
    const double* xp = x.data();
    double* xh = cached_xhat_.data();
    double* yp = y.data();
    for (std::int64_t r = 0; r < rows; ++r, xp += c, xh += c, yp += c) {
      for (int j = 0; j < c; ++j) {
        xh[j] = (xp[j] - mean[static_cast<size_t>(j)]) * cached_inv_std_[j];
        yp[j] = xh[j] * gamma.value[j] + beta.value[j];
      }
    }
  }
  for (int j = 0; j < c; ++j) {
    running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[static_cast<size_t>(j)];
    running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[static_cast<size_t>(j)];
  }
  has_cache_ = true;
  return y;
}

Tensor BatchNormLayer::backward(const Tensor& dy) {
  if (bypass) return dy;
  if (!has_cache_ || !training_) {
    throw std::logic_error("batchnorm backward: requires a training-mode forward first");
  }
  if (!dy.same_shape(cached_xhat_)) {
    throw_dim_error("batchnorm backward: upstream shape " + shape_string(dy.shape()) +
                    " does not match forward shape " + shape_string(cached_xhat_.shape()));
  }
  const int c = channels_;
  const std::int64_t rows = dy.size() / c;
  std::vector<double> sum_dy(static_cast<size_t>(c), 0.0), sum_dy_xhat(static_cast<size_t>(c), 0.0);
  {
    const double* gp = dy.data();
    const double* xh = cached_xhat_.data();
    for (std::int64_t r = 0; r < rows; ++r, gp += c, xh += c) {
      for (int j = 0; j < c; ++j) {
        sum_dy[static_cast<size_t>(j)] += gp[j];
        sum_dy_xhat[static_cast<size_t>(j)] += gp[j] * xh[j];
      }
    }
  }
  for (int j = 0; j < c; ++j) {
    beta.grad[j] += sum_dy[static_cast<size_t>(j)];
    gamma.grad[j] += sum_dy_xhat[static_cast<size_t>(j)];
  }
  Tensor dx(dy.shape());
  const double inv_rows = 1.0 / static_cast<double>(rows);
  {
    const double* gp = dy.data();
    const double* xh = cached_xhat_.data();
    double* dp = dx.data();
    for (std::int64_t r = 0; r < rows; ++r, gp += c, xh += c, dp += c) {
      for (int j = 0; j < c; ++j) {
        const size_t sj = static_cast<size_t>(j);
        dp[j] = gamma.value[j] * cached_inv_std_[j] *
                (gp[j] - sum_dy[sj] * inv_rows - xh[j] * sum_dy_xhat[sj] * inv_rows);
      }
    }
  }
  return dx;
}

void BatchNormLayer::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".gamma", gamma);
  reg.add(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", running_mean);
  reg.add_buffer(prefix + ".running_var", running_var);
}

// ---------------------------------------------------------------------------
// STGCNBlock

STGCNBlock::STGCNBlock(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_out,
                       int kernel_t, int stride, Rng& rng)
    : gconv(adjacency, c_in, c_out, rng),
      bn1(c_out),
      tconv(c_out, kernel_t, stride, rng),
      bn2(c_out),
      residual_(c_in == c_out && stride == 1) {}

Tensor STGCNBlock::forward(const Tensor& x) {
  Tensor pre1 = bn1.forward(gconv.forward(x));
  Tensor pre2 = bn2.forward(tconv.forward(relu(pre1)));
  if (residual_) pre2 = add(pre2, x);
  Tensor y = relu(pre2);
  if (training_) {
    cached_pre1_ = std::move(pre1);
    cached_pre2_ = std::move(pre2);
    has_cache_ = true;
  }
  return y;
}

Tensor STGCNBlock::backward(const Tensor& dy) {
  if (!has_cache_) {
    throw std::logic_error("stgcn_block backward: no cached forward (training mode required)");
  }
  Tensor dpre2 = relu_grad(cached_pre2_, dy);
  Tensor dr1 = tconv.backward(bn2.backward(dpre2));
  Tensor dpre1 = relu_grad(cached_pre1_, dr1);
  Tensor dx = gconv.backward(bn1.backward(dpre1));
  if (residual_) dx = add(dx, dpre2);
  return dx;
}

void STGCNBlock::set_training(bool on) {
  training_ = on;
  gconv.set_training(on);
  bn1.set_training(on);
  tconv.set_training(on);
  bn2.set_training(on);
}

void STGCNBlock::register_params(ParamRegistry& reg, const std::string& prefix) {
  gconv.register_params(reg, prefix + ".gconv");
  bn1.register_params(reg, prefix + ".bn1");
  tconv.register_params(reg, prefix + ".tconv");
  bn2.register_params(reg, prefix + ".bn2");
}

// ---------------------------------------------------------------------------
// GCNBlock

GCNBlock::GCNBlock(std::shared_ptr<const AdjacencyStack> adjacency, int c_in, int c_out,
                   Rng& rng)
    : gconv(adjacency, c_in, c_out, rng), bn(c_out) {}

Tensor GCNBlock::forward(const Tensor& x) {
  Tensor pre = bn.forward(gconv.forward(x));
  Tensor y = relu(pre);
  if (training_) {
    cached_pre_ = std::move(pre);
    has_cache_ = true;
  }
  return y;
}

Tensor GCNBlock::backward(const Tensor& dy) {
  if (!has_cache_) {
    throw std::logic_error("gcn_block backward: no cached forward (training mode required)");
  }
  Tensor dpre = relu_grad(cached_pre_, dy);
  return gconv.backward(bn.backward(dpre));
}

void GCNBlock::set_training(bool on) {
  training_ = on;
  gconv.set_training(on);
  bn.set_training(on);
}

void GCNBlock::register_params(ParamRegistry& reg, const std::string& prefix) {
  gconv.register_params(reg, prefix + ".gconv");
  bn.register_params(reg, prefix + ".bn");
}

}  // namespace pggcn
