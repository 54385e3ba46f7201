#include "pggcn/attention.hpp"

#include <cstring>
#include <stdexcept>
#include <utility>

#include "pggcn/ops.hpp"

namespace pggcn {

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "vanilla") return AttentionMode::vanilla;
  if (s == "dynamic") return AttentionMode::dynamic;
  throw std::invalid_argument("unknown attention mode '" + s +
                              "' (expected none, vanilla or dynamic)");
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::none: return "none";
    case AttentionMode::vanilla: return "vanilla";
    case AttentionMode::dynamic: return "dynamic";
  }
  throw std::logic_error("to_string: invalid attention mode");
}

PgamState::PgamState(int num_joints, AttentionMode mode_arg)
    : m(Tensor::ones({num_joints, num_joints}), mode_arg == AttentionMode::dynamic,
        /*decay=*/false),
      m_prime(Tensor::zeros({num_joints, num_joints}), mode_arg == AttentionMode::dynamic,
              /*decay=*/false),
      mode(mode_arg) {
  if (num_joints <= 0) throw std::invalid_argument("PgamState: num_joints must be positive");
}

void PgamState::register_params(ParamRegistry& reg, const std::string& prefix) {
  if (mode != AttentionMode::dynamic) return;  // nothing learned otherwise
  reg.add(prefix + ".m", m);
  reg.add(prefix + ".m_prime", m_prime);
}

namespace {

void check_feature_map(const Tensor& x, const char* who) {
  if (x.rank() != 3) {
    throw_dim_error(std::string(who) + ": expected a [T,N,C] feature map, got " +
                    shape_string(x.shape()));
  }
}

/// flat[j, t*C + c] = fmap[t, j, c]; both buffers sized T*N*C.
void flatten_slab(const double* fmap, double* flat, int t, int n, int c) {
  for (int ti = 0; ti < t; ++ti) {
    for (int j = 0; j < n; ++j) {
      std::memcpy(flat + (static_cast<std::int64_t>(j) * t + ti) * c,
                  fmap + (static_cast<std::int64_t>(ti) * n + j) * c,
                  sizeof(double) * static_cast<size_t>(c));
    }
  }
}

void unflatten_slab(const double* flat, double* fmap, int t, int n, int c) {
  for (int ti = 0; ti < t; ++ti) {
    for (int j = 0; j < n; ++j) {
      std::memcpy(fmap + (static_cast<std::int64_t>(ti) * n + j) * c,
                  flat + (static_cast<std::int64_t>(j) * t + ti) * c,
                  sizeof(double) * static_cast<size_t>(c));
    }
  }
}

/// Row-wise softmax Jacobian application: dL_i = a_i ⊙ (da_i − <da_i, a_i>).
Tensor softmax_rows_backward(const Tensor& a, const Tensor& da) {
  const int rows = a.dim(0);
  const int cols = a.dim(1);
  Tensor dl({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const double* ar = a.data() + static_cast<std::int64_t>(i) * cols;
    const double* dr = da.data() + static_cast<std::int64_t>(i) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += ar[j] * dr[j];
    double* out = dl.data() + static_cast<std::int64_t>(i) * cols;
    for (int j = 0; j < cols; ++j) out[j] = ar[j] * (dr[j] - dot);
  }
  return dl;
}

}  // namespace

Tensor flatten_joint_major(const Tensor& fmap) {
  check_feature_map(fmap, "flatten_joint_major");
  const int t = fmap.dim(0), n = fmap.dim(1), c = fmap.dim(2);
  Tensor flat({n, t * c});
  flatten_slab(fmap.data(), flat.data(), t, n, c);
  return flat;
}

Tensor unflatten_joint_major(const Tensor& flat, int frames, int channels) {
  if (flat.rank() != 2 || flat.dim(1) != frames * channels) {
    throw_dim_error("unflatten_joint_major: expected [N, " + std::to_string(frames) + "*" +
                    std::to_string(channels) + "], got " + shape_string(flat.shape()));
  }
  const int n = flat.dim(0);
  Tensor fmap({frames, n, channels});
  unflatten_slab(flat.data(), fmap.data(), frames, n, channels);
  return fmap;
}

Tensor vanilla_affinity(const Tensor& f_s, const Tensor& f_p) {
  check_feature_map(f_s, "vanilla_affinity");
  if (!f_s.same_shape(f_p)) {
    throw_dim_error("vanilla_affinity: feature maps differ, " + shape_string(f_s.shape()) +
                    " vs " + shape_string(f_p.shape()));
  }
  Tensor s = flatten_joint_major(f_s);
  Tensor p = flatten_joint_major(f_p);
  const int n = s.dim(0);
  Tensor logits({n, n});
  logits.as_matrix().noalias() = s.as_matrix() * p.as_matrix().transpose();
  return softmax_rows(logits);
}

Tensor dynamic_affinity(const Tensor& a_vanilla, const PgamState& state) {
  if (!a_vanilla.same_shape(state.m.value)) {
    throw_dim_error("dynamic_affinity: affinity shape " + shape_string(a_vanilla.shape()) +
                    " does not match state shape " + shape_string(state.m.value.shape()));
  }
  Tensor out(a_vanilla.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = a_vanilla[i] * (state.m.value[i] + state.m_prime.value[i]);
  }
  return out;
}

Tensor fuse(const Tensor& a, const Tensor& f_p, const Tensor& f_s) {
  check_feature_map(f_s, "fuse");
  if (!f_s.same_shape(f_p)) {
    throw_dim_error("fuse: feature maps differ, " + shape_string(f_p.shape()) + " vs " +
                    shape_string(f_s.shape()));
  }
  const int t = f_s.dim(0), n = f_s.dim(1), c = f_s.dim(2);
  if (a.rank() != 2 || a.dim(0) != n || a.dim(1) != n) {
    throw_dim_error("fuse: affinity must be [" + std::to_string(n) + "x" + std::to_string(n) +
                    "], got " + shape_string(a.shape()));
  }
  Tensor p = flatten_joint_major(f_p);
  Tensor mixed({n, t * c});
  mixed.as_matrix().noalias() = a.as_matrix() * p.as_matrix();
  Tensor out = unflatten_joint_major(mixed, t, c);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += f_s[i];
  return out;
}

// ---------------------------------------------------------------------------
// PgamModule

PgamModule::PgamModule(int num_joints, AttentionMode mode) : state(num_joints, mode) {}

Tensor PgamModule::forward(const Tensor& f_s, const Tensor& f_p) {
  if (f_s.rank() != f_p.rank() || !f_s.same_shape(f_p)) {
    throw_dim_error("pgam forward: feature maps differ, " + shape_string(f_s.shape()) + " vs " +
                    shape_string(f_p.shape()));
  }
  int batch = 1, t = 0, n = 0, c = 0;
  if (f_s.rank() == 4) {
    batch = f_s.dim(0);
    t = f_s.dim(1);
    n = f_s.dim(2);
    c = f_s.dim(3);
  } else if (f_s.rank() == 3) {
    t = f_s.dim(0);
    n = f_s.dim(1);
    c = f_s.dim(2);
  } else {
    throw_dim_error("pgam forward: expected [B,T,N,C] or [T,N,C], got " +
                    shape_string(f_s.shape()));
  }
  if (n != state.num_joints()) {
    throw_dim_error("pgam forward: input has " + std::to_string(n) + " joints, state has " +
                    std::to_string(state.num_joints()));
  }

  if (training_) {
    caches_.clear();
    cached_fs_shape_ = f_s.shape();
    cached_fp_shape_ = f_p.shape();
    has_cache_ = true;
  }
  if (state.mode == AttentionMode::none) return f_s;

  const bool dynamic = state.mode == AttentionMode::dynamic;
  const std::int64_t slab = static_cast<std::int64_t>(t) * n * c;
  const int tc = t * c;
  Tensor out(f_s.shape());
  Tensor mixed({n, tc});
  for (int b = 0; b < batch; ++b) {
    Cache cache;
    cache.s = Tensor({n, tc});
    cache.p = Tensor({n, tc});
    flatten_slab(f_s.data() + b * slab, cache.s.data(), t, n, c);
    flatten_slab(f_p.data() + b * slab, cache.p.data(), t, n, c);

    Tensor logits({n, n});
    logits.as_matrix().noalias() = cache.s.as_matrix() * cache.p.as_matrix().transpose();
    cache.a_v = softmax_rows(logits);
    cache.a = dynamic ? dynamic_affinity(cache.a_v, state) : cache.a_v;

    mixed.as_matrix().noalias() = cache.a.as_matrix() * cache.p.as_matrix();
    double* out_b = out.data() + b * slab;
    unflatten_slab(mixed.data(), out_b, t, n, c);
    const double* fs_b = f_s.data() + b * slab;
    for (std::int64_t i = 0; i < slab; ++i) out_b[i] += fs_b[i];

    if (training_) caches_.push_back(std::move(cache));
  }
  return out;
}

PgamGrads PgamModule::backward(const Tensor& dout) {
  if (!has_cache_) {
    throw std::logic_error("pgam backward: no cached forward (training mode required)");
  }
  if (dout.shape() != cached_fs_shape_) {
    throw_dim_error("pgam backward: upstream shape " + shape_string(dout.shape()) +
                    " does not match forward shape " + shape_string(cached_fs_shape_));
  }
  PgamGrads grads;
  if (state.mode == AttentionMode::none) {
    grads.d_fs = dout;
    grads.d_fp = Tensor::zeros(cached_fp_shape_);
    return grads;
  }

  int batch = 1, t = 0, n = 0, c = 0;
  if (dout.rank() == 4) {
    batch = dout.dim(0);
    t = dout.dim(1);
    n = dout.dim(2);
    c = dout.dim(3);
  } else {
    t = dout.dim(0);
    n = dout.dim(1);
    c = dout.dim(2);
  }
  const bool dynamic = state.mode == AttentionMode::dynamic;
  const std::int64_t slab = static_cast<std::int64_t>(t) * n * c;
  const int tc = t * c;

  grads.d_fs = dout;  // direct residual term of F_s' = A F_p + F_s
  grads.d_fp = Tensor(cached_fp_shape_);
  Tensor dg({n, tc});
  Tensor da({n, n});
  Tensor dp({n, tc});
  Tensor ds({n, tc});
  for (int b = 0; b < batch; ++b) {
    const Cache& cache = caches_[static_cast<size_t>(b)];
    flatten_slab(dout.data() + b * slab, dg.data(), t, n, c);

    da.as_matrix().noalias() = dg.as_matrix() * cache.p.as_matrix().transpose();
    dp.as_matrix().noalias() = cache.a.as_matrix().transpose() * dg.as_matrix();

    Tensor da_v({n, n});
    if (dynamic) {
      for (std::int64_t i = 0; i < da.size(); ++i) {
        const double coupled = da[i] * cache.a_v[i];
        state.m.grad[i] += coupled;
        state.m_prime.grad[i] += coupled;
        da_v[i] = da[i] * (state.m.value[i] + state.m_prime.value[i]);
      }
    } else {
      da_v = da;
    }
    Tensor dl = softmax_rows_backward(cache.a_v, da_v);

    ds.as_matrix().noalias() = dl.as_matrix() * cache.p.as_matrix();
    dp.as_matrix().noalias() += dl.as_matrix().transpose() * cache.s.as_matrix();

    // scatter flattened gradients back to [T,N,C] slabs, accumulating d_fs
    Tensor ds_map = unflatten_joint_major(ds, t, c);
    double* dfs_b = grads.d_fs.data() + b * slab;
    for (std::int64_t i = 0; i < slab; ++i) dfs_b[i] += ds_map[i];
    unflatten_slab(dp.data(), grads.d_fp.data() + b * slab, t, n, c);
  }
  return grads;
}

void PgamModule::register_params(ParamRegistry& reg, const std::string& prefix) {
  state.register_params(reg, prefix);
}

}  // namespace pggcn
