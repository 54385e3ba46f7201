#include "pggcn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace pggcn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw_dim_error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw_dim_error("matmul: need rank-2 operands, got " + shape_string(a.shape()) + " and " +
                    shape_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw_dim_error("matmul: inner dimensions differ: " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  c.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw_dim_error("softmax_rows: need rank 2, got " + shape_string(x.shape()));
  Tensor y(x.shape());
  auto in = x.as_matrix();
  auto out = y.as_matrix();
  for (int r = 0; r < in.rows(); ++r) {
    const double row_max = in.row(r).maxCoeff();
    out.row(r) = (in.row(r).array() - row_max).exp();
    out.row(r) /= out.row(r).sum();
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c(a.shape());
  c.as_vector() = a.as_vector() + b.as_vector();
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c(a.shape());
  c.as_vector() = a.as_vector() - b.as_vector();
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c(a.shape());
  c.as_vector() = a.as_vector().cwiseProduct(b.as_vector());
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c(a.shape());
  c.as_vector() = a.as_vector() * s;
  return c;
}

Tensor relu(const Tensor& a) {
  Tensor c(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) c[i] = a[i] > 0.0 ? a[i] : 0.0;
  return c;
}

Tensor relu_grad(const Tensor& input, const Tensor& upstream) {
  require_same_shape(input, upstream, "relu_grad");
  Tensor c(input.shape());
  for (std::int64_t i = 0; i < input.size(); ++i) c[i] = input[i] > 0.0 ? upstream[i] : 0.0;
  return c;
}

namespace {

struct ReduceDims {
  std::int64_t outer;
  int mid;
  std::int64_t inner;
  std::vector<int> out_shape;
};

ReduceDims split_axis(const Tensor& x, int axis, const char* op) {
  if (axis < 0 || axis >= x.rank()) {
    throw_dim_error(std::string(op) + ": axis " + std::to_string(axis) +
                    " out of range for shape " + shape_string(x.shape()));
  }
  ReduceDims d{1, x.dim(axis), 1, {}};
  for (int i = 0; i < x.rank(); ++i) {
    if (i < axis) d.outer *= x.dim(i);
    if (i > axis) d.inner *= x.dim(i);
    if (i != axis) d.out_shape.push_back(x.dim(i));
  }
  return d;
}

}  // namespace

Tensor reduce_sum(const Tensor& x, int axis) {
  const ReduceDims d = split_axis(x, axis, "reduce_sum");
  Tensor out(d.out_shape);
  for (std::int64_t o = 0; o < d.outer; ++o) {
    for (int m = 0; m < d.mid; ++m) {
      const double* src = x.data() + (o * d.mid + m) * d.inner;
      double* dst = out.data() + o * d.inner;
      for (std::int64_t i = 0; i < d.inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

Tensor reduce_mean(const Tensor& x, int axis) {
  Tensor out = reduce_sum(x, axis);
  const double inv = 1.0 / x.dim(axis);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

Tensor reduce_max_index(const Tensor& x, int axis) {
  const ReduceDims d = split_axis(x, axis, "reduce_max_index");
  Tensor out(d.out_shape);
  for (std::int64_t o = 0; o < d.outer; ++o) {
    for (std::int64_t i = 0; i < d.inner; ++i) {
      double best = x.data()[(o * d.mid) * d.inner + i];
      int best_m = 0;
      for (int m = 1; m < d.mid; ++m) {
        const double v = x.data()[(o * d.mid + m) * d.inner + i];
        if (v > best) {
          best = v;
          best_m = m;
        }
      }
      out.data()[o * d.inner + i] = static_cast<double>(best_m);
    }
  }
  return out;
}

int argmax(const Tensor& v) {
  if (v.rank() != 1) throw_dim_error("argmax: need rank 1, got " + shape_string(v.shape()));
  int best = 0;
  for (int i = 1; i < v.dim(0); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw_dim_error("concat_last: no tensors given");
  const Tensor& first = parts.front();
  if (first.rank() < 1) throw_dim_error("concat_last: need rank >= 1");
  std::vector<int> lead(first.shape().begin(), first.shape().end() - 1);
  int total_last = 0;
  for (const Tensor& p : parts) {
    std::vector<int> p_lead(p.shape().begin(), p.shape().end() - 1);
    if (p.rank() != first.rank() || p_lead != lead) {
      throw_dim_error("concat_last: leading dims differ, " + shape_string(first.shape()) +
                      " vs " + shape_string(p.shape()));
    }
    total_last += p.dim(p.rank() - 1);
  }
  std::vector<int> out_shape = lead;
  out_shape.push_back(total_last);
  Tensor out(out_shape);
  const std::int64_t rows = shape_product(lead);
  std::int64_t col_offset = 0;
  for (const Tensor& p : parts) {
    const int width = p.dim(p.rank() - 1);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(p.data() + r * width, width, out.data() + r * total_last + col_offset);
    }
    col_offset += width;
  }
  return out;
}

std::vector<Tensor> split_last(const Tensor& x, const std::vector<int>& sizes) {
  if (x.rank() < 1) throw_dim_error("split_last: need rank >= 1");
  const int last = x.dim(x.rank() - 1);
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) throw_dim_error("split_last: sizes must be positive");
    total += s;
  }
  if (total != last) {
    throw_dim_error("split_last: sizes sum to " + std::to_string(total) + ", last dim is " +
                    std::to_string(last));
  }
  std::vector<int> lead(x.shape().begin(), x.shape().end() - 1);
  const std::int64_t rows = shape_product(lead);
  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  std::int64_t col_offset = 0;
  for (int s : sizes) {
    std::vector<int> shape = lead;
    shape.push_back(s);
    Tensor part(shape);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(x.data() + r * last + col_offset, s, part.data() + r * s);
    }
    parts.push_back(std::move(part));
    col_offset += s;
  }
  return parts;
}

}  // namespace pggcn
