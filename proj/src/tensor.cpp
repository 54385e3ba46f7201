#include "pggcn/tensor.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pggcn {

std::int64_t shape_product(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream oss;
  oss << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << " x ";
    oss << shape[i];
  }
  oss << "]";
  return oss.str();
}

void throw_dim_error(const std::string& message) {
  throw std::invalid_argument(message);
}

namespace {
void validate_shape(const std::vector<int>& shape) {
  for (int d : shape) {
    if (d <= 0) throw_dim_error("tensor: non-positive dimension in shape " + shape_string(shape));
  }
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw_dim_error("tensor: shape " + shape_string(shape_) + " does not match value count " +
                    std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = value;
  return t;
}

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw_dim_error("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                    shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

namespace {

std::int64_t checked_flat_index(const std::vector<int>& shape, std::initializer_list<int> index,
                                void (*fail)(const std::string&)) {
  if (index.size() != shape.size()) {
    fail("tensor: index rank " + std::to_string(index.size()) + " does not match shape " +
         shape_string(shape));
  }
  std::int64_t flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= shape[static_cast<std::size_t>(axis)]) {
      fail("tensor: index out of bounds on axis " + std::to_string(axis));
    }
    flat = flat * shape[static_cast<std::size_t>(axis)] + i;
    ++axis;
  }
  return flat;
}

}  // namespace

double& Tensor::at(std::initializer_list<int> index) {
  return data_[static_cast<std::size_t>(checked_flat_index(shape_, index, &throw_dim_error))];
}

double Tensor::at(std::initializer_list<int> index) const {
  return data_[static_cast<std::size_t>(checked_flat_index(shape_, index, &throw_dim_error))];
}

double Tensor::scalar() const {
  if (size() != 1) throw_dim_error("tensor: scalar() on shape " + shape_string(shape_));
  return data_[0];
}

MatrixMap Tensor::as_matrix(int rows, int cols) {
  if (static_cast<std::int64_t>(rows) * cols != size()) {
    throw_dim_error("tensor: cannot view " + shape_string(shape_) + " as [" +
                    std::to_string(rows) + " x " + std::to_string(cols) + "]");
  }
  return MatrixMap(data(), rows, cols);
}

ConstMatrixMap Tensor::as_matrix(int rows, int cols) const {
  if (static_cast<std::int64_t>(rows) * cols != size()) {
    throw_dim_error("tensor: cannot view " + shape_string(shape_) + " as [" +
                    std::to_string(rows) + " x " + std::to_string(cols) + "]");
  }
  return ConstMatrixMap(data(), rows, cols);
}

MatrixMap Tensor::as_matrix() {
  if (rank() != 2) throw_dim_error("tensor: as_matrix() needs rank 2, got " + shape_string(shape_));
  return MatrixMap(data(), shape_[0], shape_[1]);
}

ConstMatrixMap Tensor::as_matrix() const {
  if (rank() != 2) throw_dim_error("tensor: as_matrix() needs rank 2, got " + shape_string(shape_));
  return ConstMatrixMap(data(), shape_[0], shape_[1]);
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_product(new_shape) != size()) {
    throw_dim_error("tensor: reshape " + shape_string(shape_) + " -> " + shape_string(new_shape) +
                    " changes element count");
  }
  Tensor out = *this;
  out.shape_ = std::move(new_shape);
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("tensor read: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("tensor read: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int axis = 0; axis < t.rank(); ++axis) {
    put_u32(out, static_cast<std::uint32_t>(t.shape()[static_cast<std::size_t>(axis)]));
  }
  for (std::int64_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

Tensor read_tensor(std::istream& in) {
  const std::uint32_t rank = get_u32(in);
  if (rank > 16) throw std::runtime_error("tensor read: implausible rank " + std::to_string(rank));
  std::vector<int> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(in);
    if (d == 0) throw std::runtime_error("tensor read: zero dimension");
    shape[i] = static_cast<int>(d);
  }
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = get_f64(in);
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("tensor save: cannot open " + path);
  write_tensor(out, t);
  if (!out) throw std::runtime_error("tensor save: write failed on " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("tensor load: cannot open " + path);
  return read_tensor(in);
}

Param::Param(Tensor v, bool trainable_flag, bool decay_flag)
    : value(std::move(v)), grad(Tensor::zeros(value.shape())), trainable(trainable_flag),
      decay(decay_flag) {}

void Param::zero_grad() {
  for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
}

}  // namespace pggcn
