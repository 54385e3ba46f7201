#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pggcn {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<MatrixRM>;
using ConstMatrixMap = Eigen::Map<const MatrixRM>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Dense real tensor: row-major flat storage plus explicit shape metadata.
/// Rank-2 kernels run on Eigen maps over the flat buffer; higher-rank
/// operations are expressed as batched rank-2 views of the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape);
  static Tensor ones(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Bounds-checked multi-index access; meant for tests and small fixtures,
  /// not inner loops.
  double& at(std::initializer_list<int> index);
  double at(std::initializer_list<int> index) const;

  /// Value of a size-1 tensor.
  double scalar() const;

  /// Reshaping matrix view over the flat buffer; rows*cols must equal size().
  MatrixMap as_matrix(int rows, int cols);
  ConstMatrixMap as_matrix(int rows, int cols) const;
  /// Matrix view of a rank-2 tensor.
  MatrixMap as_matrix();
  ConstMatrixMap as_matrix() const;
  VectorMap as_vector() { return VectorMap(data(), size()); }
  ConstVectorMap as_vector() const { return ConstVectorMap(data(), size()); }

  Tensor reshaped(std::vector<int> new_shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);
std::int64_t shape_product(const std::vector<int>& shape);

[[noreturn]] void throw_dim_error(const std::string& message);

/// Flat binary tensor format: one little-endian u32 rank, rank u32 dims,
/// then the row-major f64 payload. Shared by checkpoints and dataset caches.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Trainable value paired with an accumulated gradient of identical shape.
/// `decay` marks weight tensors eligible for weight decay; biases, batch-norm
/// affine terms and attention modulation matrices opt out.
struct Param {
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool decay = true;

  Param() = default;
  explicit Param(Tensor v, bool trainable_flag = true, bool decay_flag = true);
  void zero_grad();
};

}  // namespace pggcn
