#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ddsm {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles with 1 to 4 axes. Feature maps are
// (channels, height, width); sampled features append a trailing sample axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& operator()(std::size_t c, std::size_t y, std::size_t x, std::size_t n) {
    return data_[((c * shape_[1] + y) * shape_[2] + x) * shape_[3] + n];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x, std::size_t n) const {
    return data_[((c * shape_[1] + y) * shape_[2] + x) * shape_[3] + n];
  }

  // Same data, new extents. Element count must match.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

// Checks rank and (optionally) exact extents; throws ShapeError naming `what`.
void expect_rank(const Tensor& t, std::size_t rank, const char* what);
void expect_shape(const Tensor& t, const Shape& shape, const char* what);

double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);

// Channel concatenation a ‖ b of two (C,H,W) maps, and its inverse.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first);

// (C,H,W) -> (1,H,W) mean over channels.
Tensor channel_mean(const Tensor& t);

}  // namespace ddsm
