#pragma once

#include <cstdint>
#include <vector>

#include "medcl/error.hpp"

namespace medcl {

// Dense row-major 2-D array. This is the lingua franca between modules:
// images, label maps, per-class probability planes all travel as Grids.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) { reset(height, width, fill); }

  void reset(int height, int width, T fill = T{}) {
    require(height >= 0 && width >= 0, ErrorCode::InvalidArgument,
            "Grid dimensions must be non-negative");
    height_ = height;
    width_ = width;
    data_.assign(static_cast<size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[static_cast<size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<size_t>(row) * width_ + col];
  }

  T& at(int row, int col) {
    require(in_bounds(row, col), ErrorCode::InvalidArgument, "Grid index out of bounds");
    return (*this)(row, col);
  }
  const T& at(int row, int col) const {
    require(in_bounds(row, col), ErrorCode::InvalidArgument, "Grid index out of bounds");
    return (*this)(row, col);
  }

  bool in_bounds(int row, int col) const {
    return row >= 0 && row < height_ && col >= 0 && col < width_;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using ImageF = Grid<double>;
using LabelMap = Grid<uint8_t>;

// Channel-major stack of planes (C x H x W). Network activations and
// per-class probability maps use this; plane(c) views one channel.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0) {
    reset(channels, height, width, fill);
  }

  void reset(int channels, int height, int width, double fill = 0.0) {
    require(channels >= 0 && height >= 0 && width >= 0, ErrorCode::InvalidArgument,
            "Tensor3 dimensions must be non-negative");
    channels_ = channels;
    height_ = height;
    width_ = width;
    data_.assign(static_cast<size_t>(channels) * height * width, fill);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return data_.size(); }
  size_t plane_size() const { return static_cast<size_t>(height_) * width_; }

  double& operator()(int c, int row, int col) {
    return data_[(static_cast<size_t>(c) * height_ + row) * width_ + col];
  }
  const double& operator()(int c, int row, int col) const {
    return data_[(static_cast<size_t>(c) * height_ + row) * width_ + col];
  }

  double* plane(int c) { return data_.data() + static_cast<size_t>(c) * plane_size(); }
  const double* plane(int c) const {
    return data_.data() + static_cast<size_t>(c) * plane_size();
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor3& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

}  // namespace medcl
