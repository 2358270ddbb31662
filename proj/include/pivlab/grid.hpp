#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pivlab/error.hpp"

namespace pivlab {

// Uniform grid t_j = j * dt on [0, T].
struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  static TimeGrid make(double horizon, int n_steps) {
    if (!(horizon > 0.0)) throw Error("time grid: horizon must be positive");
    if (n_steps < 1) throw Error("time grid: n_steps must be >= 1");
    return TimeGrid{horizon, n_steps};
  }

  double dt() const noexcept { return horizon / n_steps; }
  double time(int j) const noexcept { return j == n_steps ? horizon : j * dt(); }
  int n_points() const noexcept { return n_steps + 1; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

// Row-major per-path matrix: one row per path, one column per grid index.
template <class T>
class PathMatrix {
 public:
  PathMatrix() = default;
  PathMatrix(int n_paths, int n_cols, T fill = T{})
      : n_paths_(n_paths), n_cols_(n_cols),
        data_(static_cast<std::size_t>(n_paths) * static_cast<std::size_t>(n_cols), fill) {}

  int n_paths() const noexcept { return n_paths_; }
  int n_cols() const noexcept { return n_cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int path, int col) noexcept { return data_[index(path, col)]; }
  const T& operator()(int path, int col) const noexcept { return data_[index(path, col)]; }

  std::span<T> row(int path) noexcept {
    return {data_.data() + index(path, 0), static_cast<std::size_t>(n_cols_)};
  }
  std::span<const T> row(int path) const noexcept {
    return {data_.data() + index(path, 0), static_cast<std::size_t>(n_cols_)};
  }

  // Copy of one column across all paths.
  std::vector<T> column(int col) const {
    std::vector<T> out(static_cast<std::size_t>(n_paths_));
    for (int p = 0; p < n_paths_; ++p) out[static_cast<std::size_t>(p)] = (*this)(p, col);
    return out;
  }

  const std::vector<T>& data() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }

  friend bool operator==(const PathMatrix&, const PathMatrix&) = default;

 private:
  std::size_t index(int path, int col) const noexcept {
    return static_cast<std::size_t>(path) * static_cast<std::size_t>(n_cols_) +
           static_cast<std::size_t>(col);
  }

  int n_paths_ = 0;
  int n_cols_ = 0;
  std::vector<T> data_;
};

using PathGrid = PathMatrix<double>;

}  // namespace pivlab
