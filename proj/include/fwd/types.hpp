#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace fwd {

constexpr int kMaxDim = 8;

/// Small n-vector in Brownian coordinates; fixed capacity avoids heap traffic in path loops.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Dense (path, time, grid) array stored path-major.
struct Plane {
    int n_paths = 0;
    int n_times = 0;
    int n_grid = 0;
    std::vector<double> v;

    Plane() = default;
    Plane(int paths, int times, int grid, double fill = 0.0)
        : n_paths(paths), n_times(times), n_grid(grid),
          v(static_cast<std::size_t>(paths) * times * grid, fill) {}

    std::size_t index(int p, int k, int j) const {
        return (static_cast<std::size_t>(p) * n_times + k) * n_grid + j;
    }
    double& operator()(int p, int k, int j) { return v[index(p, k, j)]; }
    double operator()(int p, int k, int j) const { return v[index(p, k, j)]; }
    double* row(int p, int k) { return v.data() + index(p, k, 0); }
    const double* row(int p, int k) const { return v.data() + index(p, k, 0); }
    bool empty() const { return v.empty(); }
};

/// Geometric grid with n points spanning [lo, hi].
std::vector<double> log_grid(double lo, double hi, int n);

} // namespace fwd
