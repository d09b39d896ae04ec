#pragma once

#include <vector>

namespace fwd {

/// Per-cell least squares of drift samples (e.g. dF/dt - beta_formula) on the
/// Brownian increment; the intercept is the drift excess and the slope absorbs
/// the martingale noise. Cells may be fed in any path order and in chunks.
class CellRegression {
public:
    CellRegression() = default;
    CellRegression(int n_times, int n_grid, int dim);

    /// Regressors: 1, dW and the centered products (dW_i dW_j - delta_ij dt) / dt.
    /// The quadratic terms strip the second-order Ito noise; they have mean zero,
    /// so the intercept still estimates the drift.
    void add(int k, int j, double e, const double* dW, double scale, double dt);

    struct Cell {
        double intercept = 0.0;
        double stderr_ = 0.0;
        double scale = 0.0;   ///< mean |scale| fed for the cell
        std::vector<double> slope;
        long n = 0;
    };
    Cell solve(int k, int j) const;

    int n_times() const { return T_; }
    int n_grid() const { return G_; }
    int dim() const { return D_; }
    long paths_seen() const { return paths_; }
    void count_paths(long p) { paths_ += p; }

private:
    int T_ = 0, G_ = 0, D_ = 0;
    long paths_ = 0;
    std::vector<double> acc_;  // per cell: n, sum|scale|, X'X (upper), X'e, e'e
    int stride_ = 0;
    int m_ = 0;
};

} // namespace fwd
