#include "fwd/regression.hpp"
#include "fwd/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace fwd {

CellRegression::CellRegression(int n_times, int n_grid, int dim) : T_(n_times), G_(n_grid), D_(dim) {
    m_ = 1 + dim + dim * (dim + 1) / 2;
    const int m = m_;
    stride_ = 2 + m * m + m + 1;
    acc_.assign(static_cast<std::size_t>(T_) * G_ * stride_, 0.0);
}

void CellRegression::add(int k, int j, double e, const double* dW, double scale, double dt) {
    double* a = acc_.data() + (static_cast<std::size_t>(k) * G_ + j) * stride_;
    const int m = m_;
    double x[1 + kMaxDim + kMaxDim * (kMaxDim + 1) / 2];
    x[0] = 1.0;
    for (int d = 0; d < D_; ++d) x[d + 1] = dW[d];
    int q = D_ + 1;
    for (int r = 0; r < D_; ++r)
        for (int c = r; c < D_; ++c) x[q++] = (dW[r] * dW[c] - (r == c ? dt : 0.0)) / dt;
    a[0] += 1.0;
    a[1] += std::abs(scale);
    double* xtx = a + 2;
    double* xte = xtx + m * m;
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < m; ++c) xtx[r * m + c] += x[r] * x[c];
        xte[r] += x[r] * e;
    }
    xte[m] += e * e;
}

CellRegression::Cell CellRegression::solve(int k, int j) const {
    const double* a = acc_.data() + (static_cast<std::size_t>(k) * G_ + j) * stride_;
    const int m = m_;
    Cell c;
    c.n = static_cast<long>(a[0]);
    if (c.n <= m + 1) return c;
    c.scale = a[1] / a[0];
    Eigen::MatrixXd XtX(m, m);
    Eigen::VectorXd Xte(m);
    for (int r = 0; r < m; ++r) {
        for (int q = 0; q < m; ++q) XtX(r, q) = a[2 + r * m + q];
        Xte(r) = a[2 + m * m + r];
    }
    const double ete = a[2 + m * m + m];
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
    const Eigen::VectorXd b = ldlt.solve(Xte);
    const double sse = std::max(0.0, ete - b.dot(Xte));
    const double s2 = sse / static_cast<double>(c.n - m);
    const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(m, m));
    c.intercept = b(0);
    c.stderr_ = std::sqrt(s2 * inv(0, 0));
    c.slope.assign(b.data() + 1, b.data() + 1 + D_);
    return c;
}

} // namespace fwd
