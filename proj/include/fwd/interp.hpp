#pragma once

#include <vector>

namespace fwd {

/// Shape-preserving cubic Hermite interpolant of a positive, strictly
/// monotone curve, built in log-log coordinates.
///
/// Node slopes are three-point central differences clipped by the
/// Fritsch-Carlson limiter; end slopes come from a least-squares fit through
/// the three outermost nodes. Outside the nodes the curve continues as a power
/// law with the end slope, and queries there report `extrapolated`.
/// Power laws are reproduced exactly, inside and outside the grid.
class LogLogCurve {
public:
    LogLogCurve() = default;
    LogLogCurve(const double* x, const double* y, int n) { assign(x, y, n); }

    /// x strictly increasing and positive, y positive and strictly monotone.
    /// `logx` may supply precomputed log(x) to save work in hot loops.
    void assign(const double* x, const double* y, int n, const double* logx = nullptr);

    int size() const { return static_cast<int>(s_.size()); }
    bool increasing() const { return increasing_; }
    double x_front() const;
    double x_back() const;

    double eval(double x, bool* extrapolated = nullptr) const;
    /// d log y / d log x at x.
    double elasticity(double x) const;
    /// dy/dx at x.
    double deriv(double x) const;
    /// Node elasticity (the Hermite slope at node i).
    double node_elasticity(int i) const { return m_[i]; }

    /// Solves y(x) = target; NaN when the end slope cannot reach it.
    double inverse(double target, bool* extrapolated = nullptr) const;

    /// Integral of y over [a, b], 0 < a <= b, including power-law tails.
    double integral(double a, double b) const;
    /// Integral of y over [node i, node i+1].
    double cell_integral(int i) const;
    /// Integral of y over (0, x_front()]; +inf when the left tail is not integrable.
    double left_tail_integral() const;

private:
    double hermite(int i, double s) const;
    double hermite_slope(int i, double s) const;
    int locate(double s) const;
    double integral_log(double sa, double sb) const;

    std::vector<double> s_;
    std::vector<double> L_;
    std::vector<double> m_;
    bool increasing_ = true;
};

/// Power-law fit y = c x^p through three points in log-log least squares.
struct PowerFit {
    double c = 0.0;
    double p = 0.0;
};
PowerFit fit_power(const double* x, const double* y);

} // namespace fwd
