#include "fwd/interp.hpp"
#include "fwd/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fwd {

namespace {

constexpr double kGaussX[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                               0.8611363115940526};
constexpr double kGaussW[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                               0.3478548451374538};

// Integral of exp(c0 + k s) over [sa, sb].
double exp_linear_integral(double c0, double k, double sa, double sb) {
    const double d = sb - sa;
    const double base = std::exp(c0 + k * sa);
    if (std::abs(k * d) < 1e-12) return base * d;
    return base * std::expm1(k * d) / k;
}

double ls_slope(const double* sx, const double* sy) {
    const double mx = (sx[0] + sx[1] + sx[2]) / 3.0, my = (sy[0] + sy[1] + sy[2]) / 3.0;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 3; ++i) {
        num += (sx[i] - mx) * (sy[i] - my);
        den += (sx[i] - mx) * (sx[i] - mx);
    }
    return num / den;
}

} // namespace

PowerFit fit_power(const double* x, const double* y) {
    double sx[3], sy[3];
    for (int i = 0; i < 3; ++i) {
        sx[i] = std::log(x[i]);
        sy[i] = std::log(y[i]);
    }
    PowerFit f;
    f.p = ls_slope(sx, sy);
    f.c = std::exp((sy[0] + sy[1] + sy[2]) / 3.0 - f.p * (sx[0] + sx[1] + sx[2]) / 3.0);
    return f;
}

void LogLogCurve::assign(const double* x, const double* y, int n, const double* logx) {
    if (n < 2) throw Error(ErrorKind::InvalidInput, "curve needs at least two nodes");
    s_.resize(n);
    L_.resize(n);
    m_.resize(n);
    for (int i = 0; i < n; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(y[i]))
            throw Error(ErrorKind::InvalidInput, "curve nodes must be positive and finite");
        s_[i] = logx ? logx[i] : std::log(x[i]);
        L_[i] = std::log(y[i]);
    }
    increasing_ = L_[n - 1] > L_[0];

    // Central three-point slopes (exact for quadratics in log-log).
    for (int i = 1; i + 1 < n; ++i) {
        const double h0 = s_[i] - s_[i - 1], h1 = s_[i + 1] - s_[i];
        const double d0 = (L_[i] - L_[i - 1]) / h0, d1 = (L_[i + 1] - L_[i]) / h1;
        m_[i] = (d0 * d1 <= 0.0) ? 0.0 : (h1 * d0 + h0 * d1) / (h0 + h1);
    }
    const double dfirst = (L_[1] - L_[0]) / (s_[1] - s_[0]);
    const double dlast = (L_[n - 1] - L_[n - 2]) / (s_[n - 1] - s_[n - 2]);
    if (n >= 3) {
        m_[0] = ls_slope(&s_[0], &L_[0]);
        m_[n - 1] = ls_slope(&s_[n - 3], &L_[n - 3]);
        if (m_[0] * dfirst <= 0.0) m_[0] = dfirst;
        if (m_[n - 1] * dlast <= 0.0) m_[n - 1] = dlast;
    } else {
        m_[0] = m_[1] = dfirst;
    }

    // Fritsch-Carlson limiter.
    for (int i = 0; i + 1 < n; ++i) {
        const double d = (L_[i + 1] - L_[i]) / (s_[i + 1] - s_[i]);
        if (d == 0.0) {
            m_[i] = m_[i + 1] = 0.0;
            continue;
        }
        const double a = m_[i] / d, b = m_[i + 1] / d;
        if (a < 0.0) m_[i] = 0.0;
        if (b < 0.0) m_[i + 1] = 0.0;
        const double r2 = a * a + b * b;
        if (r2 > 9.0) {
            const double tau = 3.0 / std::sqrt(r2);
            m_[i] = tau * a * d;
            m_[i + 1] = tau * b * d;
        }
    }
}

double LogLogCurve::x_front() const { return std::exp(s_.front()); }
double LogLogCurve::x_back() const { return std::exp(s_.back()); }

int LogLogCurve::locate(double s) const {
    const int n = size();
    if (s < s_[0]) return -1;
    if (s > s_[n - 1]) return n - 1;
    auto it = std::upper_bound(s_.begin(), s_.end(), s);
    int i = static_cast<int>(it - s_.begin()) - 1;
    return std::min(i, n - 2);
}

double LogLogCurve::hermite(int i, double s) const {
    const double h = s_[i + 1] - s_[i];
    const double t = (s - s_[i]) / h, t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * L_[i] + (t3 - 2 * t2 + t) * h * m_[i] + (-2 * t3 + 3 * t2) * L_[i + 1] +
           (t3 - t2) * h * m_[i + 1];
}

double LogLogCurve::hermite_slope(int i, double s) const {
    const double h = s_[i + 1] - s_[i];
    const double t = (s - s_[i]) / h, t2 = t * t;
    return ((6 * t2 - 6 * t) * L_[i] + (6 * t - 6 * t2) * L_[i + 1]) / h + (3 * t2 - 4 * t + 1) * m_[i] +
           (3 * t2 - 2 * t) * m_[i + 1];
}

double LogLogCurve::eval(double x, bool* extrapolated) const {
    const double s = std::log(x);
    const int n = size(), i = locate(s);
    if (extrapolated) *extrapolated = (i < 0 || i >= n - 1);
    if (i < 0) return std::exp(L_[0] + m_[0] * (s - s_[0]));
    if (i >= n - 1) return std::exp(L_[n - 1] + m_[n - 1] * (s - s_[n - 1]));
    return std::exp(hermite(i, s));
}

double LogLogCurve::elasticity(double x) const {
    const double s = std::log(x);
    const int n = size(), i = locate(s);
    if (i < 0) return m_[0];
    if (i >= n - 1) return m_[n - 1];
    return hermite_slope(i, s);
}

double LogLogCurve::deriv(double x) const { return eval(x) * elasticity(x) / x; }

double LogLogCurve::inverse(double target, bool* extrapolated) const {
    const double Lt = std::log(target);
    const int n = size();
    const double lo = increasing_ ? L_[0] : L_[n - 1];
    const double hi = increasing_ ? L_[n - 1] : L_[0];
    if (Lt < lo || Lt > hi) {
        if (extrapolated) *extrapolated = true;
        const bool left = increasing_ ? (Lt < lo) : (Lt > hi);
        const int e = left ? 0 : n - 1;
        if (m_[e] == 0.0) return std::numeric_limits<double>::quiet_NaN();
        return std::exp(s_[e] + (Lt - L_[e]) / m_[e]);
    }
    if (extrapolated) *extrapolated = false;
    int i;
    if (increasing_) {
        auto it = std::upper_bound(L_.begin(), L_.end(), Lt);
        i = static_cast<int>(it - L_.begin()) - 1;
    } else {
        auto it = std::upper_bound(L_.begin(), L_.end(), Lt, [](double a, double b) { return a > b; });
        i = static_cast<int>(it - L_.begin()) - 1;
    }
    i = std::clamp(i, 0, n - 2);
    const double dL = L_[i + 1] - L_[i];
    if (dL == 0.0) return std::exp(s_[i]);
    // Safeguarded Newton on the monotone Hermite piece.
    double a = s_[i], b = s_[i + 1];
    double s = s_[i] + (Lt - L_[i]) / dL * (b - a);
    const double sign = increasing_ ? 1.0 : -1.0;
    for (int it = 0; it < 60; ++it) {
        const double f = hermite(i, s) - Lt;
        if (sign * f > 0.0) b = s; else a = s;
        if (std::abs(f) < 1e-15 || b - a < 1e-15) break;
        const double fp = hermite_slope(i, s);
        double next = fp != 0.0 ? s - f / fp : 0.5 * (a + b);
        if (!(next > a && next < b)) next = 0.5 * (a + b);
        s = next;
    }
    return std::exp(s);
}

double LogLogCurve::integral_log(double sa, double sb) const {
    if (sb <= sa) return 0.0;
    const int n = size();
    double total = 0.0;
    if (sa < s_[0]) {
        const double e = std::min(sb, s_[0]);
        total += exp_linear_integral(L_[0] - m_[0] * s_[0], m_[0] + 1.0, sa, e);
        sa = e;
    }
    if (sb > s_[n - 1]) {
        const double b = std::max(sa, s_[n - 1]);
        total += exp_linear_integral(L_[n - 1] - m_[n - 1] * s_[n - 1], m_[n - 1] + 1.0, b, sb);
        sb = b;
    }
    if (sb <= sa) return total;
    int i = locate(sa);
    i = std::clamp(i, 0, n - 2);
    while (i < n - 1 && s_[i] < sb) {
        const double a = std::max(sa, s_[i]), b = std::min(sb, s_[i + 1]);
        if (b > a) {
            const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
            double acc = 0.0;
            for (int q = 0; q < 4; ++q) {
                const double s = c + hw * kGaussX[q];
                acc += kGaussW[q] * std::exp(hermite(i, s) + s);
            }
            total += acc * hw;
        }
        ++i;
    }
    return total;
}

double LogLogCurve::integral(double a, double b) const {
    if (!(a > 0.0) || b < a) throw Error(ErrorKind::InvalidInput, "integral needs 0 < a <= b");
    return integral_log(std::log(a), std::log(b));
}

double LogLogCurve::cell_integral(int i) const { return integral_log(s_[i], s_[i + 1]); }

double LogLogCurve::left_tail_integral() const {
    const double k = m_[0] + 1.0;
    if (k <= 1e-12) return std::numeric_limits<double>::infinity();
    return std::exp(L_[0] + s_[0]) / k;
}

} // namespace fwd
