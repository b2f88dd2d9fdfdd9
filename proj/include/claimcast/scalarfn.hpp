#pragma once

#include <cmath>

namespace claimcast {

/// Numerically stable scalar kernels shared by the autodiff ops and the
/// distribution formulas, so both layers agree bit-for-bit.

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double stable_logaddexp(double a, double b) {
    const double m = a > b ? a : b;
    if (std::isinf(m) && m < 0.0) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

} // namespace claimcast
