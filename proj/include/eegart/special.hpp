#pragma once

#include <cmath>
#include <stdexcept>

namespace eegart {

// ln Gamma(x), x > 0.  Lanczos approximation (g = 7, 9 terms), ~1e-13
// absolute error over the positive axis.
inline double log_gamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("log_gamma: argument must be positive");
    static const double coef[9] = {
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    };
    if (x < 0.5) {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
    }
    const double z = x - 1.0;
    double a = coef[0];
    for (int i = 1; i < 9; ++i) a += coef[i] / (z + i);
    const double t = z + 7.5;
    return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t + std::log(a);
}

// digamma psi(x), x > 0.  Recurrence shift to x >= 10 then the standard
// asymptotic series; ~1e-14 over [1e-3, 1e6].
inline double digamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("digamma: argument must be positive");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli series: sum B_{2n} / (2n x^{2n})
    double series = inv2 * (1.0 / 12.0
                  + inv2 * (-1.0 / 120.0
                  + inv2 * (1.0 / 252.0
                  + inv2 * (-1.0 / 240.0
                  + inv2 * (1.0 / 132.0
                  + inv2 * (-691.0 / 32760.0
                  + inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

// trigamma psi'(x), x > 0; used by gradient paths through digamma.
inline double trigamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("trigamma: argument must be positive");
    double acc = 0.0;
    while (x < 10.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    double series = inv * (1.0
                  + inv * (0.5
                  + inv * (1.0 / 6.0
                  + inv2 * (-1.0 / 30.0
                  + inv2 * (1.0 / 42.0
                  + inv2 * (-1.0 / 30.0
                  + inv2 * (5.0 / 66.0
                  + inv2 * (-691.0 / 2730.0
                  + inv2 * (7.0 / 6.0)))))))));
    return acc + series;
}

}  // namespace eegart
