#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "dott/grid_tensor.hpp"

namespace dott::test {

// e^{sin(x1+2x2+3x3)} + x2 x3
inline double three_d_example(const double* x)
{
    return std::exp(std::sin(x[0] + 2 * x[1] + 3 * x[2])) + x[1] * x[2];
}

// (t+1) x2 x3 + (t^2-10) x1 x3 - (4 sin t + 3) x1 x2 x3
inline double forced_example(const double* x, double t)
{
    return (t + 1) * x[1] * x[2] + (t * t - 10) * x[0] * x[2] - (4 * std::sin(t) + 3) * x[0] * x[1] * x[2];
}

// Sum of a few smooth separable-and-not pieces with random parameters.
inline std::function<double(double, double)> random_smooth_2d(std::mt19937& rng)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double a = U(rng), b = U(rng), c = U(rng), p = U(rng), q = U(rng);
    return [=](double x, double y) {
        return std::exp(a * std::sin(x + b * y)) + c * std::cos(p * x * y) + q * x * y * y;
    };
}

inline std::function<double(const double*)> random_smooth_nd(std::mt19937& rng, int d)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<double> a(d), b(d);
    for (int j = 0; j < d; ++j) {
        a[j] = U(rng);
        b[j] = U(rng);
    }
    double c = U(rng), e = U(rng);
    return [=](const double* x) {
        double s = 0, p = 1;
        for (int j = 0; j < d; ++j) {
            s += a[j] * (j + 1) * x[j];
            p *= 1 + b[j] * x[j];
        }
        return std::exp(0.5 * std::sin(s)) + c * p + e * std::cos(x[0] * x[d - 1]);
    };
}

} // namespace dott::test
