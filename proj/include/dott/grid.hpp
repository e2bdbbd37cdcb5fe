#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include <Eigen/Core>

#include "dott/error.hpp"

namespace dott {

enum class GridKind { GaussLegendre, FourierEquispaced };

inline const char* to_string(GridKind k)
{
    return k == GridKind::GaussLegendre ? "gauss_legendre" : "fourier";
}

// One-dimensional collocation rule. Immutable once built.
template <typename Scalar>
struct Grid1D {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    GridKind kind{GridKind::GaussLegendre};
    Vector nodes;
    Vector weights;
    Scalar a{0}, b{0};
    Matrix d1;
    Matrix d2;

    Eigen::Index size() const { return nodes.size(); }
    Scalar length() const { return b - a; }

    bool same_rule(const Grid1D& o) const
    {
        return kind == o.kind && size() == o.size() && a == o.a && b == o.b;
    }
};

using Grid = Grid1D<double>;

namespace detail {

// Legendre P_n(x) and P_n'(x) by the three-term recurrence.
template <typename Scalar>
std::pair<Scalar, Scalar> legendre_with_derivative(int n, Scalar x)
{
    Scalar p0 = 1, p1 = x;
    if (n == 0) return {Scalar(1), Scalar(0)};
    for (int k = 2; k <= n; ++k) {
        Scalar pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = pk;
    }
    Scalar dp = n * (x * p1 - p0) / (x * x - 1);
    return {p1, dp};
}

} // namespace detail

template <typename Scalar = double>
Grid1D<Scalar> gauss_legendre_grid(int n, Scalar a = -1, Scalar b = 1)
{
    using std::abs;
    using std::cos;
    using std::sqrt;
    if (n < 1) throw InvalidArgument("gauss_legendre_grid: n must be >= 1");
    if (!(a < b)) throw InvalidArgument("gauss_legendre_grid: need a < b");

    Grid1D<Scalar> g;
    g.kind = GridKind::GaussLegendre;
    g.a = a;
    g.b = b;
    g.nodes.resize(n);
    g.weights.resize(n);

    const Scalar pi = std::numbers::pi_v<Scalar>;
    const Scalar tol = std::max<Scalar>(Scalar(1e-15), 8 * std::numeric_limits<Scalar>::epsilon());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x(n), w(n);
    for (int i = 0; i < n; ++i) {
        // Chebyshev-like starting guess, then Newton.
        Scalar xi = -cos(pi * (i + Scalar(0.75)) / (n + Scalar(0.5)));
        Scalar dp = 1;
        for (int it = 0; it < 100; ++it) {
            if (n == 1) {
                xi = 0;
                dp = 1;
                break;
            }
            auto [p, d] = detail::legendre_with_derivative(n, xi);
            Scalar dx = p / d;
            xi -= dx;
            dp = d;
            if (abs(dx) < tol) {
                dp = detail::legendre_with_derivative(n, xi).second;
                break;
            }
        }
        x(i) = xi;
        w(i) = n == 1 ? Scalar(2) : Scalar(2) / ((1 - xi * xi) * dp * dp);
    }
    // ascending order; symmetrize to kill round-off asymmetry
    for (int i = 0; i < n / 2; ++i) {
        Scalar s = (x(n - 1 - i) - x(i)) / 2;
        x(i) = -s;
        x(n - 1 - i) = s;
        Scalar ws = (w(i) + w(n - 1 - i)) / 2;
        w(i) = w(n - 1 - i) = ws;
    }
    if (n % 2 == 1) x(n / 2) = 0;

    const Scalar half = (b - a) / 2, mid = (a + b) / 2;
    g.nodes = (x.array() * half + mid).matrix();
    g.weights = w * half;

    // Barycentric polynomial differentiation on the reference nodes.
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bw(n);
    for (int j = 0; j < n; ++j) bw(j) = (j % 2 ? -1 : 1) * sqrt((1 - x(j) * x(j)) * w(j));
    g.d1 = Grid1D<Scalar>::Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        Scalar diag = 0;
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            g.d1(i, j) = (bw(j) / bw(i)) / (x(i) - x(j));
            diag -= g.d1(i, j);
        }
        g.d1(i, i) = diag;
    }
    g.d1 /= half;
    g.d2 = g.d1 * g.d1;
    return g;
}

template <typename Scalar = double>
Grid1D<Scalar> fourier_grid(int n, Scalar period = 2 * std::numbers::pi_v<Scalar>)
{
    using std::cos;
    using std::sin;
    using std::tan;
    if (n < 2) throw InvalidArgument("fourier_grid: n must be >= 2");
    if (!(period > 0)) throw InvalidArgument("fourier_grid: period must be positive");

    Grid1D<Scalar> g;
    g.kind = GridKind::FourierEquispaced;
    g.a = 0;
    g.b = period;
    g.nodes.resize(n);
    for (int j = 0; j < n; ++j) g.nodes(j) = j * period / n;
    g.weights = Grid1D<Scalar>::Vector::Constant(n, period / n);

    const Scalar pi = std::numbers::pi_v<Scalar>;
    const Scalar h = 2 * pi / n;
    const Scalar scale = 2 * pi / period;
    g.d1 = Grid1D<Scalar>::Matrix::Zero(n, n);
    g.d2 = Grid1D<Scalar>::Matrix::Zero(n, n);
    const bool even = n % 2 == 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            int k = i - j;
            Scalar sgn = (k % 2 == 0) ? 1 : -1;
            Scalar t = k * h / 2;
            if (even) {
                g.d1(i, j) = sgn / (2 * tan(t));
                g.d2(i, j) = -sgn / (2 * sin(t) * sin(t));
            } else {
                g.d1(i, j) = sgn / (2 * sin(t));
                g.d2(i, j) = -sgn * cos(t) / (2 * sin(t) * sin(t));
            }
        }
    }
    // closed-form diagonals equal minus the off-diagonal row sums; the sum
    // form keeps d2 * 1 at round-off for large n
    for (int i = 0; i < n; ++i) {
        g.d1(i, i) = 0;
        g.d2(i, i) = -(g.d2.row(i).sum());
    }
    g.d1 *= scale;
    g.d2 *= scale * scale;
    return g;
}

template <typename Scalar, typename V1, typename V2>
Scalar inner_product(const Grid1D<Scalar>& g, const Eigen::MatrixBase<V1>& f, const Eigen::MatrixBase<V2>& h)
{
    if (f.size() != g.size() || h.size() != g.size())
        throw InvalidArgument("inner_product: length mismatch");
    Scalar s = 0;
    for (Eigen::Index j = 0; j < g.size(); ++j) s += g.weights(j) * (f(j) * h(j));
    return s;
}

template <typename Scalar, typename V>
Scalar norm(const Grid1D<Scalar>& g, const Eigen::MatrixBase<V>& f)
{
    using std::sqrt;
    return sqrt(inner_product(g, f, f));
}

} // namespace dott
