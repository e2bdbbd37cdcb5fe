#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dott/error.hpp"
#include "dott/grid.hpp"

namespace dott {

// Quadrature weights of a tensor-product grid, first variable fastest.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> composite_weights(const std::vector<Grid1D<Scalar>>& grids)
{
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(1);
    Eigen::Index stride = 1;
    for (const auto& g : grids) {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nw(stride * g.size());
        for (Eigen::Index k = 0; k < g.size(); ++k) nw.segment(k * stride, stride) = w * g.weights(k);
        w = std::move(nw);
        stride *= g.size();
    }
    return w;
}

// u restricted to a two-group split: rows index the left group, columns the right.
template <typename Scalar>
struct MatricizedFunction {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix values;
    std::vector<Grid1D<Scalar>> left_grid;
    std::vector<Grid1D<Scalar>> right_grid;

    MatricizedFunction() = default;
    MatricizedFunction(Matrix v, std::vector<Grid1D<Scalar>> l, std::vector<Grid1D<Scalar>> r)
        : values(std::move(v)), left_grid(std::move(l)), right_grid(std::move(r))
    {
        validate();
    }

    void validate() const
    {
        Eigen::Index m = 1, n = 1;
        for (const auto& g : left_grid) m *= g.size();
        for (const auto& g : right_grid) n *= g.size();
        if (values.rows() != m || values.cols() != n)
            throw InvalidArgument("MatricizedFunction: values shape does not match grids");
    }
    Vector left_weights() const { return composite_weights(left_grid); }
    Vector right_weights() const { return composite_weights(right_grid); }
};

template <typename Scalar>
struct SchmidtPair {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Vector lambdas;     // retained, descending
    Matrix left_modes;  // m x r
    Matrix right_modes; // n x r
    Vector spectrum;    // every resolved lambda, retained or not

    Eigen::Index rank() const { return lambdas.size(); }
};

enum class KernelSide { Left, Right };

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> correlation_kernel(const MatricizedFunction<Scalar>& u, KernelSide side)
{
    u.validate();
    if (side == KernelSide::Left) {
        auto w = u.right_weights();
        return u.values * w.asDiagonal() * u.values.transpose();
    }
    auto w = u.left_weights();
    return u.values.transpose() * w.asDiagonal() * u.values;
}

template <typename Scalar>
struct WeightedEigen {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> eigenvalues;               // descending, >= 0
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> eigenvectors; // quadrature-orthonormal columns
};

// Solves K W psi = mu psi through the symmetric form W^1/2 K W^1/2.
template <typename Scalar>
WeightedEigen<Scalar> eigen_sym_weighted(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& K,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& w)
{
    using std::abs;
    using std::sqrt;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (K.rows() != K.cols() || K.rows() != w.size())
        throw InvalidArgument("eigen_sym_weighted: shape mismatch");
    if ((w.array() <= 0).any()) throw InvalidArgument("eigen_sym_weighted: weights must be positive");
    Scalar scale = std::max<Scalar>(Scalar(1), K.cwiseAbs().maxCoeff());
    if ((K - K.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * scale)
        throw InvalidArgument("eigen_sym_weighted: matrix is not symmetric");

    const auto sw = w.array().sqrt().matrix();
    Matrix S = sw.asDiagonal() * K * sw.asDiagonal();
    S = (S + S.transpose()).eval() / 2;
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    if (es.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "symmetric eigensolver did not converge");

    const Eigen::Index n = K.rows();
    WeightedEigen<Scalar> out;
    out.eigenvalues.resize(n);
    out.eigenvectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Index src = n - 1 - k;
        out.eigenvalues(k) = std::max<Scalar>(Scalar(0), es.eigenvalues()(src));
        out.eigenvectors.col(k) = es.eigenvectors().col(src).cwiseQuotient(sw);
    }
    return out;
}

namespace detail {

// Largest-|entry| of the left mode made positive; right mode follows.
template <typename Matrix>
void apply_sign_convention(Matrix& left, Matrix& right)
{
    for (Eigen::Index k = 0; k < left.cols(); ++k) {
        Eigen::Index imax = 0;
        left.col(k).cwiseAbs().maxCoeff(&imax);
        if (left(imax, k) < 0) {
            left.col(k) *= -1;
            right.col(k) *= -1;
        }
    }
}

// Modified Gram-Schmidt under weights w, two passes, columns kept in order.
template <typename Matrix, typename Vector>
void weighted_mgs(Matrix& q, const Vector& w)
{
    for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k = 0; k < q.cols(); ++k) {
            for (Eigen::Index i = 0; i < k; ++i) {
                auto c = (w.array() * q.col(i).array() * q.col(k).array()).sum();
                q.col(k) -= c * q.col(i);
            }
            auto nk = std::sqrt((w.array() * q.col(k).array().square()).sum());
            if (nk > 0) q.col(k) /= nk;
        }
    }
}

} // namespace detail


template <typename Scalar>
SchmidtPair<Scalar> schmidt_decompose(const MatricizedFunction<Scalar>& u, Scalar threshold,
                                      std::optional<Eigen::Index> max_rank = std::nullopt, bool keep_all = false)
{
    using std::sqrt;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    if (threshold < 0) throw InvalidArgument("schmidt_decompose: threshold must be nonnegative");
    u.validate();

    const bool left_side = u.values.rows() <= u.values.cols();
    const Vector wl = u.left_weights(), wr = u.right_weights();
    const Vector& we = left_side ? wl : wr; // eigenproblem side
    const Vector& wp = left_side ? wr : wl; // projected side

    SchmidtPair<Scalar> out;
    const Eigen::Index m = u.values.rows(), n = u.values.cols();
    if (m == 0 || n == 0 || u.values.cwiseAbs().maxCoeff() == 0) {
        out.left_modes.resize(m, 0);
        out.right_modes.resize(n, 0);
        return out;
    }

    Matrix K = correlation_kernel(u, left_side ? KernelSide::Left : KernelSide::Right);
    WeightedEigen<Scalar> eig = eigen_sym_weighted<Scalar>(K, we);

    // Dispersion projection of every eigenvector, then a Ritz refinement:
    // with the complete eigenbasis, A = Phi B^T exactly, so a thin SVD of B
    // recovers lambdas to round-off relative to lambda_1 (the kernel route
    // alone resolves only lambda^2).
    const Matrix proj = left_side ? Matrix(u.values.transpose() * wl.asDiagonal() * eig.eigenvectors)
                                  : Matrix(u.values * wr.asDiagonal() * eig.eigenvectors);
    const Vector swp = wp.array().sqrt();
    Eigen::BDCSVD<Matrix> svd(swp.asDiagonal() * proj, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "Ritz refinement failed");
    const Vector& lam = svd.singularValues();
    const Eigen::Index kmax = lam.size();

    out.spectrum = lam;
    const Scalar floor = Scalar(1e-14) * lam(0);
    Eigen::Index r = 0;
    while (r < kmax) {
        Scalar l = lam(r);
        if (!(l > floor) || l <= 0) break;
        if (!keep_all && l < threshold) break;
        if (max_rank && r >= *max_rank) break;
        ++r;
    }
    out.lambdas = lam.head(r);
    Matrix me = eig.eigenvectors * svd.matrixV().leftCols(r);
    Matrix mp = swp.cwiseInverse().asDiagonal() * svd.matrixU().leftCols(r);

    if (left_side) {
        out.left_modes = std::move(me);
        out.right_modes = std::move(mp);
    } else {
        out.left_modes = std::move(mp);
        out.right_modes = std::move(me);
    }
    detail::apply_sign_convention(out.left_modes, out.right_modes);
    return out;
}

} // namespace dott
