#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "dott/grid.hpp"

namespace dott {

inline constexpr std::int64_t default_element_cap = 100'000'000;

// Dense values on a tensor-product grid, first variable fastest.
struct GridTensor {
    std::vector<Eigen::Index> dims;
    Eigen::VectorXd values;

    GridTensor() = default;
    explicit GridTensor(std::vector<Eigen::Index> d);

    int order() const { return static_cast<int>(dims.size()); }
    Eigen::Index size() const { return values.size(); }
    Eigen::Index offset(const std::vector<Eigen::Index>& idx) const;
    double operator()(const std::vector<Eigen::Index>& idx) const { return values(offset(idx)); }
};

std::int64_t element_count(const std::vector<Grid>& grids);
void check_element_cap(std::int64_t count, std::int64_t cap);

// Samples f(x) at every grid point; x has one coordinate per grid.
GridTensor sample(const std::vector<Grid>& grids, const std::function<double(const double*)>& f,
                  std::int64_t cap = default_element_cap);

// Outer product of per-variable node vectors.
GridTensor outer(const std::vector<Eigen::VectorXd>& factors, std::int64_t cap = default_element_cap);

// Weighted L2 norm and inner product under the tensor-product quadrature.
double l2_inner(const GridTensor& a, const GridTensor& b, const std::vector<Grid>& grids);
double l2_norm(const GridTensor& a, const std::vector<Grid>& grids);

// Applies a 1D matrix along variable `axis`.
GridTensor apply_along(const GridTensor& t, int axis, const Eigen::MatrixXd& m);
// Pointwise multiplies by a 1D vector along variable `axis`.
GridTensor scale_along(const GridTensor& t, int axis, const Eigen::VectorXd& v);

} // namespace dott
