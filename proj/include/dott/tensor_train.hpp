#pragma once

#include <vector>

#include <Eigen/Core>

#include "dott/decomposition.hpp"
#include "dott/grid.hpp"
#include "dott/grid_tensor.hpp"
#include "dott/mode_tree.hpp"
#include "dott/operator.hpp"

namespace dott {

// Core with entries (a, x, b) at a + r0 * (x + n * b).
struct TtCore {
    Eigen::Index r0 = 1, n = 0, r1 = 1;
    Eigen::VectorXd data;

    TtCore() = default;
    TtCore(Eigen::Index r0_, Eigen::Index n_, Eigen::Index r1_) : r0(r0_), n(n_), r1(r1_), data(Eigen::VectorXd::Zero(r0_ * n_ * r1_)) {}

    double& operator()(Eigen::Index a, Eigen::Index x, Eigen::Index b) { return data(a + r0 * (x + n * b)); }
    double operator()(Eigen::Index a, Eigen::Index x, Eigen::Index b) const { return data(a + r0 * (x + n * b)); }
    Eigen::Map<Eigen::MatrixXd> left() { return {data.data(), r0 * n, r1}; }
    Eigen::Map<const Eigen::MatrixXd> left() const { return {data.data(), r0 * n, r1}; }
    Eigen::Map<Eigen::MatrixXd> right() { return {data.data(), r0, n * r1}; }
    Eigen::Map<const Eigen::MatrixXd> right() const { return {data.data(), r0, n * r1}; }
};

struct TensorTrain {
    std::vector<TtCore> cores;

    int order() const { return static_cast<int>(cores.size()); }
    std::vector<Eigen::Index> ranks() const; // r_0 .. r_d
    Eigen::Index max_rank() const;
};

TensorTrain tt_from_modes(const ModeFamily& root, int d);
TensorTrain tt_rank_one(const std::vector<Eigen::VectorXd>& factors, double scale = 1);
GridTensor to_dense(const TensorTrain& tt, std::int64_t cap = default_element_cap);

TensorTrain tt_add(const TensorTrain& a, const TensorTrain& b);
TensorTrain tt_scale(const TensorTrain& a, double s);
// a + s * b
TensorTrain tt_axpy(const TensorTrain& a, double s, const TensorTrain& b);

// G(u) at time t: one rank-r block per operator term, one rank-1 block per source.
TensorTrain tt_apply(const SeparableOperator& G, const TensorTrain& u, const std::vector<Grid>& grids, double t);

double tt_inner(const TensorTrain& a, const TensorTrain& b, const std::vector<Grid>& grids);
double tt_norm(const TensorTrain& a, const std::vector<Grid>& grids);

// Weighted TT rounding: drops singular values below rel_tol * ||tt|| spread
// over the d-1 bonds. rel_tol near machine precision is lossless.
TensorTrain tt_round(const TensorTrain& tt, const std::vector<Grid>& grids, double rel_tol);

struct TtDecomposeOptions {
    ThresholdRule rule = ThresholdRule::Amplitude;
    bool keep_all = false;
    // optional per-level hard caps/targets on the level-1 rank
    Eigen::Index max_r1 = -1;
    Eigen::Index min_r1 = -1;
};

// Recursive bi-orthogonal decomposition on a TT tree computed from cores:
// weighted right-orthonormalization, then one SVD per node. No dense tensor.
HierarchicalDecomposition decompose_tt(const TensorTrain& tt, const std::vector<Grid>& grids, double sigma,
                                       const TtDecomposeOptions& opt = {});

} // namespace dott
