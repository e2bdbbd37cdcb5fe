#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "dott/decomposition.hpp"
#include "dott/grid.hpp"
#include "dott/grid_tensor.hpp"

namespace dott {

// One family of sibling modes at level j of a TT expansion, together with the
// subtree hanging off each mode. On the last leaf level (j = d-1) the subtree
// is a single final mode per sibling, stored as a column of `finals`.
struct ModeFamily {
    Eigen::MatrixXd modes;            // n_j x r
    std::vector<ModeFamily> children; // r entries when j < d-1
    Eigen::MatrixXd finals;           // n_d x r when j = d-1

    Eigen::Index rank() const { return modes.cols(); }
};

// DO-TT: orthonormal sibling modes, lambda-products folded into the finals.
struct DoTtState {
    std::vector<Grid> grids;
    ModeFamily root;
    double time = 0;

    int dimension() const { return static_cast<int>(grids.size()); }
};

// BO-TT: sibling modes carry the eigenvalues, composites are orthonormal.
struct BoTtState {
    std::vector<Grid> grids;
    ModeFamily root;
    double time = 0;

    int dimension() const { return static_cast<int>(grids.size()); }
};

RankProfile ranks(const ModeFamily& root, int d);

// Dense value of sum over paths psi^(1) ... psi^(d-1) final.
GridTensor reconstruct(const std::vector<Grid>& grids, const ModeFamily& root, std::int64_t cap = default_element_cap);
double evaluate_at_node(const std::vector<Grid>& grids, const ModeFamily& root, const std::vector<Eigen::Index>& index);

// L2 inner product of two expansions on the same grids, by chained 1D Grams.
double l2_inner(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b);
double l2_norm(const std::vector<Grid>& grids, const ModeFamily& a);

// Flat copy of every mode and final value, depth-first; same order for unflatten.
Eigen::Index flat_size(const ModeFamily& f);
Eigen::VectorXd flatten(const ModeFamily& f);
void unflatten(const Eigen::VectorXd& v, ModeFamily& shape);

// From a TT-tree decomposition. Zero-rank branches are pruned.
DoTtState do_state_from(const HierarchicalDecomposition& h, double time = 0);
BoTtState bo_state_from(const HierarchicalDecomposition& h, double time = 0);

// Rank-one expansion from per-variable node vectors (first d-1 normalized,
// norm pushed into the final mode).
DoTtState rank_one_state(const std::vector<Grid>& grids, const std::vector<Eigen::VectorXd>& factors, double time = 0);

// Largest |<psi_i, psi_k> - delta_ik| over every sibling family.
double orthonormality_defect(const std::vector<Grid>& grids, const ModeFamily& root);

} // namespace dott
