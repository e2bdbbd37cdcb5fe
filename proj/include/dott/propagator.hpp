#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "dott/mode_tree.hpp"
#include "dott/operator.hpp"

namespace dott {

struct RhsOptions {
    double gram_condition_cap = 1e12;
    double crossing_tolerance = 1e-8;
    // > 0: DO Gram solves use the pseudo-inverse, dropping eigenvalues below
    // this fraction of the largest. Lets a state pass through an instant where
    // the complementary factors become linearly dependent.
    double gram_pinv_tolerance = 0;
    // Warm-up: leaf modes frozen, only the finals move.
    bool freeze_modes = false;
};

struct RhsDiagnostics {
    double max_gram_condition = 0;
};

// C[i][k] = <Psi_i, Psi_k> for the family reached from the root through
// `parent` (level = parent.size() + 1, 1-based), from chained 1D Grams.
Eigen::MatrixXd assemble_gram(const DoTtState& s, const std::vector<Eigen::Index>& parent = {});
Eigen::MatrixXd assemble_gram(const std::vector<Grid>& grids, const ModeFamily& root,
                              const std::vector<Eigen::Index>& parent = {});

// Time derivative of every leaf and final mode, same shape as state.root.
ModeFamily do_rhs(const DoTtState& state, const SeparableOperator& G, const RhsOptions& opt = {},
                  RhsDiagnostics* diag = nullptr);

struct BoRhs {
    ModeFamily derivative;
    // one entry per family, depth first; S(k, i) = <phi_k, d phi_i / dt>
    std::vector<Eigen::MatrixXd> S;
    std::vector<Eigen::VectorXd> Lambda;
};

BoRhs bo_rhs(const BoTtState& state, const SeparableOperator& G, const RhsOptions& opt = {});

using VectorField = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
Eigen::VectorXd rk4_step(const VectorField& f, double t, const Eigen::VectorXd& y, double dt);

DoTtState rk4_step(const DoTtState& s, const SeparableOperator& G, double dt, const RhsOptions& opt = {},
                   RhsDiagnostics* diag = nullptr);
BoTtState rk4_step(const BoTtState& s, const SeparableOperator& G, double dt, const RhsOptions& opt = {});

// BO state with the orthogonal matrices P of every family (depth first)
// integrated alongside: dP/dt = -Lambda^{-1/2} Sigma Lambda^{-1/2} P.
struct BoWithTransform {
    BoTtState state;
    std::vector<Eigen::MatrixXd> P;
};

BoWithTransform with_identity_transform(const BoTtState& s);
BoWithTransform rk4_step(const BoWithTransform& s, const SeparableOperator& G, double dt, const RhsOptions& opt = {});

struct EquivalenceTransform {
    Eigen::MatrixXd P;
    Eigen::VectorXd Lambda;
    Eigen::MatrixXd Sigma;
};

// Level-1 DO modes implied by BO modes and P: psi = phi Lambda^{-1/2} P.
Eigen::MatrixXd do_modes_from_bo(const Grid& grid, const ModeFamily& bo_family, const Eigen::MatrixXd& P);

struct ConversionResult {
    BoTtState state;
    EquivalenceTransform transform; // level-1 family
};

// Rotates every family to diagonal composite Grams. Zero-energy directions are dropped.
ConversionResult do_to_bo(const DoTtState& s);
// psi = phi Lambda^{-1/2} P at level 1 (P = I when empty), deeper families normalized.
DoTtState bo_to_do(const BoTtState& s, const Eigen::MatrixXd& P = {});

struct ReorthReport {
    int families_changed = 0;
    int rank_reductions = 0;
};

// Weighted QR per family with R pushed into the composites; dependent modes are dropped.
DoTtState reorthonormalize(const DoTtState& s, ReorthReport* report = nullptr, double skip_tolerance = 1e-13);

// Gram of the composites below every node of a and b (same level).
Eigen::MatrixXd composite_cross_gram(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b, int level);

} // namespace dott
