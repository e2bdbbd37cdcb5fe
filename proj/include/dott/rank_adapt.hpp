#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "dott/decomposition.hpp"
#include "dott/mode_tree.hpp"
#include "dott/operator.hpp"
#include "dott/propagator.hpp"

namespace dott {

// Singular values of the level-1 expansion (square roots of the eigenvalues of
// the composite Gram), descending.
Eigen::VectorXd level1_singular_values(const DoTtState& s);

struct RemovalResult {
    DoTtState state;
    int removed = 0;
    double dropped_energy = 0; // squared L2 norm of the dropped branches
};

// While the smallest singular value of the level-1 composite Gram is below
// epsilon, drops the level-1 mode with the least composite energy together
// with its sub-branch. With all_levels every deeper family is pruned the same
// way (never below rank 1).
RemovalResult remove_modes(const DoTtState& s, double epsilon, bool all_levels = false);

// Deterministic candidate directions for a grid: Fourier harmonics
// 1, cos, sin, cos 2x, ... or Legendre polynomials, quadrature-normalized.
Eigen::MatrixXd candidate_basis(const Grid& g);

// Appends count zero-energy sibling pairs to the family addressed by parent
// (mode indices from the root; empty = level 1). New modes come from
// candidate_basis, Gram-Schmidt-ed against the siblings.
DoTtState add_modes_zero_energy(const DoTtState& s, const std::vector<Eigen::Index>& parent, int count);

struct WarmupOptions {
    int steps = 10;           // at least this many finals-only steps
    int max_steps = 100;      // hard stop while the new modes are below lambda_eps
    double lambda_eps = 1e-8; // composite energy (Gram diagonal) the new modes must reach
};

struct WarmupResult {
    DoTtState state;
    int steps = 0;
    double new_mode_energy = 0; // smallest Gram diagonal over the added modes
    double gram_condition = 0;     // of the warmed family
};

// Evolves only the final modes (leaf modes frozen) so the zero-energy modes of
// the family at parent pick up amplitude; first_new is the index of the first
// added mode in that family.
WarmupResult warm_up(const DoTtState& s, const SeparableOperator& G, double dt, const std::vector<Eigen::Index>& parent,
                     Eigen::Index first_new, const WarmupOptions& opt = {});

struct ExplicitStepOptions {
    ThresholdRule rule = ThresholdRule::Amplitude;
    int add_count = 1;                // level-1 rank target above the incoming rank; <= 0 leaves sigma alone
    Eigen::Index rank_cap = 200;      // abort when a core rank exceeds this
    double lossless_tolerance = 1e-14; // TT rounding between stages, relative
};

struct ExplicitStepResult {
    DoTtState state;
    Eigen::Index peak_core_rank = 0;
    double restart_delta = 0; // L2 distance between the lossless TT result and the restarted state
};

// Advances n_steps RK4 steps in tensor-train arithmetic, then re-decomposes
// with threshold sigma and restarts the DO-TT state at the new time.
ExplicitStepResult adapt_by_explicit_step(const DoTtState& s, const SeparableOperator& G, double dt, int n_steps,
                                          double sigma, const ExplicitStepOptions& opt = {});

} // namespace dott
