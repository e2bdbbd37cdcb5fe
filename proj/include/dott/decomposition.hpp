#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "dott/grid.hpp"
#include "dott/grid_tensor.hpp"
#include "dott/tree.hpp"

namespace dott {

// How a node threshold s selects modes. Amplitude keeps lambda >= s;
// KernelEigenvalue keeps lambda^2 >= s. Either way a child reached through
// mode k inherits s / lambda_k.
enum class ThresholdRule { Amplitude, KernelEigenvalue };

const char* to_string(ThresholdRule r);
ThresholdRule threshold_rule_from_string(const std::string& s);
double admission_cutoff(ThresholdRule rule, double node_threshold);

// One instance of an internal tree node: a Schmidt split of the (unit-norm,
// except at the root) function it carries. Each side is either a leaf with a
// block of 1D modes, or one child instance per retained mode.
struct NodeExpansion {
    Eigen::VectorXd lambdas;  // retained, descending
    Eigen::VectorXd spectrum; // every resolved lambda, retained first
    Eigen::MatrixXd left_leaf;
    Eigen::MatrixXd right_leaf;
    std::vector<NodeExpansion> left_children;
    std::vector<NodeExpansion> right_children;

    Eigen::Index rank() const { return lambdas.size(); }
};

// ranks[p][f]: retained count of the f-th instance (lexicographic by parent
// multi-index) of the p-th internal node in preorder. For a TT tree p is the
// level, so ranks[0] = {r1}, ranks[1] = r2, ...
using RankProfile = std::vector<std::vector<Eigen::Index>>;

struct HierarchicalDecomposition {
    DimensionTree tree;
    std::vector<Grid> grids;
    NodeExpansion root;

    RankProfile ranks() const;
    int dimension() const { return tree.dimension(); }
};

struct DecomposeOptions {
    ThresholdRule rule = ThresholdRule::Amplitude;
    bool keep_all = false;
    std::int64_t element_cap = default_element_cap;
};

HierarchicalDecomposition decompose(const GridTensor& u, const DimensionTree& tree, const std::vector<Grid>& grids,
                                    double sigma, const DecomposeOptions& opt = {});

GridTensor reconstruct(const HierarchicalDecomposition& h, std::int64_t cap = default_element_cap);

// Squared L2 truncation error from the stored spectra, for the given ranks.
// Exact when no node has two truncated internal children (any TT tree, HT up
// to 3D); otherwise the cross terms between sibling subtrees are left out.
double truncation_error(const HierarchicalDecomposition& h, const RankProfile& ranks);
// Same, for the ranks h actually retains.
double truncation_error(const HierarchicalDecomposition& h);

// Ranks the thresholding rule selects from stored spectra (keep-all input).
RankProfile threshold_ranks(const HierarchicalDecomposition& h, double sigma, ThresholdRule rule);

// Copy of h restricted to the leading modes given by ranks.
HierarchicalDecomposition truncate(const HierarchicalDecomposition& h, const RankProfile& ranks);

double evaluate_at_node(const HierarchicalDecomposition& h, const std::vector<Eigen::Index>& index);

// Smallest lambda-product over all retained terms (0 when empty).
double min_retained_amplitude(const HierarchicalDecomposition& h);

} // namespace dott
