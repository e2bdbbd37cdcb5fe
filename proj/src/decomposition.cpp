#include "dott/decomposition.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "dott/error.hpp"
#include "dott/schmidt.hpp"

namespace dott {

const char* to_string(ThresholdRule r)
{
    return r == ThresholdRule::Amplitude ? "amplitude" : "kernel_eigenvalue";
}

ThresholdRule threshold_rule_from_string(const std::string& s)
{
    if (s == "amplitude") return ThresholdRule::Amplitude;
    if (s == "kernel_eigenvalue") return ThresholdRule::KernelEigenvalue;
    throw InvalidArgument("unknown threshold rule '" + s + "'");
}

double admission_cutoff(ThresholdRule rule, double s)
{
    return rule == ThresholdRule::Amplitude ? s : std::sqrt(s);
}

namespace {

std::vector<Grid> grids_of(const std::vector<Grid>& grids, int first, int last)
{
    return std::vector<Grid>(grids.begin() + first, grids.begin() + last + 1);
}

Eigen::Index block_size(const std::vector<Grid>& grids, int first, int last)
{
    Eigen::Index n = 1;
    for (int j = first; j <= last; ++j) n *= grids[j].size();
    return n;
}

struct Decomposer {
    const DimensionTree& tree;
    const std::vector<Grid>& grids;
    const DecomposeOptions& opt;

    NodeExpansion run(const Eigen::VectorXd& values, int id, double s) const
    {
        const auto& nd = tree.node(id);
        const auto& L = tree.node(nd.left);
        const auto& R = tree.node(nd.right);
        const Eigen::Index m = block_size(grids, L.first, L.last);
        const Eigen::Index n = block_size(grids, R.first, R.last);
        MatricizedFunction<double> u(Eigen::Map<const Eigen::MatrixXd>(values.data(), m, n),
                                     grids_of(grids, L.first, L.last), grids_of(grids, R.first, R.last));
        SchmidtPair<double> sp = schmidt_decompose(u, admission_cutoff(opt.rule, s), std::nullopt, opt.keep_all);

        NodeExpansion e;
        e.lambdas = sp.lambdas;
        e.spectrum = sp.spectrum;
        const Eigen::Index r = sp.rank();
        if (L.is_leaf())
            e.left_leaf = sp.left_modes;
        else
            for (Eigen::Index k = 0; k < r; ++k)
                e.left_children.push_back(run(sp.left_modes.col(k), nd.left, s / sp.lambdas(k)));
        if (R.is_leaf())
            e.right_leaf = sp.right_modes;
        else
            for (Eigen::Index k = 0; k < r; ++k)
                e.right_children.push_back(run(sp.right_modes.col(k), nd.right, s / sp.lambdas(k)));
        return e;
    }
};

Eigen::VectorXd rebuild(const HierarchicalDecomposition& h, const NodeExpansion& e, int id)
{
    const auto& nd = h.tree.node(id);
    const auto& L = h.tree.node(nd.left);
    const auto& R = h.tree.node(nd.right);
    const Eigen::Index m = block_size(h.grids, L.first, L.last);
    const Eigen::Index n = block_size(h.grids, R.first, R.last);
    const Eigen::Index r = e.rank();
    Eigen::MatrixXd lm(m, r), rm(n, r);
    for (Eigen::Index k = 0; k < r; ++k) {
        lm.col(k) = L.is_leaf() ? Eigen::VectorXd(e.left_leaf.col(k)) : rebuild(h, e.left_children[k], nd.left);
        rm.col(k) = R.is_leaf() ? Eigen::VectorXd(e.right_leaf.col(k)) : rebuild(h, e.right_children[k], nd.right);
    }
    Eigen::MatrixXd v = lm * e.lambdas.asDiagonal() * rm.transpose();
    return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

std::vector<int> internal_position(const DimensionTree& t)
{
    std::vector<int> pos(t.nodes.size(), -1);
    int p = 0;
    for (int id : t.internal_nodes()) pos[id] = p++;
    return pos;
}

} // namespace

RankProfile HierarchicalDecomposition::ranks() const
{
    auto pos = internal_position(tree);
    RankProfile out(tree.internal_nodes().size());
    std::function<void(const NodeExpansion&, int)> walk = [&](const NodeExpansion& e, int id) {
        out[pos[id]].push_back(e.rank());
        const auto& nd = tree.node(id);
        for (const auto& c : e.left_children) walk(c, nd.left);
        for (const auto& c : e.right_children) walk(c, nd.right);
    };
    walk(root, 0);
    return out;
}

HierarchicalDecomposition decompose(const GridTensor& u, const DimensionTree& tree, const std::vector<Grid>& grids,
                                    double sigma, const DecomposeOptions& opt)
{
    tree.validate();
    if (sigma < 0) throw InvalidArgument("decompose: sigma must be nonnegative");
    if (static_cast<int>(grids.size()) != tree.dimension() || u.order() != tree.dimension())
        throw InvalidArgument("decompose: dimension mismatch");
    for (size_t j = 0; j < grids.size(); ++j)
        if (u.dims[j] != grids[j].size()) throw InvalidArgument("decompose: tensor shape does not match grids");
    check_element_cap(u.size(), opt.element_cap);

    HierarchicalDecomposition h;
    h.tree = tree;
    h.grids = grids;
    h.root = Decomposer{tree, grids, opt}.run(u.values, 0, sigma);
    return h;
}

GridTensor reconstruct(const HierarchicalDecomposition& h, std::int64_t cap)
{
    check_element_cap(element_count(h.grids), cap);
    GridTensor t;
    for (const auto& g : h.grids) t.dims.push_back(g.size());
    t.values = rebuild(h, h.root, 0);
    return t;
}

namespace {

struct RankCursor {
    const RankProfile& ranks;
    std::vector<int> pos;
    std::vector<size_t> next;

    RankCursor(const DimensionTree& t, const RankProfile& r) : ranks(r), pos(internal_position(t)), next(r.size(), 0)
    {
        if (r.size() != t.internal_nodes().size()) throw InvalidArgument("rank profile does not match the tree");
    }
    Eigen::Index take(int id)
    {
        int p = pos[id];
        if (next[p] >= ranks[p].size()) throw InvalidArgument("rank profile has too few entries");
        Eigen::Index r = ranks[p][next[p]++];
        if (r < 0) throw InvalidArgument("negative rank");
        return r;
    }
    void finish() const
    {
        for (size_t p = 0; p < ranks.size(); ++p)
            if (next[p] != ranks[p].size()) throw InvalidArgument("rank profile has too many entries");
    }
};

} // namespace

double truncation_error(const HierarchicalDecomposition& h, const RankProfile& ranks)
{
    RankCursor cur(h.tree, ranks);
    std::function<double(const NodeExpansion&, int, double)> rec = [&](const NodeExpansion& e, int id, double amp2) {
        const Eigen::Index r = cur.take(id);
        if (r > e.spectrum.size()) throw InvalidArgument("truncation_error: ranks exceed available spectra");
        const auto& nd = h.tree.node(id);
        const bool li = !h.tree.node(nd.left).is_leaf(), ri = !h.tree.node(nd.right).is_leaf();
        if ((li || ri) && r > e.rank()) throw InvalidArgument("truncation_error: ranks exceed available spectra");
        double err = amp2 * e.spectrum.tail(e.spectrum.size() - r).squaredNorm();
        for (Eigen::Index k = 0; k < r; ++k) {
            double a = amp2 * e.spectrum(k) * e.spectrum(k);
            if (li) err += rec(e.left_children[k], nd.left, a);
            if (ri) err += rec(e.right_children[k], nd.right, a);
        }
        return err;
    };
    double err = rec(h.root, 0, 1.0);
    cur.finish();
    return err;
}

double truncation_error(const HierarchicalDecomposition& h)
{
    return truncation_error(h, h.ranks());
}

RankProfile threshold_ranks(const HierarchicalDecomposition& h, double sigma, ThresholdRule rule)
{
    auto pos = internal_position(h.tree);
    RankProfile out(pos.empty() ? 0 : h.tree.internal_nodes().size());
    std::function<void(const NodeExpansion&, int, double)> rec = [&](const NodeExpansion& e, int id, double s) {
        const double cut = admission_cutoff(rule, s);
        Eigen::Index r = 0;
        while (r < e.rank() && e.lambdas(r) >= cut) ++r;
        out[pos[id]].push_back(r);
        const auto& nd = h.tree.node(id);
        for (Eigen::Index k = 0; k < r; ++k) {
            if (!e.left_children.empty()) rec(e.left_children[k], nd.left, s / e.lambdas(k));
            if (!e.right_children.empty()) rec(e.right_children[k], nd.right, s / e.lambdas(k));
        }
    };
    rec(h.root, 0, sigma);
    return out;
}

HierarchicalDecomposition truncate(const HierarchicalDecomposition& h, const RankProfile& ranks)
{
    RankCursor cur(h.tree, ranks);
    std::function<NodeExpansion(const NodeExpansion&, int)> rec = [&](const NodeExpansion& e, int id) {
        const Eigen::Index r = cur.take(id);
        if (r > e.rank()) throw InvalidArgument("truncate: rank exceeds retained modes");
        const auto& nd = h.tree.node(id);
        NodeExpansion o;
        o.lambdas = e.lambdas.head(r);
        o.spectrum = e.spectrum;
        if (h.tree.node(nd.left).is_leaf()) o.left_leaf = e.left_leaf.leftCols(r);
        if (h.tree.node(nd.right).is_leaf()) o.right_leaf = e.right_leaf.leftCols(r);
        for (Eigen::Index k = 0; k < r; ++k) {
            if (!h.tree.node(nd.left).is_leaf()) o.left_children.push_back(rec(e.left_children[k], nd.left));
            if (!h.tree.node(nd.right).is_leaf()) o.right_children.push_back(rec(e.right_children[k], nd.right));
        }
        return o;
    };
    HierarchicalDecomposition out;
    out.tree = h.tree;
    out.grids = h.grids;
    out.root = rec(h.root, 0);
    cur.finish();
    return out;
}

double evaluate_at_node(const HierarchicalDecomposition& h, const std::vector<Eigen::Index>& index)
{
    if (static_cast<int>(index.size()) != h.dimension()) throw InvalidArgument("evaluate_at_node: index arity");
    for (size_t j = 0; j < index.size(); ++j)
        if (index[j] < 0 || index[j] >= h.grids[j].size()) throw InvalidArgument("evaluate_at_node: index out of range");
    std::function<double(const NodeExpansion&, int)> rec = [&](const NodeExpansion& e, int id) {
        const auto& nd = h.tree.node(id);
        double s = 0;
        for (Eigen::Index k = 0; k < e.rank(); ++k) {
            const auto& L = h.tree.node(nd.left);
            const auto& R = h.tree.node(nd.right);
            double lv = L.is_leaf() ? e.left_leaf(index[L.first], k) : rec(e.left_children[k], nd.left);
            double rv = R.is_leaf() ? e.right_leaf(index[R.first], k) : rec(e.right_children[k], nd.right);
            s += e.lambdas(k) * lv * rv;
        }
        return s;
    };
    return rec(h.root, 0);
}

double min_retained_amplitude(const HierarchicalDecomposition& h)
{
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    // Only meaningful for trees where each node has at most one internal child.
    std::function<void(const NodeExpansion&, int, double)> rec = [&](const NodeExpansion& e, int id, double a) {
        const auto& nd = h.tree.node(id);
        for (Eigen::Index k = 0; k < e.rank(); ++k) {
            double ak = a * e.lambdas(k);
            bool deeper = false;
            if (!e.left_children.empty()) {
                rec(e.left_children[k], nd.left, ak);
                deeper = true;
            }
            if (!e.right_children.empty()) {
                rec(e.right_children[k], nd.right, ak);
                deeper = true;
            }
            if (!deeper) {
                best = std::min(best, ak);
                any = true;
            }
        }
    };
    rec(h.root, 0, 1.0);
    return any ? best : 0.0;
}

} // namespace dott
