#include "dott/mode_tree.hpp"

#include <cmath>
#include <functional>

#include "dott/error.hpp"

namespace dott {

RankProfile ranks(const ModeFamily& root, int d)
{
    RankProfile out(d - 1);
    std::function<void(const ModeFamily&, int)> rec = [&](const ModeFamily& f, int level) {
        out[level].push_back(f.rank());
        for (const auto& c : f.children) rec(c, level + 1);
    };
    rec(root, 0);
    return out;
}

namespace {

// Dense composite of a family over variables level..d-1, one column per mode.
Eigen::MatrixXd composite_columns(const std::vector<Grid>& grids, const ModeFamily& f, int level);

// Dense function carried by a family: sum_k modes_k (x) composite_k.
Eigen::VectorXd family_value(const std::vector<Grid>& grids, const ModeFamily& f, int level)
{
    Eigen::MatrixXd right = composite_columns(grids, f, level + 1);
    Eigen::MatrixXd v = f.modes * right.transpose();
    return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

Eigen::MatrixXd composite_columns(const std::vector<Grid>& grids, const ModeFamily& f, int level)
{
    const int d = static_cast<int>(grids.size());
    if (level == d - 1) return f.finals;
    Eigen::Index n = 1;
    for (int j = level; j < d; ++j) n *= grids[j].size();
    Eigen::MatrixXd out(n, f.rank());
    for (Eigen::Index k = 0; k < f.rank(); ++k) out.col(k) = family_value(grids, f.children[k], level);
    return out;
}

} // namespace

GridTensor reconstruct(const std::vector<Grid>& grids, const ModeFamily& root, std::int64_t cap)
{
    check_element_cap(element_count(grids), cap);
    GridTensor t;
    for (const auto& g : grids) t.dims.push_back(g.size());
    t.values = family_value(grids, root, 0);
    return t;
}

double evaluate_at_node(const std::vector<Grid>& grids, const ModeFamily& root, const std::vector<Eigen::Index>& index)
{
    const int d = static_cast<int>(grids.size());
    if (static_cast<int>(index.size()) != d) throw InvalidArgument("evaluate_at_node: index arity");
    for (int j = 0; j < d; ++j)
        if (index[j] < 0 || index[j] >= grids[j].size()) throw InvalidArgument("evaluate_at_node: index out of range");
    std::function<double(const ModeFamily&, int)> rec = [&](const ModeFamily& f, int level) {
        double s = 0;
        for (Eigen::Index k = 0; k < f.rank(); ++k) {
            double tail = level == d - 2 ? f.finals(index[d - 1], k) : rec(f.children[k], level + 1);
            s += f.modes(index[level], k) * tail;
        }
        return s;
    };
    return rec(root, 0);
}

double l2_inner(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b)
{
    const int d = static_cast<int>(grids.size());
    // Gram of the composites of families fa, fb at `level` (r_a x r_b).
    std::function<Eigen::MatrixXd(const ModeFamily&, const ModeFamily&, int)> gram = [&](const ModeFamily& fa,
                                                                                         const ModeFamily& fb, int level) {
        if (level == d - 2) return Eigen::MatrixXd(fa.finals.transpose() * grids[d - 1].weights.asDiagonal() * fb.finals);
        Eigen::MatrixXd g(fa.rank(), fb.rank());
        for (Eigen::Index i = 0; i < fa.rank(); ++i)
            for (Eigen::Index k = 0; k < fb.rank(); ++k) {
                const ModeFamily &ca = fa.children[i], &cb = fb.children[k];
                Eigen::MatrixXd m = ca.modes.transpose() * grids[level + 1].weights.asDiagonal() * cb.modes;
                g(i, k) = m.cwiseProduct(gram(ca, cb, level + 1)).sum();
            }
        return g;
    };
    Eigen::MatrixXd m = a.modes.transpose() * grids[0].weights.asDiagonal() * b.modes;
    return m.cwiseProduct(gram(a, b, 0)).sum();
}

double l2_norm(const std::vector<Grid>& grids, const ModeFamily& a)
{
    return std::sqrt(std::max(0.0, l2_inner(grids, a, a)));
}

Eigen::Index flat_size(const ModeFamily& f)
{
    Eigen::Index n = f.modes.size() + f.finals.size();
    for (const auto& c : f.children) n += flat_size(c);
    return n;
}

namespace {

void flatten_into(const ModeFamily& f, Eigen::VectorXd& v, Eigen::Index& pos)
{
    v.segment(pos, f.modes.size()) = Eigen::Map<const Eigen::VectorXd>(f.modes.data(), f.modes.size());
    pos += f.modes.size();
    v.segment(pos, f.finals.size()) = Eigen::Map<const Eigen::VectorXd>(f.finals.data(), f.finals.size());
    pos += f.finals.size();
    for (const auto& c : f.children) flatten_into(c, v, pos);
}

void unflatten_from(const Eigen::VectorXd& v, ModeFamily& f, Eigen::Index& pos)
{
    Eigen::Map<Eigen::VectorXd>(f.modes.data(), f.modes.size()) = v.segment(pos, f.modes.size());
    pos += f.modes.size();
    Eigen::Map<Eigen::VectorXd>(f.finals.data(), f.finals.size()) = v.segment(pos, f.finals.size());
    pos += f.finals.size();
    for (auto& c : f.children) unflatten_from(v, c, pos);
}

} // namespace

Eigen::VectorXd flatten(const ModeFamily& f)
{
    Eigen::VectorXd v(flat_size(f));
    Eigen::Index pos = 0;
    flatten_into(f, v, pos);
    return v;
}

void unflatten(const Eigen::VectorXd& v, ModeFamily& shape)
{
    if (v.size() != flat_size(shape)) throw InvalidArgument("unflatten: size mismatch");
    Eigen::Index pos = 0;
    unflatten_from(v, shape, pos);
}

namespace {

void require_tt(const HierarchicalDecomposition& h)
{
    if (!(h.tree == tt_tree(h.dimension()))) throw InvalidArgument("mode tree conversion needs a TT tree");
}

// Walks the TT expansion; `bo` selects where the lambdas go.
ModeFamily convert(const NodeExpansion& e, double amp, bool bo, bool& empty)
{
    ModeFamily f;
    std::vector<Eigen::Index> keep;
    std::vector<ModeFamily> kids;
    for (Eigen::Index k = 0; k < e.rank(); ++k) {
        const double lam = e.lambdas(k);
        if (e.right_children.empty()) {
            keep.push_back(k);
            continue;
        }
        bool child_empty = false;
        ModeFamily c = convert(e.right_children[k], bo ? 1.0 : amp * lam, bo, child_empty);
        if (child_empty) continue;
        keep.push_back(k);
        kids.push_back(std::move(c));
    }
    const Eigen::Index r = static_cast<Eigen::Index>(keep.size());
    empty = r == 0;
    f.modes.resize(e.left_leaf.rows(), r);
    for (Eigen::Index i = 0; i < r; ++i) f.modes.col(i) = e.left_leaf.col(keep[i]) * (bo ? e.lambdas(keep[i]) : 1.0);
    if (e.right_children.empty()) {
        f.finals.resize(e.right_leaf.rows(), r);
        for (Eigen::Index i = 0; i < r; ++i) f.finals.col(i) = e.right_leaf.col(keep[i]) * (bo ? 1.0 : amp * e.lambdas(keep[i]));
    } else {
        f.children = std::move(kids);
    }
    return f;
}

} // namespace

DoTtState do_state_from(const HierarchicalDecomposition& h, double time)
{
    require_tt(h);
    DoTtState s;
    s.grids = h.grids;
    s.time = time;
    bool empty = false;
    s.root = convert(h.root, 1.0, false, empty);
    return s;
}

BoTtState bo_state_from(const HierarchicalDecomposition& h, double time)
{
    require_tt(h);
    BoTtState s;
    s.grids = h.grids;
    s.time = time;
    bool empty = false;
    s.root = convert(h.root, 1.0, true, empty);
    return s;
}

DoTtState rank_one_state(const std::vector<Grid>& grids, const std::vector<Eigen::VectorXd>& factors, double time)
{
    const int d = static_cast<int>(grids.size());
    if (d < 2 || static_cast<int>(factors.size()) != d) throw InvalidArgument("rank_one_state: need one factor per grid");
    double amp = 1;
    std::vector<Eigen::VectorXd> unit(d);
    for (int j = 0; j < d; ++j) {
        if (factors[j].size() != grids[j].size()) throw InvalidArgument("rank_one_state: factor length");
        if (j < d - 1) {
            double nj = norm(grids[j], factors[j]);
            if (nj == 0) throw InvalidArgument("rank_one_state: zero factor");
            unit[j] = factors[j] / nj;
            amp *= nj;
        }
    }
    DoTtState s;
    s.grids = grids;
    s.time = time;
    ModeFamily* f = &s.root;
    for (int j = 0; j < d - 1; ++j) {
        f->modes = unit[j];
        if (j == d - 2) {
            f->finals = factors[d - 1] * amp;
        } else {
            f->children.resize(1);
            f = &f->children[0];
        }
    }
    return s;
}

double orthonormality_defect(const std::vector<Grid>& grids, const ModeFamily& root)
{
    double worst = 0;
    std::function<void(const ModeFamily&, int)> rec = [&](const ModeFamily& f, int level) {
        Eigen::MatrixXd g = f.modes.transpose() * grids[level].weights.asDiagonal() * f.modes;
        g -= Eigen::MatrixXd::Identity(f.rank(), f.rank());
        if (g.size()) worst = std::max(worst, g.cwiseAbs().maxCoeff());
        for (const auto& c : f.children) rec(c, level + 1);
    };
    rec(root, 0);
    return worst;
}

} // namespace dott
