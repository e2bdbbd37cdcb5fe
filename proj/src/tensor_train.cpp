#include "dott/tensor_train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "dott/error.hpp"
#include "dott/schmidt.hpp"

namespace dott {

std::vector<Eigen::Index> TensorTrain::ranks() const
{
    std::vector<Eigen::Index> r;
    if (cores.empty()) return r;
    r.push_back(cores.front().r0);
    for (const auto& c : cores) r.push_back(c.r1);
    return r;
}

Eigen::Index TensorTrain::max_rank() const
{
    Eigen::Index m = 0;
    for (auto r : ranks()) m = std::max(m, r);
    return m;
}

TensorTrain tt_from_modes(const ModeFamily& root, int d)
{
    if (d < 2) throw InvalidArgument("tt_from_modes: d must be >= 2");
    // collect families per level, depth first
    std::vector<std::vector<const ModeFamily*>> fam(d - 1);
    std::function<void(const ModeFamily&, int)> rec = [&](const ModeFamily& f, int level) {
        fam[level].push_back(&f);
        for (const auto& c : f.children) rec(c, level + 1);
    };
    rec(root, 0);

    TensorTrain tt;
    std::vector<Eigen::Index> R(d - 1, 0);
    for (int j = 0; j < d - 1; ++j)
        for (auto* f : fam[j]) R[j] += f->rank();

    for (int j = 0; j < d - 1; ++j) {
        const Eigen::Index n = fam[j].front()->modes.rows();
        const Eigen::Index r0 = j == 0 ? 1 : R[j - 1];
        TtCore c(r0, n, R[j]);
        Eigen::Index col = 0;
        for (size_t f = 0; f < fam[j].size(); ++f) {
            const ModeFamily& F = *fam[j][f];
            const Eigen::Index a = j == 0 ? 0 : static_cast<Eigen::Index>(f); // parent node index
            for (Eigen::Index k = 0; k < F.rank(); ++k, ++col)
                for (Eigen::Index x = 0; x < n; ++x) c(a, x, col) = F.modes(x, k);
        }
        tt.cores.push_back(std::move(c));
    }
    // last core: finals of the level d-2 families, one row per node
    const Eigen::Index nd = fam[d - 2].front()->finals.rows();
    TtCore last(R[d - 2], nd, 1);
    Eigen::Index node = 0;
    for (auto* F : fam[d - 2])
        for (Eigen::Index k = 0; k < F->rank(); ++k, ++node)
            for (Eigen::Index x = 0; x < nd; ++x) last(node, x, 0) = F->finals(x, k);
    tt.cores.push_back(std::move(last));
    return tt;
}

TensorTrain tt_rank_one(const std::vector<Eigen::VectorXd>& factors, double scale)
{
    TensorTrain tt;
    for (size_t j = 0; j < factors.size(); ++j) {
        TtCore c(1, factors[j].size(), 1);
        c.data = factors[j] * (j == 0 ? scale : 1.0);
        tt.cores.push_back(std::move(c));
    }
    return tt;
}

GridTensor to_dense(const TensorTrain& tt, std::int64_t cap)
{
    std::vector<Eigen::Index> dims;
    std::int64_t count = 1;
    for (const auto& c : tt.cores) {
        dims.push_back(c.n);
        count *= c.n;
    }
    check_element_cap(count, cap);
    // running matrix: (prod n so far) x r
    Eigen::MatrixXd acc = tt.cores[0].left(); // (1*n0) x r1
    for (int j = 1; j < tt.order(); ++j) {
        const TtCore& c = tt.cores[j];
        Eigen::MatrixXd next(acc.rows() * c.n, c.r1);
        for (Eigen::Index x = 0; x < c.n; ++x) {
            Eigen::MatrixXd slice(c.r0, c.r1);
            for (Eigen::Index b = 0; b < c.r1; ++b)
                for (Eigen::Index a = 0; a < c.r0; ++a) slice(a, b) = c(a, x, b);
            next.middleRows(x * acc.rows(), acc.rows()) = acc * slice;
        }
        acc = std::move(next);
    }
    GridTensor t;
    t.dims = dims;
    t.values = acc.col(0);
    return t;
}

namespace {

void check_compatible(const TensorTrain& a, const TensorTrain& b)
{
    if (a.order() != b.order()) throw InvalidArgument("tensor trains of different order");
    for (int j = 0; j < a.order(); ++j)
        if (a.cores[j].n != b.cores[j].n) throw InvalidArgument("tensor trains on different grids");
}

} // namespace

TensorTrain tt_add(const TensorTrain& a, const TensorTrain& b)
{
    if (a.cores.empty()) return b;
    if (b.cores.empty()) return a;
    check_compatible(a, b);
    const int d = a.order();
    TensorTrain out;
    for (int j = 0; j < d; ++j) {
        const TtCore &A = a.cores[j], &B = b.cores[j];
        const bool first = j == 0, last = j == d - 1;
        TtCore c(first ? 1 : A.r0 + B.r0, A.n, last ? 1 : A.r1 + B.r1);
        const Eigen::Index ao = 0, bo = first ? 0 : A.r0;
        const Eigen::Index ai = 0, bi = last ? 0 : A.r1;
        for (Eigen::Index x = 0; x < A.n; ++x) {
            for (Eigen::Index q = 0; q < A.r1; ++q)
                for (Eigen::Index p = 0; p < A.r0; ++p) c(ao + p, x, ai + q) += A(p, x, q);
            for (Eigen::Index q = 0; q < B.r1; ++q)
                for (Eigen::Index p = 0; p < B.r0; ++p) c(bo + p, x, bi + q) += B(p, x, q);
        }
        out.cores.push_back(std::move(c));
    }
    return out;
}

TensorTrain tt_scale(const TensorTrain& a, double s)
{
    TensorTrain out = a;
    if (!out.cores.empty()) out.cores[0].data *= s;
    return out;
}

TensorTrain tt_axpy(const TensorTrain& a, double s, const TensorTrain& b)
{
    return tt_add(a, tt_scale(b, s));
}

namespace {

// Applies a 1D action along the physical index of a core.
TtCore apply_core(const FactorAction& act, const TtCore& c, const Grid& g)
{
    if (act.is_identity()) return c;
    TtCore out(c.r0, c.n, c.r1);
    for (Eigen::Index b = 0; b < c.r1; ++b) {
        Eigen::Map<const Eigen::MatrixXd> src(c.data.data() + b * c.r0 * c.n, c.r0, c.n);
        Eigen::Map<Eigen::MatrixXd> dst(out.data.data() + b * c.r0 * c.n, c.r0, c.n);
        Eigen::MatrixXd s = src.transpose(); // n x r0
        dst = apply_factor(act, s, g).transpose();
    }
    return out;
}

} // namespace

TensorTrain tt_apply(const SeparableOperator& G, const TensorTrain& u, const std::vector<Grid>& grids, double t)
{
    G.validate();
    if (u.order() != G.dimension || static_cast<int>(grids.size()) != G.dimension)
        throw InvalidArgument("tt_apply: dimension mismatch");
    TensorTrain out;
    for (const auto& term : G.terms) {
        TensorTrain v;
        for (int j = 0; j < G.dimension; ++j) v.cores.push_back(apply_core(term.factors[j], u.cores[j], grids[j]));
        out = tt_add(out, tt_scale(v, term.coefficient_at(t)));
    }
    for (const auto& s : G.sources) {
        std::vector<Eigen::VectorXd> f;
        for (int j = 0; j < G.dimension; ++j) f.push_back(s.factors[j].at(grids[j]));
        out = tt_add(out, tt_rank_one(f, s.coefficient_at(t)));
    }
    if (out.cores.empty()) {
        std::vector<Eigen::VectorXd> z;
        for (int j = 0; j < G.dimension; ++j) z.push_back(Eigen::VectorXd::Zero(grids[j].size()));
        out = tt_rank_one(z);
    }
    return out;
}

double tt_inner(const TensorTrain& a, const TensorTrain& b, const std::vector<Grid>& grids)
{
    check_compatible(a, b);
    Eigen::MatrixXd m = Eigen::MatrixXd::Ones(1, 1); // r_a x r_b
    for (int j = 0; j < a.order(); ++j) {
        const TtCore &A = a.cores[j], &B = b.cores[j];
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(A.r1, B.r1);
        for (Eigen::Index x = 0; x < A.n; ++x) {
            Eigen::MatrixXd sa(A.r0, A.r1), sb(B.r0, B.r1);
            for (Eigen::Index q = 0; q < A.r1; ++q)
                for (Eigen::Index p = 0; p < A.r0; ++p) sa(p, q) = A(p, x, q);
            for (Eigen::Index q = 0; q < B.r1; ++q)
                for (Eigen::Index p = 0; p < B.r0; ++p) sb(p, q) = B(p, x, q);
            next += grids[j].weights(x) * sa.transpose() * m * sb;
        }
        m = std::move(next);
    }
    return m(0, 0);
}

double tt_norm(const TensorTrain& a, const std::vector<Grid>& grids)
{
    return std::sqrt(std::max(0.0, tt_inner(a, a, grids)));
}

namespace {

void scale_physical(TtCore& c, const Eigen::VectorXd& s)
{
    for (Eigen::Index b = 0; b < c.r1; ++b)
        for (Eigen::Index x = 0; x < c.n; ++x)
            for (Eigen::Index a = 0; a < c.r0; ++a) c(a, x, b) *= s(x);
}

TensorTrain weighted(const TensorTrain& tt, const std::vector<Grid>& grids, bool forward)
{
    TensorTrain out = tt;
    for (int j = 0; j < tt.order(); ++j) {
        Eigen::VectorXd s = grids[j].weights.array().sqrt();
        if (!forward) s = s.cwiseInverse();
        scale_physical(out.cores[j], s);
    }
    return out;
}

// Right-orthonormalizes cores 1..d-1 (Euclidean) by LQ sweeps; core 0 absorbs the rest.
void right_orthonormalize(TensorTrain& tt)
{
    for (int j = tt.order() - 1; j >= 1; --j) {
        TtCore& c = tt.cores[j];
        Eigen::MatrixXd Rt = c.right().transpose(); // (n r1) x r0
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(Rt);
        const Eigen::Index k = std::min(Rt.rows(), Rt.cols());
        Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(Rt.rows(), k);
        Eigen::MatrixXd R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>(); // k x r0
        TtCore nc(k, c.n, c.r1);
        nc.right() = Q.transpose();
        c = std::move(nc);
        TtCore& p = tt.cores[j - 1];
        TtCore np(p.r0, p.n, k);
        np.left() = p.left() * R.transpose();
        p = std::move(np);
    }
}

} // namespace

TensorTrain tt_round(const TensorTrain& tt, const std::vector<Grid>& grids, double rel_tol)
{
    const int d = tt.order();
    TensorTrain w = weighted(tt, grids, true);
    right_orthonormalize(w);
    const double nrm = w.cores[0].data.norm();
    const double delta = d > 1 ? rel_tol * nrm / std::sqrt(double(d - 1)) : 0;
    for (int j = 0; j < d - 1; ++j) {
        TtCore& c = w.cores[j];
        Eigen::BDCSVD<Eigen::MatrixXd> svd(c.left(), Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& s = svd.singularValues();
        Eigen::Index r = s.size();
        double tail = 0;
        while (r > 1 && tail + s(r - 1) * s(r - 1) <= delta * delta) {
            tail += s(r - 1) * s(r - 1);
            --r;
        }
        TtCore nc(c.r0, c.n, r);
        nc.left() = svd.matrixU().leftCols(r);
        Eigen::MatrixXd carry = s.head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose(); // r x r1
        c = std::move(nc);
        TtCore& nx = w.cores[j + 1];
        TtCore nn(r, nx.n, nx.r1);
        nn.right() = carry * nx.right();
        nx = std::move(nn);
    }
    return weighted(w, grids, false);
}

HierarchicalDecomposition decompose_tt(const TensorTrain& tt, const std::vector<Grid>& grids, double sigma,
                                       const TtDecomposeOptions& opt)
{
    const int d = tt.order();
    if (d < 2 || static_cast<int>(grids.size()) != d) throw InvalidArgument("decompose_tt: dimension mismatch");
    if (sigma < 0) throw InvalidArgument("decompose_tt: sigma must be nonnegative");
    for (int j = 0; j < d; ++j)
        if (tt.cores[j].n != grids[j].size()) throw InvalidArgument("decompose_tt: core size does not match grid");

    TensorTrain w = weighted(tt, grids, true);
    right_orthonormalize(w);
    std::vector<Eigen::VectorXd> isw(d);
    for (int j = 0; j < d; ++j) isw[j] = grids[j].weights.array().sqrt().inverse();

    // B: n_j x r_j, the first core of the sub-train starting at level j
    std::function<NodeExpansion(const Eigen::MatrixXd&, int, double)> rec = [&](const Eigen::MatrixXd& B, int j,
                                                                                 double s) {
        NodeExpansion e;
        Eigen::BDCSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& lam = svd.singularValues();
        e.spectrum = lam;
        const double cut = admission_cutoff(opt.rule, s);
        const double floor = lam.size() ? 1e-14 * lam(0) : 0;
        Eigen::Index r = 0;
        while (r < lam.size() && lam(r) > floor && lam(r) > 0) {
            bool admit = opt.keep_all || lam(r) >= cut;
            if (j == 0 && opt.min_r1 >= 0 && r < opt.min_r1) admit = true;
            if (j == 0 && opt.max_r1 >= 0 && r >= opt.max_r1) admit = false;
            if (!admit) break;
            ++r;
        }
        e.lambdas = lam.head(r);
        Eigen::MatrixXd U = svd.matrixU().leftCols(r);
        Eigen::MatrixXd V = svd.matrixV().leftCols(r); // r_j x r
        const TtCore& next = w.cores[j + 1];
        if (j == d - 2) {
            Eigen::MatrixXd right = (V.transpose() * next.right()).transpose(); // n_d x r (r1 = 1)
            e.left_leaf = isw[j].asDiagonal() * U;
            e.right_leaf = isw[j + 1].asDiagonal() * right;
        } else {
            e.left_leaf = isw[j].asDiagonal() * U;
        }
        // sign convention on the leaf modes, compensated on the right side
        Eigen::VectorXd sign = Eigen::VectorXd::Ones(r);
        for (Eigen::Index k = 0; k < r; ++k) {
            Eigen::Index imax = 0;
            e.left_leaf.col(k).cwiseAbs().maxCoeff(&imax);
            if (e.left_leaf(imax, k) < 0) sign(k) = -1;
        }
        e.left_leaf = e.left_leaf * sign.asDiagonal();
        if (j == d - 2) {
            e.right_leaf = e.right_leaf * sign.asDiagonal();
        } else {
            for (Eigen::Index k = 0; k < r; ++k) {
                // child first core: sum_a V(a,k) next(a, :, :)
                Eigen::MatrixXd Bk(next.n, next.r1);
                Eigen::RowVectorXd v = sign(k) * V.col(k).transpose();
                Eigen::MatrixXd row = v * next.right(); // 1 x (n r1)
                for (Eigen::Index b = 0; b < next.r1; ++b)
                    for (Eigen::Index x = 0; x < next.n; ++x) Bk(x, b) = row(0, x + next.n * b);
                e.right_children.push_back(rec(Bk, j + 1, s / e.lambdas(k)));
            }
        }
        return e;
    };

    const TtCore& c0 = w.cores[0];
    Eigen::MatrixXd B0(c0.n, c0.r1);
    for (Eigen::Index b = 0; b < c0.r1; ++b)
        for (Eigen::Index x = 0; x < c0.n; ++x) B0(x, b) = c0(0, x, b);

    HierarchicalDecomposition h;
    h.tree = tt_tree(d);
    h.grids = grids;
    h.root = rec(B0, 0, sigma);
    return h;
}

} // namespace dott
