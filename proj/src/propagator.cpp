#include "dott/propagator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "dott/error.hpp"

namespace dott {

namespace {

Eigen::MatrixXd wgram(const Eigen::VectorXd& w, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
    return a.transpose() * w.asDiagonal() * b;
}

bool is_last(const ModeFamily& f) { return f.children.empty(); }

void collect(const ModeFamily& f, std::vector<const ModeFamily*>& out)
{
    out.push_back(&f);
    for (const auto& c : f.children) collect(c, out);
}

void collect(ModeFamily& f, std::vector<ModeFamily*>& out)
{
    out.push_back(&f);
    for (auto& c : f.children) collect(c, out);
}

void check_shape(const std::vector<Grid>& grids, const ModeFamily& f, int j)
{
    const int d = static_cast<int>(grids.size());
    if (f.rank() == 0) throw InvalidArgument("rank-0 state");
    if (f.modes.rows() != grids[j].size()) throw InvalidArgument("mode length does not match grid");
    if (j == d - 2) {
        if (!f.children.empty() || f.finals.rows() != grids[d - 1].size() || f.finals.cols() != f.rank())
            throw InvalidArgument("malformed last family");
        return;
    }
    if (static_cast<Eigen::Index>(f.children.size()) != f.rank() || f.finals.size() != 0)
        throw InvalidArgument("malformed family: one child per mode expected");
    for (const auto& c : f.children) check_shape(grids, c, j + 1);
}

} // namespace

Eigen::MatrixXd composite_cross_gram(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b, int level)
{
    const int d = static_cast<int>(grids.size());
    if (level == d - 2) return wgram(grids[d - 1].weights, a.finals, b.finals);
    Eigen::MatrixXd out(a.rank(), b.rank());
    const Eigen::VectorXd& w = grids[level + 1].weights;
    for (Eigen::Index p = 0; p < a.rank(); ++p)
        for (Eigen::Index q = 0; q < b.rank(); ++q) {
            const ModeFamily &A = a.children[p], &B = b.children[q];
            out(p, q) = wgram(w, A.modes, B.modes).cwiseProduct(composite_cross_gram(grids, A, B, level + 1)).sum();
        }
    return out;
}

Eigen::MatrixXd assemble_gram(const std::vector<Grid>& grids, const ModeFamily& root, const std::vector<Eigen::Index>& parent)
{
    const int d = static_cast<int>(grids.size());
    if (static_cast<int>(parent.size()) > d - 2) throw InvalidArgument("assemble_gram: level out of range");
    const ModeFamily* f = &root;
    for (auto i : parent) {
        if (i < 0 || i >= static_cast<Eigen::Index>(f->children.size()))
            throw InvalidArgument("assemble_gram: parent index out of range");
        f = &f->children[i];
    }
    return composite_cross_gram(grids, *f, *f, static_cast<int>(parent.size()));
}

Eigen::MatrixXd assemble_gram(const DoTtState& s, const std::vector<Eigen::Index>& parent)
{
    return assemble_gram(s.grids, s.root, parent);
}

namespace {

enum class Flavor { DO, BO };

// All families of one level side by side: node c of the level is column c of P.
struct Level {
    std::vector<const ModeFamily*> fam;
    std::vector<ModeFamily*> out;
    std::vector<Eigen::Index> off;
    std::vector<Eigen::Index> owner;
    Eigen::MatrixXd P;
};

Eigen::MatrixXd lift(const Eigen::MatrixXd& c, const std::vector<Eigen::Index>& owner)
{
    const Eigen::Index R = static_cast<Eigen::Index>(owner.size());
    Eigen::MatrixXd out(R, R);
    for (Eigen::Index k = 0; k < R; ++k)
        for (Eigen::Index i = 0; i < R; ++i) out(i, k) = c(owner[i], owner[k]);
    return out;
}

Eigen::VectorXd lift(const Eigen::VectorXd& e, const std::vector<Eigen::Index>& owner)
{
    Eigen::VectorXd out(owner.size());
    for (size_t i = 0; i < owner.size(); ++i) out(i) = e(owner[i]);
    return out;
}

// Sums H over the (family a, family b) blocks of a level.
Eigen::MatrixXd block_sum(const Eigen::MatrixXd& H, const Level& L)
{
    const Eigen::Index F = static_cast<Eigen::Index>(L.fam.size());
    Eigen::MatrixXd out(F, F);
    for (Eigen::Index b = 0; b < F; ++b)
        for (Eigen::Index a = 0; a < F; ++a)
            out(a, b) = H.block(L.off[a], L.off[b], L.off[a + 1] - L.off[a], L.off[b + 1] - L.off[b]).sum();
    return out;
}

Eigen::VectorXd segment_sum(const Eigen::VectorXd& v, const Level& L)
{
    Eigen::VectorXd out(L.fam.size());
    for (size_t a = 0; a < L.fam.size(); ++a) out(a) = v.segment(L.off[a], L.off[a + 1] - L.off[a]).sum();
    return out;
}

struct Engine {
    const std::vector<Grid>& grids;
    const SeparableOperator& G;
    const RhsOptions& opt;
    Flavor flavor;
    double t;
    int d;
    int T; // operator terms; index T is the identity term
    std::vector<Level> L;
    Eigen::MatrixXd F;
    std::vector<std::vector<FactorAction>> acts;
    std::vector<std::vector<int>> aidx;
    std::vector<std::vector<Eigen::MatrixXd>> AP, W;
    std::vector<Eigen::MatrixXd> AF;
    std::vector<std::map<std::string, Eigen::MatrixXd>> memo;
    std::vector<std::vector<Eigen::VectorXd>> fsrc; // per source, per variable
    std::vector<std::vector<Eigen::VectorXd>> hsrc; // per source, per level
    ModeFamily result;
    std::vector<Eigen::MatrixXd> S;
    std::vector<Eigen::VectorXd> Lam;
    double max_cond = 0;

    Engine(const std::vector<Grid>& g, const ModeFamily& root, const SeparableOperator& op, const RhsOptions& o, Flavor fl,
           double time)
        : grids(g), G(op), opt(o), flavor(fl), t(time), d(static_cast<int>(g.size()))
    {
        if (d < 2) throw InvalidArgument("propagator needs d >= 2");
        G.validate();
        if (G.dimension != d) throw InvalidArgument("operator dimension does not match state");
        check_shape(grids, root, 0);
        result = root;
        build_levels(root);
        build_actions();
        build_sources();
    }

    void build_levels(const ModeFamily& root)
    {
        L.resize(d - 1);
        L[0].fam = {&root};
        L[0].out = {&result};
        for (int j = 0; j < d - 1; ++j) {
            Level& l = L[j];
            l.off = {0};
            for (size_t f = 0; f < l.fam.size(); ++f) {
                l.off.push_back(l.off.back() + l.fam[f]->rank());
                for (Eigen::Index k = 0; k < l.fam[f]->rank(); ++k) l.owner.push_back(static_cast<Eigen::Index>(f));
            }
            l.P.resize(grids[j].size(), l.off.back());
            for (size_t f = 0; f < l.fam.size(); ++f) l.P.middleCols(l.off[f], l.fam[f]->rank()) = l.fam[f]->modes;
            if (j + 1 < d - 1) {
                for (size_t f = 0; f < l.fam.size(); ++f)
                    for (Eigen::Index k = 0; k < l.fam[f]->rank(); ++k) {
                        L[j + 1].fam.push_back(&l.fam[f]->children[k]);
                        L[j + 1].out.push_back(&l.out[f]->children[k]);
                    }
            } else {
                F.resize(grids[d - 1].size(), l.off.back());
                for (size_t f = 0; f < l.fam.size(); ++f) F.middleCols(l.off[f], l.fam[f]->rank()) = l.fam[f]->finals;
            }
        }
    }

    void build_actions()
    {
        T = static_cast<int>(G.terms.size());
        acts.assign(d, {FactorAction::identity()});
        aidx.assign(T + 1, std::vector<int>(d, 0));
        for (int i = 0; i < T; ++i)
            for (int v = 0; v < d; ++v) {
                const FactorAction& a = G.terms[i].factors[v];
                auto it = std::find(acts[v].begin(), acts[v].end(), a);
                aidx[i][v] = static_cast<int>(it - acts[v].begin());
                if (it == acts[v].end()) acts[v].push_back(a);
            }
        AP.resize(d - 1);
        W.resize(d - 1);
        for (int j = 0; j < d - 1; ++j)
            for (const auto& a : acts[j]) {
                AP[j].push_back(a.is_identity() ? L[j].P : apply_factor(a, L[j].P, grids[j]));
                // DO siblings are orthonormal by definition; drift in the quadrature Gram is not fed back
                if (a.is_identity() && flavor == Flavor::DO)
                    W[j].push_back(sibling_identity(L[j], grids[j].weights));
                else
                    W[j].push_back(wgram(grids[j].weights, L[j].P, AP[j].back()));
            }
        for (const auto& a : acts[d - 1]) AF.push_back(a.is_identity() ? F : apply_factor(a, F, grids[d - 1]));
        memo.resize(d - 1);
    }

    // Quadrature Gram with the sibling blocks replaced by the identity.
    Eigen::MatrixXd sibling_identity(const Level& l, const Eigen::VectorXd& w) const
    {
        Eigen::MatrixXd I = wgram(w, l.P, l.P);
        for (size_t f = 0; f < l.fam.size(); ++f)
            I.block(l.off[f], l.off[f], l.off[f + 1] - l.off[f], l.off[f + 1] - l.off[f]).setIdentity();
        return I;
    }

    void build_sources()
    {
        for (const auto& s : G.sources) {
            std::vector<Eigen::VectorXd> f;
            for (int v = 0; v < d; ++v) f.push_back(s.factors[v].at(grids[v]));
            std::vector<Eigen::VectorXd> h(d - 1);
            h[d - 2] = F.transpose() * grids[d - 1].weights.asDiagonal() * f[d - 1];
            for (int j = d - 3; j >= 0; --j) {
                Eigen::VectorXd proj = L[j + 1].P.transpose() * grids[j + 1].weights.asDiagonal() * f[j + 1];
                h[j] = segment_sum(proj.cwiseProduct(h[j + 1]), L[j + 1]);
            }
            fsrc.push_back(std::move(f));
            hsrc.push_back(std::move(h));
        }
    }

    // g(c', c) = <A_{j+1..d} Psi_c', Psi_c> for the composites under level-j nodes.
    const Eigen::MatrixXd& suffix(int j, int term)
    {
        std::string key;
        for (int v = j + 1; v < d; ++v) key += std::to_string(aidx[term][v]) + ",";
        auto it = memo[j].find(key);
        if (it != memo[j].end()) return it->second;
        Eigen::MatrixXd val;
        if (j == d - 2) {
            val = wgram(grids[d - 1].weights, AF[aidx[term][d - 1]], F);
        } else {
            Eigen::MatrixXd H = W[j + 1][aidx[term][j + 1]].transpose().cwiseProduct(suffix(j + 1, term));
            val = block_sum(H, L[j + 1]);
        }
        return memo[j].emplace(key, std::move(val)).first->second;
    }

    double coefficient(int term) const { return term == T ? 0.0 : G.terms[term].coefficient_at(t); }

    Eigen::MatrixXd solve_gram(const Eigen::MatrixXd& C, const Eigen::MatrixXd& M)
    {
        const Eigen::Index r = C.rows();
        if (opt.gram_pinv_tolerance > 0) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
            if (es.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "Gram eigensolve failed");
            const double top = es.eigenvalues()(r - 1);
            if (!(top > 0)) throw NumericError(NumericErrorKind::SingularGram, "Gram matrix is zero");
            Eigen::VectorXd inv = Eigen::VectorXd::Zero(r);
            double low = top;
            for (Eigen::Index i = 0; i < r; ++i)
                if (es.eigenvalues()(i) > opt.gram_pinv_tolerance * top) {
                    inv(i) = 1 / es.eigenvalues()(i);
                    low = std::min(low, es.eigenvalues()(i));
                }
            max_cond = std::max(max_cond, top / low);
            const Eigen::MatrixXd& V = es.eigenvectors();
            return ((M * V) * inv.asDiagonal()) * V.transpose();
        }
        Eigen::MatrixXd A = C;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "Gram eigensolve failed");
        if (es.eigenvalues()(0) <= 0) {
            A.diagonal().array() += 1e-14 * A.trace() / double(r);
            es.compute(A, Eigen::EigenvaluesOnly);
            if (es.eigenvalues()(0) <= 0) throw NumericError(NumericErrorKind::SingularGram, "Gram matrix is singular");
        }
        const double cond = es.eigenvalues()(r - 1) / es.eigenvalues()(0);
        max_cond = std::max(max_cond, cond);
        if (!(cond <= opt.gram_condition_cap))
            throw NumericError(NumericErrorKind::SingularGram,
                               "Gram condition number " + std::to_string(cond) + " exceeds the cap; adapt the rank");
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() != Eigen::Success) throw NumericError(NumericErrorKind::SingularGram, "Gram factorization failed");
        return llt.solve(M.transpose()).transpose();
    }

    void run()
    {
        std::vector<Eigen::MatrixXd> coef(T + 1, Eigen::MatrixXd::Zero(1, 1));
        for (int i = 0; i < T; ++i) coef[i](0, 0) = coefficient(i);
        std::vector<Eigen::VectorXd> e;
        for (const auto& s : G.sources) e.push_back(Eigen::VectorXd::Constant(1, s.coefficient_at(t)));

        // BO S and Lambda are reported depth first; levels visit families breadth first
        std::map<const ModeFamily*, size_t> dfs;
        if (flavor == Flavor::BO) {
            std::vector<const ModeFamily*> order;
            collect(*L[0].fam[0], order);
            for (size_t i = 0; i < order.size(); ++i) dfs[order[i]] = i;
            S.resize(order.size());
            Lam.resize(order.size());
        }

        for (int j = 0; j < d - 1; ++j) {
            Level& l = L[j];
            const Eigen::VectorXd& w = grids[j].weights;
            const Eigen::Index R = l.P.cols();
            Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(l.P.rows(), R);
            for (int i = 0; i <= T; ++i) {
                if (coef[i].cwiseAbs().maxCoeff() == 0) continue;
                Q += AP[j][aidx[i][j]] * lift(Eigen::MatrixXd(coef[i].transpose()), l.owner).cwiseProduct(suffix(j, i));
            }
            for (size_t s = 0; s < e.size(); ++s)
                Q += fsrc[s][j] * lift(e[s], l.owner).cwiseProduct(hsrc[s][j]).transpose();

            Eigen::VectorXd inv_lam = Eigen::VectorXd::Ones(R);
            Eigen::MatrixXd id_extra = Eigen::MatrixXd::Zero(R, R);
            for (size_t f = 0; f < l.fam.size(); ++f) {
                const Eigen::Index o = l.off[f], r = l.fam[f]->rank();
                const auto psi = l.P.middleCols(o, r);
                const Eigen::MatrixXd Qf = Q.middleCols(o, r);
                if (flavor == Flavor::DO) {
                    if (opt.freeze_modes) {
                        l.out[f]->modes.setZero();
                        continue;
                    }
                    // W-orthogonal projector onto the family span; with mode drift the
                    // plain psi psi^T W would leak psi back in and amplify the drift
                    const Eigen::MatrixXd Gp = wgram(w, psi, psi);
                    Eigen::MatrixXd M = Qf - psi * Gp.llt().solve(wgram(w, psi, Qf));
                    Eigen::MatrixXd C = suffix(j, T).block(o, o, r, r);
                    l.out[f]->modes = solve_gram(C, M);
                } else {
                    Eigen::VectorXd lam = W[j][0].diagonal().segment(o, r);
                    for (Eigen::Index k = 0; k < r; ++k)
                        if (!(lam(k) > 0)) throw NumericError(NumericErrorKind::SingularGram, "singular Lambda");
                    Eigen::MatrixXd Gm = wgram(w, Qf, psi); // Gm(i,k) = <p_i, phi_k>
                    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(r, r);
                    for (Eigen::Index k = 0; k < r; ++k)
                        for (Eigen::Index i = 0; i < r; ++i) {
                            if (i == k) continue;
                            const double gap = lam(i) - lam(k);
                            if (std::abs(gap) < opt.crossing_tolerance * std::max(lam(i), lam(k)))
                                throw NumericError(NumericErrorKind::EigenvalueCrossing,
                                                   "eigenvalue crossing at level " + std::to_string(j + 1));
                            Z(i, k) = (Gm(i, k) + Gm(k, i)) / gap;
                        }
                    Eigen::MatrixXd dphi = Qf - psi * Z;
                    Eigen::MatrixXd Sp = wgram(w, dphi, psi); // Sp(i,k) = <dphi_i, phi_k>
                    l.out[f]->modes = dphi;
                    const size_t idx = dfs.at(l.fam[f]);
                    S[idx] = Sp.transpose();
                    Lam[idx] = lam;
                    inv_lam.segment(o, r) = lam.cwiseInverse();
                    for (Eigen::Index k = 0; k < r; ++k)
                        for (Eigen::Index i = 0; i < r; ++i) id_extra(o + k, o + i) = -Sp(i, k) / lam(k);
                }
            }

            for (int i = 0; i <= T; ++i) {
                Eigen::MatrixXd next = lift(coef[i], l.owner).cwiseProduct(W[j][aidx[i][j]]);
                if (flavor == Flavor::BO) {
                    next = inv_lam.asDiagonal() * next;
                    if (i == T) next += id_extra;
                }
                coef[i] = std::move(next);
            }
            for (size_t s = 0; s < e.size(); ++s) {
                Eigen::VectorXd proj = l.P.transpose() * w.asDiagonal() * fsrc[s][j];
                e[s] = lift(e[s], l.owner).cwiseProduct(proj).cwiseProduct(inv_lam);
            }
        }

        Eigen::MatrixXd dF = Eigen::MatrixXd::Zero(F.rows(), F.cols());
        for (int i = 0; i <= T; ++i) {
            if (coef[i].cwiseAbs().maxCoeff() == 0) continue;
            dF += AF[aidx[i][d - 1]] * coef[i].transpose();
        }
        for (size_t s = 0; s < e.size(); ++s) dF += fsrc[s][d - 1] * e[s].transpose();
        const Level& last = L[d - 2];
        for (size_t f = 0; f < last.fam.size(); ++f)
            last.out[f]->finals = dF.middleCols(last.off[f], last.fam[f]->rank());
    }
};

} // namespace

ModeFamily do_rhs(const DoTtState& state, const SeparableOperator& G, const RhsOptions& opt, RhsDiagnostics* diag)
{
    Engine e(state.grids, state.root, G, opt, Flavor::DO, state.time);
    e.run();
    if (diag) diag->max_gram_condition = std::max(diag->max_gram_condition, e.max_cond);
    return std::move(e.result);
}

BoRhs bo_rhs(const BoTtState& state, const SeparableOperator& G, const RhsOptions& opt)
{
    Engine e(state.grids, state.root, G, opt, Flavor::BO, state.time);
    e.run();
    return {std::move(e.result), std::move(e.S), std::move(e.Lam)};
}

Eigen::VectorXd rk4_step(const VectorField& f, double t, const Eigen::VectorXd& y, double dt)
{
    if (!(dt > 0)) throw InvalidArgument("rk4_step: dt must be positive");
    Eigen::VectorXd k1 = f(t, y);
    Eigen::VectorXd k2 = f(t + dt / 2, y + dt / 2 * k1);
    Eigen::VectorXd k3 = f(t + dt / 2, y + dt / 2 * k2);
    Eigen::VectorXd k4 = f(t + dt, y + dt * k3);
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

DoTtState rk4_step(const DoTtState& s, const SeparableOperator& G, double dt, const RhsOptions& opt, RhsDiagnostics* diag)
{
    DoTtState work = s;
    auto f = [&](double t, const Eigen::VectorXd& y) {
        unflatten(y, work.root);
        work.time = t;
        return flatten(do_rhs(work, G, opt, diag));
    };
    Eigen::VectorXd y = rk4_step(f, s.time, flatten(s.root), dt);
    DoTtState out = s;
    unflatten(y, out.root);
    out.time = s.time + dt;
    return out;
}

BoTtState rk4_step(const BoTtState& s, const SeparableOperator& G, double dt, const RhsOptions& opt)
{
    BoTtState work = s;
    auto f = [&](double t, const Eigen::VectorXd& y) {
        unflatten(y, work.root);
        work.time = t;
        return flatten(bo_rhs(work, G, opt).derivative);
    };
    Eigen::VectorXd y = rk4_step(f, s.time, flatten(s.root), dt);
    BoTtState out = s;
    unflatten(y, out.root);
    out.time = s.time + dt;
    return out;
}

BoWithTransform with_identity_transform(const BoTtState& s)
{
    std::vector<const ModeFamily*> fams;
    collect(s.root, fams);
    BoWithTransform out{s, {}};
    for (auto* f : fams) out.P.push_back(Eigen::MatrixXd::Identity(f->rank(), f->rank()));
    return out;
}

BoWithTransform rk4_step(const BoWithTransform& s, const SeparableOperator& G, double dt, const RhsOptions& opt)
{
    const Eigen::Index nm = flat_size(s.state.root);
    Eigen::Index np = 0;
    for (const auto& p : s.P) np += p.size();
    BoWithTransform work = s;

    auto pack = [&](const ModeFamily& m, const std::vector<Eigen::MatrixXd>& P) {
        Eigen::VectorXd y(nm + np);
        y.head(nm) = flatten(m);
        Eigen::Index pos = nm;
        for (const auto& p : P) {
            y.segment(pos, p.size()) = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
            pos += p.size();
        }
        return y;
    };
    auto unpack = [&](const Eigen::VectorXd& y, ModeFamily& m, std::vector<Eigen::MatrixXd>& P) {
        unflatten(y.head(nm), m);
        Eigen::Index pos = nm;
        for (auto& p : P) {
            p = Eigen::Map<const Eigen::MatrixXd>(y.data() + pos, p.rows(), p.cols());
            pos += p.size();
        }
    };
    auto f = [&](double t, const Eigen::VectorXd& y) {
        unpack(y, work.state.root, work.P);
        work.state.time = t;
        BoRhs r = bo_rhs(work.state, G, opt);
        std::vector<Eigen::MatrixXd> dP(work.P.size());
        for (size_t i = 0; i < work.P.size(); ++i) {
            Eigen::MatrixXd sigma = (r.S[i] - r.S[i].transpose()) / 2;
            Eigen::VectorXd is = r.Lambda[i].cwiseSqrt().cwiseInverse();
            dP[i] = -(is.asDiagonal() * sigma * is.asDiagonal()) * work.P[i];
        }
        return pack(r.derivative, dP);
    };
    Eigen::VectorXd y = rk4_step(f, s.state.time, pack(s.state.root, s.P), dt);
    BoWithTransform out = s;
    unpack(y, out.state.root, out.P);
    out.state.time = s.state.time + dt;
    return out;
}

Eigen::MatrixXd do_modes_from_bo(const Grid& grid, const ModeFamily& bo_family, const Eigen::MatrixXd& P)
{
    Eigen::VectorXd lam = wgram(grid.weights, bo_family.modes, bo_family.modes).diagonal();
    return bo_family.modes * lam.cwiseSqrt().cwiseInverse().asDiagonal() * P;
}

namespace {

// Replaces the composites of f by sum_i T(m, i) composite_i.
void mix_composites(ModeFamily& f, const Eigen::MatrixXd& T)
{
    if (is_last(f)) {
        f.finals = f.finals * T.transpose();
        return;
    }
    std::vector<ModeFamily> merged(T.rows());
    for (Eigen::Index m = 0; m < T.rows(); ++m) {
        ModeFamily& M = merged[m];
        std::vector<Eigen::MatrixXd> mcols, fcols;
        Eigen::Index total = 0;
        for (Eigen::Index i = 0; i < T.cols(); ++i) {
            if (T(m, i) == 0) continue;
            const ModeFamily& c = f.children[i];
            mcols.push_back(c.modes * T(m, i));
            total += c.rank();
            if (is_last(c)) fcols.push_back(c.finals);
            else
                for (const auto& g : c.children) M.children.push_back(g);
        }
        const Eigen::Index n = f.children.front().modes.rows();
        M.modes.resize(n, total);
        Eigen::Index pos = 0;
        for (const auto& c : mcols) {
            M.modes.middleCols(pos, c.cols()) = c;
            pos += c.cols();
        }
        if (!fcols.empty()) {
            M.finals.resize(fcols.front().rows(), total);
            pos = 0;
            for (const auto& c : fcols) {
                M.finals.middleCols(pos, c.cols()) = c;
                pos += c.cols();
            }
        }
    }
    f.children = std::move(merged);
}

void drop_empty(ModeFamily& f)
{
    if (is_last(f)) return;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < f.rank(); ++k)
        if (f.children[k].rank() > 0) keep.push_back(k);
    if (static_cast<Eigen::Index>(keep.size()) == f.rank()) return;
    Eigen::MatrixXd modes(f.modes.rows(), keep.size());
    std::vector<ModeFamily> kids;
    for (size_t i = 0; i < keep.size(); ++i) {
        modes.col(i) = f.modes.col(keep[i]);
        kids.push_back(std::move(f.children[keep[i]]));
    }
    f.modes = std::move(modes);
    f.children = std::move(kids);
}

void orthonormalize(const std::vector<Grid>& grids, ModeFamily& f, int j, double skip_tol, ReorthReport& rep,
                    bool merged = false)
{
    bool mixed = false;
    const Eigen::VectorXd& w = grids[j].weights;
    const Eigen::Index r = f.rank();
    if (r > 0) {
        Eigen::MatrixXd gram = wgram(w, f.modes, f.modes);
        const double defect = (gram - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff();
        if (defect > skip_tol) {
            ++rep.families_changed;
            const Eigen::VectorXd dg = gram.diagonal();
            bool orthogonal = dg.minCoeff() > 1e-24 * dg.maxCoeff();
            for (Eigen::Index k = 0; k < r && orthogonal; ++k)
                for (Eigen::Index i = 0; i < k && orthogonal; ++i)
                    orthogonal = std::abs(gram(i, k)) <= skip_tol * std::sqrt(dg(i) * dg(k));
            const Eigen::VectorXd sw = w.cwiseSqrt();
            if (orthogonal) {
                // already orthogonal: normalization only
                Eigen::VectorXd nrm = gram.diagonal().cwiseSqrt();
                f.modes = f.modes * nrm.cwiseInverse().asDiagonal();
                mix_composites(f, Eigen::MatrixXd(nrm.asDiagonal()));
            } else {
                Eigen::MatrixXd A = sw.asDiagonal() * f.modes;
                Eigen::ColPivHouseholderQR<Eigen::MatrixXd> cp(A);
                cp.setThreshold(1e-12);
                const Eigen::Index k = cp.rank();
                Eigen::MatrixXd Q, Tm;
                if (k == r) {
                    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
                    Q = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), r);
                    Tm = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
                    for (Eigen::Index m = 0; m < r; ++m)
                        if (Tm(m, m) < 0) {
                            Tm.row(m) *= -1;
                            Q.col(m) *= -1;
                        }
                } else {
                    if (!merged) rep.rank_reductions += static_cast<int>(r - k);
                    Q = cp.householderQ() * Eigen::MatrixXd::Identity(A.rows(), k);
                    Eigen::MatrixXd R = cp.matrixQR().topRows(k).triangularView<Eigen::Upper>();
                    Tm = R * cp.colsPermutation().transpose();
                }
                f.modes = sw.cwiseInverse().asDiagonal() * Q;
                mix_composites(f, Tm);
                mixed = true;
            }
        }
    }
    for (auto& c : f.children) orthonormalize(grids, c, j + 1, skip_tol, rep, merged || mixed);
    drop_empty(f);
}

// f has orthonormal modes; rotates to diagonal composite Gram, then recurses.
void canonical_bo(const std::vector<Grid>& grids, ModeFamily& f, int j, EquivalenceTransform* tr)
{
    Eigen::MatrixXd C = composite_cross_gram(grids, f, f, j);
    const Eigen::Index r = C.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    if (es.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "composite Gram eigensolve failed");
    Eigen::VectorXd mu = es.eigenvalues().reverse();
    Eigen::MatrixXd V = es.eigenvectors().rowwise().reverse();
    if (mu(0) < 0 || mu(r - 1) < -1e-10 * std::abs(mu(0)))
        throw NumericError(NumericErrorKind::SingularGram, "indefinite Gram in DO to BO conversion");
    Eigen::Index k = 0;
    while (k < r && mu(k) > 1e-30 * mu(0)) ++k;
    // keep the eigenvector signs tied to the original ordering
    for (Eigen::Index m = 0; m < k; ++m) {
        Eigen::Index imax = 0;
        V.col(m).cwiseAbs().maxCoeff(&imax);
        if (V(imax, m) < 0) V.col(m) *= -1;
    }
    Eigen::MatrixXd Vk = V.leftCols(k);
    Eigen::VectorXd sq = mu.head(k).cwiseSqrt();
    f.modes = f.modes * Vk * sq.asDiagonal();
    mix_composites(f, (Vk * sq.cwiseInverse().asDiagonal()).transpose());
    if (tr) {
        tr->P = Vk.transpose();
        tr->Lambda = mu.head(k);
        tr->Sigma = Eigen::MatrixXd::Zero(k, k);
    }
    ReorthReport rep;
    for (auto& c : f.children) {
        orthonormalize(grids, c, j + 1, 1e-13, rep);
        canonical_bo(grids, c, j + 1, nullptr);
    }
}

} // namespace

DoTtState reorthonormalize(const DoTtState& s, ReorthReport* report, double skip_tolerance)
{
    DoTtState out = s;
    ReorthReport rep;
    orthonormalize(out.grids, out.root, 0, skip_tolerance, rep);
    if (out.root.rank() == 0) throw NumericError(NumericErrorKind::RankDeficient, "reorthonormalize: state vanished");
    if (report) *report = rep;
    return out;
}

ConversionResult do_to_bo(const DoTtState& s)
{
    DoTtState d = reorthonormalize(s);
    ConversionResult out;
    out.state.grids = d.grids;
    out.state.time = d.time;
    out.state.root = std::move(d.root);
    canonical_bo(out.state.grids, out.state.root, 0, &out.transform);
    return out;
}

DoTtState bo_to_do(const BoTtState& s, const Eigen::MatrixXd& P)
{
    DoTtState out;
    out.grids = s.grids;
    out.time = s.time;
    out.root = s.root;
    ModeFamily& f = out.root;
    const Eigen::Index r = f.rank();
    Eigen::MatrixXd Pm = P.size() ? P : Eigen::MatrixXd::Identity(r, r);
    if (Pm.rows() != r || Pm.cols() != r) throw InvalidArgument("bo_to_do: P has the wrong size");
    Eigen::VectorXd lam = wgram(s.grids[0].weights, f.modes, f.modes).diagonal();
    if (!(lam.minCoeff() > 0)) throw NumericError(NumericErrorKind::SingularGram, "bo_to_do: singular Lambda");
    Eigen::VectorXd sq = lam.cwiseSqrt();
    f.modes = f.modes * sq.cwiseInverse().asDiagonal() * Pm;
    mix_composites(f, (sq.asDiagonal() * Pm).transpose());
    ReorthReport rep;
    for (auto& c : f.children) orthonormalize(out.grids, c, 1, 1e-13, rep);
    return out;
}

} // namespace dott
