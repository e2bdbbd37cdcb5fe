#include "dott/rank_adapt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "dott/error.hpp"
#include "dott/tensor_train.hpp"

namespace dott {

namespace {

ModeFamily& family_at(ModeFamily& root, const std::vector<Eigen::Index>& parent)
{
    ModeFamily* f = &root;
    for (auto i : parent) {
        if (i < 0 || i >= static_cast<Eigen::Index>(f->children.size()))
            throw InvalidArgument("parent multi-index out of range");
        f = &f->children[i];
    }
    return *f;
}

Eigen::VectorXd symmetric_eigenvalues_desc(const Eigen::MatrixXd& C)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError(NumericErrorKind::EigensolveFailure, "Gram eigensolve failed");
    return es.eigenvalues().reverse();
}

// Zero-amplitude rank-1 chain below a new mode at level j.
ModeFamily zero_chain(const std::vector<Grid>& grids, int j)
{
    const int d = static_cast<int>(grids.size());
    ModeFamily f;
    f.modes = candidate_basis(grids[j]).leftCols(1);
    if (j == d - 2) f.finals = Eigen::MatrixXd::Zero(grids[d - 1].size(), 1);
    else f.children.push_back(zero_chain(grids, j + 1));
    return f;
}

} // namespace

Eigen::VectorXd level1_singular_values(const DoTtState& s)
{
    Eigen::VectorXd mu = symmetric_eigenvalues_desc(assemble_gram(s, {}));
    return mu.cwiseMax(0.0).cwiseSqrt();
}

RemovalResult remove_modes(const DoTtState& s, double epsilon, bool all_levels)
{
    if (!(epsilon >= 0)) throw InvalidArgument("remove_modes: epsilon must be nonnegative");
    const int d = s.dimension();
    RemovalResult out;
    out.state = s;
    std::function<void(std::vector<Eigen::Index>&)> prune = [&](std::vector<Eigen::Index>& parent) {
        ModeFamily& f = family_at(out.state.root, parent);
        const bool top = parent.empty();
        for (;;) {
            Eigen::MatrixXd C = assemble_gram(out.state.grids, out.state.root, parent);
            Eigen::VectorXd mu = symmetric_eigenvalues_desc(C);
            if (std::sqrt(std::max(mu(mu.size() - 1), 0.0)) >= epsilon && mu(mu.size() - 1) > 0) break;
            if (f.rank() == 1) {
                if (top) throw NumericError(NumericErrorKind::RankDeficient, "remove_modes: level-1 rank would drop to 0");
                break;
            }
            Eigen::Index k = 0;
            C.diagonal().minCoeff(&k);
            out.dropped_energy += C(k, k);
            const Eigen::Index r = f.rank();
            Eigen::MatrixXd keep(f.modes.rows(), r - 1);
            keep << f.modes.leftCols(k), f.modes.rightCols(r - 1 - k);
            f.modes = std::move(keep);
            if (f.children.empty()) {
                Eigen::MatrixXd fin(f.finals.rows(), r - 1);
                fin << f.finals.leftCols(k), f.finals.rightCols(r - 1 - k);
                f.finals = std::move(fin);
            } else {
                f.children.erase(f.children.begin() + k);
            }
            if (top) ++out.removed;
        }
        if (!all_levels || static_cast<int>(parent.size()) == d - 2) return;
        for (Eigen::Index k = 0; k < f.rank(); ++k) {
            parent.push_back(k);
            prune(parent);
            parent.pop_back();
        }
    };
    std::vector<Eigen::Index> root;
    prune(root);
    return out;
}

Eigen::MatrixXd candidate_basis(const Grid& g)
{
    const Eigen::Index n = g.size();
    Eigen::MatrixXd B(n, n);
    Eigen::Index c = 0;
    auto push = [&](const Eigen::VectorXd& v) {
        if (c >= n) return;
        const double nrm = std::sqrt(g.weights.dot(v.cwiseAbs2()));
        if (nrm <= 1e-8 * std::sqrt(g.length())) return; // aliased to zero on this grid
        B.col(c++) = v / nrm;
    };
    if (g.kind == GridKind::FourierEquispaced) {
        const Eigen::VectorXd theta = (g.nodes.array() - g.a) * (2 * std::numbers::pi / g.length());
        push(Eigen::VectorXd::Ones(n));
        for (Eigen::Index k = 1; c < n && k <= n; ++k) {
            push((k * theta.array()).cos().matrix());
            push((k * theta.array()).sin().matrix());
        }
    } else {
        const Eigen::ArrayXd xi = (2 * g.nodes.array() - g.a - g.b) / g.length();
        Eigen::ArrayXd p0 = Eigen::ArrayXd::Ones(n), p1 = xi;
        push(p0.matrix());
        if (n > 1) push(p1.matrix());
        for (Eigen::Index k = 2; k < n; ++k) {
            Eigen::ArrayXd pk = ((2 * k - 1) * xi * p1 - (k - 1) * p0) / double(k);
            push(pk.matrix());
            p0 = p1;
            p1 = pk;
        }
    }
    return B.leftCols(c);
}

DoTtState add_modes_zero_energy(const DoTtState& s, const std::vector<Eigen::Index>& parent, int count)
{
    if (count < 1) throw InvalidArgument("add_modes_zero_energy: count must be >= 1");
    const int d = s.dimension();
    const int j = static_cast<int>(parent.size());
    if (j > d - 2) throw InvalidArgument("add_modes_zero_energy: parent addresses a level below the leaves");
    DoTtState out = s;
    ModeFamily& f = family_at(out.root, parent);
    const Grid& g = s.grids[j];
    const Eigen::VectorXd& w = g.weights;
    if (f.rank() + count > g.size())
        throw NumericError(NumericErrorKind::InsufficientGrid, "grid of variable " + std::to_string(j + 1) + " has only " +
                                                                   std::to_string(g.size()) + " directions");

    Eigen::MatrixXd Q = f.modes;
    const Eigen::MatrixXd cand = candidate_basis(g);
    std::vector<bool> used(cand.cols(), false);
    int added = 0;
    // first pass takes candidates well outside the span, the second anything independent
    for (double accept : {1e-3, 1e-6})
        for (Eigen::Index c = 0; c < cand.cols() && added < count; ++c) {
            if (used[c]) continue;
            Eigen::VectorXd v = cand.col(c);
            for (int pass = 0; pass < 2; ++pass) v -= Q * (Q.transpose() * w.asDiagonal() * v);
            const double nrm = std::sqrt(w.dot(v.cwiseAbs2()));
            if (nrm < accept) continue;
            used[c] = true;
            Q.conservativeResize(Eigen::NoChange, Q.cols() + 1);
            Q.col(Q.cols() - 1) = v / nrm;
            ++added;
        }
    if (added < count)
        throw NumericError(NumericErrorKind::InsufficientGrid, "no candidate direction left for variable " + std::to_string(j + 1));

    const Eigen::Index r = f.rank();
    f.modes = Q;
    if (j == d - 2) {
        f.finals.conservativeResize(Eigen::NoChange, r + count);
        f.finals.rightCols(count).setZero();
    } else {
        for (int k = 0; k < count; ++k) f.children.push_back(zero_chain(s.grids, j + 1));
    }
    return out;
}

WarmupResult warm_up(const DoTtState& s, const SeparableOperator& G, double dt, const std::vector<Eigen::Index>& parent,
                     Eigen::Index first_new, const WarmupOptions& opt)
{
    if (!(dt > 0)) throw InvalidArgument("warm_up: dt must be positive");
    RhsOptions rhs;
    rhs.freeze_modes = true;
    WarmupResult out;
    out.state = s;
    auto energy = [&](const DoTtState& st) {
        Eigen::MatrixXd C = assemble_gram(st, parent);
        if (first_new < 0 || first_new >= C.rows()) throw InvalidArgument("warm_up: first_new out of range");
        return C.diagonal().tail(C.rows() - first_new).minCoeff();
    };
    double e = energy(out.state);
    while (out.steps < opt.steps || (e < opt.lambda_eps && out.steps < opt.max_steps)) {
        out.state = rk4_step(out.state, G, dt, rhs);
        ++out.steps;
        e = energy(out.state);
    }
    out.new_mode_energy = e;
    Eigen::VectorXd mu = symmetric_eigenvalues_desc(assemble_gram(out.state, parent));
    out.gram_condition = mu(mu.size() - 1) > 0 ? mu(0) / mu(mu.size() - 1) : std::numeric_limits<double>::infinity();
    return out;
}

ExplicitStepResult adapt_by_explicit_step(const DoTtState& s, const SeparableOperator& G, double dt, int n_steps,
                                          double sigma, const ExplicitStepOptions& opt)
{
    if (n_steps < 1) throw InvalidArgument("adapt_by_explicit_step: n_steps must be >= 1");
    if (!(dt > 0)) throw InvalidArgument("adapt_by_explicit_step: dt must be positive");
    const int d = s.dimension();
    const auto& grids = s.grids;
    ExplicitStepResult out;
    auto settle = [&](const TensorTrain& x) {
        TensorTrain y = tt_round(x, grids, opt.lossless_tolerance);
        const Eigen::Index r = y.max_rank();
        out.peak_core_rank = std::max(out.peak_core_rank, r);
        if (r > opt.rank_cap)
            throw NumericError(NumericErrorKind::RankExplosion,
                               "core rank " + std::to_string(r) + " exceeds the cap " + std::to_string(opt.rank_cap));
        return y;
    };

    TensorTrain u = tt_from_modes(s.root, d);
    double t = s.time;
    for (int step = 0; step < n_steps; ++step) {
        TensorTrain k1 = settle(tt_apply(G, u, grids, t));
        TensorTrain k2 = settle(tt_apply(G, settle(tt_axpy(u, dt / 2, k1)), grids, t + dt / 2));
        TensorTrain k3 = settle(tt_apply(G, settle(tt_axpy(u, dt / 2, k2)), grids, t + dt / 2));
        TensorTrain k4 = settle(tt_apply(G, settle(tt_axpy(u, dt, k3)), grids, t + dt));
        TensorTrain inc = tt_add(tt_add(k1, tt_scale(k2, 2)), tt_add(tt_scale(k3, 2), k4));
        u = settle(tt_axpy(u, dt / 6, inc));
        t = s.time + (step + 1) * dt;
    }

    TtDecomposeOptions dopt;
    dopt.rule = opt.rule;
    if (opt.add_count > 0) dopt.max_r1 = s.root.rank() + opt.add_count;
    out.state = do_state_from(decompose_tt(u, grids, sigma, dopt), t);
    // orthogonalize first: the contracted Gram of a small difference cancels
    out.restart_delta = tt_norm(tt_round(tt_axpy(u, -1.0, tt_from_modes(out.state.root, d)), grids, 0.0), grids);
    return out;
}

} // namespace dott
