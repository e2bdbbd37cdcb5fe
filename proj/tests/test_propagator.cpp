#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "dott/decomposition.hpp"
#include "dott/error.hpp"
#include "dott/mode_tree.hpp"
#include "dott/propagator.hpp"
#include "dott/schmidt.hpp"
#include "test_support.hpp"

using namespace dott;
using std::numbers::pi;

namespace {

std::vector<Grid> gl_grids(int d, int n) { return std::vector<Grid>(d, gauss_legendre_grid(n, -1.0, 1.0)); }

double max_abs(const Eigen::MatrixXd& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

double max_diff(const ModeFamily& a, const ModeFamily& b) { return max_abs(flatten(a) - flatten(b)); }

// Dense DO right-hand side: N = G(u) on the full grid, then the projections
// level by level with dense composites.
void dense_do(const std::vector<Grid>& grids, const Eigen::VectorXd& N, const ModeFamily& f, int j, ModeFamily& out)
{
    const int d = static_cast<int>(grids.size());
    const Eigen::Index n = grids[j].size();
    std::vector<Grid> rest(grids.begin() + j + 1, grids.end());
    Eigen::VectorXd wr = composite_weights(rest);
    Eigen::Map<const Eigen::MatrixXd> Nm(N.data(), n, N.size() / n);
    Eigen::MatrixXd Psi(wr.size(), f.rank());
    for (Eigen::Index k = 0; k < f.rank(); ++k) {
        if (j == d - 2) {
            Psi.col(k) = f.finals.col(k);
        } else {
            Psi.col(k) = reconstruct(rest, f.children[k]).values;
        }
    }
    const Eigen::VectorXd& w = grids[j].weights;
    Eigen::MatrixXd Q = Nm * wr.asDiagonal() * Psi;
    Eigen::MatrixXd C = Psi.transpose() * wr.asDiagonal() * Psi;
    Eigen::MatrixXd M = Q - f.modes * (f.modes.transpose() * w.asDiagonal() * Q);
    out.modes = C.ldlt().solve(M.transpose()).transpose();
    for (Eigen::Index k = 0; k < f.rank(); ++k) {
        Eigen::VectorXd Nk = Nm.transpose() * w.asDiagonal() * f.modes.col(k);
        if (j == d - 2) out.finals.col(k) = Nk;
        else dense_do(grids, Nk, f.children[k], j + 1, out.children[k]);
    }
}

ModeFamily dense_do_rhs(const DoTtState& s, const SeparableOperator& G)
{
    GridTensor u = reconstruct(s.grids, s.root);
    GridTensor N = apply_dense(G, u, s.grids, s.time);
    ModeFamily out = s.root;
    dense_do(s.grids, N.values, s.root, 0, out);
    return out;
}

// d/dt of the reconstruction along a mode derivative (product rule per level).
GridTensor tangent(const std::vector<Grid>& grids, const ModeFamily& s, const ModeFamily& ds)
{
    const int d = static_cast<int>(grids.size());
    GridTensor acc = reconstruct(grids, s);
    acc.values.setZero();
    for (int level = 0; level < d; ++level) {
        ModeFamily mix = s;
        std::function<void(ModeFamily&, const ModeFamily&, int)> rec = [&](ModeFamily& m, const ModeFamily& dm, int j) {
            if (j == level) m.modes = dm.modes;
            if (j == d - 2 && level == d - 1) m.finals = dm.finals;
            for (size_t k = 0; k < m.children.size(); ++k) rec(m.children[k], dm.children[k], j + 1);
        };
        rec(mix, ds, 0);
        acc.values += reconstruct(grids, mix).values;
    }
    return acc;
}

void check_do_condition(const std::vector<Grid>& grids, const ModeFamily& s, const ModeFamily& ds, int j, double tol)
{
    Eigen::MatrixXd g = s.modes.transpose() * grids[j].weights.asDiagonal() * ds.modes;
    CHECK(max_abs(g) < tol);
    for (size_t k = 0; k < s.children.size(); ++k) check_do_condition(grids, s.children[k], ds.children[k], j + 1, tol);
}

SeparableOperator mixed_3d()
{
    SeparableOperator G;
    G.dimension = 3;
    auto sx = ScalarFunction::sin(1);
    G.terms.push_back({{FactorAction::d1(sx), FactorAction::identity(), FactorAction::identity()}, 1.0, std::nullopt});
    G.terms.push_back({{FactorAction::identity(), FactorAction::d1(), FactorAction::multiply(ScalarFunction::cos(2))}, -0.7, std::nullopt});
    G.terms.push_back({{FactorAction::multiply(ScalarFunction::cos(1)), FactorAction::identity(), FactorAction::d1()}, 0.4,
                       TimeFunction::cos(1, 2)});
    G.terms.push_back({{FactorAction::identity(), FactorAction::d2(), FactorAction::identity()}, 0.05, std::nullopt});
    G.sources.push_back({{ScalarFunction::cos(1), ScalarFunction::sin(1), ScalarFunction::constant(1)}, 0.3,
                         TimeFunction::polynomial({1, 1})});
    return G;
}

DoTtState fourier_state(int d, int n, double sigma, const std::function<double(const double*)>& f, bool keep_all = false)
{
    std::vector<Grid> grids(d, fourier_grid(n, 2 * pi));
    GridTensor u = sample(grids, f);
    return do_state_from(decompose(u, tt_tree(d), grids, sigma, {ThresholdRule::Amplitude, keep_all}));
}

double smooth3(const double* x) { return std::exp(0.6 * std::sin(x[0] + 2 * x[1] - x[2])) + 0.3 * std::cos(x[1] - 2 * x[2]); }

// no translation symmetry, so the spectra are simple
double generic3(const double* x)
{
    return std::exp(0.8 * std::sin(x[0]) * std::cos(x[1] - 0.5) + 0.4 * std::sin(x[1] + 2 * x[2]) * std::cos(x[2]))
           + 0.2 * std::cos(x[0] - 0.3 * std::sin(x[2]));
}

// Exact BO state: level-1 Lambda = 9, 4, 1; each composite splits 0.8 / 0.2.
// Disjoint x2 frequencies make the composites orthonormal. The families share one
// final basis so mixing composites stays inside every family's tangent space.
BoTtState exact_bo_state(const std::vector<Grid>& grids)
{
    auto wave = [&](int j, double k, double shift) -> Eigen::VectorXd {
        return grids[j].nodes.unaryExpr([=](double x) { return std::cos(k * x + shift) / std::sqrt(pi); });
    };
    BoTtState s;
    s.grids = grids;
    const double amp[3] = {3, 2, 1};
    const double k1[3] = {1, 2, 3};
    const double k2[3][2] = {{1, 2}, {4, 3}, {5, 0}};
    const double sh2[3][2] = {{0, pi / 2}, {pi / 2, 0}, {0.3, 0}};
    s.root.modes.resize(grids[0].size(), 3);
    for (int k = 0; k < 3; ++k) {
        s.root.modes.col(k) = amp[k] * wave(0, k1[k], 0.2 * k);
        ModeFamily c;
        c.modes.resize(grids[1].size(), 2);
        c.finals.resize(grids[2].size(), 2);
        for (int p = 0; p < 2; ++p) {
            Eigen::VectorXd m = wave(1, k2[k][p], sh2[k][p]);
            if (k2[k][p] == 0) m = Eigen::VectorXd::Constant(grids[1].size(), 1 / std::sqrt(2 * pi));
            c.modes.col(p) = std::sqrt(p == 0 ? 0.8 : 0.2) * m;
            c.finals.col(p) = wave(2, p + 1, 0.1 * p);
        }
        s.root.children.push_back(c);
    }
    return s;
}

RhsOptions loose_cap()
{
    RhsOptions o;
    o.gram_condition_cap = 1e30;
    return o;
}

} // namespace

TEST_CASE("assemble_gram")
{
    auto grids = gl_grids(3, 12);
    std::vector<Eigen::VectorXd> f{grids[0].nodes.array() + 2, grids[1].nodes.array().exp(), grids[2].nodes.array().cos()};
    auto r1 = rank_one_state(grids, f);
    Eigen::MatrixXd c = assemble_gram(r1);
    REQUIRE(c.rows() == 1);
    CHECK(std::abs(c(0, 0) - std::pow(l2_norm(outer(f), grids), 2)) < 1e-12 * c(0, 0));

    GridTensor u = sample(grids, test::three_d_example);
    // tiny threshold: truncated children are orthogonal only up to their tails
    auto h = decompose(u, tt_tree(3), grids, 1e-12);
    auto s = do_state_from(h);
    Eigen::MatrixXd C = assemble_gram(s);
    // retained lambda-products squared, summed under each level-1 mode
    Eigen::VectorXd lam2(C.rows());
    for (Eigen::Index k = 0; k < C.rows(); ++k)
        lam2(k) = std::pow(h.root.lambdas(k), 2) * h.root.right_children[k].lambdas.squaredNorm();
    Eigen::MatrixXd D = C;
    D.diagonal() -= lam2;
    CHECK(max_abs(D) < 1e-9 * lam2(0));
    // second-level family: lambda-products squared
    Eigen::MatrixXd C2 = assemble_gram(s, {1});
    const auto& child = h.root.right_children[1];
    for (Eigen::Index k = 0; k < C2.rows(); ++k)
        CHECK(std::abs(C2(k, k) - std::pow(h.root.lambdas(1) * child.lambdas(k), 2)) < 1e-9 * lam2(0));
    CHECK_THROWS_AS(assemble_gram(s, {0, 0}), InvalidArgument);

    // the time-dependent 3d example at t = 0
    auto g50 = gl_grids(3, 50);
    GridTensor u0 = sample(g50, [](const double* x) { return test::forced_example(x, 0); });
    auto h0 = decompose(u0, tt_tree(3), g50, 1e-5);
    CHECK(h0.ranks() == RankProfile{{2}, {1, 1}});
    Eigen::MatrixXd C0 = assemble_gram(do_state_from(h0));
    REQUIRE(C0.rows() == 2);
    CHECK(std::abs(C0(0, 0) - h0.root.lambdas(0) * h0.root.lambdas(0)) < 1e-9 * C0(0, 0));
    CHECK(std::abs(C0(1, 1) - h0.root.lambdas(1) * h0.root.lambdas(1)) < 1e-9 * C0(0, 0));
    CHECK(std::abs(C0(0, 1)) < 1e-9 * C0(0, 0));
}

TEST_CASE("zero operator gives zero derivatives")
{
    auto s = fourier_state(3, 10, 1e-3, smooth3);
    SeparableOperator zero;
    zero.dimension = 3;
    CHECK(max_abs(flatten(do_rhs(s, zero))) == 0.0);
    BoTtState b{s.grids, s.root, 0};
    auto bs = bo_state_from(decompose(sample(s.grids, generic3), tt_tree(3), s.grids, 1e-3));
    CHECK(max_abs(flatten(bo_rhs(bs, zero).derivative)) == 0.0);
    CHECK_THROWS_AS(do_rhs(s, advection_2d()), InvalidArgument);
}

TEST_CASE("do_rhs against the dense projection oracle")
{
    SUBCASE("2d advection")
    {
        auto s = fourier_state(2, 32, 1e-5, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
        auto G = advection_2d();
        auto r = do_rhs(s, G, loose_cap());
        auto o = dense_do_rhs(s, G);
        CHECK(max_diff(r, o) < 1e-10 * max_abs(flatten(o)));
        check_do_condition(s.grids, s.root, r, 0, 1e-10);
    }
    SUBCASE("3d mixed operator with sources")
    {
        auto s = fourier_state(3, 12, 1e-3, smooth3);
        s.time = 0.37;
        auto G = mixed_3d();
        auto r = do_rhs(s, G);
        auto o = dense_do_rhs(s, G);
        CHECK(max_diff(r, o) < 1e-10 * max_abs(flatten(o)));
        check_do_condition(s.grids, s.root, r, 0, 1e-10);
    }
    SUBCASE("4d hyperbolic")
    {
        std::mt19937 rng(4);
        auto f = test::random_smooth_nd(rng, 4);
        auto s = fourier_state(4, 8, 1e-2, [&](const double* x) {
            double y[4];
            for (int j = 0; j < 4; ++j) y[j] = std::sin(x[j]);
            return f(y);
        });
        auto G = hyperbolic_4d();
        auto r = do_rhs(s, G);
        auto o = dense_do_rhs(s, G);
        CHECK(max_diff(r, o) < 1e-10 * max_abs(flatten(o)));
        check_do_condition(s.grids, s.root, r, 0, 1e-10);
    }
}

TEST_CASE("hand-assembled 2d advection system")
{
    auto s = fourier_state(2, 40, 1e-13, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    const Grid& g = s.grids[0];
    const Eigen::VectorXd& w = g.weights;
    const Eigen::MatrixXd& P1 = s.root.modes;
    const Eigen::MatrixXd& P2 = s.root.finals;
    const Eigen::Index r = P1.cols();
    Eigen::VectorXd sx = g.nodes.array().sin(), cx = g.nodes.array().cos();
    Eigen::MatrixXd D1 = g.d1 * P1, D2 = g.d1 * P2;
    auto ip = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (w.array() * a.array() * b.array()).sum(); };

    Eigen::MatrixXd dF(P2.rows(), r), rhs1 = Eigen::MatrixXd::Zero(P1.rows(), r), C(r, r);
    for (Eigen::Index j = 0; j < r; ++j) {
        Eigen::VectorXd v = cx.cwiseProduct(D2.col(j));
        for (Eigen::Index i = 0; i < r; ++i) {
            v += ip(sx.cwiseProduct(D1.col(i)), P1.col(j)) * P2.col(i)
                 + 3 * ip(D1.col(i), P1.col(j)) * P2.col(i).cwiseProduct(cx);
        }
        dF.col(j) = v;
        for (Eigen::Index p = 0; p < r; ++p) C(j, p) = ip(P2.col(j), P2.col(p));
        for (Eigen::Index i = 0; i < r; ++i) {
            const double a = ip(P2.col(i), P2.col(j));
            const double b = ip(cx.cwiseProduct(P2.col(i)), P2.col(j));
            const double c = ip(cx.cwiseProduct(D2.col(i)), P2.col(j));
            Eigen::VectorXd v2 = sx.cwiseProduct(D1.col(i)) * a + 3 * D1.col(i) * b + P1.col(i) * c;
            for (Eigen::Index p = 0; p < r; ++p)
                v2 -= P1.col(p) * (ip(sx.cwiseProduct(D1.col(i)), P1.col(p)) * a + 3 * ip(D1.col(i), P1.col(p)) * b
                                   + ip(P1.col(i), P1.col(p)) * c);
            rhs1.col(j) += v2;
        }
    }
    // row j of C times the derivative block equals rhs1 column j
    Eigen::MatrixXd dP1 = C.ldlt().solve(rhs1.transpose()).transpose();
    auto out = do_rhs(s, advection_2d(), loose_cap());
    CHECK(max_abs(out.finals - dF) < 1e-10 * max_abs(dF));
    CHECK(max_abs(out.modes - dP1) < 1e-10 * max_abs(dP1));
}

TEST_CASE("hand-assembled 3d forced system")
{
    auto grids = gl_grids(3, 50);
    GridTensor u0 = sample(grids, [](const double* x) { return test::forced_example(x, 0); });
    auto s = do_state_from(decompose(u0, tt_tree(3), grids, 1e-5));
    s.time = 0.8;
    const double t = s.time;
    auto G = forcing_3d_example();
    auto out = do_rhs(s, G);

    const Eigen::VectorXd& w = grids[0].weights;
    const Eigen::VectorXd& x = grids[0].nodes;
    auto ip = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (w.array() * a.array() * b.array()).sum(); };
    Eigen::VectorXd one = Eigen::VectorXd::Ones(x.size());
    const Eigen::Index r = s.root.rank();
    REQUIRE(r == 2);
    Eigen::VectorXd a(r), b(r), p(r), q(r), v(r);
    for (Eigen::Index k = 0; k < r; ++k) {
        const Eigen::VectorXd& p1 = s.root.modes.col(k);
        const Eigen::VectorXd& p2 = s.root.children[k].modes.col(0);
        const Eigen::VectorXd& p3 = s.root.children[k].finals.col(0);
        a(k) = ip(p1, one), b(k) = ip(x, p1), p(k) = ip(p2, one), q(k) = ip(x, p2), v(k) = ip(x, p3);
    }
    Eigen::MatrixXd C(r, r);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < r; ++k)
            C(i, k) = ip(s.root.children[i].modes.col(0), s.root.children[k].modes.col(0))
                      * ip(s.root.children[i].finals.col(0), s.root.children[k].finals.col(0));
    Eigen::MatrixXd rhs1(x.size(), r);
    for (Eigen::Index k = 0; k < r; ++k) {
        Eigen::VectorXd Qk = q(k) * v(k) * one + 2 * t * p(k) * v(k) * x - 4 * std::cos(t) * q(k) * v(k) * x;
        Eigen::VectorXd Mk = Qk;
        for (Eigen::Index i = 0; i < r; ++i) Mk -= s.root.modes.col(i) * ip(s.root.modes.col(i), Qk);
        rhs1.col(k) = Mk;
    }
    Eigen::MatrixXd d1 = C.ldlt().solve(rhs1.transpose()).transpose();
    // the exact solution stays in the initial span, so d1 is round-off sized
    CHECK(max_abs(out.modes - d1) < 1e-12);
    for (Eigen::Index k = 0; k < r; ++k) {
        const Eigen::VectorXd& p2 = s.root.children[k].modes.col(0);
        const Eigen::VectorXd& p3 = s.root.children[k].finals.col(0);
        Eigen::VectorXd Q2 = x * v(k) * a(k) + 2 * t * v(k) * b(k) * one - 4 * std::cos(t) * x * v(k) * b(k);
        Eigen::VectorXd d2 = (Q2 - p2 * ip(p2, Q2)) / ip(p3, p3);
        Eigen::VectorXd d3 = x * q(k) * a(k) + 2 * t * x * p(k) * b(k) - 4 * std::cos(t) * x * q(k) * b(k);
        CHECK(max_abs(out.children[k].modes.col(0) - d2) < 1e-10 * std::max(1.0, max_abs(d2)));
        CHECK(max_abs(out.children[k].finals.col(0) - d3) < 1e-10 * max_abs(d3));
    }
}

TEST_CASE("do_rhs is not additive in the state")
{
    auto s = fourier_state(2, 24, 1e-6, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    DoTtState a = s, b = s, ab = s;
    Eigen::VectorXd va = flatten(s.root);
    Eigen::VectorXd vb = va;
    std::mt19937 rng(8);
    std::normal_distribution<double> N;
    for (Eigen::Index i = 0; i < vb.size(); ++i) vb(i) = 0.3 * N(rng);
    unflatten(vb, b.root);
    unflatten(va + vb, ab.root);
    auto G = advection_2d();
    Eigen::VectorXd lhs = flatten(do_rhs(ab, G));
    Eigen::VectorXd rhs = flatten(do_rhs(a, G)) + flatten(do_rhs(b, G));
    CHECK((lhs - rhs).norm() > 1e-3 * lhs.norm());
}

TEST_CASE("singular Gram is reported")
{
    auto s = fourier_state(2, 16, 1e-6, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    s.root.finals.col(s.root.rank() - 1).setZero();
    try {
        do_rhs(s, advection_2d());
        FAIL("expected singular-gram");
    } catch (const NumericError& e) {
        CHECK(e.kind() == NumericErrorKind::SingularGram);
    }
    // a raised cap admits ill-conditioned but nonsingular Grams
    auto t = fourier_state(2, 16, 1e-4, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    RhsOptions loose;
    RhsDiagnostics diag;
    do_rhs(t, advection_2d(), loose, &diag);
    CHECK(diag.max_gram_condition > 1);
    RhsOptions tight;
    tight.gram_condition_cap = diag.max_gram_condition / 2;
    CHECK_THROWS_AS(do_rhs(t, advection_2d(), tight), NumericError);
}

TEST_CASE("bo_rhs")
{
    auto grids = std::vector<Grid>(3, fourier_grid(12, 2 * pi));
    auto bs = exact_bo_state(grids);
    bs.time = 0.37;
    auto ds = bo_to_do(bs);
    CHECK(orthonormality_defect(grids, ds.root) < 1e-13);
    CHECK(max_abs(assemble_gram(grids, bs.root) - Eigen::Matrix3d::Identity()) < 1e-13);
    auto G = mixed_3d();
    auto br = bo_rhs(bs, G);

    // S: off-diagonal part skew, diagonal = half the Lambda rate
    for (size_t i = 0; i < br.S.size(); ++i) {
        Eigen::MatrixXd sym = br.S[i] + br.S[i].transpose();
        Eigen::VectorXd diag = sym.diagonal();
        sym.diagonal().setZero();
        CHECK(max_abs(sym) < 1e-10 * std::max(1.0, max_abs(br.S[i])));
        CHECK(br.Lambda[i].size() == br.S[i].rows());
    }
    // the level-1 Lambda rate from the mode derivative
    Eigen::MatrixXd dl = 2 * (bs.root.modes.transpose() * grids[0].weights.asDiagonal() * br.derivative.modes);
    CHECK(max_abs(dl.diagonal() - (br.S[0] + br.S[0].transpose()).diagonal()) < 1e-12 * max_abs(dl));

    // same tangent as DO for the same function
    GridTensor tb = tangent(grids, bs.root, br.derivative);
    GridTensor td = tangent(grids, ds.root, do_rhs(ds, G, loose_cap()));
    CHECK(max_abs(tb.values - td.values) < 1e-9 * max_abs(td.values));

    // rank one: BO and DO agree on du/dt
    std::vector<Eigen::VectorXd> f;
    for (int j = 0; j < 3; ++j) f.push_back(grids[j].nodes.unaryExpr([j](double x) { return std::cos(x + j) + 2; }));
    auto r1 = rank_one_state(grids, f);
    BoTtState b1{grids, r1.root, 0};
    // BO modes carry the amplitude, composites are unit norm
    const double amp = std::sqrt(assemble_gram(r1)(0, 0));
    b1.root.modes *= amp;
    b1.root.children[0].finals /= amp;
    GridTensor ta = tangent(grids, b1.root, bo_rhs(b1, G).derivative);
    GridTensor tc = tangent(grids, r1.root, do_rhs(r1, G));
    CHECK(max_abs(ta.values - tc.values) < 1e-10 * max_abs(tc.values));
}

TEST_CASE("bo crossing detection")
{
    auto grids = std::vector<Grid>(2, fourier_grid(8, 2 * pi));
    BoTtState s;
    s.grids = grids;
    s.root.modes.resize(8, 2);
    s.root.modes.col(0) = grids[0].nodes.array().sin() / std::sqrt(pi);
    s.root.modes.col(1) = grids[0].nodes.array().cos() / std::sqrt(pi);
    s.root.finals = s.root.modes;
    try {
        bo_rhs(s, advection_2d());
        FAIL("expected crossing");
    } catch (const NumericError& e) {
        CHECK(e.kind() == NumericErrorKind::EigenvalueCrossing);
    }
}

TEST_CASE("rk4")
{
    VectorField f = [](double, const Eigen::VectorXd& y) -> Eigen::VectorXd { return -y; };
    Eigen::VectorXd y = Eigen::VectorXd::Ones(1);
    double t = 0;
    for (int i = 0; i < 1000; ++i) {
        y = rk4_step(f, t, y, 1e-3);
        t += 1e-3;
    }
    CHECK(std::abs(y(0) - std::exp(-1.0)) < 1e-12);
    CHECK_THROWS_AS(rk4_step(f, 0, y, 0), InvalidArgument);

    // time-dependent coefficients are sampled at the stage times: y' = cos t
    VectorField g = [](double s, const Eigen::VectorXd&) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(1, std::cos(s)); };
    Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
    // for y' = f(t) one step is Simpson's rule, which needs the midpoint stages
    z = rk4_step(g, 0, z, 0.1);
    CHECK(std::abs(z(0) - 0.1 / 6 * (1 + 4 * std::cos(0.05) + std::cos(0.1))) < 1e-16);

    auto s = fourier_state(2, 12, 1e-4, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    SeparableOperator zero;
    zero.dimension = 2;
    auto n = rk4_step(s, zero, 0.01);
    CHECK(n.time == doctest::Approx(0.01));
    CHECK(flatten(n.root) == flatten(s.root));
}

TEST_CASE("50d hyperbolic step keeps unit modes")
{
    const int d = 50;
    std::vector<Grid> grids(d, fourier_grid(20, 2 * pi));
    std::vector<Eigen::VectorXd> f(d, grids[0].nodes.unaryExpr([](double x) { return std::sin(x) / std::sqrt(pi); }));
    auto s = rank_one_state(grids, f);
    std::vector<ScalarFunction> c;
    for (int j = 1; j <= d; ++j) c.push_back(ScalarFunction::constant(j));
    auto n = rk4_step(s, hyperbolic_separable(d, c), 1e-3);
    CHECK(orthonormality_defect(grids, n.root) < 1e-9);
}

TEST_CASE("forced 3d example integrates to the closed form")
{
    auto grids = gl_grids(3, 20);
    GridTensor u0 = sample(grids, [](const double* x) { return test::forced_example(x, 0); });
    auto s = do_state_from(decompose(u0, tt_tree(3), grids, 1e-5));
    auto G = forcing_3d_example();
    const double dt = 1e-2;
    for (int i = 0; i < 100; ++i) s = rk4_step(s, G, dt);
    GridTensor exact = sample(grids, [&](const double* x) { return test::forced_example(x, s.time); });
    GridTensor rec = reconstruct(grids, s.root);
    rec.values -= exact.values;
    CHECK(l2_norm(rec, grids) < 1e-7);
}

TEST_CASE("pseudo-inverse Gram solve carries the forced example through its rank drop")
{
    // at t = sqrt(10) the x1 coefficient functions become parallel
    auto grids = gl_grids(3, 20);
    GridTensor u0 = sample(grids, [](const double* x) { return test::forced_example(x, 0); });
    const auto start = do_state_from(decompose(u0, tt_tree(3), grids, 1e-5));
    auto G = forcing_3d_example();
    const double dt = 1e-3;
    const int n = 3200;

    RhsOptions strict;
    auto s = start;
    CHECK_THROWS_AS(([&] { for (int i = 0; i < n; ++i) s = rk4_step(s, G, dt, strict); })(), NumericError);

    RhsOptions pinv;
    pinv.gram_pinv_tolerance = 1e-10;
    s = start;
    for (int i = 0; i < n; ++i) {
        s = rk4_step(s, G, dt, pinv);
        s.time = (i + 1) * dt;
    }
    GridTensor exact = sample(grids, [&](const double* x) { return test::forced_example(x, s.time); });
    GridTensor rec = reconstruct(grids, s.root);
    rec.values -= exact.values;
    CHECK(l2_norm(rec, grids) < 1e-9 * l2_norm(exact, grids));

    // away from rank deficiency both solves agree
    auto a = rk4_step(start, G, dt, strict), b = rk4_step(start, G, dt, pinv);
    CHECK(max_diff(a.root, b.root) < 1e-12);
}

TEST_CASE("DO to BO and back")
{
    auto grids = std::vector<Grid>(3, fourier_grid(10, 2 * pi));
    GridTensor u = sample(grids, smooth3);
    auto s = do_state_from(decompose(u, tt_tree(3), grids, 1e-4));
    // scramble the level-1 family so the conversion has to rotate
    Eigen::MatrixXd Rot = Eigen::MatrixXd::Identity(s.root.rank(), s.root.rank());
    Rot.topLeftCorner(2, 2) << std::cos(0.4), -std::sin(0.4), std::sin(0.4), std::cos(0.4);
    ModeFamily scr = s.root;
    scr.modes = s.root.modes * Rot;
    {
        // composites transform with the same rotation
        std::vector<ModeFamily> kids = scr.children;
        for (Eigen::Index m = 0; m < 2; ++m) {
            kids[m] = s.root.children[0];
            kids[m].modes *= Rot(0, m);
            ModeFamily other = s.root.children[1];
            other.modes *= Rot(1, m);
            kids[m].modes.conservativeResize(Eigen::NoChange, kids[m].rank() + other.rank());
            kids[m].modes.rightCols(other.rank()) = other.modes;
            kids[m].finals.conservativeResize(Eigen::NoChange, kids[m].modes.cols());
            kids[m].finals.rightCols(other.rank()) = other.finals;
        }
        scr.children = kids;
    }
    DoTtState sd{grids, scr, 0};
    GridTensor ref = reconstruct(grids, s.root);
    CHECK(max_abs(reconstruct(grids, scr).values - ref.values) < 1e-12);

    auto conv = do_to_bo(sd);
    const auto& bo = conv.state;
    CHECK(max_abs(reconstruct(grids, bo.root).values - ref.values) < 1e-9);
    Eigen::MatrixXd g = bo.root.modes.transpose() * grids[0].weights.asDiagonal() * bo.root.modes;
    Eigen::MatrixXd off = g;
    off.diagonal().setZero();
    CHECK(max_abs(off) < 1e-9 * g(0, 0));
    for (Eigen::Index k = 1; k < g.rows(); ++k) CHECK(g(k, k) <= g(k - 1, k - 1));
    CHECK(max_abs(assemble_gram(grids, bo.root) - Eigen::MatrixXd::Identity(g.rows(), g.rows())) < 1e-9);
    CHECK(max_abs(conv.transform.P * conv.transform.P.transpose() - Eigen::MatrixXd::Identity(g.rows(), g.rows())) < 1e-12);
    // psi = phi Lambda^{-1/2} P recovers the scrambled DO family
    Eigen::MatrixXd psi = do_modes_from_bo(grids[0], bo.root, conv.transform.P);
    CHECK(max_abs(psi - sd.root.modes) < 1e-9);

    auto back = bo_to_do(bo);
    CHECK(orthonormality_defect(grids, back.root) < 1e-9);
    CHECK(max_abs(reconstruct(grids, back.root).values - ref.values) < 1e-9);
    auto back2 = bo_to_do(bo, conv.transform.P);
    CHECK(max_abs(back2.root.modes - sd.root.modes) < 1e-9);
    CHECK(max_abs(reconstruct(grids, back2.root).values - ref.values) < 1e-9);
}

TEST_CASE("P co-integration and DO/BO equivalence")
{
    auto grids = gl_grids(3, 20);
    GridTensor u0 = sample(grids, [](const double* x) { return test::forced_example(x, 0); });
    auto bw = with_identity_transform(do_to_bo(do_state_from(decompose(u0, tt_tree(3), grids, 1e-5))).state);
    auto ds = bo_to_do(bw.state);
    auto G = forcing_3d_example();

    const double dt = 1e-3;
    double worst_p = 0, worst_u = 0, worst_modes = 0;
    for (int i = 1; i <= 500; ++i) {
        ds = rk4_step(ds, G, dt);
        bw = rk4_step(bw, G, dt);
        if (i <= 100) {
            const auto& P = bw.P[0];
            worst_p = std::max(worst_p, max_abs(P.transpose() * P - Eigen::MatrixXd::Identity(P.rows(), P.cols())));
        }
        if (i % 50 == 0) {
            GridTensor a = reconstruct(grids, ds.root), b = reconstruct(grids, bw.state.root);
            worst_u = std::max(worst_u, max_abs(a.values - b.values));
            worst_modes = std::max(worst_modes, max_abs(ds.root.modes - do_modes_from_bo(grids[0], bw.state.root, bw.P[0])));
        }
    }
    CHECK(worst_p <= 1e-8);
    CHECK(worst_u <= 1e-6);
    CHECK(worst_modes <= 1e-6);
}

TEST_CASE("reorthonormalize")
{
    auto grids = std::vector<Grid>(3, fourier_grid(10, 2 * pi));
    GridTensor u = sample(grids, smooth3);
    auto s = do_state_from(decompose(u, tt_tree(3), grids, 1e-4));
    ReorthReport rep;
    auto same = reorthonormalize(s, &rep);
    CHECK(rep.families_changed == 0);
    CHECK(max_diff(same.root, s.root) < 1e-12);

    std::mt19937 rng(6);
    std::normal_distribution<double> N;
    DoTtState p = s;
    std::function<void(ModeFamily&)> perturb = [&](ModeFamily& f) {
        for (Eigen::Index i = 0; i < f.modes.size(); ++i) f.modes.data()[i] += 1e-4 * N(rng);
        for (auto& c : f.children) perturb(c);
    };
    perturb(p.root);
    GridTensor before = reconstruct(grids, p.root);
    auto q = reorthonormalize(p, &rep);
    CHECK(rep.families_changed > 0);
    CHECK(orthonormality_defect(grids, q.root) < 1e-12);
    GridTensor after = reconstruct(grids, q.root);
    CHECK(max_abs(after.values - before.values) < 1e-10 * max_abs(before.values));

    // duplicated sibling
    DoTtState dup = s;
    ModeFamily& f = dup.root;
    const Eigen::Index r = f.rank();
    f.modes.conservativeResize(Eigen::NoChange, r + 1);
    f.modes.col(r) = f.modes.col(0);
    f.children.push_back(f.children[0]);
    GridTensor b2 = reconstruct(grids, dup.root);
    auto red = reorthonormalize(dup, &rep);
    CHECK(rep.rank_reductions == 1);
    CHECK(red.root.rank() == r);
    CHECK(orthonormality_defect(grids, red.root) < 1e-12);
    CHECK(max_abs(reconstruct(grids, red.root).values - b2.values) < 1e-10 * max_abs(b2.values));
}

TEST_CASE("full-rank 2d DO matches full-grid integration")
{
    const int n = 8;
    std::vector<Grid> grids(2, fourier_grid(n, 2 * pi));
    std::mt19937 rng(12);
    std::normal_distribution<double> N;
    GridTensor u;
    u.dims = {n, n};
    u.values.resize(n * n);
    for (auto& v : u.values) v = N(rng);
    // diagonal-dominant part keeps the spectrum away from zero
    for (int i = 0; i < n; ++i) u.values(i + n * i) += 4;
    auto s = do_state_from(decompose(u, tt_tree(2), grids, 0, {ThresholdRule::Amplitude, true}));
    REQUIRE(s.root.rank() == n);
    auto G = advection_2d();
    const double dt = 1e-3;
    GridTensor ref = u;
    VectorField f = [&](double t, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        GridTensor x = u;
        x.values = y;
        return apply_dense(G, x, grids, t).values;
    };
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        ref.values = rk4_step(f, i * dt, ref.values, dt);
        s = rk4_step(s, G, dt);
        worst = std::max(worst, max_abs(reconstruct(grids, s.root).values - ref.values));
    }
    CHECK(worst < 1e-6);
}
