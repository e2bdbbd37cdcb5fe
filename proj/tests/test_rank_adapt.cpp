#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dott/error.hpp"
#include "dott/rank_adapt.hpp"
#include "test_support.hpp"

using namespace dott;
using std::numbers::pi;

namespace {

std::vector<Grid> gl_grids(int d, int n) { return std::vector<Grid>(d, gauss_legendre_grid(n, -1.0, 1.0)); }

double max_abs(const Eigen::MatrixXd& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

double sq_dist(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b)
{
    GridTensor x = reconstruct(grids, a), y = reconstruct(grids, b);
    x.values -= y.values;
    return l2_inner(x, x, grids);
}

DoTtState three_d_state(double sigma = 1e-5)
{
    auto grids = gl_grids(3, 20);
    return do_state_from(decompose(sample(grids, test::three_d_example), tt_tree(3), grids, sigma));
}

} // namespace

TEST_CASE("level-1 singular values of a fresh decomposition")
{
    auto grids = gl_grids(3, 12);
    auto h = decompose(sample(grids, test::three_d_example), tt_tree(3), grids, 1e-13);
    auto s = do_state_from(h);
    Eigen::VectorXd sv = level1_singular_values(s);
    Eigen::VectorXd lam = h.root.lambdas.head(sv.size());
    CHECK(max_abs(sv - lam) < 1e-10 * lam(0));
}

TEST_CASE("remove_modes")
{
    auto s = three_d_state();
    Eigen::VectorXd sv = level1_singular_values(s);
    const Eigen::Index r = sv.size();

    auto same = remove_modes(s, 0.5 * sv(r - 1));
    CHECK(same.removed == 0);
    CHECK(max_abs(flatten(same.state.root) - flatten(s.root)) == 0.0);

    // one branch below epsilon: the reconstruction loses exactly its energy
    auto cut = remove_modes(s, std::sqrt(sv(r - 1) * sv(r - 2)));
    CHECK(cut.removed == 1);
    CHECK(cut.state.root.rank() == r - 1);
    const double lost = sq_dist(s.grids, s.root, cut.state.root);
    CHECK(std::abs(cut.dropped_energy - lost) <= 1e-9 * lost);
    auto before = ranks(s.root, 3), after = ranks(cut.state.root, 3);
    CHECK(after[1] == std::vector<Eigen::Index>(before[1].begin(), before[1].end() - 1));

    // two at once
    auto two = remove_modes(s, std::sqrt(sv(r - 2) * sv(r - 3)));
    CHECK(two.removed == 2);

    CHECK_THROWS_AS(remove_modes(s, 2 * sv(0)), NumericError);
    CHECK_THROWS_AS(remove_modes(s, -1), InvalidArgument);
}

TEST_CASE("removal matches the truncation accounting")
{
    auto grids = gl_grids(3, 12);
    auto h = decompose(sample(grids, test::three_d_example), tt_tree(3), grids, 1e-12);
    auto s = do_state_from(h);
    const Eigen::Index r = s.root.rank();
    const Eigen::VectorXd& lam = h.root.lambdas;
    auto cut = remove_modes(s, std::sqrt(lam(r - 2) * lam(r - 3)));
    CHECK(cut.removed == 2);
    const double predicted = lam.tail(2).squaredNorm();
    CHECK(std::abs(sq_dist(grids, s.root, cut.state.root) - predicted) <= 1e-9 * predicted);
}

TEST_CASE("candidate basis is orthonormal")
{
    for (const auto& g : {fourier_grid(12, 2 * pi), fourier_grid(13, 3.0), gauss_legendre_grid(10, 0.0, 2.0)}) {
        Eigen::MatrixXd B = candidate_basis(g);
        CHECK(B.cols() == g.size());
        Eigen::MatrixXd G = B.transpose() * g.weights.asDiagonal() * B;
        CHECK(max_abs(G - Eigen::MatrixXd::Identity(B.cols(), B.cols())) < 1e-10);
        CHECK(max_abs(B.col(0) - B.col(0).mean() * Eigen::VectorXd::Ones(g.size())) < 1e-14);
    }
}

TEST_CASE("add_modes_zero_energy")
{
    auto s = three_d_state();
    const Eigen::Index r = s.root.rank();
    auto a = add_modes_zero_energy(s, {}, 2);
    CHECK(a.root.rank() == r + 2);
    CHECK(orthonormality_defect(a.grids, a.root) < 1e-12);
    CHECK(max_abs(reconstruct(a.grids, a.root).values - reconstruct(s.grids, s.root).values) < 1e-12);
    auto ra = ranks(a.root, 3);
    CHECK(ra[1].back() == 1);

    auto b = add_modes_zero_energy(s, {0}, 1);
    CHECK(b.root.children[0].rank() == s.root.children[0].rank() + 1);
    CHECK(orthonormality_defect(b.grids, b.root) < 1e-12);
    CHECK(max_abs(reconstruct(b.grids, b.root).values - reconstruct(s.grids, s.root).values) < 1e-12);

    CHECK_THROWS_AS(add_modes_zero_energy(s, {}, 0), InvalidArgument);
    CHECK_THROWS_AS(add_modes_zero_energy(s, {0, 0}, 1), InvalidArgument);
    CHECK_THROWS_AS(add_modes_zero_energy(s, {}, 20), NumericError);
}

TEST_CASE("warm-up gives the new modes energy")
{
    auto g = fourier_grid(64, 2 * pi);
    std::vector<Grid> grids{g, g};
    GridTensor u0 = sample(grids, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    auto s = do_state_from(decompose(u0, tt_tree(2), grids, 1e-2));
    const Eigen::Index r = s.root.rank();
    auto G = advection_2d();
    auto added = add_modes_zero_energy(s, {}, 1);
    auto w = warm_up(added, G, 1e-3, {}, r);
    CHECK(w.steps == 10);
    CHECK(w.new_mode_energy >= 1e-8);
    CHECK(w.gram_condition < 1e12);
    // leaf modes are frozen during warm-up
    CHECK(max_abs(w.state.root.modes - added.root.modes) == 0.0);
    // and the full system runs afterwards
    auto next = rk4_step(w.state, G, 1e-3);
    CHECK(std::isfinite(flatten(next.root).norm()));
}

TEST_CASE("explicit tensor step")
{
    auto g = fourier_grid(16, 2 * pi);
    std::vector<Grid> grids{g, g};
    GridTensor u0 = sample(grids, [](const double* x) { return std::exp(std::sin(x[0] + x[1])); });
    auto full = do_state_from(decompose(u0, tt_tree(2), grids, 0.0));

    SeparableOperator zero;
    zero.dimension = 2;
    auto z = adapt_by_explicit_step(full, zero, 1e-3, 3, 0.0, {ThresholdRule::Amplitude, 0});
    CHECK(std::abs(z.state.time - 3e-3) < 1e-15);
    CHECK(max_abs(reconstruct(grids, z.state.root).values - u0.values) < 1e-10);
    CHECK(z.restart_delta < 1e-9 * std::sqrt(l2_inner(u0, u0, grids)));

    // dense RK4 oracle on the full grid
    auto G = advection_2d();
    const double dt = 1e-3;
    auto e = adapt_by_explicit_step(full, G, dt, 5, 0.0, {ThresholdRule::Amplitude, 0});
    GridTensor u = u0;
    for (int i = 0; i < 5; ++i) {
        const double t = i * dt;
        GridTensor k1 = apply_dense(G, u, grids, t);
        GridTensor y = u;
        y.values += dt / 2 * k1.values;
        GridTensor k2 = apply_dense(G, y, grids, t + dt / 2);
        y.values = u.values + dt / 2 * k2.values;
        GridTensor k3 = apply_dense(G, y, grids, t + dt / 2);
        y.values = u.values + dt * k3.values;
        GridTensor k4 = apply_dense(G, y, grids, t + dt);
        u.values += dt / 6 * (k1.values + 2 * k2.values + 2 * k3.values + k4.values);
    }
    GridTensor diff = reconstruct(grids, e.state.root);
    diff.values -= u.values;
    CHECK(l2_norm(diff, grids) < 1e-10 * l2_norm(u, grids));

    // truncated start: the rank grows by the add count
    auto s = do_state_from(decompose(u0, tt_tree(2), grids, 1e-3));
    auto grown = adapt_by_explicit_step(s, G, dt, 1, 1e-13);
    CHECK(grown.state.root.rank() == s.root.rank() + 1);
    CHECK(grown.restart_delta > 0);
    {
        // one dense RK4 step from the truncated start is the lossless result
        GridTensor v = reconstruct(grids, s.root), y = v;
        GridTensor k1 = apply_dense(G, v, grids, 0);
        y.values = v.values + dt / 2 * k1.values;
        GridTensor k2 = apply_dense(G, y, grids, dt / 2);
        y.values = v.values + dt / 2 * k2.values;
        GridTensor k3 = apply_dense(G, y, grids, dt / 2);
        y.values = v.values + dt * k3.values;
        GridTensor k4 = apply_dense(G, y, grids, dt);
        v.values += dt / 6 * (k1.values + 2 * k2.values + 2 * k3.values + k4.values);
        v.values -= reconstruct(grids, grown.state.root).values;
        CHECK(grown.restart_delta == doctest::Approx(std::sqrt(l2_inner(v, v, grids))).epsilon(1e-6));
    }
    CHECK(grown.restart_delta < 1e-2);
    CHECK(orthonormality_defect(grids, grown.state.root) < 1e-12);

    ExplicitStepOptions tight;
    tight.rank_cap = 1;
    CHECK_THROWS_AS(adapt_by_explicit_step(s, G, dt, 1, 1e-13, tight), NumericError);
    CHECK_THROWS_AS(adapt_by_explicit_step(s, G, dt, 0, 1e-13), InvalidArgument);
}
