#include <doctest.h>

#include <cmath>
#include <random>

#include "dott/decomposition.hpp"
#include "dott/error.hpp"
#include "dott/mode_tree.hpp"
#include "dott/tensor_train.hpp"
#include "test_support.hpp"

using namespace dott;

namespace {

std::vector<Grid> gl_grids(int d, int n) { return std::vector<Grid>(d, gauss_legendre_grid(n, -1.0, 1.0)); }

double rel_diff(const GridTensor& a, const GridTensor& b, const std::vector<Grid>& g)
{
    GridTensor diff = a;
    diff.values -= b.values;
    return l2_norm(diff, g) / l2_norm(a, g);
}

} // namespace

TEST_CASE("DO and BO states from a static decomposition")
{
    auto grids = gl_grids(3, 20);
    GridTensor u = sample(grids, test::three_d_example);
    auto h = decompose(u, tt_tree(3), grids, 1e-5);
    auto dstate = do_state_from(h, 0.25);
    auto bstate = bo_state_from(h, 0.25);
    CHECK(dstate.time == 0.25);

    GridTensor rh = reconstruct(h);
    CHECK(rel_diff(rh, reconstruct(grids, dstate.root), grids) < 1e-12);
    CHECK(rel_diff(rh, reconstruct(grids, bstate.root), grids) < 1e-12);

    // zero-rank branches are pruned, everything else matches
    auto r = ranks(dstate.root, 3);
    auto rh_ranks = h.ranks();
    REQUIRE(r.size() == 2);
    std::vector<Eigen::Index> kept;
    for (auto k : rh_ranks[1])
        if (k > 0) kept.push_back(k);
    CHECK(rh_ranks[0][0] == 9);
    CHECK(r[0][0] == static_cast<Eigen::Index>(kept.size()));
    CHECK(r[1] == kept);
    CHECK(orthonormality_defect(grids, dstate.root) < 1e-12);

    // BO level-1 modes carry lambda^2 on the Gram diagonal
    Eigen::MatrixXd G = bstate.root.modes.transpose() * grids[0].weights.asDiagonal() * bstate.root.modes;
    Eigen::VectorXd lam2 = h.root.lambdas.array().square();
    for (Eigen::Index k = 0; k < G.rows(); ++k) CHECK(std::abs(G(k, k) - lam2(k)) < 1e-10 * lam2(0));
    Eigen::MatrixXd off = G;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() < 1e-10 * lam2(0));

    // pointwise evaluation
    std::vector<Eigen::Index> idx{3, 7, 11};
    CHECK(std::abs(evaluate_at_node(grids, dstate.root, idx) - evaluate_at_node(h, idx)) < 1e-12);
}

TEST_CASE("l2 inner products by chained Grams")
{
    std::mt19937 rng(11);
    auto grids = gl_grids(4, 8);
    auto f1 = test::random_smooth_nd(rng, 4);
    auto f2 = test::random_smooth_nd(rng, 4);
    GridTensor a = sample(grids, f1), b = sample(grids, f2);
    auto sa = do_state_from(decompose(a, tt_tree(4), grids, 0, {ThresholdRule::Amplitude, true}));
    auto sb = do_state_from(decompose(b, tt_tree(4), grids, 1e-3));
    GridTensor rb = reconstruct(grids, sb.root);
    double dense = l2_inner(a, rb, grids);
    CHECK(std::abs(l2_inner(grids, sa.root, sb.root) - dense) < 1e-11 * std::abs(dense) + 1e-13);
    CHECK(std::abs(l2_norm(grids, sa.root) - l2_norm(a, grids)) < 1e-11 * l2_norm(a, grids));
}

TEST_CASE("flatten round trip")
{
    auto grids = gl_grids(3, 10);
    GridTensor u = sample(grids, test::three_d_example);
    auto s = do_state_from(decompose(u, tt_tree(3), grids, 1e-4));
    Eigen::VectorXd v = flatten(s.root);
    CHECK(v.size() == flat_size(s.root));
    ModeFamily copy = s.root;
    unflatten(Eigen::VectorXd::Zero(v.size()), copy);
    CHECK(flatten(copy).norm() == 0.0);
    unflatten(v, copy);
    CHECK(flatten(copy) == v);
    CHECK_THROWS_AS(unflatten(Eigen::VectorXd::Zero(v.size() + 1), copy), InvalidArgument);
}

TEST_CASE("rank-one state")
{
    auto grids = gl_grids(3, 6);
    std::vector<Eigen::VectorXd> f;
    for (int j = 0; j < 3; ++j) f.push_back(grids[j].nodes.array() + 2.0 + j);
    auto s = rank_one_state(grids, f, 1.0);
    auto r = ranks(s.root, 3);
    CHECK(r[0] == std::vector<Eigen::Index>{1});
    CHECK(r[1] == std::vector<Eigen::Index>{1});
    CHECK(orthonormality_defect(grids, s.root) < 1e-14);
    GridTensor exact = outer(f);
    CHECK(rel_diff(exact, reconstruct(grids, s.root), grids) < 1e-14);
}

TEST_CASE("tensor train from modes")
{
    auto grids = gl_grids(4, 7);
    std::mt19937 rng(3);
    GridTensor u = sample(grids, test::random_smooth_nd(rng, 4));
    auto s = do_state_from(decompose(u, tt_tree(4), grids, 1e-6));
    TensorTrain tt = tt_from_modes(s.root, 4);
    CHECK(rel_diff(reconstruct(grids, s.root), to_dense(tt), grids) < 1e-13);
    auto rk = tt.ranks();
    CHECK(rk.front() == 1);
    CHECK(rk.back() == 1);
    CHECK(rk[1] == s.root.rank());
}
