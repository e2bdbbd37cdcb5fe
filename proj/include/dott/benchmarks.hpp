#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "dott/grid.hpp"
#include "dott/grid_tensor.hpp"
#include "dott/mode_tree.hpp"
#include "dott/operator.hpp"

namespace dott {

using PointFunction = std::function<double(const double*)>;

// Transport field of u_t = v(x) . grad u.
struct CharacteristicsField {
    int d = 0;
    std::vector<PointFunction> velocity; // one component per variable
    double substep = 1e-3;               // RK4 step of the characteristic ODE
};

// Reads v off a first-order transport operator: every term must carry exactly
// one d/dx factor and multipliers elsewhere, with no time dependence and no sources.
CharacteristicsField characteristics_field(const SeparableOperator& G);

// Integrates dx/dt = v(x) from x over duration t.
Eigen::VectorXd characteristic_point(const CharacteristicsField& field, const Eigen::VectorXd& x, double t);

// u(x, t) = u0(X(t; x)) at each column of points (d x N). Points are split
// over threads; output order and values do not depend on the split.
Eigen::VectorXd characteristics_solve(const CharacteristicsField& field, const PointFunction& u0,
                                      const Eigen::MatrixXd& points, double t, int threads = 1);

// Same on every node of the tensor grid.
GridTensor characteristics_solve(const CharacteristicsField& field, const PointFunction& u0,
                                 const std::vector<Grid>& grids, double t, int threads = 1,
                                 std::int64_t cap = default_element_cap);

// Foot points X(t; x) of every grid node, advanced incrementally; the flow is
// autonomous, so X(t2; x) = X(t2 - t1; X(t1; x)).
class CharacteristicsTracker {
public:
    CharacteristicsTracker(CharacteristicsField field, const std::vector<Grid>& grids, int threads = 1,
                           std::int64_t cap = default_element_cap);
    void advance_to(double t);
    double time() const { return time_; }
    GridTensor values(const PointFunction& u0) const;

private:
    CharacteristicsField field_;
    int threads_;
    std::vector<Eigen::Index> dims_;
    Eigen::MatrixXd points_; // d x N, first variable fastest
    double time_ = 0;
};

// Heat semigroup e^{t Laplacian} applied exactly to the trigonometric
// interpolant of u0 (all grids periodic).
Eigen::MatrixXd fourier_heat_matrix(const Grid& g, double t);
GridTensor fourier_diffusion_solution(const GridTensor& u0, const std::vector<Grid>& grids, double t);

// Rank-one test problems on [0, 2pi]^d: psi_j = sin(x)/sqrt(pi) for j < d,
// psi_d = 1e7 (3 + sin x) for transport and 1e7 sin x for diffusion.
double hyperbolic_rank1_initial(int j, int d, double x);
double diffusion_rank1_initial(int j, int d, double x);

// Factors psi_j(x_j + j t) of the transport problem u_t = sum_j j u_{x_j}.
std::vector<Eigen::VectorXd> analytic_50d_hyperbolic(const std::vector<Grid>& grids, double t);

struct SeparatedSolution {
    double decay = 1;
    std::vector<Eigen::VectorXd> factors;
};
// Heat equation: initial factors times e^{-d t}.
SeparatedSolution analytic_50d_diffusion(const std::vector<Grid>& grids, double t);

struct ErrorPair {
    double absolute = 0;
    double relative = 0; // absolute / ||benchmark||
};

double l2_error_full(const GridTensor& a, const GridTensor& b, const std::vector<Grid>& grids);
ErrorPair error_vs(const GridTensor& approx, const GridTensor& benchmark, const std::vector<Grid>& grids);

enum class Rank1ErrorForm {
    Telescoped,   // balanced factors, sum over pairs of single-factor differences
    ThreeProducts // prod <u,u> + prod <v,v> - 2 prod <u,v>, clamped at zero
};

// L2 distance between prod_j u_j and prod_j v_j from one-dimensional quadratures.
double l2_error_rank1_vs_analytic(const std::vector<Eigen::VectorXd>& u, const std::vector<Eigen::VectorXd>& v,
                                  const std::vector<Grid>& grids, Rank1ErrorForm form = Rank1ErrorForm::Telescoped);
double l2_norm_rank1(const std::vector<Eigen::VectorXd>& u, const std::vector<Grid>& grids);

// Per-variable factors of a rank-one DO-TT state (the final absorbs the amplitude).
std::vector<Eigen::VectorXd> rank1_factors(const DoTtState& s);

} // namespace dott
