#include "dott/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "dott/error.hpp"

namespace dott {

namespace {

void require_periodic(const std::vector<Grid>& grids, const char* who)
{
    for (const auto& g : grids)
        if (g.kind != GridKind::FourierEquispaced) throw InvalidArgument(std::string(who) + ": every grid must be periodic");
}

} // namespace

CharacteristicsField characteristics_field(const SeparableOperator& G)
{
    G.validate();
    if (!G.sources.empty()) throw InvalidArgument("characteristics_field: operator has source terms");
    const int d = G.dimension;
    // per axis: coefficient and the (variable, multiplier) pairs of each term
    struct Term {
        double c;
        std::vector<std::pair<int, ScalarFunction>> m;
    };
    std::vector<std::vector<Term>> per_axis(d);
    for (const auto& term : G.terms) {
        if (term.time_dependence) throw InvalidArgument("characteristics_field: time-dependent coefficient");
        int axis = -1;
        Term t{term.coefficient, {}};
        for (int j = 0; j < d; ++j) {
            const auto& a = term.factors[j];
            if (a.multiplier) t.m.emplace_back(j, *a.multiplier);
            if (a.derivative == 0) continue;
            if (a.derivative != 1 || axis >= 0) throw InvalidArgument("characteristics_field: term is not first-order transport");
            axis = j;
        }
        if (axis < 0) throw InvalidArgument("characteristics_field: term has no derivative");
        per_axis[axis].push_back(std::move(t));
    }
    CharacteristicsField f;
    f.d = d;
    for (int i = 0; i < d; ++i)
        f.velocity.push_back([terms = per_axis[i]](const double* x) {
            double v = 0;
            for (const auto& t : terms) {
                double p = t.c;
                for (const auto& [j, fn] : t.m) p *= fn(x[j]);
                v += p;
            }
            return v;
        });
    return f;
}

namespace {

void check_field(const CharacteristicsField& field)
{
    if (!(field.substep > 0)) throw InvalidArgument("characteristics: substep must be positive");
    if (field.d < 1 || static_cast<int>(field.velocity.size()) != field.d)
        throw InvalidArgument("characteristics: one velocity component per variable expected");
}

// RK4 on one point in place; k holds 5 scratch vectors of length d.
void flow(const CharacteristicsField& field, double* y, double t, std::vector<double>& k)
{
    const long steps = static_cast<long>(std::ceil(t / field.substep - 1e-9));
    if (steps <= 0) return;
    const int d = field.d;
    const double h = t / steps;
    k.resize(5 * static_cast<std::size_t>(d));
    double *k1 = k.data(), *k2 = k1 + d, *k3 = k2 + d, *k4 = k3 + d, *z = k4 + d;
    auto eval = [&](const double* x, double* out) {
        for (int i = 0; i < d; ++i) out[i] = field.velocity[i](x);
    };
    for (long s = 0; s < steps; ++s) {
        eval(y, k1);
        for (int i = 0; i < d; ++i) z[i] = y[i] + h / 2 * k1[i];
        eval(z, k2);
        for (int i = 0; i < d; ++i) z[i] = y[i] + h / 2 * k2[i];
        eval(z, k3);
        for (int i = 0; i < d; ++i) z[i] = y[i] + h * k3[i];
        eval(z, k4);
        for (int i = 0; i < d; ++i) y[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
}

void flow_columns(const CharacteristicsField& field, Eigen::MatrixXd& pts, double t, int threads)
{
    const Eigen::Index n = pts.cols();
    auto work = [&](Eigen::Index lo, Eigen::Index hi) {
        std::vector<double> scratch;
        for (Eigen::Index p = lo; p < hi; ++p) flow(field, pts.col(p).data(), t, scratch);
    };
    const int nt = static_cast<int>(std::clamp<Eigen::Index>(threads, 1, std::max<Eigen::Index>(n, 1)));
    if (nt == 1) {
        work(0, n);
        return;
    }
    std::vector<std::thread> pool;
    for (int i = 0; i < nt; ++i) pool.emplace_back(work, n * i / nt, n * (i + 1) / nt);
    for (auto& th : pool) th.join();
}

Eigen::VectorXd evaluate_columns(const PointFunction& u0, const Eigen::MatrixXd& pts)
{
    Eigen::VectorXd out(pts.cols());
    for (Eigen::Index p = 0; p < pts.cols(); ++p) out(p) = u0(pts.col(p).data());
    return out;
}

Eigen::MatrixXd grid_points(const std::vector<Grid>& grids, std::vector<Eigen::Index>& dims, std::int64_t cap)
{
    check_element_cap(element_count(grids), cap);
    dims.clear();
    Eigen::Index total = 1;
    for (const auto& g : grids) {
        dims.push_back(g.size());
        total *= g.size();
    }
    const int d = static_cast<int>(grids.size());
    Eigen::MatrixXd pts(d, total);
    for (Eigen::Index p = 0; p < total; ++p) {
        Eigen::Index rem = p;
        for (int j = 0; j < d; ++j) {
            pts(j, p) = grids[j].nodes(rem % dims[j]);
            rem /= dims[j];
        }
    }
    return pts;
}

} // namespace

Eigen::VectorXd characteristic_point(const CharacteristicsField& field, const Eigen::VectorXd& x, double t)
{
    if (!(t >= 0)) throw InvalidArgument("characteristics: t must be nonnegative");
    check_field(field);
    if (x.size() != field.d) throw InvalidArgument("characteristics: dimension mismatch");
    Eigen::VectorXd y = x;
    std::vector<double> scratch;
    flow(field, y.data(), t, scratch);
    return y;
}

Eigen::VectorXd characteristics_solve(const CharacteristicsField& field, const PointFunction& u0,
                                      const Eigen::MatrixXd& points, double t, int threads)
{
    if (!(t >= 0)) throw InvalidArgument("characteristics: t must be nonnegative");
    check_field(field);
    if (points.rows() != field.d) throw InvalidArgument("characteristics_solve: points must have d rows");
    Eigen::MatrixXd pts = points;
    flow_columns(field, pts, t, threads);
    return evaluate_columns(u0, pts);
}

GridTensor characteristics_solve(const CharacteristicsField& field, const PointFunction& u0,
                                 const std::vector<Grid>& grids, double t, int threads, std::int64_t cap)
{
    std::vector<Eigen::Index> dims;
    const Eigen::MatrixXd pts = grid_points(grids, dims, cap);
    GridTensor out(dims);
    out.values = characteristics_solve(field, u0, pts, t, threads);
    return out;
}

CharacteristicsTracker::CharacteristicsTracker(CharacteristicsField field, const std::vector<Grid>& grids, int threads,
                                               std::int64_t cap)
    : field_(std::move(field)), threads_(threads)
{
    check_field(field_);
    if (static_cast<int>(grids.size()) != field_.d) throw InvalidArgument("CharacteristicsTracker: dimension mismatch");
    points_ = grid_points(grids, dims_, cap);
}

void CharacteristicsTracker::advance_to(double t)
{
    if (t < time_) throw InvalidArgument("CharacteristicsTracker: time must not decrease");
    flow_columns(field_, points_, t - time_, threads_);
    time_ = t;
}

GridTensor CharacteristicsTracker::values(const PointFunction& u0) const
{
    GridTensor out(dims_);
    out.values = evaluate_columns(u0, points_);
    return out;
}

Eigen::MatrixXd fourier_heat_matrix(const Grid& g, double t)
{
    if (g.kind != GridKind::FourierEquispaced) throw InvalidArgument("fourier_heat_matrix: grid must be periodic");
    const Eigen::Index n = g.size();
    const double base = 2 * std::numbers::pi / g.length();
    // (1/n) sum_m e^{-w_m^2 t} cos(w_m (x_i - x_k)) over the symmetric band,
    // the Nyquist mode counted once for even n
    Eigen::VectorXd kernel = Eigen::VectorXd::Zero(n);
    for (Eigen::Index s = 0; s < n; ++s) {
        const double dx = s * g.length() / n;
        double acc = 1;
        for (Eigen::Index m = 1; 2 * m < n; ++m) {
            const double w = base * m;
            acc += 2 * std::exp(-w * w * t) * std::cos(w * dx);
        }
        if (n % 2 == 0) {
            const double w = base * (n / 2);
            acc += std::exp(-w * w * t) * ((s % 2) ? -1.0 : 1.0);
        }
        kernel(s) = acc / n;
    }
    Eigen::MatrixXd E(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) E(i, k) = kernel((i - k + n) % n);
    return E;
}

GridTensor fourier_diffusion_solution(const GridTensor& u0, const std::vector<Grid>& grids, double t)
{
    require_periodic(grids, "fourier_diffusion_solution");
    if (!(t >= 0)) throw InvalidArgument("fourier_diffusion_solution: t must be nonnegative");
    if (u0.order() != static_cast<int>(grids.size())) throw InvalidArgument("fourier_diffusion_solution: order mismatch");
    check_element_cap(element_count(grids), default_element_cap);
    GridTensor out = u0;
    for (int j = 0; j < u0.order(); ++j) out = apply_along(out, j, fourier_heat_matrix(grids[j], t));
    return out;
}

double hyperbolic_rank1_initial(int j, int d, double x)
{
    return j == d ? 1e7 * (3 + std::sin(x)) : std::sin(x) / std::sqrt(std::numbers::pi);
}

double diffusion_rank1_initial(int j, int d, double x)
{
    return j == d ? 1e7 * std::sin(x) : std::sin(x) / std::sqrt(std::numbers::pi);
}

std::vector<Eigen::VectorXd> analytic_50d_hyperbolic(const std::vector<Grid>& grids, double t)
{
    const int d = static_cast<int>(grids.size());
    std::vector<Eigen::VectorXd> out;
    for (int j = 1; j <= d; ++j)
        out.push_back(grids[j - 1].nodes.unaryExpr([&](double x) { return hyperbolic_rank1_initial(j, d, x + j * t); }));
    return out;
}

SeparatedSolution analytic_50d_diffusion(const std::vector<Grid>& grids, double t)
{
    const int d = static_cast<int>(grids.size());
    SeparatedSolution s;
    s.decay = std::exp(-d * t);
    for (int j = 1; j <= d; ++j)
        s.factors.push_back(grids[j - 1].nodes.unaryExpr([&](double x) { return diffusion_rank1_initial(j, d, x); }));
    return s;
}

double l2_error_full(const GridTensor& a, const GridTensor& b, const std::vector<Grid>& grids)
{
    if (a.dims != b.dims) throw InvalidArgument("l2_error_full: shape mismatch");
    GridTensor diff = a;
    diff.values -= b.values;
    return l2_norm(diff, grids);
}

ErrorPair error_vs(const GridTensor& approx, const GridTensor& benchmark, const std::vector<Grid>& grids)
{
    ErrorPair e;
    e.absolute = l2_error_full(approx, benchmark, grids);
    const double nb = l2_norm(benchmark, grids);
    e.relative = nb > 0 ? e.absolute / nb : e.absolute;
    return e;
}

double l2_error_rank1_vs_analytic(const std::vector<Eigen::VectorXd>& u, const std::vector<Eigen::VectorXd>& v,
                                  const std::vector<Grid>& grids, Rank1ErrorForm form)
{
    const std::size_t d = grids.size();
    if (u.size() != d || v.size() != d) throw InvalidArgument("l2_error_rank1_vs_analytic: factor count mismatch");
    for (std::size_t j = 0; j < d; ++j)
        if (u[j].size() != grids[j].size() || v[j].size() != grids[j].size())
            throw InvalidArgument("l2_error_rank1_vs_analytic: factor length mismatch");
    auto ip = [&](std::size_t j, const Eigen::VectorXd& f, const Eigen::VectorXd& g) { return inner_product(grids[j], f, g); };

    if (form == Rank1ErrorForm::ThreeProducts) {
        double uu = 1, vv = 1, uv = 1;
        for (std::size_t j = 0; j < d; ++j) {
            uu *= ip(j, u[j], u[j]);
            vv *= ip(j, v[j], v[j]);
            uv *= ip(j, u[j], v[j]);
        }
        return std::sqrt(std::max(uu + vv - 2 * uv, 0.0));
    }

    // same product, balanced: unit factors sign-aligned with v, amplitude on the last
    std::vector<Eigen::VectorXd> ub = u, vb = v;
    for (std::size_t j = 0; j + 1 < d; ++j) {
        const double nu = std::sqrt(ip(j, u[j], u[j])), nv = std::sqrt(ip(j, v[j], v[j]));
        if (nu == 0 || nv == 0) continue;
        const double sgn = ip(j, u[j], v[j]) < 0 ? -1.0 : 1.0;
        ub[j] *= sgn / nu;
        ub[d - 1] *= sgn * nu;
        vb[j] /= nv;
        vb[d - 1] *= nv;
    }

    // u - v = sum_k T_k with T_k = u_1..u_{k-1} (u_k - v_k) v_{k+1}..v_d
    std::vector<double> a(d), b(d), c(d), e(d), p(d), q(d);
    for (std::size_t j = 0; j < d; ++j) {
        const Eigen::VectorXd& uj = ub[j];
        const Eigen::VectorXd& vj = vb[j];
        const Eigen::VectorXd diff = uj - vj;
        a[j] = ip(j, uj, uj);
        b[j] = ip(j, vj, vj);
        c[j] = ip(j, uj, vj);
        e[j] = ip(j, diff, diff);
        p[j] = ip(j, diff, uj);
        q[j] = ip(j, diff, vj);
    }
    std::vector<double> pre(d + 1, 1), suf(d + 1, 1);
    for (std::size_t j = 0; j < d; ++j) pre[j + 1] = pre[j] * a[j];
    for (std::size_t j = d; j-- > 0;) suf[j] = suf[j + 1] * b[j];
    double total = 0;
    for (std::size_t k = 0; k < d; ++k) {
        total += pre[k] * e[k] * suf[k + 1];
        double mid = 1;
        for (std::size_t l = k + 1; l < d; ++l) {
            total += 2 * pre[k] * p[k] * mid * q[l] * suf[l + 1];
            mid *= c[l];
        }
    }
    return std::sqrt(std::max(total, 0.0));
}

double l2_norm_rank1(const std::vector<Eigen::VectorXd>& u, const std::vector<Grid>& grids)
{
    if (u.size() != grids.size()) throw InvalidArgument("l2_norm_rank1: factor count mismatch");
    double s = 1;
    for (std::size_t j = 0; j < u.size(); ++j) s *= inner_product(grids[j], u[j], u[j]);
    return std::sqrt(s);
}

std::vector<Eigen::VectorXd> rank1_factors(const DoTtState& s)
{
    const int d = s.dimension();
    std::vector<Eigen::VectorXd> out;
    const ModeFamily* f = &s.root;
    for (int j = 0; j < d - 1; ++j) {
        if (f->rank() != 1) throw InvalidArgument("rank1_factors: state is not rank one");
        out.push_back(f->modes.col(0));
        if (j < d - 2) f = &f->children[0];
    }
    out.push_back(f->finals.col(0));
    return out;
}

} // namespace dott
