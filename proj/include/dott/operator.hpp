#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dott/grid.hpp"
#include "dott/grid_tensor.hpp"

namespace dott {

// Registered analytic function of one variable: scale * sin(k x), scale * cos(k x),
// scale * x^k, or a constant.
struct ScalarFunction {
    enum class Kind { Sin, Cos, Monomial, Constant };
    Kind kind = Kind::Constant;
    double k = 1;
    double scale = 1;

    static ScalarFunction sin(double k = 1, double scale = 1) { return {Kind::Sin, k, scale}; }
    static ScalarFunction cos(double k = 1, double scale = 1) { return {Kind::Cos, k, scale}; }
    static ScalarFunction monomial(int p, double scale = 1) { return {Kind::Monomial, double(p), scale}; }
    static ScalarFunction constant(double c) { return {Kind::Constant, 0, c}; }

    double operator()(double x) const;
    Eigen::VectorXd at(const Grid& g) const;
    std::string name() const;
    // "sin(2x)", "3*cos(x)", "x^2", "const(1.5)", "1.5"
    static ScalarFunction parse(const std::string& s);

    bool operator==(const ScalarFunction&) const = default;
};

// Scalar coefficient of time: polynomial sum c_i t^i, or amplitude * sin/cos(freq t) + offset.
struct TimeFunction {
    enum class Kind { Polynomial, Sin, Cos };
    Kind kind = Kind::Polynomial;
    std::vector<double> coeffs{1.0};
    double amplitude = 1, frequency = 1, offset = 0;

    static TimeFunction constant(double c) { return {Kind::Polynomial, {c}}; }
    static TimeFunction polynomial(std::vector<double> c) { return {Kind::Polynomial, std::move(c)}; }
    static TimeFunction sin(double amp, double freq = 1, double off = 0) { return {Kind::Sin, {}, amp, freq, off}; }
    static TimeFunction cos(double amp, double freq = 1, double off = 0) { return {Kind::Cos, {}, amp, freq, off}; }

    double operator()(double t) const;
    std::string name() const;
};

// Factor action on one variable: optional multiplier applied after d^derivative.
struct FactorAction {
    int derivative = 0;
    std::optional<ScalarFunction> multiplier;

    static FactorAction identity() { return {}; }
    static FactorAction multiply(ScalarFunction f) { return {0, f}; }
    static FactorAction d1(std::optional<ScalarFunction> f = std::nullopt) { return {1, f}; }
    static FactorAction d2(std::optional<ScalarFunction> f = std::nullopt) { return {2, f}; }

    bool is_identity() const { return derivative == 0 && !multiplier; }
    std::string name() const;
    bool operator==(const FactorAction&) const = default;
};

struct OperatorTerm {
    std::vector<FactorAction> factors; // one per variable
    double coefficient = 1;
    std::optional<TimeFunction> time_dependence;

    double coefficient_at(double t) const { return coefficient * (time_dependence ? (*time_dependence)(t) : 1.0); }
};

// u-independent forcing coefficient * time(t) * prod_j f_j(x_j).
struct SourceTerm {
    std::vector<ScalarFunction> factors;
    double coefficient = 1;
    std::optional<TimeFunction> time_dependence;

    double coefficient_at(double t) const { return coefficient * (time_dependence ? (*time_dependence)(t) : 1.0); }
};

struct SeparableOperator {
    int dimension = 0;
    std::vector<OperatorTerm> terms;
    std::vector<SourceTerm> sources;

    void validate() const;
    bool empty() const { return terms.empty() && sources.empty(); }
};

Eigen::VectorXd apply_factor(const FactorAction& a, const Eigen::VectorXd& v, const Grid& g);
Eigen::MatrixXd apply_factor(const FactorAction& a, const Eigen::MatrixXd& v, const Grid& g);

// Dense evaluation of G(u) on the full grid; test oracle, bounded by the cap.
GridTensor apply_dense(const SeparableOperator& G, const GridTensor& u, const std::vector<Grid>& grids, double t);

SeparableOperator advection_2d();
Eigen::Matrix4d hyperbolic_4d_default_c();
std::vector<ScalarFunction> hyperbolic_4d_default_f();
SeparableOperator hyperbolic_4d(const Eigen::Matrix4d& c = hyperbolic_4d_default_c(),
                                const std::vector<ScalarFunction>& f = hyperbolic_4d_default_f());
SeparableOperator hyperbolic_separable(int d, const std::vector<ScalarFunction>& f);
SeparableOperator diffusion(int d);
SeparableOperator forcing_3d_example();

} // namespace dott
