#include "dott/operator.hpp"

#include <cmath>
#include <regex>
#include <sstream>

#include "dott/error.hpp"

namespace dott {

double ScalarFunction::operator()(double x) const
{
    switch (kind) {
    case Kind::Sin: return scale * std::sin(k * x);
    case Kind::Cos: return scale * std::cos(k * x);
    case Kind::Monomial: return scale * std::pow(x, k);
    case Kind::Constant: return scale;
    }
    return 0;
}

Eigen::VectorXd ScalarFunction::at(const Grid& g) const
{
    Eigen::VectorXd v(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) v(i) = (*this)(g.nodes(i));
    return v;
}

namespace {

std::string num(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

std::string ScalarFunction::name() const
{
    std::string pre = scale == 1 ? "" : num(scale) + "*";
    std::string arg = k == 1 ? "x" : num(k) + "x";
    switch (kind) {
    case Kind::Sin: return pre + "sin(" + arg + ")";
    case Kind::Cos: return pre + "cos(" + arg + ")";
    case Kind::Monomial: return pre + "x^" + num(k);
    case Kind::Constant: return "const(" + num(scale) + ")";
    }
    return "?";
}

ScalarFunction ScalarFunction::parse(const std::string& text)
{
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
    static const std::regex trig(R"(^(?:([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\*)?(sin|cos)\((?:([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\*?)?x\)$)");
    static const std::regex mono(R"(^(?:([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\*)?x(?:\^(\d+))?$)");
    static const std::regex cst(R"(^const\(([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\)$)");
    std::smatch m;
    if (std::regex_match(s, m, trig)) {
        double scale = m[1].matched ? std::stod(m[1]) : 1.0;
        double k = m[3].matched ? std::stod(m[3]) : 1.0;
        return m[2] == "sin" ? sin(k, scale) : cos(k, scale);
    }
    if (std::regex_match(s, m, mono)) {
        double scale = m[1].matched ? std::stod(m[1]) : 1.0;
        int p = m[2].matched ? std::stoi(m[2]) : 1;
        return monomial(p, scale);
    }
    if (std::regex_match(s, m, cst)) return constant(std::stod(m[1]));
    if (std::regex_match(s, number)) return constant(std::stod(s));
    throw InvalidArgument("unknown function '" + text + "' (expected sin(kx), cos(kx), x^k or const(c))");
}

double TimeFunction::operator()(double t) const
{
    switch (kind) {
    case Kind::Polynomial: {
        double s = 0;
        for (size_t i = coeffs.size(); i-- > 0;) s = s * t + coeffs[i];
        return s;
    }
    case Kind::Sin: return amplitude * std::sin(frequency * t) + offset;
    case Kind::Cos: return amplitude * std::cos(frequency * t) + offset;
    }
    return 0;
}

std::string TimeFunction::name() const
{
    if (kind == Kind::Polynomial) {
        std::string s = "poly(";
        for (size_t i = 0; i < coeffs.size(); ++i) s += (i ? "," : "") + num(coeffs[i]);
        return s + ")";
    }
    return num(amplitude) + (kind == Kind::Sin ? "*sin(" : "*cos(") + num(frequency) + "t)+" + num(offset);
}

std::string FactorAction::name() const
{
    std::string s = derivative == 0 ? "" : derivative == 1 ? "d1" : "d2";
    if (multiplier) s = multiplier->name() + (s.empty() ? "" : "*" + s);
    return s.empty() ? "I" : s;
}

void SeparableOperator::validate() const
{
    if (dimension < 1) throw InvalidArgument("operator dimension must be positive");
    for (const auto& t : terms) {
        if (static_cast<int>(t.factors.size()) != dimension) throw InvalidArgument("operator term has the wrong number of factors");
        for (const auto& f : t.factors)
            if (f.derivative < 0 || f.derivative > 2) throw InvalidArgument("derivative order must be 0, 1 or 2");
    }
    for (const auto& s : sources)
        if (static_cast<int>(s.factors.size()) != dimension) throw InvalidArgument("source term has the wrong number of factors");
}

Eigen::MatrixXd apply_factor(const FactorAction& a, const Eigen::MatrixXd& v, const Grid& g)
{
    if (v.rows() != g.size()) throw InvalidArgument("apply_factor: shape mismatch");
    Eigen::MatrixXd w = a.derivative == 0 ? v : a.derivative == 1 ? Eigen::MatrixXd(g.d1 * v) : Eigen::MatrixXd(g.d2 * v);
    if (a.multiplier) w = a.multiplier->at(g).asDiagonal() * w;
    return w;
}

Eigen::VectorXd apply_factor(const FactorAction& a, const Eigen::VectorXd& v, const Grid& g)
{
    return apply_factor(a, Eigen::MatrixXd(v), g).col(0);
}

GridTensor apply_dense(const SeparableOperator& G, const GridTensor& u, const std::vector<Grid>& grids, double t)
{
    G.validate();
    if (static_cast<int>(grids.size()) != G.dimension || u.order() != G.dimension)
        throw InvalidArgument("apply_dense: dimension mismatch");
    GridTensor out(u.dims);
    for (const auto& term : G.terms) {
        GridTensor v = u;
        for (int j = 0; j < G.dimension; ++j) {
            const auto& a = term.factors[j];
            if (a.derivative == 1) v = apply_along(v, j, grids[j].d1);
            if (a.derivative == 2) v = apply_along(v, j, grids[j].d2);
            if (a.multiplier) v = scale_along(v, j, a.multiplier->at(grids[j]));
        }
        out.values += term.coefficient_at(t) * v.values;
    }
    for (const auto& s : G.sources) {
        std::vector<Eigen::VectorXd> f;
        for (int j = 0; j < G.dimension; ++j) f.push_back(s.factors[j].at(grids[j]));
        out.values += s.coefficient_at(t) * outer(f).values;
    }
    return out;
}

SeparableOperator advection_2d()
{
    using F = FactorAction;
    SeparableOperator G;
    G.dimension = 2;
    G.terms.push_back({{F::d1(ScalarFunction::sin()), F::identity()}, 1.0, {}});
    G.terms.push_back({{F::d1(), F::multiply(ScalarFunction::cos())}, 3.0, {}});
    G.terms.push_back({{F::identity(), F::d1(ScalarFunction::cos())}, 1.0, {}});
    return G;
}

Eigen::Matrix4d hyperbolic_4d_default_c()
{
    Eigen::Matrix4d c;
    c << 0, 0.5, 0, 0,
         0, 0, -0.3, 0,
         0, 0, 0, -1,
         0.5, 0, 0, 0;
    return c;
}

std::vector<ScalarFunction> hyperbolic_4d_default_f()
{
    return {ScalarFunction::sin(1), ScalarFunction::cos(2), ScalarFunction::sin(3), ScalarFunction::cos(4)};
}

SeparableOperator hyperbolic_4d(const Eigen::Matrix4d& c, const std::vector<ScalarFunction>& f)
{
    if (f.size() != 4) throw InvalidArgument("hyperbolic_4d needs four functions");
    SeparableOperator G;
    G.dimension = 4;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (c(i, j) == 0) continue;
            OperatorTerm t;
            t.factors.assign(4, FactorAction::identity());
            t.coefficient = c(i, j);
            if (i == j) {
                t.factors[i] = FactorAction::d1(f[j]);
            } else {
                t.factors[i] = FactorAction::d1();
                t.factors[j] = FactorAction::multiply(f[j]);
            }
            G.terms.push_back(t);
        }
    return G;
}

SeparableOperator hyperbolic_separable(int d, const std::vector<ScalarFunction>& f)
{
    if (d < 1 || static_cast<int>(f.size()) != d) throw InvalidArgument("hyperbolic_separable needs d functions");
    SeparableOperator G;
    G.dimension = d;
    for (int j = 0; j < d; ++j) {
        if (f[j] == ScalarFunction::constant(0)) continue;
        OperatorTerm t;
        t.factors.assign(d, FactorAction::identity());
        t.factors[j] = FactorAction::d1(f[j]);
        G.terms.push_back(t);
    }
    return G;
}

SeparableOperator diffusion(int d)
{
    if (d < 1) throw InvalidArgument("diffusion needs d >= 1");
    SeparableOperator G;
    G.dimension = d;
    for (int j = 0; j < d; ++j) {
        OperatorTerm t;
        t.factors.assign(d, FactorAction::identity());
        t.factors[j] = FactorAction::d2();
        G.terms.push_back(t);
    }
    return G;
}

SeparableOperator forcing_3d_example()
{
    using S = ScalarFunction;
    SeparableOperator G;
    G.dimension = 3;
    G.sources.push_back({{S::constant(1), S::monomial(1), S::monomial(1)}, 1.0, TimeFunction::constant(1)});
    G.sources.push_back({{S::monomial(1), S::constant(1), S::monomial(1)}, 1.0, TimeFunction::polynomial({0, 2})});
    G.sources.push_back({{S::monomial(1), S::monomial(1), S::monomial(1)}, 1.0, TimeFunction::cos(-4)});
    return G;
}

} // namespace dott
