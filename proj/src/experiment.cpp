#include "dott/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dott/error.hpp"
#include "dott/propagator.hpp"
#include "dott/rank_adapt.hpp"
#include "dott/serialize.hpp"
#include "dott/tree.hpp"

namespace dott {

namespace {

using json = nlohmann::ordered_json;

const std::map<std::string, std::string>& presets()
{
    static const std::map<std::string, std::string> p = {
        {"decompose3d", R"({
            "experiment": "decompose-static", "dimension": 3, "tree": "tt",
            "grid": {"kind": "gauss_legendre", "n": 50, "a": -1, "b": 1},
            "sigma": 1e-5, "threshold_rule": "amplitude",
            "initial_condition": {"kind": "three_d_example"}, "operator": "zero"})"},
        {"forced3d", R"({
            "experiment": "propagate-function", "dimension": 3, "tree": "tt",
            "grid": {"kind": "gauss_legendre", "n": 50, "a": -1, "b": 1},
            "sigma": 1e-5, "threshold_rule": "amplitude",
            "dt": 1e-3, "final_time": 5, "output_stride": 100,
            "operator": "forced3d", "initial_condition": {"kind": "forced3d"},
            "benchmark": "exact_forced3d", "gram_pseudo_inverse": 1e-10})"},
        {"advection2d", R"({
            "experiment": "solve-pde", "dimension": 2, "tree": "tt",
            "grid": {"kind": "fourier", "n": 257},
            "sigma": 1e-13, "threshold_rule": "kernel_eigenvalue",
            "dt": 1e-3, "final_time": 1, "output_stride": 50,
            "operator": "advection2d", "initial_condition": {"kind": "exp_sin_sum", "amplitude": 1},
            "benchmark": "characteristics", "gram_condition_cap": 1e30})"},
        {"hyperbolic4d", R"({
            "experiment": "solve-pde", "dimension": 4, "tree": "tt",
            "grid": {"kind": "fourier", "n": 20},
            "sigma": 1e-10, "threshold_rule": "kernel_eigenvalue",
            "dt": 1e-3, "final_time": 1, "output_stride": 100,
            "operator": "hyperbolic4d", "initial_condition": {"kind": "exp_sin_sum", "amplitude": -0.1},
            "benchmark": "characteristics", "gram_condition_cap": 1e30,
            "slice": {"axes": [0, 1], "values": [2.9568, 2.9568]}})"},
        {"hyperbolic50d", R"({
            "experiment": "solve-pde", "dimension": 50, "tree": "tt",
            "grid": {"kind": "fourier", "n": 60},
            "dt": 1e-3, "final_time": 1, "output_stride": 50,
            "operator": "hyperbolic50d", "initial_condition": {"kind": "rank1_hyperbolic"},
            "benchmark": "analytic_hyperbolic"})"},
        {"diffusion4d", R"({
            "experiment": "solve-pde", "dimension": 4, "tree": "tt",
            "grid": {"kind": "fourier", "n": 20},
            "sigma": 1e-10, "threshold_rule": "kernel_eigenvalue", "epsilon": 1e-10,
            "dt": 1e-3, "final_time": 1, "output_stride": 20,
            "operator": "diffusion", "initial_condition": {"kind": "exp_sin_sum", "amplitude": -0.1},
            "benchmark": "fourier_diffusion", "gram_condition_cap": 1e30})"},
        {"diffusion50d", R"({
            "experiment": "solve-pde", "dimension": 50, "tree": "tt",
            "grid": {"kind": "fourier", "n": 60},
            "dt": 1e-3, "final_time": 1, "output_stride": 50,
            "operator": "diffusion", "initial_condition": {"kind": "rank1_diffusion"},
            "benchmark": "analytic_diffusion"})"},
    };
    return p;
}

const std::set<std::string> known_keys = {
    "preset", "experiment", "dimension", "tree", "grid", "grids", "sigma", "threshold_rule", "epsilon",
    "remove_all_levels", "dt", "final_time", "output_stride", "operator", "initial_condition", "benchmark",
    "characteristics_substep", "adaptation", "gram_condition_cap", "gram_pseudo_inverse", "drift_tolerance", "snapshot_times", "slice",
    "verify"};

const std::set<std::string> known_metrics = {"max_relative_error", "max_absolute_error", "final_relative_error",
                                             "final_absolute_error", "initial_r1", "final_r1", "min_r1",
                                             "max_r1", "event_count", "truncation_error"};

[[noreturn]] void bad(const std::string& msg) { throw InvalidArgument("config: " + msg); }

double length_value(const json& v, const char* what)
{
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "pi") return std::numbers::pi;
        if (s == "2pi") return 2 * std::numbers::pi;
    }
    bad(std::string(what) + " must be a number, \"pi\" or \"2pi\"");
}

GridSpec grid_spec(const json& g)
{
    if (!g.is_object()) bad("grid entries must be objects");
    GridSpec s;
    const std::string kind = g.value("kind", "");
    if (kind == "fourier") s.kind = GridKind::FourierEquispaced;
    else if (kind == "gauss_legendre") s.kind = GridKind::GaussLegendre;
    else bad("grid kind must be \"fourier\" or \"gauss_legendre\"");
    if (!g.contains("n") || !g["n"].is_number_integer()) bad("grid needs an integer n");
    s.n = g["n"].get<int>();
    const bool periodic = s.kind == GridKind::FourierEquispaced;
    s.a = g.contains("a") ? length_value(g["a"], "grid a") : periodic ? 0.0 : -1.0;
    s.b = g.contains("b") ? length_value(g["b"], "grid b") : periodic ? 2 * std::numbers::pi : 1.0;
    if (s.n < (periodic ? 2 : 1)) bad("grid n too small");
    if (!(s.a < s.b)) bad("grid needs a < b");
    if (periodic && s.a != 0) bad("fourier grids start at 0");
    return s;
}

std::optional<TimeFunction> time_function(const json& t)
{
    if (t.is_null()) return std::nullopt;
    if (t.is_number()) return TimeFunction::constant(t.get<double>());
    if (!t.is_object() || t.size() != 1) bad("time dependence must be a number or {\"polynomial\"|\"sin\"|\"cos\": [...]}");
    const auto& [key, v] = *t.items().begin();
    const auto c = v.get<std::vector<double>>();
    if (key == "polynomial") return TimeFunction::polynomial(c);
    if (c.empty() || c.size() > 3) bad("sin/cos time dependence takes [amplitude, frequency, offset]");
    const double amp = c[0], freq = c.size() > 1 ? c[1] : 1.0, off = c.size() > 2 ? c[2] : 0.0;
    if (key == "sin") return TimeFunction::sin(amp, freq, off);
    if (key == "cos") return TimeFunction::cos(amp, freq, off);
    bad("unknown time dependence '" + key + "'");
}

FactorAction factor_action(const std::string& s)
{
    if (s == "id") return FactorAction::identity();
    if (s == "d1") return FactorAction::d1();
    if (s == "d2") return FactorAction::d2();
    const auto colon = s.find(':');
    if (colon == std::string::npos) bad("factor '" + s + "' (expected id, d1, d2, mul:<f>, d1:<f>, d2:<f>)");
    const std::string head = s.substr(0, colon);
    const ScalarFunction f = ScalarFunction::parse(s.substr(colon + 1));
    if (head == "mul") return FactorAction::multiply(f);
    if (head == "d1") return FactorAction::d1(f);
    if (head == "d2") return FactorAction::d2(f);
    bad("factor '" + s + "'");
}

SeparableOperator operator_from(const json& o, int d, std::string& name)
{
    if (o.is_string()) {
        name = o.get<std::string>();
        if (name == "advection2d") {
            if (d != 2) bad("advection2d needs dimension 2");
            return advection_2d();
        }
        if (name == "hyperbolic4d") {
            if (d != 4) bad("hyperbolic4d needs dimension 4");
            return hyperbolic_4d();
        }
        if (name == "hyperbolic50d") {
            std::vector<ScalarFunction> f;
            for (int j = 1; j <= d; ++j) f.push_back(ScalarFunction::constant(j));
            return hyperbolic_separable(d, f);
        }
        if (name == "diffusion") return diffusion(d);
        if (name == "forced3d") {
            if (d != 3) bad("forced3d needs dimension 3");
            return forcing_3d_example();
        }
        if (name == "zero") {
            SeparableOperator z;
            z.dimension = d;
            return z;
        }
        bad("unknown operator '" + name + "'");
    }
    if (!o.is_object()) bad("operator must be a preset name or {\"terms\": [...], \"sources\": [...]}");
    name = "custom";
    SeparableOperator G;
    G.dimension = d;
    for (const auto& t : o.value("terms", json::array())) {
        OperatorTerm term;
        for (const auto& f : t.at("factors")) term.factors.push_back(factor_action(f.get<std::string>()));
        term.coefficient = t.value("coefficient", 1.0);
        term.time_dependence = time_function(t.value("time", json()));
        G.terms.push_back(term);
    }
    for (const auto& t : o.value("sources", json::array())) {
        SourceTerm src;
        for (const auto& f : t.at("factors")) src.factors.push_back(ScalarFunction::parse(f.get<std::string>()));
        src.coefficient = t.value("coefficient", 1.0);
        src.time_dependence = time_function(t.value("time", json()));
        G.sources.push_back(src);
    }
    G.validate();
    return G;
}

std::string fmt17(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json ranks_to_json(const RankProfile& p)
{
    json out = json::object();
    for (std::size_t l = 0; l < p.size(); ++l) {
        const std::string key = "r" + std::to_string(l + 1);
        if (l == 0 && p[l].size() == 1) out[key] = p[l][0];
        else out[key] = p[l];
    }
    return out;
}

bool is_rank1_ic(const std::string& kind) { return kind == "rank1_hyperbolic" || kind == "rank1_diffusion"; }

bool dense_benchmark(const std::string& b)
{
    return b == "characteristics" || b == "fourier_diffusion" || b == "dense" || b == "exact_forced3d";
}

GridTensor dense_rk4_step(const SeparableOperator& G, const GridTensor& u, const std::vector<Grid>& grids, double t,
                          double dt)
{
    GridTensor k1 = apply_dense(G, u, grids, t), y = u;
    y.values = u.values + dt / 2 * k1.values;
    GridTensor k2 = apply_dense(G, y, grids, t + dt / 2);
    y.values = u.values + dt / 2 * k2.values;
    GridTensor k3 = apply_dense(G, y, grids, t + dt / 2);
    y.values = u.values + dt * k3.values;
    GridTensor k4 = apply_dense(G, y, grids, t + dt);
    GridTensor out = u;
    out.values += dt / 6 * (k1.values + 2 * k2.values + 2 * k3.values + k4.values);
    return out;
}

double reconstruction_distance(const std::vector<Grid>& grids, const ModeFamily& a, const ModeFamily& b)
{
    const int d = static_cast<int>(grids.size());
    auto rank_one = [d](const ModeFamily& f) {
        for (const auto& level : ranks(f, d))
            for (Eigen::Index r : level)
                if (r != 1) return false;
        return true;
    };
    if (rank_one(a) && rank_one(b))
        return l2_error_rank1_vs_analytic(rank1_factors(DoTtState{grids, a, 0}), rank1_factors(DoTtState{grids, b, 0}), grids);
    if (element_count(grids) <= 10'000'000) {
        GridTensor x = reconstruct(grids, a);
        x.values -= reconstruct(grids, b).values;
        return l2_norm(x, grids);
    }
    const double s = l2_inner(grids, a, a) + l2_inner(grids, b, b) - 2 * l2_inner(grids, a, b);
    return std::sqrt(std::max(s, 0.0));
}

} // namespace

std::vector<std::string> preset_names()
{
    std::vector<std::string> out;
    for (const auto& [k, v] : presets()) out.push_back(k);
    return out;
}

std::string preset_json(const std::string& name)
{
    auto it = presets().find(name);
    if (it == presets().end()) bad("unknown preset '" + name + "'");
    return json::parse(it->second).dump(2);
}

ExperimentConfig parse_config(const std::string& text)
{
    json user;
    try {
        user = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        bad(std::string("not valid JSON: ") + e.what());
    }
    if (!user.is_object()) bad("top level must be an object");
    if (user.empty()) bad("empty experiment");
    for (const auto& [k, v] : user.items())
        if (!known_keys.count(k)) bad("unknown key '" + k + "'");

    json j = json::object();
    ExperimentConfig c;
    if (user.contains("preset")) {
        c.preset = user["preset"].get<std::string>();
        j = json::parse(preset_json(c.preset));
    }
    j.merge_patch(user);
    c.echo = j.dump(2);

    try {
        c.experiment = j.value("experiment", "");
        if (c.experiment != "decompose-static" && c.experiment != "propagate-function" && c.experiment != "solve-pde")
            bad("experiment must be decompose-static, propagate-function or solve-pde");
        c.dimension = j.value("dimension", 0);
        if (c.dimension < 2) bad("dimension must be >= 2");
        c.tree = j.value("tree", "tt");
        if (c.tree != "tt" && c.tree != "ht") bad("tree must be tt or ht");
        if (c.tree == "ht" && c.experiment != "decompose-static") bad("propagation runs on tt trees");

        if (j.contains("grids")) {
            for (const auto& g : j["grids"]) c.grids.push_back(grid_spec(g));
            if (static_cast<int>(c.grids.size()) != c.dimension) bad("grids must list one entry per variable");
        } else if (j.contains("grid")) {
            c.grids.assign(c.dimension, grid_spec(j["grid"]));
        } else {
            bad("missing grid");
        }

        c.sigma = j.value("sigma", 0.0);
        if (c.sigma < 0) bad("sigma must be nonnegative");
        c.rule = threshold_rule_from_string(j.value("threshold_rule", std::string("amplitude")));
        c.epsilon = j.value("epsilon", 0.0);
        if (c.epsilon < 0) bad("epsilon must be nonnegative");
        c.remove_all_levels = j.value("remove_all_levels", false);

        const auto& ic = j.value("initial_condition", json::object());
        c.ic.kind = ic.value("kind", "");
        static const std::set<std::string> ics = {"three_d_example", "forced3d", "exp_sin_sum", "rank1_hyperbolic",
                                                  "rank1_diffusion"};
        if (!ics.count(c.ic.kind)) bad("initial_condition.kind must be one of three_d_example, forced3d, exp_sin_sum, "
                                       "rank1_hyperbolic, rank1_diffusion");
        c.ic.amplitude = ic.value("amplitude", 1.0);
        c.ic.weights = ic.value("weights", std::vector<double>{});
        if (!c.ic.weights.empty() && static_cast<int>(c.ic.weights.size()) != c.dimension)
            bad("initial_condition.weights needs one entry per variable");
        if ((c.ic.kind == "three_d_example" || c.ic.kind == "forced3d") && c.dimension != 3)
            bad(c.ic.kind + " needs dimension 3");
        if (is_rank1_ic(c.ic.kind) && c.experiment == "decompose-static")
            bad("rank-one initial conditions are built analytically, not decomposed");

        c.op = operator_from(j.value("operator", json("zero")), c.dimension, c.operator_name);

        c.benchmark = j.value("benchmark", std::string("none"));
        static const std::set<std::string> benches = {"none", "characteristics", "fourier_diffusion", "dense",
                                                      "exact_forced3d", "analytic_hyperbolic", "analytic_diffusion"};
        if (!benches.count(c.benchmark)) bad("unknown benchmark '" + c.benchmark + "'");
        c.characteristics_substep = j.value("characteristics_substep", 1e-3);
        if (!(c.characteristics_substep > 0)) bad("characteristics_substep must be positive");

        if (c.experiment != "decompose-static") {
            c.dt = j.value("dt", 0.0);
            c.final_time = j.value("final_time", 0.0);
            if (!(c.dt > 0)) bad("dt must be positive");
            if (!(c.final_time > 0)) bad("final_time must be positive");
            if (std::abs(c.final_time / c.dt - std::round(c.final_time / c.dt)) > 1e-9)
                bad("final_time must be a multiple of dt");
            c.output_stride = j.value("output_stride", 1);
            if (c.output_stride < 1) bad("output_stride must be >= 1");
        }

        const auto& a = j.value("adaptation", json::object());
        c.adaptation.add_times = a.value("add_times", std::vector<double>{});
        c.adaptation.add_count = a.value("add_count", 1);
        c.adaptation.explicit_steps = a.value("explicit_steps", 1);
        c.adaptation.condition_trigger = a.value("condition_trigger", 0.0);
        c.adaptation.rank_cap = a.value("rank_cap", Eigen::Index(200));
        if (c.adaptation.explicit_steps < 1) bad("adaptation.explicit_steps must be >= 1");
        if (c.adaptation.rank_cap < 1) bad("adaptation.rank_cap must be >= 1");
        for (double t : c.adaptation.add_times)
            if (!(t >= 0 && t < c.final_time)) bad("adaptation.add_times must lie in [0, final_time)");

        c.gram_condition_cap = j.value("gram_condition_cap", 1e12);
        c.gram_pseudo_inverse = j.value("gram_pseudo_inverse", 0.0);
        if (c.gram_pseudo_inverse < 0 || c.gram_pseudo_inverse >= 1) bad("gram_pseudo_inverse must lie in [0, 1)");
        c.drift_tolerance = j.value("drift_tolerance", 1e-4);
        c.snapshot_times = j.value("snapshot_times", std::vector<double>{});

        if (j.contains("slice")) {
            SliceSpec s;
            s.axes = j["slice"].at("axes").get<std::vector<int>>();
            s.values = j["slice"].at("values").get<std::vector<double>>();
            if (s.axes.size() != s.values.size()) bad("slice axes and values differ in length");
            for (int ax : s.axes)
                if (ax < 0 || ax >= c.dimension) bad("slice axis out of range");
            c.slice = s;
        }

        for (const auto& chk : j.value("verify", json::object()).value("checks", json::array())) {
            VerifyCheck v;
            v.metric = chk.at("metric").get<std::string>();
            if (!known_metrics.count(v.metric)) bad("unknown verify metric '" + v.metric + "'");
            for (const char* op : {"max", "min", "equals"})
                if (chk.contains(op)) {
                    v.op = op;
                    v.value = chk[op].get<double>();
                }
            if (v.op.empty()) bad("verify check needs max, min or equals");
            c.checks.push_back(v);
        }

        if ((c.benchmark == "analytic_hyperbolic" || c.benchmark == "analytic_diffusion") && !is_rank1_ic(c.ic.kind))
            bad("analytic rank-one benchmarks need a rank-one initial condition");
        if (c.benchmark == "exact_forced3d" && c.ic.kind != "forced3d") bad("exact_forced3d needs the forced3d initial condition");
        if (c.benchmark == "characteristics" || c.benchmark == "fourier_diffusion") {
            for (const auto& g : c.grids)
                if (g.kind != GridKind::FourierEquispaced) bad(c.benchmark + " needs periodic grids");
        }
        if (c.benchmark == "characteristics") characteristics_field(c.op);
    } catch (const json::exception& e) {
        bad(e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) bad("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<Grid> build_grids(const ExperimentConfig& cfg)
{
    std::vector<Grid> out;
    for (const auto& g : cfg.grids)
        out.push_back(g.kind == GridKind::FourierEquispaced ? fourier_grid(g.n, g.b - g.a) : gauss_legendre_grid(g.n, g.a, g.b));
    return out;
}

double forced_3d_solution(const double* x, double t)
{
    return (t + 1) * x[1] * x[2] + (t * t - 10) * x[0] * x[2] - (4 * std::sin(t) + 3) * x[0] * x[1] * x[2];
}

PointFunction initial_condition(const ExperimentConfig& cfg)
{
    const int d = cfg.dimension;
    const auto& ic = cfg.ic;
    if (ic.kind == "three_d_example")
        return [](const double* x) { return std::exp(std::sin(x[0] + 2 * x[1] + 3 * x[2])) + x[1] * x[2]; };
    if (ic.kind == "forced3d") return [](const double* x) { return forced_3d_solution(x, 0.0); };
    if (ic.kind == "exp_sin_sum") {
        const std::vector<double> w = ic.weights.empty() ? std::vector<double>(d, 1.0) : ic.weights;
        const double amp = ic.amplitude;
        return [w, amp, d](const double* x) {
            double s = 0;
            for (int j = 0; j < d; ++j) s += w[j] * x[j];
            return std::exp(amp * std::sin(s));
        };
    }
    const bool hyper = ic.kind == "rank1_hyperbolic";
    return [d, hyper](const double* x) {
        double p = 1;
        for (int j = 1; j <= d; ++j) p *= hyper ? hyperbolic_rank1_initial(j, d, x[j - 1]) : diffusion_rank1_initial(j, d, x[j - 1]);
        return p;
    };
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt)
{
    const auto wall0 = std::chrono::steady_clock::now();
    RunResult res;
    const int d = cfg.dimension;
    const std::vector<Grid> grids = build_grids(cfg);
    const SeparableOperator& G = cfg.op;
    const PointFunction u0 = initial_condition(cfg);
    const DimensionTree tree = cfg.tree == "tt" ? tt_tree(d) : ht_tree(d);
    auto finish = [&] {
        res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
        return res;
    };

    DecomposeOptions dopt;
    dopt.rule = cfg.rule;

    if (cfg.experiment == "decompose-static") {
        try {
            const GridTensor u = sample(grids, u0);
            const HierarchicalDecomposition h = decompose(u, tree, grids, cfg.sigma, dopt);
            OutputRecord rec;
            rec.spectrum = h.root.lambdas;
            rec.ranks = h.ranks();
            rec.has_error = true;
            rec.error = error_vs(reconstruct(h), u, grids);
            rec.benchmark_norm = l2_norm(u, grids);
            res.outputs.push_back(rec);
            res.initial_ranks = res.final_ranks = rec.ranks;
            res.predicted_truncation_error = std::sqrt(std::max(truncation_error(h), 0.0));
        } catch (const NumericError& e) {
            res.ok = false;
            res.failure = e.what();
        }
        return finish();
    }

    const long n_steps = std::lround(cfg.final_time / cfg.dt);
    auto step_of = [&](double t) { return std::lround(t / cfg.dt); };
    std::set<long> add_steps, snap_steps;
    for (double t : cfg.adaptation.add_times) add_steps.insert(step_of(t));
    for (double t : cfg.snapshot_times) snap_steps.insert(step_of(t));

    RhsOptions rhs;
    rhs.gram_condition_cap = cfg.gram_condition_cap;
    rhs.gram_pinv_tolerance = cfg.gram_pseudo_inverse;

    DoTtState s;
    long k = 0;
    try {
        if (is_rank1_ic(cfg.ic.kind)) {
            const bool hyper = cfg.ic.kind == "rank1_hyperbolic";
            std::vector<Eigen::VectorXd> f;
            for (int j = 1; j <= d; ++j)
                f.push_back(grids[j - 1].nodes.unaryExpr(
                    [&](double x) { return hyper ? hyperbolic_rank1_initial(j, d, x) : diffusion_rank1_initial(j, d, x); }));
            s = rank_one_state(grids, f);
        } else {
            s = do_state_from(decompose(sample(grids, u0), tree, grids, cfg.sigma, dopt));
        }
        res.initial_ranks = ranks(s.root, d);

        // benchmark plumbing
        std::optional<CharacteristicsTracker> tracker;
        GridTensor dense0, dense_state;
        long dense_k = 0;
        if (cfg.benchmark == "characteristics") {
            CharacteristicsField field = characteristics_field(G);
            field.substep = cfg.characteristics_substep;
            tracker.emplace(field, grids, opt.threads);
        }
        if (cfg.benchmark == "fourier_diffusion" || cfg.benchmark == "dense") {
            dense0 = sample(grids, u0);
            dense_state = dense0;
        }
        auto benchmark_at = [&](double t) -> GridTensor {
            if (cfg.benchmark == "characteristics") {
                tracker->advance_to(t);
                return tracker->values(u0);
            }
            if (cfg.benchmark == "fourier_diffusion") return fourier_diffusion_solution(dense0, grids, t);
            if (cfg.benchmark == "exact_forced3d")
                return sample(grids, [t](const double* x) { return forced_3d_solution(x, t); });
            // dense: lockstep RK4 on the full grid
            const long target = step_of(t);
            while (dense_k < target) {
                dense_state = dense_rk4_step(G, dense_state, grids, dense_k * cfg.dt, cfg.dt);
                ++dense_k;
            }
            return dense_state;
        };

        // slice snapping
        std::vector<Eigen::Index> fixed_index(d, -1);
        if (cfg.slice) {
            for (std::size_t i = 0; i < cfg.slice->axes.size(); ++i) {
                const int ax = cfg.slice->axes[i];
                Eigen::Index best = 0;
                (grids[ax].nodes.array() - cfg.slice->values[i]).abs().minCoeff(&best);
                fixed_index[ax] = best;
                res.snaps.push_back({ax, cfg.slice->values[i], grids[ax].nodes(best), best});
            }
        }

        auto record = [&](const DoTtState& st) {
            if (!res.outputs.empty() && res.outputs.back().time == st.time) res.outputs.pop_back();
            OutputRecord rec;
            rec.time = st.time;
            rec.spectrum = level1_singular_values(st);
            rec.ranks = ranks(st.root, d);
            if (dense_benchmark(cfg.benchmark)) {
                const GridTensor ref = benchmark_at(st.time);
                const GridTensor approx = reconstruct(grids, st.root);
                rec.has_error = true;
                rec.error = error_vs(approx, ref, grids);
                rec.benchmark_norm = l2_norm(ref, grids);
                if (cfg.slice) {
                    for (Eigen::Index p = 0; p < approx.size(); ++p) {
                        Eigen::Index rem = p;
                        bool on = true;
                        std::vector<double> coords;
                        for (int j = 0; j < d; ++j) {
                            const Eigen::Index ij = rem % approx.dims[j];
                            rem /= approx.dims[j];
                            if (fixed_index[j] >= 0) on = on && ij == fixed_index[j];
                            else coords.push_back(grids[j].nodes(ij));
                        }
                        if (on) res.slice_rows.push_back({st.time, coords, approx.values(p), ref.values(p)});
                    }
                }
            } else if (cfg.benchmark == "analytic_hyperbolic" || cfg.benchmark == "analytic_diffusion") {
                std::vector<Eigen::VectorXd> v;
                if (cfg.benchmark == "analytic_hyperbolic") {
                    v = analytic_50d_hyperbolic(grids, st.time);
                } else {
                    SeparatedSolution a = analytic_50d_diffusion(grids, st.time);
                    v = std::move(a.factors);
                    v.back() *= a.decay;
                }
                const auto u = rank1_factors(st);
                rec.has_error = true;
                rec.benchmark_norm = l2_norm_rank1(v, grids);
                rec.error.absolute = l2_error_rank1_vs_analytic(u, v, grids);
                rec.error.relative = rec.benchmark_norm > 0 ? rec.error.absolute / rec.benchmark_norm : rec.error.absolute;
            }
            if (opt.log) {
                *opt.log << "t=" << rec.time << " r1=" << rec.ranks[0][0];
                if (rec.has_error) *opt.log << " rel_err=" << rec.error.relative;
                *opt.log << " drift=" << orthonormality_defect(grids, st.root);
                *opt.log << '\n';
            }
            res.outputs.push_back(std::move(rec));
        };
        auto snapshot = [&] {
            if (snap_steps.count(k)) res.snapshots.emplace_back(s.time, s);
        };

        auto adapt = [&](const char* kind) {
            record(s);
            AdaptationEvent ev;
            ev.time = s.time;
            ev.kind = kind;
            ev.before = ranks(s.root, d);
            ExplicitStepOptions eo;
            eo.rule = cfg.rule;
            eo.add_count = cfg.adaptation.add_count;
            eo.rank_cap = cfg.adaptation.rank_cap;
            const int n = static_cast<int>(std::min<long>(cfg.adaptation.explicit_steps, n_steps - k));
            ExplicitStepResult r = adapt_by_explicit_step(s, G, cfg.dt, n, cfg.sigma, eo);
            s = std::move(r.state);
            k += n;
            s.time = k * cfg.dt;
            ev.after = ranks(s.root, d);
            ev.reconstruction_delta = r.restart_delta;
            res.events.push_back(ev);
            record(s);
        };

        s.time = 0;
        record(s);
        snapshot();
        long last_trigger = -cfg.output_stride;
        while (k < n_steps) {
            if (add_steps.count(k)) {
                add_steps.erase(k);
                adapt("add");
                snapshot();
                continue;
            }
            if (cfg.adaptation.condition_trigger > 0 && k - last_trigger >= cfg.output_stride) {
                const Eigen::VectorXd sv = level1_singular_values(s);
                const double smin = sv(sv.size() - 1);
                const double cond = smin > 0 ? (sv(0) / smin) * (sv(0) / smin) : std::numeric_limits<double>::infinity();
                if (cond > cfg.adaptation.condition_trigger) {
                    last_trigger = k;
                    adapt("add-condition");
                    snapshot();
                    continue;
                }
            }

            s = rk4_step(s, G, cfg.dt, rhs);
            ++k;
            s.time = k * cfg.dt;
            bool event_here = false;

            if (orthonormality_defect(grids, s.root) > cfg.drift_tolerance) {
                AdaptationEvent ev;
                ev.time = s.time;
                ev.kind = "reorthonormalize";
                ev.before = ranks(s.root, d);
                DoTtState fixed = reorthonormalize(s);
                ev.after = ranks(fixed.root, d);
                ev.reconstruction_delta = reconstruction_distance(grids, s.root, fixed.root);
                s = std::move(fixed);
                res.events.push_back(ev);
                event_here = true;
            }
            if (cfg.epsilon > 0) {
                RemovalResult rr = remove_modes(s, cfg.epsilon, cfg.remove_all_levels);
                const RankProfile after = ranks(rr.state.root, d);
                const RankProfile before = ranks(s.root, d);
                if (after != before) {
                    res.events.push_back({s.time, "remove", before, after, std::sqrt(rr.dropped_energy)});
                    s = std::move(rr.state);
                    event_here = true;
                }
            }
            if (event_here || k % cfg.output_stride == 0 || k == n_steps) record(s);
            snapshot();
        }
    } catch (const NumericError& e) {
        res.ok = false;
        char buf[64];
        std::snprintf(buf, sizeof buf, " (t = %.6g)", k * cfg.dt);
        res.failure = std::string(e.what()) + buf;
    }
    res.final_ranks = ranks(s.root, d);
    res.final_state = s;
    return finish();
}

std::string spectrum_csv(const RunResult& r)
{
    std::string out = "time,index,singular_value\n";
    for (const auto& o : r.outputs)
        for (Eigen::Index i = 0; i < o.spectrum.size(); ++i)
            out += fmt17(o.time) + "," + std::to_string(i + 1) + "," + fmt17(o.spectrum(i)) + "\n";
    return out;
}

std::string ranks_csv(const RunResult& r)
{
    std::string out = "time,level,position,rank\n";
    for (const auto& o : r.outputs)
        for (std::size_t l = 0; l < o.ranks.size(); ++l)
            for (std::size_t p = 0; p < o.ranks[l].size(); ++p)
                out += fmt17(o.time) + "," + std::to_string(l + 1) + "," + std::to_string(p + 1) + "," +
                       std::to_string(o.ranks[l][p]) + "\n";
    return out;
}

std::string error_csv(const RunResult& r)
{
    std::string out = "time,absolute,relative,benchmark_norm\n";
    for (const auto& o : r.outputs)
        if (o.has_error)
            out += fmt17(o.time) + "," + fmt17(o.error.absolute) + "," + fmt17(o.error.relative) + "," +
                   fmt17(o.benchmark_norm) + "\n";
    return out;
}

std::string ranks_json(const RankProfile& p) { return ranks_to_json(p).dump(); }

double run_metric(const RunResult& r, const std::string& metric)
{
    auto errs = [&](bool relative) {
        std::vector<double> v;
        for (const auto& o : r.outputs)
            if (o.has_error) v.push_back(relative ? o.error.relative : o.error.absolute);
        return v;
    };
    auto r1s = [&] {
        std::vector<double> v;
        for (const auto& o : r.outputs)
            if (!o.ranks.empty()) v.push_back(double(o.ranks[0][0]));
        return v;
    };
    auto need = [&](const std::vector<double>& v) {
        if (v.empty()) throw InvalidArgument("metric " + metric + " has no data in this run");
        return v;
    };
    if (metric == "max_relative_error") {
        auto v = need(errs(true));
        return *std::max_element(v.begin(), v.end());
    }
    if (metric == "max_absolute_error") {
        auto v = need(errs(false));
        return *std::max_element(v.begin(), v.end());
    }
    if (metric == "final_relative_error") return need(errs(true)).back();
    if (metric == "final_absolute_error") return need(errs(false)).back();
    if (metric == "initial_r1") return r.initial_ranks.empty() ? 0.0 : double(r.initial_ranks[0][0]);
    if (metric == "final_r1") return r.final_ranks.empty() ? 0.0 : double(r.final_ranks[0][0]);
    if (metric == "min_r1") {
        auto v = need(r1s());
        return *std::min_element(v.begin(), v.end());
    }
    if (metric == "max_r1") {
        auto v = need(r1s());
        return *std::max_element(v.begin(), v.end());
    }
    if (metric == "event_count") return double(r.events.size());
    if (metric == "truncation_error") return r.predicted_truncation_error;
    throw InvalidArgument("unknown metric '" + metric + "'");
}

std::vector<VerifyRow> verify_checks(const ExperimentConfig& cfg, const RunResult& r)
{
    std::vector<VerifyRow> rows;
    for (const auto& c : cfg.checks) {
        VerifyRow row;
        row.check = c;
        row.measured = run_metric(r, c.metric);
        if (c.op == "max") row.pass = row.measured <= c.value;
        else if (c.op == "min") row.pass = row.measured >= c.value;
        else row.pass = row.measured == c.value;
        row.pass = row.pass && r.ok;
        rows.push_back(row);
    }
    return rows;
}

std::string verify_table(const std::vector<VerifyRow>& rows)
{
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %-24s %-28s %s\n", "metric", "measured", "requirement", "result");
    out += buf;
    for (const auto& r : rows) {
        char val[32];
        std::snprintf(val, sizeof val, "%.10g", r.check.value);
        const std::string req = (r.check.op == "max" ? "<= " : r.check.op == "min" ? ">= " : "== ") + std::string(val);
        std::snprintf(buf, sizeof buf, "%-22s %-24s %-28s %s\n", r.check.metric.c_str(), fmt17(r.measured).c_str(),
                      req.c_str(), r.pass ? "PASS" : "FAIL");
        out += buf;
    }
    return out;
}

std::string summary_json(const ExperimentConfig& cfg, const RunResult& r, const RunOptions& opt)
{
    json s;
    s["schema_version"] = summary_schema_version;
    s["experiment"] = cfg.experiment;
    s["preset"] = cfg.preset;
    s["config"] = json::parse(cfg.echo);
    s["status"] = r.ok ? "ok" : "numeric-failure";
    if (!r.ok) s["failure"] = r.failure;
    s["initial_ranks"] = ranks_to_json(r.initial_ranks);
    s["ranks"] = ranks_to_json(r.final_ranks);
    s["wall_time_seconds"] = r.wall_seconds;
    s["threads"] = opt.threads;
    s["seed"] = opt.seed;
    json events = json::array();
    for (const auto& e : r.events)
        events.push_back({{"time", e.time},
                          {"kind", e.kind},
                          {"ranks_before", ranks_to_json(e.before)},
                          {"ranks_after", ranks_to_json(e.after)},
                          {"reconstruction_delta", e.reconstruction_delta}});
    s["adaptation_events"] = events;
    json errs = json::object();
    for (const char* m : {"max_relative_error", "max_absolute_error", "final_relative_error", "final_absolute_error"}) {
        try {
            errs[m] = run_metric(r, m);
        } catch (const InvalidArgument&) {
        }
    }
    s["errors"] = errs;
    if (r.predicted_truncation_error >= 0) s["truncation_error_l2"] = r.predicted_truncation_error;
    json snaps = json::array();
    for (const auto& sn : r.snaps)
        snaps.push_back({{"axis", sn.axis}, {"requested", sn.requested}, {"snapped", sn.snapped}, {"index", sn.index}});
    if (!snaps.empty()) s["slice_snap"] = snaps;
    json files = json::array();
    for (std::size_t i = 0; i < r.snapshots.size(); ++i) files.push_back("snapshot_" + std::to_string(i) + ".dott");
    if (!files.empty()) s["snapshots"] = files;
    return s.dump(2) + "\n";
}

void write_artifacts(const ExperimentConfig& cfg, const RunResult& r, const RunOptions& opt, const std::string& dir)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InvalidArgument("cannot create output directory '" + dir + "': " + ec.message());
    auto put = [&](const std::string& name, const std::string& text) {
        std::ofstream f(fs::path(dir) / name, std::ios::binary);
        if (!f) throw InvalidArgument("cannot write '" + (fs::path(dir) / name).string() + "'");
        f << text;
    };
    put("spectrum.csv", spectrum_csv(r));
    put("ranks.csv", ranks_csv(r));
    put("error.csv", error_csv(r));
    put("summary.json", summary_json(cfg, r, opt));
    if (!r.slice_rows.empty()) {
        std::string out = "time";
        for (std::size_t i = 0; i < r.slice_rows.front().coords.size(); ++i) out += ",x" + std::to_string(i + 1);
        out += ",value,benchmark\n";
        for (const auto& row : r.slice_rows) {
            out += fmt17(row.time);
            for (double x : row.coords) out += "," + fmt17(x);
            out += "," + fmt17(row.value) + "," + fmt17(row.benchmark) + "\n";
        }
        put("slice.csv", out);
    }
    for (std::size_t i = 0; i < r.snapshots.size(); ++i)
        save(r.snapshots[i].second, (fs::path(dir) / ("snapshot_" + std::to_string(i) + ".dott")).string());
}

} // namespace dott
