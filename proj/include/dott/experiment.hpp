#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dott/benchmarks.hpp"
#include "dott/decomposition.hpp"
#include "dott/mode_tree.hpp"
#include "dott/operator.hpp"

namespace dott {

inline constexpr int summary_schema_version = 1;

struct GridSpec {
    GridKind kind = GridKind::FourierEquispaced;
    int n = 0;
    double a = 0, b = 0;
};

struct InitialConditionSpec {
    // three_d_example | forced3d | exp_sin_sum | rank1_hyperbolic | rank1_diffusion
    std::string kind;
    double amplitude = 1;        // exp_sin_sum: exp(amplitude * sin(sum_j w_j x_j))
    std::vector<double> weights; // empty = all ones
};

struct AdaptationSpec {
    std::vector<double> add_times;
    int add_count = 1;
    int explicit_steps = 1;
    double condition_trigger = 0; // level-1 Gram condition that forces an adaptation; 0 = off
    Eigen::Index rank_cap = 200;
};

struct SliceSpec {
    std::vector<int> axes; // 0-based variables held fixed
    std::vector<double> values;
};

struct VerifyCheck {
    std::string metric;
    std::string op; // max | min | equals
    double value = 0;
};

struct ExperimentConfig {
    std::string experiment; // decompose-static | propagate-function | solve-pde
    std::string preset;
    int dimension = 0;
    std::string tree = "tt";
    std::vector<GridSpec> grids;
    double sigma = 0;
    ThresholdRule rule = ThresholdRule::Amplitude;
    double epsilon = 0; // level-1 removal threshold, 0 = off
    bool remove_all_levels = false;
    double dt = 0;
    double final_time = 0;
    int output_stride = 1;
    std::string operator_name;
    SeparableOperator op;
    InitialConditionSpec ic;
    std::string benchmark = "none"; // none | characteristics | fourier_diffusion | dense | exact_forced3d |
                                    // analytic_hyperbolic | analytic_diffusion
    double characteristics_substep = 1e-3;
    AdaptationSpec adaptation;
    double gram_condition_cap = 1e12;
    double gram_pseudo_inverse = 0; // relative eigenvalue cutoff for pseudo-inverse Gram solves, 0 = off
    double drift_tolerance = 1e-4;
    std::vector<double> snapshot_times;
    std::optional<SliceSpec> slice;
    std::vector<VerifyCheck> checks;
    std::string echo; // merged configuration as JSON text
};

std::vector<std::string> preset_names();
std::string preset_json(const std::string& name);

// Parses a JSON config; a "preset" key supplies defaults that the rest of the
// document overrides. Throws InvalidArgument with a readable message.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::vector<Grid> build_grids(const ExperimentConfig& cfg);
PointFunction initial_condition(const ExperimentConfig& cfg);
double forced_3d_solution(const double* x, double t);

struct OutputRecord {
    double time = 0;
    Eigen::VectorXd spectrum; // level-1 singular values
    RankProfile ranks;
    bool has_error = false;
    ErrorPair error;
    double benchmark_norm = 0;
};

struct AdaptationEvent {
    double time = 0;
    std::string kind; // add | remove | reorthonormalize
    RankProfile before, after;
    double reconstruction_delta = 0;
};

struct SliceSnap {
    int axis = 0;
    double requested = 0, snapped = 0;
    Eigen::Index index = 0;
};

struct SliceRow {
    double time = 0;
    std::vector<double> coords; // free variables
    double value = 0, benchmark = 0;
};

struct RunResult {
    bool ok = true;
    std::string failure;
    double wall_seconds = 0;
    std::vector<OutputRecord> outputs;
    std::vector<AdaptationEvent> events;
    RankProfile initial_ranks, final_ranks;
    double predicted_truncation_error = -1; // decompose-static only
    std::vector<SliceSnap> snaps;
    std::vector<SliceRow> slice_rows;
    std::vector<std::pair<double, DoTtState>> snapshots;
    std::optional<DoTtState> final_state;
};

struct RunOptions {
    int threads = 1;
    std::uint64_t seed = 0; // recorded only
    std::ostream* log = nullptr;
};

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {});

std::string spectrum_csv(const RunResult& r);
std::string ranks_csv(const RunResult& r);
std::string error_csv(const RunResult& r);
std::string summary_json(const ExperimentConfig& cfg, const RunResult& r, const RunOptions& opt);
// Writes the CSVs, summary.json, slice.csv and snapshot checkpoints into dir (created if missing).
void write_artifacts(const ExperimentConfig& cfg, const RunResult& r, const RunOptions& opt, const std::string& dir);

// Ranks as {"r1": 9, "r2": [...], ...} in JSON text.
std::string ranks_json(const RankProfile& p);

struct VerifyRow {
    VerifyCheck check;
    double measured = 0;
    bool pass = false;
};

// Metrics: max_relative_error, max_absolute_error, final_relative_error,
// final_absolute_error, initial_r1, final_r1, min_r1, max_r1, event_count.
double run_metric(const RunResult& r, const std::string& metric);
std::vector<VerifyRow> verify_checks(const ExperimentConfig& cfg, const RunResult& r);
std::string verify_table(const std::vector<VerifyRow>& rows);

} // namespace dott
