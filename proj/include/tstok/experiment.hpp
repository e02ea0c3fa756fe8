#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tstok/micro_lm.hpp"

namespace tstok {

struct VariantSpec {
    std::string id;
    InitSpec init;
    RegularizerConfig reg;
};

struct GridConfig {
    double epsilon = 0.001;
    ModelConfig model;
    int base_rows = 1024;
    long steps = 2000;
    int batch_size = 2;
    long eval_interval = 500;
    long metrics_interval = 10;
    double peak_lr = 3e-4;
    double warmup_ratio = 0.03;
    double weight_decay = 0.01;
    std::vector<TaskKind> tasks = {TaskKind::Trend, TaskKind::Volatility};
    int train_samples = 3000;
    int eval_samples = 600;
    std::uint64_t data_seed = 7;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<VariantSpec> variants;
    int parallel = 1;

    // Syncs the model vocabulary with epsilon.
    void finalize();
};

// The Table-1 mirror: PCA-Main, Slerp, Helix-1/2/4, VMF, Default and the
// shuffled PCA-Main/Slerp ablations.
GridConfig default_grid();

GridConfig load_grid_config(const std::string& path);
void dump_grid_config(const GridConfig& cfg, const std::string& path);

struct CellResult {
    std::string variant_id;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double acc_avg = 0.0;
    std::array<double, kNumTasks> task_acc{};
    std::array<double, kNumTasks> task_f1{};
    GeometryReport geometry;
    std::vector<double> train_ce;                    // per step
    std::vector<std::pair<long, double>> eval_curve;  // (step, overall accuracy)
    double wall_seconds = 0.0;  // diagnostics only; never serialized
};

struct RunResult {
    std::string variant_id;
    std::vector<CellResult> cells;

    double mean_acc() const;
    // Mean over seeds of -log(metric + delta); metric index follows
    // GeometryReport field order r_ord_local..r_mono_global.
    double mean_neglog_metric(int metric_index, double delta) const;
    int ok_count() const;
};

struct GridData {
    std::vector<EncodedSample> train;
    std::vector<EncodedSample> eval;
};

// Train/eval sets share the grid's data seed; the eval stream is a
// disjoint seed partition.
GridData build_grid_data(const GridConfig& cfg);

CellResult run_cell(const GridConfig& cfg, const VariantSpec& variant, std::uint64_t seed,
                    const GridData& data, const std::string& cell_dir);

// Runs every (variant, seed) cell; failures abort only their own cell.
// When out_dir is non-empty, writes one directory per cell plus
// results.csv and regression.json.
std::vector<RunResult> run_grid(const GridConfig& cfg, const std::string& out_dir);

struct RegressionEntry {
    std::string metric;
    double slope = 0.0;
    double intercept = 0.0;
    double pearson_r = 0.0;
    bool defined = false;
    int points = 0;
};

struct RegressionReport {
    std::vector<RegressionEntry> entries;
};

// OLS of y against x with Pearson r; undefined when either variance
// vanishes or there are fewer than 2 points.
RegressionEntry ols_fit(const std::vector<double>& x, const std::vector<double>& y,
                        const std::string& name);

// Mean accuracy against -log(R + delta) per geometry metric, one point
// per variant (seed-averaged).
RegressionReport correlate(const std::vector<RunResult>& results, double delta = 1e-8);
RegressionReport correlate_results_csv(const std::string& csv_path, double delta = 1e-8);

void write_results_csv(const std::vector<RunResult>& results, const GridConfig& cfg,
                       const std::string& path);
void write_regression_json(const RegressionReport& report, const std::string& path);

// Worker cap: min(requested, TSTOK_THREADS when set, hardware threads).
int effective_parallelism(int requested);

}  // namespace tstok
