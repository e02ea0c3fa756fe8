#include "tstok/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tstok/rng.hpp"

namespace tstok {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

VariantSpec make_variant(const std::string& id, InitScheme scheme, int turns = 2,
                         bool shuffled = false) {
    VariantSpec v;
    v.id = id;
    v.init.scheme = scheme;
    v.init.num_turns = turns;
    v.init.shuffled = shuffled;
    return v;
}

}  // namespace

void GridConfig::finalize() {
    const TokenVocab vocab = build_vocab(epsilon, kNumSpecials);
    model.n_ts_tokens = vocab.n_tokens;
    model.epsilon = epsilon;
    model.validate();
    if (seeds.empty()) {
        throw ConfigError("grid needs at least one seed");
    }
    if (steps < 1 || batch_size < 1 || train_samples < 1 || eval_samples < 1) {
        throw ConfigError("grid sizes out of range");
    }
    if (eval_interval > 0 && steps < eval_interval) {
        throw ConfigError("steps must be >= eval interval");
    }
    if (tasks.empty()) {
        throw ConfigError("grid needs at least one task");
    }
}

GridConfig default_grid() {
    GridConfig cfg;
    cfg.variants = {
        make_variant("pca_main", InitScheme::PcaMain),
        make_variant("slerp", InitScheme::Slerp),
        make_variant("helix1", InitScheme::Helix, 1),
        make_variant("helix2", InitScheme::Helix, 2),
        make_variant("helix4", InitScheme::Helix, 4),
        make_variant("vmf", InitScheme::Vmf),
        make_variant("default", InitScheme::Default),
        make_variant("pca_main_shuffled", InitScheme::PcaMain, 2, true),
        make_variant("slerp_shuffled", InitScheme::Slerp, 2, true),
    };
    cfg.finalize();
    return cfg;
}

GridConfig load_grid_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open grid config " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed grid config: " + std::string(e.what()));
    }

    GridConfig cfg;
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.model.dim = j.value("dim", cfg.model.dim);
    cfg.model.layers = j.value("layers", cfg.model.layers);
    cfg.model.heads = j.value("heads", cfg.model.heads);
    cfg.model.ffn = j.value("ffn", cfg.model.ffn);
    cfg.model.context = j.value("context", cfg.model.context);
    cfg.base_rows = j.value("base_rows", cfg.base_rows);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.metrics_interval = j.value("metrics_interval", cfg.metrics_interval);
    cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
    cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.train_samples = j.value("train_samples", cfg.train_samples);
    cfg.eval_samples = j.value("eval_samples", cfg.eval_samples);
    cfg.data_seed = j.value("data_seed", cfg.data_seed);
    if (j.contains("tasks")) {
        cfg.tasks.clear();
        for (const auto& t : j.at("tasks")) {
            cfg.tasks.push_back(parse_task(t.get<std::string>()));
        }
    }
    if (j.contains("seeds")) {
        cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("variants")) {
        cfg.variants.clear();
        for (const auto& v : j.at("variants")) {
            VariantSpec spec;
            const std::string scheme = v.value("scheme", std::string("default"));
            spec.init = parse_scheme_label(scheme);
            spec.init.noise_scale = v.value("noise_scale", spec.init.noise_scale);
            if (v.contains("turns")) {
                spec.init.num_turns = v.at("turns").get<int>();
            }
            spec.init.concentration = v.value("kappa", spec.init.concentration);
            spec.init.margin_frac = v.value("margin_frac", spec.init.margin_frac);
            spec.init.shuffled = v.value("shuffled", spec.init.shuffled);
            spec.reg.lambda_ord = v.value("lambda_ord", 0.0);
            spec.reg.lambda_mono = v.value("lambda_mono", 0.0);
            spec.reg.step_k = v.value("reg_step", 1);
            spec.reg.margin_ord = v.value("margin_ord", 0.0);
            spec.reg.margin_mono = v.value("margin_mono", 0.0);
            spec.reg.projection_refresh_interval = v.value("refresh_interval", 1);
            spec.id = v.value("id", scheme_label(spec.init));
            cfg.variants.push_back(std::move(spec));
        }
    } else {
        cfg.variants = default_grid().variants;
    }
    cfg.finalize();
    return cfg;
}

void dump_grid_config(const GridConfig& cfg, const std::string& path) {
    nlohmann::json j;
    j["epsilon"] = cfg.epsilon;
    j["dim"] = cfg.model.dim;
    j["layers"] = cfg.model.layers;
    j["heads"] = cfg.model.heads;
    j["ffn"] = cfg.model.ffn;
    j["context"] = cfg.model.context;
    j["base_rows"] = cfg.base_rows;
    j["steps"] = cfg.steps;
    j["batch_size"] = cfg.batch_size;
    j["eval_interval"] = cfg.eval_interval;
    j["metrics_interval"] = cfg.metrics_interval;
    j["peak_lr"] = cfg.peak_lr;
    j["warmup_ratio"] = cfg.warmup_ratio;
    j["weight_decay"] = cfg.weight_decay;
    j["train_samples"] = cfg.train_samples;
    j["eval_samples"] = cfg.eval_samples;
    j["data_seed"] = cfg.data_seed;
    j["tasks"] = nlohmann::json::array();
    for (const TaskKind t : cfg.tasks) {
        j["tasks"].push_back(task_name(t));
    }
    j["seeds"] = cfg.seeds;
    j["variants"] = nlohmann::json::array();
    for (const VariantSpec& v : cfg.variants) {
        nlohmann::json jv;
        jv["id"] = v.id;
        InitSpec plain = v.init;
        plain.shuffled = false;
        jv["scheme"] = scheme_label(plain);
        jv["noise_scale"] = v.init.noise_scale;
        jv["turns"] = v.init.num_turns;
        jv["kappa"] = v.init.concentration;
        jv["margin_frac"] = v.init.margin_frac;
        jv["shuffled"] = v.init.shuffled;
        jv["lambda_ord"] = v.reg.lambda_ord;
        jv["lambda_mono"] = v.reg.lambda_mono;
        jv["reg_step"] = v.reg.step_k;
        jv["margin_ord"] = v.reg.margin_ord;
        jv["margin_mono"] = v.reg.margin_mono;
        jv["refresh_interval"] = v.reg.projection_refresh_interval;
        j["variants"].push_back(jv);
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << j.dump(2) << "\n";
}

double RunResult::mean_acc() const {
    double sum = 0.0;
    int count = 0;
    for (const CellResult& c : cells) {
        if (c.ok) {
            sum += c.acc_avg;
            ++count;
        }
    }
    return count > 0 ? sum / count : 0.0;
}

double RunResult::mean_neglog_metric(int metric_index, double delta) const {
    double sum = 0.0;
    int count = 0;
    for (const CellResult& c : cells) {
        if (!c.ok) {
            continue;
        }
        double metric = 0.0;
        switch (metric_index) {
            case 0: metric = c.geometry.r_ord_local; break;
            case 1: metric = c.geometry.r_ord_global; break;
            case 2: metric = c.geometry.r_mono_local; break;
            default: metric = c.geometry.r_mono_global; break;
        }
        sum += -std::log(metric + delta);
        ++count;
    }
    return count > 0 ? sum / count : 0.0;
}

int RunResult::ok_count() const {
    int count = 0;
    for (const CellResult& c : cells) {
        count += c.ok;
    }
    return count;
}

GridData build_grid_data(const GridConfig& cfg) {
    const TokenVocab vocab = build_vocab(cfg.epsilon, kNumSpecials);
    GridData data;
    const int per_task_train =
        cfg.train_samples / static_cast<int>(cfg.tasks.size());
    const int per_task_eval = cfg.eval_samples / static_cast<int>(cfg.tasks.size());
    if (per_task_train < kNumClasses || per_task_eval < kNumClasses) {
        throw ConfigError("too few samples per task");
    }
    for (const TaskKind task : cfg.tasks) {
        const auto train =
            generate(task, per_task_train, derive_seed(cfg.data_seed, "train." + task_name(task)));
        for (const auto& s : train) {
            data.train.push_back(encode_sample(s, vocab, cfg.model.context));
        }
        const auto eval =
            generate(task, per_task_eval, derive_seed(cfg.data_seed, "eval." + task_name(task)));
        for (const auto& s : eval) {
            data.eval.push_back(encode_sample(s, vocab, cfg.model.context));
        }
    }
    return data;
}

CellResult run_cell(const GridConfig& cfg, const VariantSpec& variant, std::uint64_t seed,
                    const GridData& data, const std::string& cell_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    CellResult result;
    result.variant_id = variant.id;
    result.seed = seed;

    const TokenVocab vocab = build_vocab(cfg.epsilon, kNumSpecials);
    InitSpec init = variant.init;
    init.seed = derive_seed(seed, "init." + variant.id);
    const EmbeddingMatrix container = make_container(cfg.base_rows, cfg.model.dim, vocab, init);

    MicroLm<float> model(cfg.model, derive_seed(seed, "model"));
    model.load_embeddings(container);
    AdamW<float> opt(model);
    opt.weight_decay = cfg.weight_decay;
    CosineSchedule sched{cfg.peak_lr, cfg.warmup_ratio, cfg.steps};

    const bool use_reg = variant.reg.lambda_ord != 0.0 || variant.reg.lambda_mono != 0.0;
    const bool metrics_ok = cfg.model.n_ts_tokens > 2 * RegularizerConfig{}.k_global;

    std::ofstream log;
    if (!cell_dir.empty()) {
        std::filesystem::create_directories(cell_dir);
        log.open(cell_dir + "/log.csv");
        if (!log) {
            throw DataError("cannot write " + cell_dir + "/log.csv");
        }
        log << "step,lr,ce,l_ord,l_mono,total,r_ord_local,r_ord_global,r_mono_local,"
               "r_mono_global,eval_acc\n";
    }

    Rng batch_rng(derive_seed(seed, "batches"));
    std::vector<int> order(data.train.size());
    std::size_t cursor = order.size();  // forces a shuffle on first use
    auto next_batch = [&]() {
        std::vector<int> indices;
        indices.reserve(static_cast<std::size_t>(cfg.batch_size));
        while (static_cast<int>(indices.size()) < cfg.batch_size) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) {
                    order[i] = static_cast<int>(i);
                }
                for (std::size_t i = order.size() - 1; i > 0; --i) {
                    const std::size_t j = batch_rng.uniform_index(i + 1);
                    std::swap(order[i], order[j]);
                }
                cursor = 0;
            }
            indices.push_back(order[cursor++]);
        }
        return indices;
    };

    Eigen::MatrixXd basis;
    for (long step = 0; step < cfg.steps; ++step) {
        const double lr = sched.lr_at(step);
        const TokenBatch batch = make_batch(data.train, next_batch());
        model.zero_grads();
        if (use_reg &&
            (step % std::max(1, variant.reg.projection_refresh_interval) == 0 || basis.size() == 0)) {
            basis = fit_projection(model.ts_block_as_double()).basis;
        }
        const LossBreakdown lb =
            model.backward(batch, variant.reg, use_reg ? &basis : nullptr);
        opt.step(model, lr);
        result.train_ce.push_back(lb.ce);

        std::string metric_cells = ",,,";
        if (metrics_ok && cfg.metrics_interval > 0 && (step + 1) % cfg.metrics_interval == 0) {
            const GeometryReport rep = measure(model.ts_block_as_double(), variant.reg);
            result.geometry = rep;
            metric_cells = fmt_double(rep.r_ord_local) + "," + fmt_double(rep.r_ord_global) +
                           "," + fmt_double(rep.r_mono_local) + "," +
                           fmt_double(rep.r_mono_global);
        }
        std::string eval_cell;
        if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
            const EvalResult ev = evaluate(model, data.eval);
            result.eval_curve.emplace_back(step + 1, ev.overall_accuracy);
            eval_cell = fmt_double(ev.overall_accuracy);
        }
        if (log) {
            log << step << ',' << fmt_double(lr) << ',' << fmt_double(lb.ce) << ','
                << fmt_double(lb.ord) << ',' << fmt_double(lb.mono) << ','
                << fmt_double(lb.total) << ',' << metric_cells << ',' << eval_cell << '\n';
        }
    }

    const EvalResult final_eval = evaluate(model, data.eval);
    double acc_sum = 0.0;
    for (const TaskKind task : cfg.tasks) {
        const auto t = static_cast<std::size_t>(static_cast<int>(task));
        result.task_acc[t] = final_eval.task_accuracy[t];
        result.task_f1[t] = final_eval.task_macro_f1[t];
        acc_sum += final_eval.task_accuracy[t];
    }
    result.acc_avg = acc_sum / static_cast<double>(cfg.tasks.size());
    if (metrics_ok) {
        result.geometry = measure(model.ts_block_as_double(), variant.reg);
    }
    result.ok = true;

    if (!cell_dir.empty()) {
        save_checkpoint(model, cell_dir + "/checkpoint");
        nlohmann::json geo;
        geo["r_ord_local"] = result.geometry.r_ord_local;
        geo["r_ord_global"] = result.geometry.r_ord_global;
        geo["r_mono_local"] = result.geometry.r_mono_local;
        geo["r_mono_global"] = result.geometry.r_mono_global;
        geo["l_ord"] = result.geometry.l_ord;
        geo["l_mono"] = result.geometry.l_mono;
        std::ofstream geo_out(cell_dir + "/geometry.json");
        geo_out << geo.dump(2) << "\n";
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

int effective_parallelism(int requested) {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) {
        cap = 1;
    }
    if (const char* env = std::getenv("TSTOK_THREADS")) {
        const int value = std::atoi(env);
        if (value > 0) {
            cap = std::min(cap, value);
        }
    }
    return std::clamp(requested, 1, cap);
}

std::vector<RunResult> run_grid(const GridConfig& cfg, const std::string& out_dir) {
    GridConfig grid = cfg;
    grid.finalize();
    const GridData data = build_grid_data(grid);

    struct Cell {
        std::size_t variant_idx;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (std::size_t v = 0; v < grid.variants.size(); ++v) {
        for (const std::uint64_t seed : grid.seeds) {
            cells.push_back({v, seed});
        }
    }
    std::vector<CellResult> cell_results(cells.size());

    const int workers = effective_parallelism(grid.parallel);
    std::atomic<std::size_t> next{0};
    auto run_worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= cells.size()) {
                return;
            }
            const Cell& cell = cells[idx];
            const VariantSpec& variant = grid.variants[cell.variant_idx];
            std::string cell_dir;
            if (!out_dir.empty()) {
                cell_dir = out_dir + "/" + variant.id + "_s" + std::to_string(cell.seed);
            }
            CellResult& result = cell_results[idx];
            try {
                result = run_cell(grid, variant, cell.seed, data, cell_dir);
            } catch (const std::exception& e) {
                result.variant_id = variant.id;
                result.seed = cell.seed;
                result.ok = false;
                result.error = e.what();
            }
            std::cerr << "[cell] " << variant.id << " seed " << cell.seed
                      << (result.ok ? " ok" : " FAILED: " + result.error) << " ("
                      << fmt_double(result.wall_seconds) << "s)\n";
        }
    };
    if (workers <= 1) {
        run_worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(run_worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    std::vector<RunResult> results;
    results.reserve(grid.variants.size());
    for (std::size_t v = 0; v < grid.variants.size(); ++v) {
        RunResult run;
        run.variant_id = grid.variants[v].id;
        for (std::size_t idx = 0; idx < cells.size(); ++idx) {
            if (cells[idx].variant_idx == v) {
                run.cells.push_back(cell_results[idx]);
            }
        }
        results.push_back(std::move(run));
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_results_csv(results, grid, out_dir + "/results.csv");
        write_regression_json(correlate(results), out_dir + "/regression.json");
    }
    return results;
}

RegressionEntry ols_fit(const std::vector<double>& x, const std::vector<double>& y,
                        const std::string& name) {
    RegressionEntry entry;
    entry.metric = name;
    entry.points = static_cast<int>(x.size());
    if (x.size() != y.size() || x.size() < 2) {
        return entry;
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        return entry;  // degenerate: r undefined
    }
    entry.slope = sxy / sxx;
    entry.intercept = my - entry.slope * mx;
    entry.pearson_r = sxy / std::sqrt(sxx * syy);
    entry.defined = true;
    return entry;
}

namespace {

const char* kMetricNames[] = {"r_ord_local", "r_ord_global", "r_mono_local", "r_mono_global"};

}  // namespace

RegressionReport correlate(const std::vector<RunResult>& results, double delta) {
    RegressionReport report;
    for (int metric = 0; metric < 4; ++metric) {
        std::vector<double> x;
        std::vector<double> y;
        for (const RunResult& run : results) {
            if (run.ok_count() == 0) {
                continue;
            }
            x.push_back(run.mean_neglog_metric(metric, delta));
            y.push_back(run.mean_acc());
        }
        report.entries.push_back(ols_fit(x, y, kMetricNames[metric]));
    }
    return report;
}

void write_results_csv(const std::vector<RunResult>& results, const GridConfig& cfg,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << "variant,seed,status,acc_avg";
    for (const TaskKind task : cfg.tasks) {
        out << ",acc_" << task_name(task) << ",f1_" << task_name(task);
    }
    out << ",r_ord_local,r_ord_global,r_mono_local,r_mono_global\n";
    for (const RunResult& run : results) {
        for (const CellResult& cell : run.cells) {
            out << run.variant_id << ',' << cell.seed << ',' << (cell.ok ? "ok" : "failed") << ','
                << fmt_double(cell.acc_avg);
            for (const TaskKind task : cfg.tasks) {
                const auto t = static_cast<std::size_t>(static_cast<int>(task));
                out << ',' << fmt_double(cell.task_acc[t]) << ',' << fmt_double(cell.task_f1[t]);
            }
            out << ',' << fmt_double(cell.geometry.r_ord_local) << ','
                << fmt_double(cell.geometry.r_ord_global) << ','
                << fmt_double(cell.geometry.r_mono_local) << ','
                << fmt_double(cell.geometry.r_mono_global) << '\n';
        }
    }
}

RegressionReport correlate_results_csv(const std::string& csv_path, double delta) {
    std::ifstream in(csv_path);
    if (!in) {
        throw DataError("cannot open " + csv_path);
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw DataError("empty results csv");
    }
    std::vector<std::string> columns;
    {
        std::stringstream ss(header);
        std::string col;
        while (std::getline(ss, col, ',')) {
            columns.push_back(col);
        }
    }
    auto find_col = [&](const std::string& name) {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == name) {
                return static_cast<int>(i);
            }
        }
        throw DataError("results csv missing column " + name);
    };
    const int col_variant = find_col("variant");
    const int col_status = find_col("status");
    const int col_acc = find_col("acc_avg");
    const int col_metric[4] = {find_col("r_ord_local"), find_col("r_ord_global"),
                               find_col("r_mono_local"), find_col("r_mono_global")};

    struct Agg {
        double acc = 0.0;
        double neglog[4] = {0, 0, 0, 0};
        int count = 0;
    };
    std::map<std::string, Agg> by_variant;
    std::vector<std::string> variant_order;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (fields.size() < columns.size()) {
            throw DataError("short row in results csv");
        }
        if (fields[static_cast<std::size_t>(col_status)] != "ok") {
            continue;
        }
        const std::string& variant = fields[static_cast<std::size_t>(col_variant)];
        if (by_variant.find(variant) == by_variant.end()) {
            variant_order.push_back(variant);
        }
        Agg& agg = by_variant[variant];
        agg.acc += std::stod(fields[static_cast<std::size_t>(col_acc)]);
        for (int m = 0; m < 4; ++m) {
            agg.neglog[m] +=
                -std::log(std::stod(fields[static_cast<std::size_t>(col_metric[m])]) + delta);
        }
        agg.count += 1;
    }

    RegressionReport report;
    for (int m = 0; m < 4; ++m) {
        std::vector<double> x;
        std::vector<double> y;
        for (const std::string& variant : variant_order) {
            const Agg& agg = by_variant[variant];
            if (agg.count == 0) {
                continue;
            }
            x.push_back(agg.neglog[m] / agg.count);
            y.push_back(agg.acc / agg.count);
        }
        report.entries.push_back(ols_fit(x, y, kMetricNames[m]));
    }
    return report;
}

void write_regression_json(const RegressionReport& report, const std::string& path) {
    nlohmann::json j;
    for (const RegressionEntry& entry : report.entries) {
        nlohmann::json je;
        je["defined"] = entry.defined;
        je["points"] = entry.points;
        if (entry.defined) {
            je["slope"] = entry.slope;
            je["intercept"] = entry.intercept;
            je["pearson_r"] = entry.pearson_r;
        } else {
            je["slope"] = nullptr;
            je["intercept"] = nullptr;
            je["pearson_r"] = nullptr;
        }
        j[entry.metric] = je;
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << j.dump(2) << "\n";
}

}  // namespace tstok
