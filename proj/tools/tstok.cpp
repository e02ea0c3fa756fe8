#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tstok/experiment.hpp"
#include "tstok/export_csv.hpp"
#include "tstok/micro_lm.hpp"
#include "tstok/rng.hpp"
#include "tstok/specials.hpp"
#include "tstok/synth_tasks.hpp"
#include "tstok/ts_processor.hpp"

namespace {

using nlohmann::json;

int cmd_vocab(double epsilon, int base_offset) {
    const tstok::TokenVocab vocab = tstok::build_vocab(epsilon, base_offset);
    json out;
    out["epsilon"] = vocab.epsilon;
    out["n_tokens"] = vocab.n_tokens;
    out["base_offset"] = vocab.base_offset;
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_tokenize(double epsilon, int base_offset, const std::string& input,
                 const std::string& output) {
    const tstok::TokenVocab vocab = tstok::build_vocab(epsilon, base_offset);
    std::ifstream in(input);
    if (!in) {
        throw tstok::DataError("cannot open " + input);
    }
    std::ofstream out(output);
    if (!out) {
        throw tstok::DataError("cannot write " + output);
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw tstok::DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        tstok::RawSeries series;
        series.channels = record.at("channels").get<std::vector<std::vector<double>>>();
        const auto norm = tstok::normalize(series);
        const auto quantized = tstok::quantize(norm, vocab);
        json rec_out;
        rec_out["ids"] = tstok::encode_ids(quantized, vocab, tstok::special::kSep);
        rec_out["scale"] = quantized.scale;
        rec_out["text"] = tstok::render_series_block(series, vocab);
        out << rec_out.dump() << "\n";
    }
    return 0;
}

int cmd_init(const std::string& scheme, std::uint64_t seed, int dim, double epsilon,
             int base_rows, double noise_scale, int turns, double kappa, double margin_frac,
             bool shuffled, const std::string& out_prefix) {
    tstok::InitSpec spec = tstok::parse_scheme_label(scheme);
    spec.seed = seed;
    spec.noise_scale = noise_scale;
    if (turns > 0) {
        spec.num_turns = turns;
    }
    spec.concentration = kappa;
    spec.margin_frac = margin_frac;
    spec.shuffled = spec.shuffled || shuffled;
    const tstok::TokenVocab vocab = tstok::build_vocab(epsilon, tstok::kNumSpecials);
    const tstok::EmbeddingMatrix emb = tstok::make_container(base_rows, dim, vocab, spec);
    tstok::save_container(emb, out_prefix);
    std::cerr << "wrote " << out_prefix << ".json / .bin (" << emb.rows() << " x " << emb.dim()
              << ", scheme " << emb.scheme << ")\n";
    return 0;
}

int cmd_geometry(const std::string& emb_prefix, int k_local, int k_global, int step_k,
                 double margin_ord, double margin_mono) {
    const tstok::EmbeddingMatrix emb = tstok::load_container(emb_prefix);
    tstok::RegularizerConfig cfg;
    cfg.k_local = k_local;
    cfg.k_global = k_global;
    cfg.step_k = step_k;
    cfg.margin_ord = margin_ord;
    cfg.margin_mono = margin_mono;
    const tstok::GeometryReport report = tstok::measure(emb.ts_block(), cfg);
    json out;
    out["r_ord_local"] = report.r_ord_local;
    out["r_ord_global"] = report.r_ord_global;
    out["r_mono_local"] = report.r_mono_local;
    out["r_mono_global"] = report.r_mono_global;
    out["l_ord"] = report.l_ord;
    out["l_mono"] = report.l_mono;
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_gen_data(const std::string& task_str, int count, std::uint64_t seed,
                 const std::string& out_path) {
    const tstok::TaskKind task = tstok::parse_task(task_str);
    const auto samples = tstok::generate(task, count, seed);
    std::ofstream out(out_path);
    if (!out) {
        throw tstok::DataError("cannot write " + out_path);
    }
    for (const auto& sample : samples) {
        json rec;
        rec["channels"] = sample.series.channels;
        rec["task"] = tstok::task_name(sample.task);
        rec["label"] = sample.label;
        json params;
        params["slope"] = sample.params.slope;
        params["period"] = sample.params.period;
        params["amplitude"] = sample.params.amplitude;
        params["sigma"] = sample.params.sigma;
        params["phase"] = sample.params.phase;
        params["length"] = sample.params.length;
        params["spikes"] = json::array();
        for (const auto& spike : sample.params.spikes) {
            params["spikes"].push_back({{"pos", spike.position}, {"mag", spike.magnitude}});
        }
        rec["params"] = params;
        out << rec.dump() << "\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path, bool default_grid_flag, const std::string& out_dir,
              int parallel, const std::string& dump_config) {
    tstok::GridConfig cfg =
        default_grid_flag ? tstok::default_grid() : tstok::load_grid_config(config_path);
    cfg.parallel = parallel;
    if (!dump_config.empty()) {
        tstok::dump_grid_config(cfg, dump_config);
        return 0;
    }
    const auto results = tstok::run_grid(cfg, out_dir);
    int failed = 0;
    for (const auto& run : results) {
        failed += static_cast<int>(run.cells.size()) - run.ok_count();
    }
    if (failed > 0) {
        std::cerr << failed << " cell(s) failed\n";
        return 2;
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path) {
    const auto model = tstok::load_checkpoint<float>(checkpoint);
    const tstok::TokenVocab vocab =
        tstok::build_vocab(model.config().epsilon, tstok::kNumSpecials);
    std::ifstream in(data_path);
    if (!in) {
        throw tstok::DataError("cannot open " + data_path);
    }
    std::vector<tstok::EncodedSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json rec = json::parse(line);
        tstok::SyntheticSample sample;
        sample.series.channels = rec.at("channels").get<std::vector<std::vector<double>>>();
        sample.task = tstok::parse_task(rec.at("task").get<std::string>());
        sample.label = rec.at("label").get<int>();
        samples.push_back(tstok::encode_sample(sample, vocab, model.config().context));
    }
    const tstok::EvalResult result = tstok::evaluate(model, samples);
    json out;
    out["overall_accuracy"] = result.overall_accuracy;
    for (int t = 0; t < tstok::kNumTasks; ++t) {
        if (result.task_counts[static_cast<std::size_t>(t)] == 0) {
            continue;
        }
        const std::string name = tstok::task_name(static_cast<tstok::TaskKind>(t));
        out["accuracy"][name] = result.task_accuracy[static_cast<std::size_t>(t)];
        out["macro_f1"][name] = result.task_macro_f1[static_cast<std::size_t>(t)];
    }
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_correlate(const std::string& results_csv, const std::string& out_path) {
    const tstok::RegressionReport report = tstok::correlate_results_csv(results_csv);
    if (!out_path.empty()) {
        tstok::write_regression_json(report, out_path);
    } else {
        json j;
        for (const auto& entry : report.entries) {
            json je;
            je["defined"] = entry.defined;
            je["points"] = entry.points;
            if (entry.defined) {
                je["slope"] = entry.slope;
                je["intercept"] = entry.intercept;
                je["pearson_r"] = entry.pearson_r;
            }
            j[entry.metric] = je;
        }
        std::cout << j.dump() << "\n";
    }
    return 0;
}

int cmd_export_pca(const std::string& emb_prefix, const std::string& out_csv) {
    const tstok::EmbeddingMatrix emb = tstok::load_container(emb_prefix);
    tstok::export_pca(emb, out_csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TS-token embedding toolkit: quantization, geometry-aware "
                 "initialization, regularized training, experiment grids"};
    app.require_subcommand(1);

    // vocab
    double epsilon = 0.001;
    int base_offset = tstok::kNumSpecials;
    auto* vocab_cmd = app.add_subcommand("vocab", "Report the TS token vocabulary for a precision");
    vocab_cmd->add_option("--epsilon", epsilon, "Quantization precision in (0, 1]")->required();
    vocab_cmd->add_option("--base-offset", base_offset, "First TS token ID");

    // tokenize
    std::string input_path;
    std::string output_path;
    auto* tok_cmd = app.add_subcommand("tokenize", "Tokenize JSONL series into IDs and prompt text");
    tok_cmd->add_option("--epsilon", epsilon, "Quantization precision")->required();
    tok_cmd->add_option("--input", input_path, "Input JSONL with {channels}")->required();
    tok_cmd->add_option("--output", output_path, "Output JSONL with {ids, scale, text}")->required();
    tok_cmd->add_option("--base-offset", base_offset, "First TS token ID");

    // init
    std::string scheme = "default";
    std::uint64_t seed = 42;
    int dim = 64;
    int base_rows = 1024;
    double noise_scale = 0.01;
    int turns = 0;
    double kappa = 50.0;
    double margin_frac = 0.05;
    bool shuffled = false;
    std::string out_prefix;
    auto* init_cmd = app.add_subcommand("init", "Build an embedding container");
    init_cmd->add_option("--scheme", scheme, "default|slerp|pca_main|helix<N>|vmf (append * to shuffle)")
        ->required();
    init_cmd->add_option("--seed", seed, "RNG seed");
    init_cmd->add_option("--dim", dim, "Embedding dimension");
    init_cmd->add_option("--epsilon", epsilon, "Quantization precision");
    init_cmd->add_option("--base-rows", base_rows, "Stand-in base table rows");
    init_cmd->add_option("--noise-scale", noise_scale, "Noise scale (fraction of avg radius)");
    init_cmd->add_option("--turns", turns, "Helix turns");
    init_cmd->add_option("--kappa", kappa, "vMF concentration");
    init_cmd->add_option("--margin-frac", margin_frac, "PCA-Main span margin fraction");
    init_cmd->add_flag("--shuffled", shuffled, "Shuffle the TS rows after init");
    init_cmd->add_option("--out", out_prefix, "Output path prefix")->required();

    // geometry
    std::string emb_prefix;
    int k_local = 1;
    int k_global = 100;
    int step_k = 1;
    double margin_ord = 0.0;
    double margin_mono = 0.0;
    auto* geo_cmd = app.add_subcommand("geometry", "Geometry metrics of a container's TS block");
    geo_cmd->add_option("--emb", emb_prefix, "Container path prefix")->required();
    geo_cmd->add_option("--k-local", k_local, "Local step");
    geo_cmd->add_option("--k-global", k_global, "Global step");
    geo_cmd->add_option("--step-k", step_k, "Step for the configured-margin losses");
    geo_cmd->add_option("--margin-ord", margin_ord, "Ordinality margin");
    geo_cmd->add_option("--margin-mono", margin_mono, "Monotonicity margin");

    // gen-data
    std::string task_str = "trend";
    int count = 1000;
    std::string data_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate labeled synthetic samples");
    gen_cmd->add_option("--task", task_str, "trend|seasonality|volatility|outliers")->required();
    gen_cmd->add_option("--count", count, "Sample count")->required();
    gen_cmd->add_option("--seed", seed, "RNG seed");
    gen_cmd->add_option("--out", data_out, "Output JSONL")->required();

    // train
    std::string config_path;
    bool use_default_grid = false;
    std::string runs_dir;
    int parallel = 1;
    std::string dump_config;
    auto* train_cmd = app.add_subcommand("train", "Run a variant grid");
    train_cmd->add_option("--config", config_path, "Grid config JSON");
    train_cmd->add_flag("--default-grid", use_default_grid, "Use the built-in 9-variant grid");
    train_cmd->add_option("--out", runs_dir, "Output directory");
    train_cmd->add_option("--parallel", parallel, "Concurrent cells (capped by TSTOK_THREADS)");
    train_cmd->add_option("--dump-config", dump_config, "Write the resolved config and exit");

    // eval
    std::string checkpoint;
    std::string eval_data;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on labeled JSONL data");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint path prefix")->required();
    eval_cmd->add_option("--data", eval_data, "Labeled JSONL ({channels, task, label})")->required();

    // correlate
    std::string results_csv;
    std::string regression_out;
    auto* corr_cmd = app.add_subcommand("correlate", "Accuracy vs geometry regression");
    corr_cmd->add_option("--results", results_csv, "results.csv from a grid run")->required();
    corr_cmd->add_option("--out", regression_out, "Output JSON (stdout when omitted)");

    // export-pca
    std::string pca_out;
    auto* pca_cmd = app.add_subcommand("export-pca", "Export 2D/3D PCA coordinates as CSV");
    pca_cmd->add_option("--emb", emb_prefix, "Container path prefix")->required();
    pca_cmd->add_option("--out", pca_out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (vocab_cmd->parsed()) return cmd_vocab(epsilon, base_offset);
        if (tok_cmd->parsed()) return cmd_tokenize(epsilon, base_offset, input_path, output_path);
        if (init_cmd->parsed())
            return cmd_init(scheme, seed, dim, epsilon, base_rows, noise_scale, turns, kappa,
                            margin_frac, shuffled, out_prefix);
        if (geo_cmd->parsed())
            return cmd_geometry(emb_prefix, k_local, k_global, step_k, margin_ord, margin_mono);
        if (gen_cmd->parsed()) return cmd_gen_data(task_str, count, seed, data_out);
        if (train_cmd->parsed()) {
            if (!use_default_grid && config_path.empty()) {
                std::cerr << "train needs --config or --default-grid\n";
                return 1;
            }
            if (runs_dir.empty() && dump_config.empty()) {
                std::cerr << "train needs --out\n";
                return 1;
            }
            return cmd_train(config_path, use_default_grid, runs_dir, parallel, dump_config);
        }
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, eval_data);
        if (corr_cmd->parsed()) return cmd_correlate(results_csv, regression_out);
        if (pca_cmd->parsed()) return cmd_export_pca(emb_prefix, pca_out);
    } catch (const tstok::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const tstok::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const tstok::GeometryError& e) {
        std::cerr << "geometry error: " << e.what() << "\n";
        return 2;
    } catch (const tstok::TrainError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
