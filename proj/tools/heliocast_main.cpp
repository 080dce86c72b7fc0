#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "heliocast/checkpoint.hpp"
#include "heliocast/config.hpp"
#include "heliocast/eval.hpp"
#include "heliocast/pipeline.hpp"
#include "heliocast/synth.hpp"
#include "heliocast/tensor.hpp"
#include "heliocast/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace heliocast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;

void apply_thread_env() {
    if (const char* env = std::getenv("HELIOCAST_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) nnet::set_num_threads(n);
    }
}

void write_run_json(const fs::path& out_dir, const cli::RunConfig& cfg,
                    const std::string& command) {
    fs::create_directories(out_dir);
    json run;
    run["command"] = command;
    run["config"] = cfg.doc;
    std::ofstream out(out_dir / "run.json");
    out << run.dump(2) << "\n";
}

cli::RunConfig load_run_config(const std::string& config_path,
                               const std::vector<std::string>& sets) {
    if (config_path.empty()) return cli::RunConfig::from_json(json::object(), sets);
    return cli::RunConfig::load(config_path, sets);
}

geodata::GapPolicy gap_policy_of(const cli::RunConfig& cfg) {
    const std::string policy = cfg.impute_policy();
    if (policy == "reject") return geodata::GapPolicy::Reject;
    if (policy == "clear-sky-scaled") return geodata::GapPolicy::ClearSkyScaled;
    throw ConfigError("data.impute must be 'reject' or 'clear-sky-scaled'");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
    cli::RunConfig cfg = load_run_config(config_path, sets);
    synth::SynthConfig scfg = cfg.synth_config();
    scfg.validate();

    auto data = synth::generate(scfg);
    cli::write_dataset(data, out_dir);
    write_run_json(out_dir, cfg, "synth");

    const auto hist = synth::label_audit(data.series);
    std::printf("dataset written to %s\n", out_dir.c_str());
    std::printf("stations: %zu, days: %d, grid: %d\n", data.series.size(), scfg.days, scfg.grid);
    std::printf("split audit: %d windows, easy %d, hard %d\n", hist.total(), hist.easy, hist.hard);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void write_history_csv(const fs::path& path, const std::vector<train::EpochRecord>& history) {
    std::ofstream out(path);
    out << "epoch,train_loss,val_loss,lr\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g\n", r.epoch, r.train_loss,
                      r.val_loss, r.lr);
        out << buf;
    }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& data_dir_flag, const std::string& out_dir,
              const std::string& mode, const std::string& resume_path, bool zero_context_flag) {
    cli::RunConfig cfg = load_run_config(config_path, sets);

    const std::string data_dir = data_dir_flag.empty() ? cfg.data_dir() : data_dir_flag;
    if (data_dir.empty()) throw ConfigError("no data directory (use --data or data.dir)");

    auto train_stations = cfg.station_list("train");
    auto val_stations = cfg.station_list("val");
    if (train_stations.empty() || val_stations.empty())
        throw ConfigError("config must name data.train_stations and data.val_stations");
    for (const auto& s : train_stations)
        if (std::find(val_stations.begin(), val_stations.end(), s) != val_stations.end())
            throw ConfigError("train/val station lists overlap at '" + s + "'");

    std::vector<std::string> all = train_stations;
    all.insert(all.end(), val_stations.begin(), val_stations.end());
    auto data = cli::load_dataset(data_dir, all, train_stations, gap_policy_of(cfg));

    train::TrainDataset dataset;
    dataset.train = cli::windows_for(data, train_stations, cfg.window_stride("train"));
    dataset.val = cli::windows_for(data, val_stations, cfg.window_stride("val"));
    dataset.stats = data.stats;
    dataset.zero_context = zero_context_flag || cfg.zero_context();

    train::TrainConfig tcfg = cfg.train_config();

    nnet::ModelConfig mcfg = cfg.model_config();
    if (mode == "multiquantile") {
        mcfg.num_mlp_heads = static_cast<int>(mcfg.quantiles.size());
        if (mcfg.num_mlp_heads < 2) {
            mcfg.quantiles = train::default_quantiles();
            mcfg.num_mlp_heads = static_cast<int>(mcfg.quantiles.size());
        }
    } else if (mode == "deterministic") {
        mcfg.num_mlp_heads = 1;
    } else if (!mode.empty()) {
        throw ConfigError("unknown --mode '" + mode + "'");
    }
    cli::bind_model_to_data(mcfg, data);

    std::unique_ptr<nnet::CrossViViT> model;
    train::AdamState opt_state;
    train::TrainLoopState loop_state;
    if (!resume_path.empty()) {
        auto ckpt = nnet::load_checkpoint(resume_path);
        if (nnet::model_config_to_json(ckpt.config) != nnet::model_config_to_json(mcfg))
            throw ConfigError("resume checkpoint config does not match this run");
        model = std::make_unique<nnet::CrossViViT>(ckpt.config, std::move(ckpt.params));
        dataset.stats = ckpt.norm_stats;
        if (ckpt.optimizer) opt_state = *ckpt.optimizer;
        if (ckpt.train_state) loop_state = *ckpt.train_state;
    } else {
        model = std::make_unique<nnet::CrossViViT>(mcfg, tcfg.seed);
    }

    std::printf("training %s model: %zu params, %zu train / %zu val windows\n",
                mcfg.multiquantile() ? "multiquantile" : "deterministic",
                model->params().total_values(), dataset.train.size(), dataset.val.size());

    auto result = train::train_model(
        *model, dataset, tcfg,
        [](const train::EpochRecord& r) {
            std::printf("epoch %3d  train %.6f  val %.6f  lr %.6g\n", r.epoch, r.train_loss,
                        r.val_loss, r.lr);
        },
        &opt_state, &loop_state);

    fs::create_directories(out_dir);
    write_history_csv(fs::path(out_dir) / "history.csv", result.history);

    // last.ckpt: exact continuation state; model.ckpt: best weights for use.
    std::mt19937_64 rng_echo(tcfg.seed);
    std::ostringstream rng_text;
    rng_text << rng_echo;

    nnet::Checkpoint last;
    last.config = mcfg;
    for (const auto& [name, p] : model->params().all()) {
        nnet::Tensor& t = last.params.create(name, p.shape());
        t.value() = p.value();
    }
    last.norm_stats = dataset.stats;
    last.rng_state = rng_text.str();
    last.train_state = loop_state;
    last.optimizer = opt_state;
    nnet::save_checkpoint(last, (fs::path(out_dir) / "last.ckpt").string());

    nnet::Checkpoint best;
    best.config = mcfg;
    if (!result.best_weights.empty()) {
        for (const auto& [name, vals] : result.best_weights) {
            nnet::Tensor& t = best.params.create(name, model->params().at(name).shape());
            t.value() = vals;
        }
    } else {
        // No improvement this run (resume past the best epoch): last == best.
        for (const auto& [name, p] : model->params().all()) {
            nnet::Tensor& t = best.params.create(name, p.shape());
            t.value() = p.value();
        }
    }
    best.norm_stats = dataset.stats;
    best.rng_state = rng_text.str();
    nnet::save_checkpoint(best, (fs::path(out_dir) / "model.ckpt").string());

    write_run_json(out_dir, cfg, "train");
    std::printf("best val %.6f at epoch %d; checkpoints in %s\n", result.best_val,
                result.best_epoch, out_dir.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& data_dir_flag, const std::string& out_dir,
                 const std::string& ckpt_path, const std::string& baseline,
                 std::vector<std::string> stations, bool zero_context_flag) {
    cli::RunConfig cfg = load_run_config(config_path, sets);
    const std::string data_dir = data_dir_flag.empty() ? cfg.data_dir() : data_dir_flag;
    if (data_dir.empty()) throw ConfigError("no data directory (use --data or data.dir)");
    if (ckpt_path.empty() == baseline.empty())
        throw ConfigError("evaluate needs exactly one of --ckpt or --baseline");

    if (stations.empty()) stations = cfg.station_list("test");
    if (stations.empty()) throw ConfigError("no stations to evaluate (data.test_stations)");

    eval::EvalOptions eopts;
    eopts.per_window_mae = cfg.per_window_mae();
    eopts.daylight_only = cfg.daylight_only();

    eval::Forecaster forecaster;
    std::vector<geodata::Sample> samples;
    if (!baseline.empty()) {
        forecaster = eval::make_baseline_forecaster(baseline, cfg.turbidity());
        // Baselines read only the series; stats come from the eval stations.
        auto data = cli::load_dataset(data_dir, stations, stations, gap_policy_of(cfg));
        samples = cli::windows_for(data, stations, cfg.window_stride("eval"));
    } else {
        auto ckpt = nnet::load_checkpoint(ckpt_path);
        auto model = std::make_shared<nnet::CrossViViT>(ckpt.config, std::move(ckpt.params));
        auto data = cli::load_dataset(data_dir, stations, stations, gap_policy_of(cfg));
        samples = cli::windows_for(data, stations, cfg.window_stride("eval"));
        forecaster = eval::make_model_forecaster(model, ckpt.norm_stats,
                                                 zero_context_flag || cfg.zero_context());
    }

    if (samples.empty()) throw ConfigError("no evaluation windows (dataset too short?)");
    auto report = eval::evaluate(forecaster, samples, eopts);

    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "report.json");
        out << report.to_json() << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.txt");
        out << report.to_table();
    }
    {
        auto dump = eval::dump_forecasts(forecaster, samples);
        std::ofstream out(fs::path(out_dir) / "forecasts.csv");
        for (size_t i = 0; i < dump.columns.size(); ++i)
            out << (i ? "," : "") << dump.columns[i];
        out << "\n";
        for (const auto& row : dump.rows) out << row << "\n";
    }
    write_run_json(out_dir, cfg, "evaluate");
    std::cout << report.to_table();
    return kExitOk;
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

int cmd_forecast(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& data_dir_flag, const std::string& ckpt_path,
                 const std::string& station, int window_index, const std::string& out_file) {
    cli::RunConfig cfg = load_run_config(config_path, sets);
    const std::string data_dir = data_dir_flag.empty() ? cfg.data_dir() : data_dir_flag;
    if (data_dir.empty()) throw ConfigError("no data directory (use --data or data.dir)");
    if (ckpt_path.empty()) throw ConfigError("forecast requires --ckpt");
    if (station.empty()) throw ConfigError("forecast requires --station");

    auto ckpt = nnet::load_checkpoint(ckpt_path);
    auto model = std::make_shared<nnet::CrossViViT>(ckpt.config, std::move(ckpt.params));
    auto data = cli::load_dataset(data_dir, {station}, {station}, gap_policy_of(cfg));
    auto samples = cli::windows_for(data, {station}, cfg.window_stride("eval"));
    if (window_index < 0 || window_index >= static_cast<int>(samples.size()))
        throw ConfigError("window index " + std::to_string(window_index) + " out of range [0, " +
                          std::to_string(samples.size()) + ")");

    auto forecaster = eval::make_model_forecaster(model, ckpt.norm_stats, false);
    auto dump = eval::dump_forecasts(forecaster, {samples[window_index]});

    std::ofstream out(out_file);
    if (!out) throw Error("cannot write " + out_file);
    for (size_t i = 0; i < dump.columns.size(); ++i) out << (i ? "," : "") << dump.columns[i];
    out << "\n";
    for (const auto& row : dump.rows) out << row << "\n";
    std::printf("wrote %zu rows to %s\n", dump.rows.size(), out_file.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck / report
// ---------------------------------------------------------------------------

int cmd_gradcheck(double tolerance, const std::string& only, bool inject_bug) {
    const auto start = std::chrono::steady_clock::now();
    auto reports = train::run_grad_checks(tolerance, only, inject_bug);
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);

    std::printf("%-20s %-14s %-22s %s\n", "op", "max_rel_err", "worst_tensor", "status");
    bool all_pass = true;
    for (const auto& r : reports) {
        std::printf("%-20s %-14.3e %-22s %s\n", r.op.c_str(), r.max_rel_err,
                    r.worst_tensor.empty() ? "-" : r.worst_tensor.c_str(),
                    r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::printf("%zu ops in %.1f s, tolerance %.1e\n", reports.size(), elapsed.count() / 1000.0,
                tolerance);
    return all_pass ? kExitOk : kExitCheckFailure;
}

int cmd_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open report: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto report = eval::EvalReport::from_json(ss.str());
    std::cout << report.to_table();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heliocast: multimodal day-ahead irradiance forecasting"};
    app.require_subcommand(1);
    apply_thread_env();

    std::string config_path, data_dir, out_dir, mode, resume, ckpt, baseline, station, report_path,
        out_file, only_op;
    std::vector<std::string> sets, stations;
    bool zero_context = false, strict = false, inject_bug = false;
    double tolerance = 1e-4;
    int window_index = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration file (JSON)");
        cmd->add_option("--set", sets, "config override, e.g. model.depth=2")->take_all();
        cmd->add_flag("--strict-deterministic", strict, "single-threaded numerics");
    };

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth_cmd);
    synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_dir, "dataset directory");
    train_cmd->add_option("--out", out_dir, "output directory")->required();
    train_cmd->add_option("--mode", mode, "deterministic|multiquantile");
    train_cmd->add_option("--resume", resume, "checkpoint to continue from");
    train_cmd->add_flag("--zero-context", zero_context, "ablation: zero the context channels");

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint or baseline");
    add_common(eval_cmd);
    eval_cmd->add_option("--data", data_dir, "dataset directory");
    eval_cmd->add_option("--out", out_dir, "output directory")->required();
    eval_cmd->add_option("--ckpt", ckpt, "model checkpoint");
    eval_cmd->add_option("--baseline", baseline, "persistence | clearsky | fourier:<k>");
    eval_cmd->add_option("--stations", stations, "stations to evaluate")->take_all();
    eval_cmd->add_flag("--zero-context", zero_context, "ablation: zero the context channels");

    auto* fc_cmd = app.add_subcommand("forecast", "quantile CSV for one window");
    add_common(fc_cmd);
    fc_cmd->add_option("--data", data_dir, "dataset directory");
    fc_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
    fc_cmd->add_option("--station", station, "station name")->required();
    fc_cmd->add_option("--index", window_index, "window index (stride from config)");
    fc_cmd->add_option("--out", out_file, "output CSV path")->required();

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc_cmd->add_option("--tolerance", tolerance, "max relative error");
    gc_cmd->add_option("--op", only_op, "restrict to one op");
    gc_cmd->add_flag("--inject-bug", inject_bug, "register a deliberately broken op");

    auto* rep_cmd = app.add_subcommand("report", "render a report.json as a table");
    rep_cmd->add_option("file", report_path, "report JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (strict) {
            nnet::set_num_threads(1);
            sets.push_back("train.strict_deterministic=true");
        }
        if (synth_cmd->parsed()) return cmd_synth(config_path, sets, out_dir);
        if (train_cmd->parsed())
            return cmd_train(config_path, sets, data_dir, out_dir, mode, resume, zero_context);
        if (eval_cmd->parsed())
            return cmd_evaluate(config_path, sets, data_dir, out_dir, ckpt, baseline, stations,
                                zero_context);
        if (fc_cmd->parsed())
            return cmd_forecast(config_path, sets, data_dir, ckpt, station, window_index, out_file);
        if (gc_cmd->parsed()) return cmd_gradcheck(tolerance, only_op, inject_bug);
        if (rep_cmd->parsed()) return cmd_report(report_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailure;
    }
    return kExitUsage;
}
