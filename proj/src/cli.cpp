#include "memtrain/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "memtrain/config.hpp"
#include "memtrain/dataset.hpp"
#include "memtrain/metrics.hpp"

namespace memtrain {

namespace fs = std::filesystem;

namespace {

std::string resolve_root(const DataConfig& dc) {
    if (!dc.root.empty()) return dc.root;
    if (const char* env = std::getenv("MEMTRAIN_DATA")) return env;
    return "data";
}

Dataset load_split(const RunConfig& rc, bool train) {
    const DataConfig& dc = rc.data;
    if (dc.kind == "synthetic") {
        return train ? synth_digits(dc.synth_train, rc.trainer.seed ^ 0xA11CE5u)
                     : synth_digits(dc.synth_test, 0x7e57da7au); // test set independent of seed
    }
    if (dc.kind == "synthetic-cifar") {
        return train ? synth_textures(dc.synth_train, rc.trainer.seed ^ 0xB22DF6u)
                     : synth_textures(dc.synth_test, 0x7e57c1fau);
    }
    const fs::path root = resolve_root(dc);
    if (dc.kind == "mnist") {
        return train ? load_mnist((root / dc.train_images).string(), (root / dc.train_labels).string())
                     : load_mnist((root / dc.test_images).string(), (root / dc.test_labels).string());
    }
    if (dc.kind == "cifar10") {
        std::vector<std::string> paths;
        for (const auto& p : (train ? dc.cifar_train : dc.cifar_test))
            paths.push_back((root / p).string());
        if (paths.empty()) throw ConfigError("no cifar batch files configured");
        return load_cifar10(paths);
    }
    throw ConfigError("unknown data kind '" + dc.kind + "'");
}

void apply_threads(const RunConfig& rc) {
#ifdef _OPENMP
    if (rc.threads > 0) omp_set_num_threads(rc.threads);
#else
    (void)rc;
#endif
}

TrainState build_state(const RunConfig& rc) {
    ModelSpec model = build_model(rc.model);
    return make_state(model, rc.trainer, rc.device, rc.tile, rc.map);
}

int cmd_train(const RunConfig& rc, const std::string& config_text, bool resume) {
    apply_threads(rc);
    Dataset train_ds = load_split(rc, true);
    Dataset test_ds = load_split(rc, false);
    const Tensor train_x = train_ds.to_float();
    const Tensor test_x = test_ds.to_float();

    TrainState st = build_state(rc);
    fs::create_directories(rc.out_dir);
    write_text((fs::path(rc.out_dir) / "config.resolved.cfg").string(), config_text);
    const std::string metrics_path = (fs::path(rc.out_dir) / "metrics.jsonl").string();
    if (resume) {
        load_checkpoint(st, (fs::path(rc.out_dir) / "checkpoint").string());
    } else {
        std::ofstream clear(metrics_path); // start a fresh stream
    }

    auto stats = run_training(st, train_x, train_ds.labels, test_x, test_ds.labels,
                              [&](const EpochStats& s) {
                                  append_epoch_jsonl(metrics_path, s);
                                  std::cout << epoch_stats_json(s) << std::endl;
                                  save_checkpoint(st, (fs::path(rc.out_dir) / "checkpoint").string());
                              });

    write_summary_csv((fs::path(rc.out_dir) / "summary.csv").string(), stats);
    const EvalMode em = (rc.trainer.mode == TrainMode::Software || rc.trainer.mode == TrainMode::Qat)
                            ? EvalMode::Reference
                            : EvalMode::Cim;
    EvalResult final_eval =
        evaluate(st, test_x, test_ds.labels, em, rc.trainer.test_subset, 0xFFFF);
    write_confusion_csv((fs::path(rc.out_dir) / "confusion.csv").string(), final_eval.confusion);
    std::cout << "final accuracy " << final_eval.accuracy << " over " << final_eval.samples
              << " images" << std::endl;
    return 0;
}

int cmd_infer(const RunConfig& rc, const std::string& checkpoint, const std::string& mode_name,
              bool full_test) {
    apply_threads(rc);
    Dataset test_ds = load_split(rc, false);
    const Tensor test_x = test_ds.to_float();
    TrainState st = build_state(rc);
    load_checkpoint(st, checkpoint);

    EvalMode mode = EvalMode::Cim;
    if (mode_name == "reference") mode = EvalMode::Reference;
    else if (mode_name == "cim-ideal") mode = EvalMode::CimIdeal;
    else if (mode_name != "cim") throw ConfigError("unknown eval mode '" + mode_name + "'");

    if (mode != EvalMode::Reference && !st.cim.empty() && st.cim.front().act_scale == 0.0) {
        const int calib = std::min(64, test_x.dim(0));
        Tensor sample({calib, st.model.in_ch, st.model.in_h, st.model.in_w});
        std::copy(test_x.ptr(), test_x.ptr() + sample.numel(), sample.ptr());
        calibrate_act_scales(st, sample);
    }
    const int subset = full_test ? 0 : rc.trainer.test_subset;
    EvalResult ev = evaluate(st, test_x, test_ds.labels, mode, subset, 0);
    fs::create_directories(rc.out_dir);
    write_confusion_csv((fs::path(rc.out_dir) / "confusion.csv").string(), ev.confusion);
    std::cout << "accuracy " << ev.accuracy << " over " << ev.samples << " images" << std::endl;
    return 0;
}

int cmd_transfer_eval(const RunConfig& rc) {
    apply_threads(rc);
    if (rc.transfer.models.empty()) throw ConfigError("[transfer] models list is empty");
    Dataset test_ds = load_split(rc, false);
    const Tensor test_x = test_ds.to_float();

    std::vector<TransferRecord> records;
    std::vector<TransferSummary> summaries;
    const ModelSpec model = build_model(rc.model);

    for (const std::string& ckpt : rc.transfer.models) {
        // load trained parameters through a scratch state
        TrainState loaded = make_state(model, rc.trainer, rc.device, rc.tile, rc.map);
        load_checkpoint(loaded, ckpt);

        double baseline = rc.transfer.baseline_accuracy;
        if (baseline <= 0.0) {
            EvalResult ref =
                evaluate(loaded, test_x, test_ds.labels, EvalMode::Reference, rc.transfer.subset, 1);
            baseline = ref.accuracy;
        }
        for (double sigma : rc.transfer.sigmas) {
            std::vector<double> normalized;
            for (int trial = 0; trial < rc.transfer.samples; ++trial) {
                const uint64_t tseed =
                    rc.trainer.seed ^ (0x9e3779b9u * static_cast<uint64_t>(trial + 1));
                const double acc = transfer_trial(model, loaded.params, rc.trainer, rc.device,
                                                  rc.tile, rc.map, sigma, rc.transfer.step_levels,
                                                  test_x, test_ds.labels, rc.transfer.subset, tseed);
                TransferRecord rec;
                rec.model = ckpt;
                rec.sigma = sigma;
                rec.trial = trial;
                rec.accuracy = acc;
                rec.normalized = baseline > 0.0 ? acc / baseline : 0.0;
                normalized.push_back(rec.normalized);
                records.push_back(rec);
            }
            summaries.push_back(summarize(ckpt, sigma, normalized));
        }
    }
    fs::create_directories(rc.out_dir);
    write_transfer_csv((fs::path(rc.out_dir) / "transfer_trials.csv").string(), records);
    write_text((fs::path(rc.out_dir) / "transfer_summary.json").string(),
               transfer_summary_json(summaries));
    std::cout << transfer_summary_json(summaries);
    return 0;
}

int cmd_energy_report(const RunConfig& rc, const std::vector<std::string>& extra_configs) {
    std::vector<CostReport> reports;
    auto add = [&](const RunConfig& c) {
        const ModelSpec model = build_model(c.model);
        reports.push_back(energy_latency(model, c.cost, c.cost_input_bits, c.cost_weight_bits));
    };
    add(rc);
    for (const auto& path : extra_configs) add(load_config(path));

    std::string csv = cost_report_csv_header() + "\n";
    for (const auto& r : reports) csv += cost_report_csv_row(r) + "\n";
    fs::create_directories(rc.out_dir);
    write_text((fs::path(rc.out_dir) / "cost_report.csv").string(), csv);
    std::cout << csv;
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"memtrain: mixed-precision training on simulated memristor CIM hardware"};
    app.require_subcommand(1);
    app.fallthrough(); // allow --config/--seed/--out after the subcommand name

    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "run configuration file")->required();
    app.add_option("--seed", seed_override, "override [run] seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_override, "override [run] out directory");

    auto* train = app.add_subcommand("train", "train a model");
    bool naive = false, software = false, qat = false, resume = false;
    train->add_flag("--naive", naive, "per-batch direct programming baseline");
    train->add_flag("--software", software, "pure digital FP32 baseline");
    train->add_flag("--qat", qat, "fake-quantization baseline");
    train->add_flag("--resume", resume, "resume from the checkpoint in the out directory");

    auto* infer = app.add_subcommand("infer", "evaluate a checkpoint");
    std::string checkpoint, eval_mode = "cim";
    bool full_test = false;
    infer->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    infer->add_option("--mode", eval_mode, "cim | cim-ideal | reference");
    infer->add_flag("--full-test", full_test, "evaluate the whole test set");

    auto* transfer = app.add_subcommand("transfer-eval", "weight-transfer robustness protocol");
    auto* energy = app.add_subcommand("energy-report", "analytic cost model report");
    std::vector<std::string> extra_models;
    energy->add_option("--models", extra_models, "additional config files, one row each");

    try {
        std::vector<std::string> argv_copy = args;
        std::reverse(argv_copy.begin(), argv_copy.end());
        app.parse(argv_copy);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }

    try {
        RunConfig rc = load_config(config_path);
        std::ifstream cf(config_path);
        std::stringstream ss;
        ss << cf.rdbuf();
        std::string config_text = ss.str();
        if (seed_set) {
            rc.trainer.seed = seed_override;
            config_text += "\n# seed overridden to " + std::to_string(seed_override) + "\n";
        }
        if (!out_override.empty()) rc.out_dir = out_override;
        if (train->parsed()) {
            if (naive) rc.trainer.mode = TrainMode::Naive;
            if (software) rc.trainer.mode = TrainMode::Software;
            if (qat) rc.trainer.mode = TrainMode::Qat;
            return cmd_train(rc, config_text, resume);
        }
        if (infer->parsed()) return cmd_infer(rc, checkpoint, eval_mode, full_test);
        if (transfer->parsed()) return cmd_transfer_eval(rc);
        if (energy->parsed()) return cmd_energy_report(rc, extra_models);
        std::cerr << "error: no subcommand" << std::endl;
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}

} // namespace memtrain
