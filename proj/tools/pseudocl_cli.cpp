// pseudocl command-line front end.
//
//   pseudocl gen-data [--config FILE] --out dataset.csv [data flags]
//   pseudocl run      [--config FILE] [--out DIR] [flags]
//   pseudocl sweep    [--config FILE] --axis key=v1,v2,... [--repeats R] [--jobs J] [--out DIR] [flags]
//   pseudocl eval     --checkpoint FILE --data FILE [--out FILE]
//   pseudocl report   RUN_DIR
//
// Exit status: 0 success, 2 usage/config error (nothing written), 1 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pseudocl/pseudocl.hpp"

namespace fs = std::filesystem;
using namespace pseudocl;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One flag per config field.
const std::vector<std::pair<std::string, std::string>>& flag_table() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"--mode", "run.mode"},
        {"--variant", "run.variant"},
        {"--labels", "run.labels"},
        {"--step-size", "run.step_size"},
        {"--bias-correction", "run.bias_correction"},
        {"--exemplar-policy", "exemplar.policy"},
        {"--q", "exemplar.q"},
        {"--epochs", "train.epochs"},
        {"--batch", "train.batch"},
        {"--lr", "train.lr"},
        {"--lr-decay", "train.lr_decay"},
        {"--lr-decay-period", "train.lr_decay_period"},
        {"--weight-decay", "train.weight_decay"},
        {"--temperature", "loss.temperature"},
        {"--alpha", "loss.alpha"},
        {"--hidden-width", "model.hidden_width"},
        {"--hidden-layers", "model.hidden_layers"},
        {"--clusterer", "cluster.algorithm"},
        {"--cluster-max-iter", "cluster.max_iter"},
        {"--cluster-tol", "cluster.tol"},
        {"--cluster-restarts", "cluster.restarts"},
        {"--cluster-normalize", "cluster.normalize"},
        {"--var-floor", "cluster.var_floor"},
        {"--pca-dim", "pca.dim"},
        {"--arrangement-seed", "seed.arrangement"},
        {"--seed", "seed.model"},
        {"--shuffle-seed", "seed.shuffle"},
        {"--data", "data.path"},
        {"--data-classes", "data.classes"},
        {"--data-dim", "data.dim"},
        {"--data-samples-per-class", "data.samples_per_class"},
        {"--data-separation", "data.separation"},
        {"--data-std", "data.std"},
        {"--data-seed", "data.seed"},
        {"--data-nuisance-dims", "data.nuisance_dims"},
        {"--data-nuisance-std", "data.nuisance_std"},
    };
    return table;
}

bool is_bool_key(const std::string& key) { return key == "run.bias_correction" || key == "cluster.normalize"; }

struct Overrides {
    std::string config_file;
    std::map<std::string, std::string> values;  // key -> raw value

    void attach(CLI::App* app, bool data_only = false) {
        app->add_option("--config", config_file, "Config file (key = value, [section] headers)")
            ->check(CLI::ExistingFile);
        for (const auto& [flag, key] : flag_table()) {
            if (data_only && key.rfind("data.", 0) != 0) continue;
            auto& slot = values[key];
            if (is_bool_key(key)) {
                app->add_option(flag, slot, "Override " + key + " (on/off; bare flag means on)")
                    ->expected(0, 1)
                    ->default_str("on");
            } else {
                app->add_option(flag, slot, "Override " + key);
            }
        }
    }

    ExperimentConfig resolve(CLI::App* app) const {
        ExperimentConfig cfg;
        try {
            if (!config_file.empty()) cfg = parse_config(detail::read_file(config_file));
            for (const auto& [flag, key] : flag_table()) {
                auto* opt = app->get_option_no_throw(flag);
                if (!opt || opt->count() == 0) continue;
                const auto& v = values.at(key);
                set_config_value(cfg, key, v.empty() && is_bool_key(key) ? "on" : v);
            }
            cfg.run.validate();
            cfg.data.blobs.validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        return cfg;
    }
};

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

fs::path default_root() {
    if (const char* env = std::getenv("PSEUDOCL_RUN_ROOT"); env && *env) return env;
    return "runs";
}

Dataset obtain_dataset(const ExperimentConfig& cfg, bool& generated) {
    generated = cfg.data.path.empty();
    return generated ? generate_gaussian_stream(cfg.data.blobs) : load_dataset(cfg.data.path);
}

void print_table(const std::vector<StepReport>& steps) {
    std::printf("%-6s %-8s %-9s %-9s %-9s\n", "step", "classes", "acc", "nmi", "ari");
    for (const auto& r : steps)
        std::printf("%-6zu %-8zu %-9.4f %-9.4f %-9.4f\n", r.step, r.classes_seen, r.acc, r.nmi, r.ari);
    if (steps.empty()) return;
    const auto s = summarize(steps);
    std::printf("%-15s %-9.4f %-9.4f %-9.4f\n", "Avg", s.avg_acc, s.avg_nmi, s.avg_ari);
    std::printf("%-15s %-9.4f %-9.4f %-9.4f\n", "Last", s.last_acc, steps.back().nmi, steps.back().ari);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t p = 0;
    while (true) {
        const auto c = s.find(',', p);
        auto item = s.substr(p, c == std::string::npos ? std::string::npos : c - p);
        if (!item.empty()) out.push_back(item);
        if (c == std::string::npos) break;
        p = c + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pseudocl: unsupervised class-incremental learning with pseudo labels"};
    app.require_subcommand(1);

    Overrides gen_o, run_o, sweep_o;
    std::string gen_out, run_out, sweep_out, sweep_axis, ckpt_path, eval_data, eval_out, report_dir;
    std::size_t repeats = 1, jobs = 1;

    auto* gen = app.add_subcommand("gen-data", "Generate a Gaussian stream dataset");
    gen_o.attach(gen, true);
    gen->add_option("--out", gen_out, "Output CSV path")->required();

    auto* run = app.add_subcommand("run", "Run one experiment");
    run_o.attach(run);
    run->add_option("--out", run_out, "Run directory (default $PSEUDOCL_RUN_ROOT/run-<variant>-seed<seed>)");

    auto* sweep = app.add_subcommand("sweep", "Run one experiment per axis value and repeat");
    sweep_o.attach(sweep);
    sweep->add_option("--axis", sweep_axis, "key=v1,v2,... e.g. exemplar.q=2,5,10,20")->required();
    sweep->add_option("--repeats", repeats, "Seeds per value (seed, seed+1, ...)")->check(CLI::PositiveNumber);
    sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
    sweep->add_option("--out", sweep_out, "Sweep directory (default $PSEUDOCL_RUN_ROOT/sweep-<key>)");

    auto* eval = app.add_subcommand("eval", "Re-evaluate a checkpoint on a dataset's eval split");
    eval->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data)->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "Write classes_seen,acc,nmi,ari CSV here");

    auto* report = app.add_subcommand("report", "Print the Avg/Last table of a run directory");
    report->add_option("run_dir", report_dir)->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "pseudocl: error[usage]: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    try {
        if (*gen) {
            const auto cfg = gen_o.resolve(gen);
            save_dataset(generate_gaussian_stream(cfg.data.blobs), gen_out);
            std::printf("wrote %s\n", gen_out.c_str());
        } else if (*run) {
            const auto cfg = run_o.resolve(run);
            const fs::path dir = run_out.empty() ? default_root() / ("run-" + to_string(cfg.run.variant) + "-seed" +
                                                                     std::to_string(cfg.run.model_seed))
                                                 : fs::path(run_out);
            bool generated = false;
            const auto ds = obtain_dataset(cfg, generated);
            fs::create_directories(dir);
            if (generated) save_dataset(ds, dir / "dataset.csv");
            const auto rep = run_experiment(cfg.run, ds, dir, config_to_text(cfg));
            print_table(rep.steps);
            std::printf("run directory: %s\n", dir.string().c_str());
        } else if (*sweep) {
            const auto cfg = sweep_o.resolve(sweep);
            const auto eq = sweep_axis.find('=');
            if (eq == std::string::npos) throw UsageError("--axis expects key=v1,v2,...");
            SweepSpec spec{sweep_axis.substr(0, eq), split_list(sweep_axis.substr(eq + 1)), repeats, jobs};
            try {
                get_config_value(cfg, spec.key);
                if (spec.values.empty()) throw ParameterError("run_sweep: empty axis");
                for (const auto& v : spec.values) {
                    auto probe = cfg;
                    set_config_value(probe, spec.key, v);
                    probe.run.validate();
                }
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            const fs::path dir = sweep_out.empty() ? default_root() / ("sweep-" + spec.key) : fs::path(sweep_out);
            bool generated = false;
            const auto ds = obtain_dataset(cfg, generated);
            fs::create_directories(dir);
            if (generated) save_dataset(ds, dir / "dataset.csv");
            detail::write_file_atomic(dir / "config.txt", config_to_text(cfg));
            const auto entries = run_sweep(cfg, spec, ds, dir);
            std::printf("%-12s %-7s %-9s %-9s\n", "value", "repeat", "avg_acc", "last_acc");
            for (const auto& e : entries)
                std::printf("%-12s %-7zu %-9.4f %-9.4f\n", e.value.c_str(), e.repeat, e.summary.avg_acc,
                            e.summary.last_acc);
            for (const auto& [v, m] : mean_avg_acc(entries)) std::printf("mean avg_acc %s=%s: %.4f\n", spec.key.c_str(), v.c_str(), m);
            std::printf("sweep directory: %s\n", dir.string().c_str());
        } else if (*eval) {
            const auto ck = read_checkpoint(ckpt_path);
            const auto ds = load_dataset(eval_data);
            LabelAudit audit;
            const auto samples = eval_samples_for(ds, ck.class_order, audit);
            const auto r = evaluate(ck.model, ds, samples, 0, ck.class_order.size(), audit);
            const std::string csv = "classes_seen,acc,nmi,ari\n" + std::to_string(r.classes_seen) + "," +
                                    detail::format_double(r.acc) + "," + detail::format_double(r.nmi) + "," +
                                    detail::format_double(r.ari) + "\n";
            if (!eval_out.empty()) detail::write_file_atomic(eval_out, csv);
            std::fputs(csv.c_str(), stdout);
        } else if (*report) {
            print_table(read_report(fs::path(report_dir) / "report.csv"));
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "pseudocl: error[usage]: %s\n", one_line(e.what()).c_str());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "pseudocl: error[%s]: %s\n", e.kind(), one_line(e.what()).c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "pseudocl: error[runtime]: %s\n", one_line(e.what()).c_str());
        return 1;
    }
    return 0;
}
