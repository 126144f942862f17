#pragma once

// Command-line front end. Kept out of mda.hpp because the content hash needs libcrypto.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "mda/mda.hpp"

namespace mda {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitNumerical = 3 };

/// SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
inline std::string git_blob_hash(const std::string& content) {
    std::string header = "blob " + std::to_string(content.size());
    header.push_back('\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

namespace cli {

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

struct Options {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    std::size_t seeds = 5;
    bool force = false;
    std::vector<std::size_t> k_values{2, 3, 4, 5};
    std::vector<double> fractions{0.0, 0.05, 0.25, 0.5, 1.0};
};

/// Config document after overrides, plus its parsed form.
struct LoadedConfig {
    json doc;
    ExperimentConfig cfg;
    std::string hash;
};

inline LoadedConfig load_config(const Options& o) {
    LoadedConfig lc;
    lc.doc = o.config.empty() ? json::object() : read_json_file(o.config);
    for (const auto& s : o.overrides) apply_override(lc.doc, s);
    lc.cfg = parse_experiment_config(lc.doc);
    lc.hash = git_blob_hash(lc.doc.dump());
    return lc;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

class RunDir {
public:
    RunDir(std::string command, const Options& o, const LoadedConfig& lc) : command_(std::move(command)) {
        namespace fs = std::filesystem;
        dir_ = o.out.empty() ? fs::path("runs") / (command_ + "-" + lc.hash.substr(0, 12)) : fs::path(o.out);
        if (fs::exists(dir_) && !o.force) {
            throw ConfigError("--out", dir_.string() + " already exists (use --force to overwrite)");
        }
        fs::create_directories(dir_);
        manifest_ = {{"command", command_},
                     {"config", to_json(lc.cfg)},
                     {"config_document", lc.doc},
                     {"config_hash", lc.hash},
                     {"out_dir", dir_.string()},
                     {"started_at", utc_now()}};
    }

    const std::filesystem::path& path() const { return dir_; }

    void finish(const std::vector<std::size_t>& seeds) {
        manifest_["seeds"] = seeds;
        manifest_["finished_at"] = utc_now();
        write_text(dir_ / "manifest.json", manifest_.dump(2) + "\n");
    }

private:
    std::string command_;
    std::filesystem::path dir_;
    json manifest_;
};

struct Bound {
    LoadedConfig lc;
    ExperimentData data;
};

inline Bound bind(const Options& o) {
    Bound b{load_config(o), {}};
    b.data = load_data(b.lc.cfg.data);
    bind_to_data(b.lc.cfg, b.data);
    return b;
}

inline std::vector<std::size_t> seed_list(std::size_t n) {
    std::vector<std::size_t> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = i;
    return s;
}

inline json eval_json(const Evaluation& e) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    return {{"accuracy", e.accuracy}, {"nmi", num(e.nmi)}, {"purity", num(e.purity)}};
}

inline int cmd_train(const Options& o, std::ostream& out) {
    Bound b = bind(o);
    RunDir run("train", o, b.lc);
    Model model(b.lc.cfg.model);
    const TrainResult r = train(model, b.data, b.lc.cfg.train);
    {
        std::ofstream csv(run.path() / "metrics.csv");
        write_metrics_csv(csv, r.metrics);
    }
    save_checkpoint((run.path() / "checkpoint.json").string(), model);
    json summary = eval_json(r.final_eval);
    summary["iterations"] = b.lc.cfg.train.iterations;
    write_text(run.path() / "summary.json", summary.dump(2) + "\n");
    run.finish({static_cast<std::size_t>(b.lc.cfg.train.seed)});
    out << "acc=" << format_metric(r.final_eval.accuracy) << " nmi=" << format_metric(r.final_eval.nmi)
        << " purity=" << format_metric(r.final_eval.purity) << "  -> " << run.path().string() << '\n';
    return kExitOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
    const LoadedConfig lc = load_config(o);
    const GradcheckReport rep = run_gradcheck(lc.cfg.gradcheck);
    json groups = json::array();
    for (const auto& g : rep.groups) {
        out << std::left << std::setw(22) << g.group << " max_rel_err=" << std::scientific << std::setprecision(3)
            << g.max_error << " tol=" << g.tolerance << std::defaultfloat << " checks=" << g.checks
            << (g.passed() ? "" : "  FAIL") << '\n';
        groups.push_back({{"group", g.group}, {"max_error", g.max_error}, {"tolerance", g.tolerance},
                          {"checks", g.checks}, {"passed", g.passed()}});
    }
    if (!o.out.empty()) {
        RunDir run("gradcheck", o, lc);
        write_text(run.path() / "summary.json",
                   json{{"passed", rep.passed()}, {"layer_configurations", rep.layer_configurations}, {"groups", groups}}
                           .dump(2) + "\n");
        run.finish({});
    }
    if (!rep.passed()) {
        out << "gradcheck failed:";
        for (const auto& g : rep.groups) {
            if (!g.passed()) out << ' ' << g.group;
        }
        out << '\n';
        return kExitCheckFailed;
    }
    out << "gradcheck passed (" << rep.layer_configurations << " layer configurations)\n";
    return kExitOk;
}

inline int emit_table(const std::string& command, const Options& o, const Bound& b, const RunnerTable& t,
                      std::ostream& out) {
    RunDir run(command, o, b.lc);
    {
        std::ofstream csv(run.path() / "summary.csv");
        write_summary_csv(csv, t);
    }
    {
        std::ofstream csv(run.path() / "runs.csv");
        write_runs_csv(csv, t);
    }
    json rows = json::array();
    for (const auto& s : t.summary) {
        rows.push_back({{"setting", s.setting}, {"parameter", s.parameter}, {"median_accuracy", s.median_accuracy},
                        {"mean_accuracy", s.mean_accuracy}, {"median_nmi", s.median_nmi}});
    }
    write_text(run.path() / "summary.json", json{{"settings", rows}}.dump(2) + "\n");
    run.finish(seed_list(o.seeds));
    write_summary_csv(out, t);
    return kExitOk;
}

inline void require_seeds(const Options& o) {
    if (o.seeds == 0) throw ConfigError("--seeds", "must be >= 1");
}

inline int cmd_ablate_k(const Options& o, std::ostream& out) {
    require_seeds(o);
    Bound b = bind(o);
    return emit_table("ablate-k", o, b, run_k_ablation(b.lc.cfg, b.data, o.k_values, o.seeds), out);
}

inline int cmd_sweep_labels(const Options& o, std::ostream& out) {
    require_seeds(o);
    Bound b = bind(o);
    return emit_table("sweep-labels", o, b, run_supervision_sweep(b.lc.cfg, b.data, o.fractions, o.seeds), out);
}

inline int cmd_baselines(const Options& o, std::ostream& out) {
    require_seeds(o);
    Bound b = bind(o);
    return emit_table("baselines", o, b, run_baseline_grid(b.lc.cfg, b.data, o.seeds), out);
}

}  // namespace cli

/// Whole CLI; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Multi-domain alignment layers: training, gradient checks and ablation runners."};
    app.name("mda");
    app.require_subcommand(1);
    cli::Options o;

    auto common = [&o](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", o.config, "experiment config (JSON with model/train/data/gradcheck)");
        if (config_required) c->required();
        sub->add_option("--out", o.out, "output directory (default runs/<command>-<config hash>)");
        sub->add_option("--set", o.overrides, "override a config field, e.g. --set train.seed=7 (repeatable)")
            ->take_all()
            ->allow_extra_args(false);
        sub->add_flag("--force", o.force, "allow writing into an existing output directory");
    };
    auto seeds = [&o](CLI::App* sub) {
        sub->add_option("--seeds", o.seeds, "number of seeds per setting")->capture_default_str();
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train one model and write a run directory");
    common(train_cmd, true);
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient group");
    common(grad_cmd, false);
    CLI::App* ablate_cmd = app.add_subcommand("ablate-k", "median target accuracy for each number of latent domains");
    common(ablate_cmd, true);
    seeds(ablate_cmd);
    ablate_cmd->add_option("--k", o.k_values, "latent domain counts")->delimiter(',')->capture_default_str();
    CLI::App* sweep_cmd = app.add_subcommand("sweep-labels", "accuracy against the fraction of domain-labelled source");
    common(sweep_cmd, true);
    seeds(sweep_cmd);
    sweep_cmd->add_option("--fractions", o.fractions, "labelled fractions in [0,1]")
        ->delimiter(',')
        ->capture_default_str();
    CLI::App* base_cmd = app.add_subcommand("baselines", "source-only, unified, discovered and known-domain runs");
    common(base_cmd, true);
    seeds(base_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        // top-level help lists the flags of every subcommand too
        if (app.get_subcommands().empty()) {
            out << app.help("", CLI::AppFormatMode::All);
            return kExitOk;
        }
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train_cmd) return cli::cmd_train(o, out);
        if (*grad_cmd) return cli::cmd_gradcheck(o, out);
        if (*ablate_cmd) return cli::cmd_ablate_k(o, out);
        if (*sweep_cmd) return cli::cmd_sweep_labels(o, out);
        if (*base_cmd) return cli::cmd_baselines(o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IdxError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalAbort& e) {
        err << "numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitConfig;
}

}  // namespace mda
