#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include "mda/config.hpp"
#include "mda/data.hpp"
#include "mda/metrics.hpp"
#include "mda/network.hpp"
#include "mda/train.hpp"

namespace mda {

/// One training run of a runner table.
struct RunRow {
    std::string setting;  // e.g. "k=3", "fraction=0.05", "(c) ours"
    double parameter = 0.0;
    std::size_t seed = 0;
    double accuracy = 0.0;
    double nmi = 0.0;
    double purity = 0.0;
};

/// Per-setting aggregate over seeds.
struct SettingSummary {
    std::string setting;
    double parameter = 0.0;
    double median_accuracy = 0.0;
    double mean_accuracy = 0.0;
    double median_nmi = 0.0;
};

struct RunnerTable {
    std::vector<RunRow> runs;
    std::vector<SettingSummary> summary;

    const SettingSummary& find(const std::string& setting) const {
        for (const auto& s : summary) {
            if (s.setting == setting) return s;
        }
        throw std::out_of_range("RunnerTable: no setting " + setting);
    }
};

/// Seed offset `s` shifts both the model initialization and the sampler stream, so adding a seed never
/// changes the rows of earlier seeds.
inline ExperimentConfig with_seed(ExperimentConfig cfg, std::size_t s) {
    cfg.model.seed += s;
    cfg.train.seed += s;
    return cfg;
}

inline Evaluation run_once(const ExperimentConfig& cfg, const ExperimentData& data) {
    Model model(cfg.model);
    return train(model, data, cfg.train).final_eval;
}

namespace detail {

struct Job {
    std::string setting;
    double parameter;
    std::size_t seed;
    ExperimentConfig cfg;
    const ExperimentData* data;
};

/// Runs jobs on up to hardware_concurrency workers; each run owns its model.
inline std::vector<RunRow> run_jobs(const std::vector<Job>& jobs) {
    std::vector<RunRow> rows(jobs.size());
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::size_t next = 0;
    while (next < jobs.size()) {
        std::vector<std::future<void>> wave;
        for (std::size_t w = 0; w < workers && next < jobs.size(); ++w, ++next) {
            const std::size_t j = next;
            wave.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, [&rows, &jobs, j] {
                const Evaluation e = run_once(jobs[j].cfg, *jobs[j].data);
                rows[j] = {jobs[j].setting, jobs[j].parameter, jobs[j].seed, e.accuracy, e.nmi, e.purity};
            }));
        }
        for (auto& f : wave) f.get();
    }
    return rows;
}

inline std::vector<SettingSummary> summarize(const std::vector<RunRow>& runs) {
    std::vector<SettingSummary> out;
    for (const auto& r : runs) {
        if (std::any_of(out.begin(), out.end(), [&](const SettingSummary& s) { return s.setting == r.setting; })) continue;
        std::vector<double> acc, nmi;
        for (const auto& q : runs) {
            if (q.setting != r.setting) continue;
            acc.push_back(q.accuracy);
            nmi.push_back(std::isnan(q.nmi) ? 0.0 : q.nmi);
        }
        out.push_back({r.setting, r.parameter, median(acc), mean(acc), median(nmi)});
    }
    return out;
}

inline std::string format_parameter(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace detail

/// Trains one model per (k, seed) on the same data.
inline RunnerTable run_k_ablation(const ExperimentConfig& base, const ExperimentData& data,
                                  const std::vector<std::size_t>& k_values, std::size_t seeds) {
    if (k_values.empty()) throw std::invalid_argument("run_k_ablation: empty k list");
    std::vector<detail::Job> jobs;
    for (std::size_t k : k_values) {
        for (std::size_t s = 0; s < seeds; ++s) {
            ExperimentConfig cfg = with_seed(base, s);
            cfg.model.k = k;
            cfg.model.normalization = NormalizationMode::DomainAlignment;
            jobs.push_back({"k=" + std::to_string(k), static_cast<double>(k), s, cfg, &data});
        }
    }
    RunnerTable t;
    t.runs = detail::run_jobs(jobs);
    t.summary = detail::summarize(t.runs);
    return t;
}

/// For each fraction f, reveals the true latent domain of a seeded f-subset of source samples (nested
/// across fractions for a given seed) and trains with the domain log-loss active.
inline RunnerTable run_supervision_sweep(const ExperimentConfig& base, const ExperimentData& data,
                                         const std::vector<double>& fractions, std::size_t seeds) {
    for (double f : fractions) {
        if (f < 0.0 || f > 1.0) throw std::invalid_argument("run_supervision_sweep: fraction outside [0,1]");
    }
    std::vector<ExperimentData> variants;
    variants.reserve(fractions.size() * seeds);
    std::vector<detail::Job> jobs;
    for (double f : fractions) {
        for (std::size_t s = 0; s < seeds; ++s) {
            ExperimentConfig cfg = with_seed(base, s);
            cfg.model.normalization = NormalizationMode::DomainAlignment;
            ExperimentData d{reveal_domain_labels(data.source, f, cfg.train.seed), data.target, data.target_test};
            variants.push_back(std::move(d));
            jobs.push_back({"fraction=" + detail::format_parameter(f), f, s, cfg, nullptr});
        }
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) jobs[j].data = &variants[j];
    RunnerTable t;
    t.runs = detail::run_jobs(jobs);
    t.summary = detail::summarize(t.runs);
    return t;
}

inline constexpr const char* kBaselineSourceOnly = "(a) source-only";
inline constexpr const char* kBaselineUnified = "(b) unified-source DA";
inline constexpr const char* kBaselineOurs = "(c) latent discovery";
inline constexpr const char* kBaselineKnown = "(d) known-domain multi-source";

/// The four controlled configurations on identical data and seeds:
/// (a) whole-batch normalization without entropy terms, (b) k = 1 with a separate target column,
/// (c) k latent domains discovered by the branch, (d) every source row fixed to its true domain.
inline RunnerTable run_baseline_grid(const ExperimentConfig& base, const ExperimentData& data, std::size_t seeds) {
    const auto& truth = LatentDomains::of(data.source);
    int true_domains = 0;
    for (int d : truth) true_domains = std::max(true_domains, d + 1);
    if (true_domains == 0) throw std::invalid_argument("run_baseline_grid: source set has no latent ground truth");

    ExperimentData known{reveal_domain_labels(data.source, 1.0, 0), data.target, data.target_test};
    std::vector<detail::Job> jobs;
    for (std::size_t s = 0; s < seeds; ++s) {
        ExperimentConfig a = with_seed(base, s);
        a.model.normalization = NormalizationMode::Pooled;
        a.train.weights.class_entropy = 0.0;
        a.train.weights.domain_entropy = 0.0;
        a.train.weights.domain = 0.0;
        jobs.push_back({kBaselineSourceOnly, 0, s, a, &data});

        ExperimentConfig b = with_seed(base, s);
        b.model.normalization = NormalizationMode::DomainAlignment;
        b.model.k = 1;
        jobs.push_back({kBaselineUnified, 1, s, b, &data});

        ExperimentConfig c = with_seed(base, s);
        c.model.normalization = NormalizationMode::DomainAlignment;
        jobs.push_back({kBaselineOurs, static_cast<double>(c.model.k), s, c, &data});

        ExperimentConfig d = with_seed(base, s);
        d.model.normalization = NormalizationMode::DomainAlignment;
        d.model.k = static_cast<std::size_t>(true_domains);
        jobs.push_back({kBaselineKnown, static_cast<double>(true_domains), s, d, &known});
    }
    RunnerTable t;
    t.runs = detail::run_jobs(jobs);
    t.summary = detail::summarize(t.runs);
    return t;
}

inline void write_summary_csv(std::ostream& os, const RunnerTable& t) {
    os << "setting,parameter,median_acc,mean_acc,median_nmi\n";
    for (const auto& s : t.summary) {
        os << '"' << s.setting << "\"," << format_metric(s.parameter) << ',' << format_metric(s.median_accuracy) << ','
           << format_metric(s.mean_accuracy) << ',' << format_metric(s.median_nmi) << '\n';
    }
}

inline void write_runs_csv(std::ostream& os, const RunnerTable& t) {
    os << "setting,parameter,seed,acc,nmi,purity\n";
    for (const auto& r : t.runs) {
        os << '"' << r.setting << "\"," << format_metric(r.parameter) << ',' << r.seed << ','
           << format_metric(r.accuracy) << ',' << format_metric(r.nmi) << ',' << format_metric(r.purity) << '\n';
    }
}

}  // namespace mda
