// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "mda/cli.hpp"
#include "mda/mda.hpp"

using namespace mda;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

std::string fmt(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

std::string pts(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return buf;
}

MdaConfig plain(double eps) {
    MdaConfig c;
    c.epsilon = eps;
    c.affine = false;
    return c;
}

AssignmentMatrix hard(const std::vector<std::size_t>& cols, std::size_t domains) {
    AssignmentMatrix w{Tensor({cols.size(), domains}), std::vector<bool>(cols.size(), true)};
    for (std::size_t i = 0; i < cols.size(); ++i) w.probs.at(i, cols[i]) = 1.0;
    return w;
}

Tensor uniform_random(Tensor::Shape shape, std::uint64_t seed, double lo, double hi) {
    Tensor t(std::move(shape));
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(g);
    return t;
}

Tensor reference_bn(const Tensor& x, double eps) {
    const auto L = detail::layout_of(x);
    Tensor y(x.shape());
    const double n = static_cast<double>(L.batch * L.positions);
    for (std::size_t c = 0; c < L.channels; ++c) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < L.batch; ++i)
            for (std::size_t p = 0; p < L.positions; ++p) mu += x[L.index(i, c, p)];
        mu /= n;
        for (std::size_t i = 0; i < L.batch; ++i)
            for (std::size_t p = 0; p < L.positions; ++p) var += std::pow(x[L.index(i, c, p)] - mu, 2);
        var /= n;
        for (std::size_t i = 0; i < L.batch; ++i)
            for (std::size_t p = 0; p < L.positions; ++p)
                y[L.index(i, c, p)] = (x[L.index(i, c, p)] - mu) / std::sqrt(var + eps);
    }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------

void c1_gradients(Outcome& o) {
    const auto t0 = Clock::now();
    GradcheckConfig cfg;
    cfg.configurations = 24;
    const GradcheckReport rep = run_gradcheck(cfg);
    const double secs = seconds_since(t0);
    double layer = 0.0, model = 0.0;
    for (const auto& g : rep.groups) {
        const bool is_layer = g.group.rfind("mda_layer.", 0) == 0;
        (is_layer ? layer : model) = std::max(is_layer ? layer : model, g.max_error);
        o.require(g.checks > 0, g.group + " not checked");
    }
    o.detail << rep.layer_configurations << " layer configs, max layer err " << fmt(layer) << ", max model err "
             << fmt(model) << ", " << fmt(secs, 2) << "s";
    o.require(rep.layer_configurations >= 20, ">= 20 configurations");
    o.require(layer <= 1e-5, "layer <= 1e-5");
    o.require(model <= 1e-4, "model <= 1e-4");
    o.require(secs <= 60.0, "runtime <= 60s");
}

void c2_reductions(Outcome& o) {
    double bn = 0.0, part = 0.0, constant = 0.0, e2e = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (Tensor::Shape shape : {Tensor::Shape{7, 3}, Tensor::Shape{5, 2, 2, 3}}) {
            Tensor x = uniform_random(shape, seed, -3.0, 3.0);
            MdaLayer layer(shape[1], 2, plain(1e-5));
            bn = std::max(bn, max_abs_diff(layer.forward(x, hard(std::vector<std::size_t>(shape[0], 0), 2)),
                                           reference_bn(x, 1e-5)));
        }
        Tensor x = uniform_random({9, 3}, seed + 20, -2.0, 4.0);
        const std::vector<std::size_t> p{0, 2, 1, 0, 2, 2, 1, 0, 1};
        MdaLayer layer(3, 3, plain(1e-5));
        const Tensor y = layer.forward(x, hard(p, 3));
        for (std::size_t d = 0; d < 3; ++d) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (p[i] == d) rows.push_back(i);
            }
            part = std::max(part, max_abs_diff(y.select_rows(rows), reference_bn(x.select_rows(rows), 1e-5)));
        }
        std::mt19937_64 rng(seed);
        MdaLayer off(2, 3, plain(1e-5));
        const Tensor yc = off.forward(Tensor({6, 2}, -1.5 * static_cast<double>(seed)), random_assignment(6, 2, true, rng));
        for (double v : yc.values()) constant = std::max(constant, std::abs(v));
    }

    // whole model: k=1 with every source row known vs the pooled (plain batch norm) model
    ModelConfig mc;
    mc.input_dim = 4;
    mc.trunk_widths = {6};
    mc.classifier_widths = {5};
    mc.num_classes = 3;
    mc.k = 1;
    mc.branch_hidden = 4;
    Batch b;
    b.features = uniform_random({8, 4}, 3, -2.0, 2.0);
    for (int i = 0; i < 8; ++i) {
        b.tags.push_back(DomainTag::known(0));
        b.class_labels.push_back(i % 3);
    }
    Model ours(mc);
    mc.normalization = NormalizationMode::Pooled;
    Model pooled(mc);
    e2e = max_abs_diff(ours.forward_train(b).class_probs, pooled.forward_train(b).class_probs);

    o.detail << "single-domain vs BN " << fmt(bn) << ", one-hot vs per-partition BN " << fmt(part)
             << ", constant input " << fmt(constant) << ", end-to-end " << fmt(e2e);
    o.require(bn <= 1e-12, "BN reduction 1e-12");
    o.require(part <= 1e-12, "per-partition 1e-12");
    o.require(constant <= 1e-12, "constant 1e-12");
    o.require(e2e <= 1e-9, "end-to-end 1e-9");
}

void c3_fixtures(Outcome& o) {
    double worst = 0.0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    MdaLayer layer(1, 2, plain(0.0));
    const Tensor y = layer.forward(Tensor::matrix({{0}, {1}, {2}, {3}}), hard({0, 0, 1, 1}, 2));
    const double fwd[] = {-1, 1, -1, 1};
    for (int i = 0; i < 4; ++i) track(y[i], fwd[i]);

    const AlphaMatrix a = compute_alpha(Tensor::matrix({{0.2}, {0.6}, {0.0}}));
    track(a.alpha.at(0, 0), 0.25);
    track(a.alpha.at(1, 0), 0.75);
    track(a.alpha.at(2, 0), 0.0);

    MdaLayer two(1, 2, plain(0.0));
    MdaLayer::Cache cache;
    two.forward(Tensor::matrix({{1}, {3}}), hard({0, 0}, 2), cache);
    const MdaGradients g = two.backward(cache, Tensor::matrix({{1}, {0}}));
    track(g.grad_x[0], 0.0);
    track(g.grad_x[1], 0.0);

    track(class_entropy(Tensor({3, 10}, 0.1)).value, std::log(10.0));
    track(domain_entropy(Tensor({2, 2}, 0.5)).value, std::log(2.0));
    track(domain_entropy(Tensor({2, 3}, 1.0 / 3.0)).value, std::log(3.0));

    o.detail << "max deviation " << fmt(worst);
    o.require(worst <= 1e-12, "1e-12");
}

void c4_moments(Outcome& o) {
    double m1_err = 0.0, m2_err = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t b = seed % 2 ? 8 : 5, k = 1 + seed % 3;
        const double eps = seed % 3 == 0 ? 0.3 : 1e-5;
        const Tensor x = seed % 4 == 0 ? uniform_random({b, 3, 2, 2}, seed, -2, 2) : uniform_random({b, 3}, seed, -2, 2);
        const AssignmentMatrix w = random_assignment(b, k, seed % 2 == 0, rng);
        MdaLayer layer(3, k + 1, plain(eps));
        MdaLayer::Cache cache;
        layer.forward(x, w, cache);
        const auto L = detail::layout_of(x);
        for (std::size_t d = 0; d <= k; ++d) {
            if (cache.alpha.zero_mass[d]) continue;
            for (std::size_t c = 0; c < L.channels; ++c) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < b; ++i) {
                    for (std::size_t p = 0; p < L.positions; ++p) {
                        const double xh = (x[L.index(i, c, p)] - cache.mean.at(d, c)) * cache.inv_std.at(d, c);
                        const double wt = cache.alpha.alpha.at(i, d) / static_cast<double>(L.positions);
                        m1 += wt * xh;
                        m2 += wt * xh * xh;
                    }
                }
                const double var = cache.batch_stats.var.at(d, c);
                m1_err = std::max(m1_err, std::abs(m1));
                m2_err = std::max(m2_err, std::abs(m2 - var / (var + eps)));
                ++checked;
            }
        }
    }
    o.detail << checked << " (domain, channel) pairs, |mean| " << fmt(m1_err) << ", second-moment err "
             << fmt(m2_err);
    o.require(m1_err <= 1e-9, "mean 1e-9");
    o.require(m2_err <= 1e-9, "second moment 1e-9");
}

// C5..C8 share one set of runs on the pinned benchmark.
struct Benchmark {
    double a = 0, b = 0, c = 0, d = 0, nmi = 0;
    std::vector<double> k_medians;  // k = 2..5
    std::vector<double> sweep;      // fractions 0, 0.05, 0.25, 0.5, 1
    double grid_seconds = 0;
};

const Benchmark& benchmark() {
    static std::optional<Benchmark> cached;
    if (cached) return *cached;
    ExperimentConfig cfg =
        parse_experiment_config(read_json_file(std::string(MDA_SOURCE_DIR) + "/configs/pinned_benchmark.json"));
    const ExperimentData data = load_data(cfg.data);
    bind_to_data(cfg, data);
    const std::size_t seeds = 5;

    Benchmark bm;
    auto t0 = Clock::now();
    const RunnerTable grid = run_baseline_grid(cfg, data, seeds);
    bm.grid_seconds = seconds_since(t0);
    bm.a = grid.find(kBaselineSourceOnly).median_accuracy;
    bm.b = grid.find(kBaselineUnified).median_accuracy;
    bm.c = grid.find(kBaselineOurs).median_accuracy;
    bm.d = grid.find(kBaselineKnown).median_accuracy;
    bm.nmi = grid.find(kBaselineOurs).median_nmi;

    // k=2 is the (c) setting of the grid; same seeds, same config.
    bm.k_medians.push_back(bm.c);
    const RunnerTable ks = run_k_ablation(cfg, data, {3, 4, 5}, seeds);
    for (std::size_t k : {3, 4, 5}) bm.k_medians.push_back(ks.find("k=" + std::to_string(k)).median_accuracy);

    // fraction 0 is (c); fraction 1 is (d), every source sample labelled with k = true domain count.
    bm.sweep.push_back(bm.c);
    const RunnerTable sw = run_supervision_sweep(cfg, data, {0.05, 0.25, 0.5}, seeds);
    for (const auto& s : sw.summary) bm.sweep.push_back(s.median_accuracy);
    bm.sweep.push_back(bm.d);
    cached = bm;
    return *cached;
}

void c5_ordering(Outcome& o) {
    const Benchmark& bm = benchmark();
    o.detail << "median acc source-only " << pts(bm.a) << ", unified " << pts(bm.b) << ", ours " << pts(bm.c)
             << ", known-domain " << pts(bm.d) << " (" << fmt(bm.grid_seconds, 3) << "s)";
    o.require(bm.a < bm.b && bm.b < bm.c && bm.c <= bm.d, "a < b < c <= d");
    o.require(bm.c - bm.a >= 0.02, "ours - source-only >= 2 points");
    o.require(bm.d - bm.c <= 0.02, "known - ours <= 2 points");
    o.require(bm.grid_seconds <= 300.0, "runtime <= 5 min");
}

void c6_k_robustness(Outcome& o) {
    const Benchmark& bm = benchmark();
    const auto [lo, hi] = std::minmax_element(bm.k_medians.begin(), bm.k_medians.end());
    o.detail << "median acc k=2..5:";
    for (double v : bm.k_medians) o.detail << ' ' << pts(v);
    o.detail << ", spread " << pts(*hi - *lo) << " points";
    o.require(*hi - *lo <= 0.02, "spread <= 2 points");
}

void c7_discovery(Outcome& o) {
    const Benchmark& bm = benchmark();
    o.detail << "median NMI " << fmt(bm.nmi, 4);
    o.require(bm.nmi >= 0.8, "NMI >= 0.8");
}

void c8_sweep(Outcome& o) {
    const Benchmark& bm = benchmark();
    const char* labels[] = {"0", "0.05", "0.25", "0.5", "1"};
    o.detail << "median acc by labelled fraction:";
    for (std::size_t i = 0; i < bm.sweep.size(); ++i) o.detail << ' ' << labels[i] << '=' << pts(bm.sweep[i]);
    o.require(bm.d - bm.sweep[1] <= 0.01, "gap at 5% <= 1 point");
    bool monotone = true;
    for (std::size_t i = 1; i < bm.sweep.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) monotone = monotone && bm.sweep[i] >= bm.sweep[j] - 0.01;
    }
    o.require(monotone, "nondecreasing within 1 point");
}

void c9_loss_invariants(Outcome& o) {
    double recomposition = 0.0, lambda_zero = 0.0, fixed_grad = 0.0;
    bool bounds = true;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const std::size_t classes = 2 + seed % 5, k = 1 + seed % 4;
        const Tensor cls = softmax(uniform_random({6, classes}, seed, -4, 4));
        const Tensor dom = softmax(uniform_random({6, k}, seed + 100, -4, 4));
        const std::vector<std::size_t> src{0, 1, 2, 3}, known{0, 1}, tgt{4, 5}, unk{2, 3};
        std::vector<int> y, dy;
        for (std::size_t i : src) y.push_back(static_cast<int>(i % classes));
        for (std::size_t i : known) dy.push_back(static_cast<int>(i % k));
        LossParts p;
        p.class_ce = class_log_loss(cls, src, y);
        p.domain_ce = domain_log_loss(dom, known, dy);
        p.h_c = class_entropy(cls, tgt);
        p.h_d = domain_entropy(dom, unk);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        const LossWeights w{u(rng), u(rng), u(rng)};
        const LossBreakdown br = total_loss(p, w);
        recomposition = std::max(recomposition, std::abs(br.total - (p.class_ce.value + w.domain * p.domain_ce.value +
                                                                      w.class_entropy * p.h_c.value +
                                                                      w.domain_entropy * p.h_d.value)));
        const double hc_max = std::log(static_cast<double>(classes)), hd_max = std::log(static_cast<double>(k));
        bounds = bounds && p.h_c.value >= 0.0 && p.h_c.value <= hc_max + 1e-12 && p.h_d.value >= 0.0 &&
                 p.h_d.value <= hd_max + 1e-12;
        const LossWeights none{0.0, 0.0, 0.0};
        lambda_zero = std::max(lambda_zero, std::abs(total_loss(p, none).total - cross_entropy_forward(cls.select_rows(src), y)));

        MdaLayer layer(2, k + 1, MdaConfig{});
        MdaLayer::Cache cache;
        const AssignmentMatrix wa = random_assignment(6, k, true, rng);
        layer.forward(uniform_random({6, 2}, seed + 7, -2, 2), wa, cache);
        const MdaGradients g = layer.backward(cache, uniform_random({6, 2}, seed + 8, -1, 1));
        for (std::size_t i = 0; i < 6; ++i) {
            if (!wa.fixed[i]) continue;
            for (double v : g.grad_w.row(i)) fixed_grad = std::max(fixed_grad, std::abs(v));
        }
    }
    o.detail << "recomposition " << fmt(recomposition) << ", entropy bounds " << (bounds ? "hold" : "violated")
             << ", lambda=0 vs CE " << fmt(lambda_zero) << ", fixed-row grad " << fmt(fixed_grad);
    o.require(recomposition <= 1e-12, "recomposition 1e-12");
    o.require(bounds, "entropy bounds");
    o.require(lambda_zero <= 1e-12, "lambda=0 reduction");
    o.require(fixed_grad == 0.0, "fixed rows zero gradient");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void c10_determinism(Outcome& o) {
    const fs::path dir = fs::temp_directory_path() / "mda_acceptance_c10";
    fs::remove_all(dir);
    const std::string cfg = std::string(MDA_SOURCE_DIR) + "/configs/smoke.json";
    std::vector<std::string> files;
    for (const char* name : {"run1", "run2"}) {
        const std::string out = (dir / name).string();
        const char* argv[] = {"mda", "train", "--config", cfg.c_str(), "--out", out.c_str()};
        std::ostringstream sink;
        const int code = run_cli(6, argv, sink, sink);
        o.require(code == 0, std::string(name) + " exit code");
        files.push_back(slurp(fs::path(out) / "metrics.csv"));
    }
    fs::remove_all(dir);
    o.detail << "two train runs, metrics.csv " << files[0].size() << " bytes, "
             << (files[0] == files[1] ? "identical" : "different");
    o.require(!files[0].empty() && files[0] == files[1], "byte-identical");
}

void c11_idx(Outcome& o) {
    const fs::path dir = fs::temp_directory_path() / "mda_acceptance_c11";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto write = [&](const char* name, std::vector<std::uint8_t> bytes) {
        std::ofstream f(dir / name, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        return (dir / name).string();
    };
    const std::vector<std::uint8_t> images{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                           0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255};
    const std::string img = write("img", images);
    const std::string lbl = write("lbl", {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});

    const IdxDataset d = idx_load(img, lbl);
    bool exact = d.images.shape() == Tensor::Shape{2, 1, 2, 3} && d.labels == std::vector<int>{7, 3};
    for (std::size_t i = 0; exact && i < 12; ++i) exact = d.images[i] == images[16 + i] / 255.0;
    o.require(exact, "fixture tensor");

    auto code_of = [](const std::function<void()>& fn) -> std::optional<IdxError::Code> {
        try {
            fn();
        } catch (const IdxError& e) {
            return e.code();
        }
        return std::nullopt;
    };
    auto bad = images;
    bad[2] = 9;
    const std::string bad_magic = write("bad", bad);
    auto cut = images;
    cut.resize(cut.size() - 3);
    const std::string truncated = write("cut", cut);
    const std::string three = write("lbl3", {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});

    const auto m = code_of([&] { idx_read_images(bad_magic); });
    const auto t = code_of([&] { idx_read_images(truncated); });
    const auto c = code_of([&] { idx_load(img, three); });
    fs::remove_all(dir);
    o.require(m == IdxError::Code::BadMagic, "bad magic");
    o.require(t == IdxError::Code::Truncated, "truncation");
    o.require(c == IdxError::Code::CountMismatch, "count mismatch");
    o.detail << "fixture " << (exact ? "exact" : "mismatch") << ", malformed inputs raise distinct codes";
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
        {"gradient oracle", c1_gradients},     {"reduction identities", c2_reductions},
        {"hand fixtures", c3_fixtures},        {"per-domain moments", c4_moments},
        {"baseline ordering", c5_ordering},    {"k robustness", c6_k_robustness},
        {"domain discovery", c7_discovery},    {"domain-label sweep", c8_sweep},
        {"loss invariants", c9_loss_invariants}, {"determinism", c10_determinism},
        {"idx ingestion", c11_idx},
    };
    int failed = 0, n = 0;
    for (const auto& [name, fn] : criteria) {
        ++n;
        Outcome o;
        try {
            fn(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << n << " " << name << ": " << o.detail.str() << std::endl;
    }
    std::cout << (n - failed) << "/" << n << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
