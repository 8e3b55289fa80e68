#include "sscl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sscl/io.hpp"
#include "sscl/rng.hpp"

namespace sscl {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const IniEntry& e, const std::string& msg) {
    if (!ok) throw ConfigError("[" + e.section + "] " + e.key + ": " + msg, e.line);
}

std::vector<std::size_t> parse_count_list(const IniEntry& e) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(e.value)) out.push_back(parse_count({e.section, e.key, item, e.line}));
    return out;
}

std::vector<double> parse_real_list(const IniEntry& e) {
    std::vector<double> out;
    for (const auto& item : split_list(e.value)) out.push_back(parse_real({e.section, e.key, item, e.line}));
    return out;
}

template <class F>
auto anchored(const IniEntry& e, F&& f) {
    try {
        return f();
    } catch (const ConfigError& err) {
        if (err.line) throw;
        throw ConfigError(err.what(), e.line);
    }
}

std::string fmt_list(const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{}", i ? ", " : "", v[i]);
    return s;
}

}  // namespace

// ---- [train] ----------------------------------------------------------------------

TrainConfig train_config_from_ini(const IniDocument& doc, TrainConfig c) {
    for (const IniEntry* e : doc.section("train")) {
        const auto& k = e->key;
        if (k == "epochs") {
            c.epochs = parse_count(*e);
            require(c.epochs > 0, *e, "must be >= 1");
        } else if (k == "warmup_epochs") c.warmup_epochs = parse_count(*e);
        else if (k == "batch_size") {
            c.batch_size = parse_count(*e);
            require(c.batch_size > 0, *e, "must be >= 1");
        } else if (k == "mu_ratio") {
            c.mu_ratio = parse_count(*e);
            require(c.mu_ratio > 0, *e, "must be >= 1");
        } else if (k == "lr") {
            c.lr = parse_real(*e);
            require(c.lr > 0, *e, "must be > 0");
        } else if (k == "momentum") {
            c.momentum = parse_real(*e);
            require(c.momentum >= 0 && c.momentum < 1, *e, "must lie in [0,1)");
        } else if (k == "weight_decay") {
            c.weight_decay = parse_real(*e);
            require(c.weight_decay >= 0, *e, "must be >= 0");
        } else if (k == "grad_clip") {
            c.grad_clip = parse_real(*e);
            require(c.grad_clip >= 0, *e, "must be >= 0 (0 disables)");
        } else if (k == "lambda_uns" || k == "lambda_cl" || k == "lambda_fsr" || k == "lambda_cud") {
            const double v = parse_real(*e);
            require(v >= 0, *e, "must be >= 0");
            (k == "lambda_uns" ? c.weights.uns : k == "lambda_cl" ? c.weights.cl : k == "lambda_fsr" ? c.weights.fsr
                                                                                                     : c.weights.cud) = v;
        } else if (k == "beta" || k == "gamma" || k == "xi") {
            const double v = parse_real(*e);
            require(v > 0, *e, "must be > 0");
            (k == "beta" ? c.temps.beta : k == "gamma" ? c.temps.gamma : c.temps.xi) = v;
        } else if (k == "tau") {
            c.tau = parse_real(*e);
            require(c.tau > 0 && c.tau < 1, *e, "must lie in (0,1)");
        } else if (k == "memory") {
            c.memory = parse_count(*e);
            require(c.memory > 0, *e, "must be >= 1");
        } else if (k == "disable_fsr") c.disable_fsr = parse_bool(*e);
        else if (k == "disable_cud") c.disable_cud = parse_bool(*e);
        else if (k == "pseudo_strategy") c.pseudo_strategy = anchored(*e, [&] { return parse_pseudo_strategy(e->value); });
        else if (k == "test_strategy") c.test_strategy = anchored(*e, [&] { return parse_test_strategy(e->value); });
        else if (k == "replay_in_sup") c.replay_in_sup = parse_bool(*e);
        else if (k == "sigma_weak") c.augment.sigma_weak = parse_real(*e);
        else if (k == "sigma_strong") c.augment.sigma_strong = parse_real(*e);
        else if (k == "drop_prob") {
            c.augment.drop_prob = parse_real(*e);
            require(c.augment.drop_prob >= 0 && c.augment.drop_prob < 1, *e, "must lie in [0,1)");
        } else if (k == "scale_jitter") c.augment.scale_jitter = parse_real(*e);
        else if (k == "hidden") {
            c.hidden = parse_count_list(*e);
            require(!c.hidden.empty() && std::ranges::find(c.hidden, 0u) == c.hidden.end(), *e,
                    "needs one or more positive widths");
        } else if (k == "proj_dim") {
            c.proj_dim = parse_count(*e);
            require(c.proj_dim > 0, *e, "must be >= 1");
        } else if (k == "diagnostics") c.diagnostics = parse_bool(*e);
        else throw ConfigError("unknown key '" + k + "' in [train]", e->line);
    }
    if (c.warmup_epochs > c.epochs) {
        const IniEntry* e = doc.find("train", "warmup_epochs");
        throw ConfigError("warmup_epochs must not exceed epochs", e ? e->line : 0);
    }
    return c;
}

std::string train_config_to_ini(const TrainConfig& c) {
    std::string s = "[train]\n";
    s += fmt::format("epochs = {}\nwarmup_epochs = {}\nbatch_size = {}\nmu_ratio = {}\n", c.epochs, c.warmup_epochs,
                     c.batch_size, c.mu_ratio);
    s += fmt::format("lr = {}\nmomentum = {}\nweight_decay = {}\ngrad_clip = {}\n", c.lr, c.momentum, c.weight_decay,
                     c.grad_clip);
    s += fmt::format("lambda_uns = {}\nlambda_cl = {}\nlambda_fsr = {}\nlambda_cud = {}\n", c.weights.uns,
                     c.weights.cl, c.weights.fsr, c.weights.cud);
    s += fmt::format("beta = {}\ngamma = {}\nxi = {}\ntau = {}\nmemory = {}\n", c.temps.beta, c.temps.gamma,
                     c.temps.xi, c.tau, c.memory);
    s += fmt::format("disable_fsr = {}\ndisable_cud = {}\npseudo_strategy = {}\ntest_strategy = {}\n", c.disable_fsr,
                     c.disable_cud, to_string(c.pseudo_strategy), to_string(c.test_strategy));
    s += fmt::format("replay_in_sup = {}\nsigma_weak = {}\nsigma_strong = {}\ndrop_prob = {}\nscale_jitter = {}\n",
                     c.replay_in_sup, c.augment.sigma_weak, c.augment.sigma_strong, c.augment.drop_prob,
                     c.augment.scale_jitter);
    s += fmt::format("hidden = {}\nproj_dim = {}\ndiagnostics = {}\n", fmt_list(c.hidden), c.proj_dim, c.diagnostics);
    return s;
}

// ---- experiment -------------------------------------------------------------------

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(text)) out.push_back(static_cast<std::uint64_t>(parse_integer({"", "seeds", item, 0})));
    if (out.empty()) throw ConfigError("seed list is empty");
    std::set<std::uint64_t> uniq(out.begin(), out.end());
    if (uniq.size() != out.size()) throw ConfigError("seed list repeats a seed");
    return out;
}

void ExperimentConfig::validate() const {
    stream.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("no seeds given");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seed list repeats a seed");
    if (train.proj_dim < stream.total_classes())
        throw ConfigError(fmt::format("proj_dim {} cannot hold {} ETF anchors", train.proj_dim, stream.total_classes()));
}

ExperimentConfig parse_experiment_config(const IniDocument& doc) {
    static const std::set<std::string> known = {"stream", "train", "experiment", "ablation"};
    for (const auto& e : doc.entries())
        if (!known.contains(e.section)) throw ConfigError("unknown section [" + e.section + "]", e.line);

    ExperimentConfig x;
    x.stream = stream_config_from_ini(doc);
    x.train = train_config_from_ini(doc);
    for (const IniEntry* e : doc.section("experiment")) {
        if (e->key == "seeds") x.seeds = anchored(*e, [&] { return parse_seed_list(e->value); });
        else if (e->key == "out") x.out_dir = e->value;
        else if (e->key == "stream_dir") x.stream_dir = fs::path(e->value);
        else if (e->key == "checkpoints") x.checkpoints = parse_bool(*e);
        else throw ConfigError("unknown key '" + e->key + "' in [experiment]", e->line);
    }
    for (const IniEntry* e : doc.section("ablation")) {
        if (e->key == "grid") {
            x.grid = split_list(e->value);
            anchored(*e, [&] { return expand_grid(x.grid, x.train, x.sweep).size(); });
        } else if (e->key == "sweep") {
            x.sweep = parse_real_list(*e);
            require(!x.sweep.empty(), *e, "needs at least one value");
        } else throw ConfigError("unknown key '" + e->key + "' in [ablation]", e->line);
    }
    try {
        x.validate();
    } catch (const ParameterError& err) {
        throw ConfigError(err.what());
    }
    return x;
}

ExperimentConfig load_experiment_config(const fs::path& path) { return parse_experiment_config(IniDocument::load(path)); }

// ---- ablation grid ------------------------------------------------------------------

std::vector<std::string> valid_grid_names() {
    return {"full",  "baseline", "wo_fsr",     "wo_uns",    "wo_cud",     "p-cls",     "p-ncm",
            "p-r",   "t-cls",    "t-ncm",      "lambda_uns", "lambda_cl", "lambda_fsr", "lambda_cud"};
}

namespace {

double& weight_ref(TrainConfig& c, const std::string& term) {
    if (term == "uns") return c.weights.uns;
    if (term == "cl") return c.weights.cl;
    if (term == "fsr") return c.weights.fsr;
    if (term == "cud") return c.weights.cud;
    throw ConfigError("unknown loss weight '" + term + "'");
}

[[noreturn]] void unknown_cell(const std::string& name) {
    std::string valid;
    for (const auto& n : valid_grid_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown grid cell '" + name + "' (valid: " + valid + ", lambda_<term>=<value>)");
}

}  // namespace

std::vector<GridCell> expand_grid(const std::vector<std::string>& names, const TrainConfig& base,
                                  const std::vector<double>& sweep) {
    if (names.empty()) throw ConfigError("ablation grid is empty");
    std::vector<GridCell> cells;
    for (const auto& raw : names) {
        const std::string name = trim(raw);
        TrainConfig c = base;
        if (name == "full") {
        } else if (name == "baseline") c = baseline_of(base);
        else if (name == "wo_fsr") c.disable_fsr = true;
        else if (name == "wo_cud") c.disable_cud = true;
        else if (name == "wo_uns" || name == "p-cls") c.pseudo_strategy = PseudoStrategy::p_cls;
        else if (name == "p-ncm") c.pseudo_strategy = PseudoStrategy::p_ncm;
        else if (name == "p-r") c.pseudo_strategy = PseudoStrategy::p_r;
        else if (name == "t-cls") c.test_strategy = TestStrategy::t_cls;
        else if (name == "t-ncm") c.test_strategy = TestStrategy::t_ncm;
        else if (name.starts_with("lambda_")) {
            const auto eq = name.find('=');
            const std::string term = name.substr(7, eq == std::string::npos ? std::string::npos : eq - 7);
            try {
                weight_ref(c, term);
            } catch (const ConfigError&) {
                unknown_cell(name);
            }
            if (eq == std::string::npos) {
                for (double v : sweep) {
                    TrainConfig s = base;
                    weight_ref(s, term) = v;
                    cells.push_back({fmt::format("lambda_{}={}", term, v), s});
                }
                continue;
            }
            const double v = parse_real({"ablation", "grid", name.substr(eq + 1), 0});
            if (v < 0) throw ConfigError("loss weight in '" + name + "' must be >= 0");
            weight_ref(c, term) = v;
            cells.push_back({fmt::format("lambda_{}={}", term, v), c});
            continue;
        } else unknown_cell(name);
        cells.push_back({name, c});
    }
    std::set<std::string> seen;
    for (const auto& cell : cells)
        if (!seen.insert(cell.name).second) throw ConfigError("grid cell '" + cell.name + "' listed twice");
    return cells;
}

std::uint64_t stream_seed_for(const StreamConfig& stream, std::uint64_t run_seed) {
    return derive_seed(stream.seed, "repetition", run_seed);
}

// ---- summaries ------------------------------------------------------------------------

std::string summary_csv(const std::vector<SeedSummary>& rows) {
    std::string out = "cell,seed,A_avg,A_last,A_avg_std,A_last_std\n";
    std::vector<std::string> order;
    std::map<std::string, std::vector<const SeedSummary*>> by_cell;
    for (const auto& r : rows) {
        if (!by_cell.contains(r.cell)) order.push_back(r.cell);
        by_cell[r.cell].push_back(&r);
    }
    auto mean_std = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair{m, sd};
    };
    for (const auto& cell : order) {
        std::vector<double> avg, last;
        for (const auto* r : by_cell[cell]) {
            out += fmt::format("{},{},{:.10g},{:.10g},,\n", cell, r->seed, r->a_avg, r->a_last);
            avg.push_back(r->a_avg);
            last.push_back(r->a_last);
        }
        auto [ma, sa] = mean_std(avg);
        auto [ml, sl] = mean_std(last);
        out += fmt::format("{},mean,{:.10g},{:.10g},{:.10g},{:.10g}\n", cell, ma, ml, sa, sl);
    }
    return out;
}

std::size_t cell_threads(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SSCL_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) n = static_cast<std::size_t>(v);
            else spdlog::warn("SSCL_LAB_THREADS={} ignored; must be >= 1", env);
        } catch (const std::exception&) {
            spdlog::warn("SSCL_LAB_THREADS={} is not a number; ignored", env);
        }
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// ---- commands ---------------------------------------------------------------------------

namespace {

ExperimentConfig resolve(const CommandOptions& opts) {
    ExperimentConfig x = load_experiment_config(opts.config);
    if (opts.out) x.out_dir = *opts.out;
    if (opts.seeds) {
        x.seeds = *opts.seeds;
        x.validate();
    }
    return x;
}

template <class F>
int guarded(const char* cmd, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        spdlog::error("{}: config error: {}", cmd, e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", cmd, e.what());
        return 1;
    }
}

struct Job {
    const GridCell* cell;
    std::uint64_t seed;
    fs::path dir;
};

void write_run_outputs(const RunReport& report, const fs::path& dir) {
    write_file_atomic(dir / "accuracy.csv", accuracy_csv(report.accuracy));
    write_file_atomic(dir / "metrics.csv", metrics_csv(report.metrics));
    write_file_atomic(dir / "losses.csv", losses_csv(report.losses));
    write_file_atomic(dir / "diagnostics.csv", diagnostics_csv(report.diagnostics));
    write_file_atomic(dir / "diagnostics_summary.csv", diagnostics_summary_csv(report.diagnostics));
    if (!report.task_classes.empty())
        write_file_atomic(dir / "base_novel.csv",
                          base_novel_csv(base_novel_accuracy(report.class_tallies, report.task_classes.front())));
    write_file_atomic(dir / "report.json", run_report_json(report));
}

SeedSummary run_job(const ExperimentConfig& x, const Job& job, const std::optional<TaskStream>& shared) {
    TaskStream generated;
    if (!shared) {
        StreamConfig sc = x.stream;
        sc.seed = stream_seed_for(x.stream, job.seed);
        generated = generate_stream(sc);
    }
    const TaskStream& stream = shared ? *shared : generated;
    TrainConfig tc = job.cell->config;
    tc.seed = job.seed;

    TrainHooks hooks;
    if (x.checkpoints)
        hooks.after_task = [&](int task, const LearnerState& learner) {
            fs::create_directories(job.dir / "checkpoints");
            const auto path = job.dir / "checkpoints" / fmt::format("task_{}.ckpt", task);
            auto tmp = path;
            tmp += ".tmp";
            save_checkpoint(learner.model, tmp);
            fs::rename(tmp, path);
            write_buffer_csv(learner.buffer, job.dir / "checkpoints" / fmt::format("buffer_task_{}.csv", task));
        };
    RunReport report = run_stream(stream, tc, &hooks);
    write_run_outputs(report, job.dir);
    return {job.cell->name, job.seed, report.metrics.a_avg, report.metrics.a_last};
}

std::vector<SeedSummary> run_jobs(const ExperimentConfig& x, const std::vector<Job>& jobs) {
    std::optional<TaskStream> shared;
    if (x.stream_dir) shared = load_stream(*x.stream_dir);
    if (shared && shared->config.total_classes() > x.train.proj_dim)
        throw ConfigError("stream has more classes than proj_dim can reserve");

    std::vector<std::optional<SeedSummary>> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                results[i] = run_job(x, jobs[i], shared);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const std::size_t n = cell_threads(jobs.size());
    spdlog::info("running {} job(s) on {} worker(s)", jobs.size(), n);
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    std::vector<SeedSummary> out;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!results[i])
            throw std::runtime_error(fmt::format("cell {} seed {} failed: {}", jobs[i].cell->name, jobs[i].seed, errors[i]));
        out.push_back(*results[i]);
    }
    return out;
}

void write_config_copy(const ExperimentConfig& x, const fs::path& dir) {
    std::string s = "# effective configuration\n" + stream_config_to_ini(x.stream) + "\n" + train_config_to_ini(x.train);
    s += fmt::format("\n[experiment]\nseeds = {}\n", fmt_list(x.seeds));
    if (x.stream_dir) s += "stream_dir = " + x.stream_dir->string() + "\n";
    write_file_atomic(dir / "config.ini", s);
}

}  // namespace

int cmd_gen_stream(const CommandOptions& opts) {
    return guarded("gen-stream", [&] {
        const IniDocument doc = IniDocument::load(opts.config);
        StreamConfig sc = stream_config_from_ini(doc);
        if (opts.variant) sc.variant = parse_stream_variant(*opts.variant);
        sc.validate();
        fs::path out = "stream";
        if (const auto* e = doc.find("experiment", "stream_dir")) out = e->value;
        if (opts.out) out = *opts.out;
        if (fs::exists(out) && !fs::is_empty(out)) {
            if (!opts.force) {
                spdlog::error("gen-stream: {} exists and is not empty (use --force to overwrite)", out.string());
                return 1;
            }
            fs::remove_all(out);
        }
        // Build in a sibling directory and swap it in so readers never see a
        // half-written stream.
        fs::path tmp = out;
        tmp += ".partial";
        fs::remove_all(tmp);
        write_stream(generate_stream(sc), tmp);
        if (fs::exists(out)) fs::remove(out);
        fs::rename(tmp, out);
        spdlog::info("wrote {}-task {} stream to {}", sc.num_tasks, to_string(sc.variant), out.string());
        return 0;
    });
}

int cmd_run(const CommandOptions& opts) {
    return guarded("run", [&] {
        const ExperimentConfig x = resolve(opts);
        const GridCell cell{"run", x.train};
        std::vector<Job> jobs;
        for (auto seed : x.seeds) jobs.push_back({&cell, seed, x.out_dir / fmt::format("seed_{}", seed)});
        fs::create_directories(x.out_dir);
        write_config_copy(x, x.out_dir);
        auto rows = run_jobs(x, jobs);
        write_file_atomic(x.out_dir / "summary.csv", summary_csv(rows));
        for (const auto& r : rows) spdlog::info("seed {}: A_avg {:.4f} A_last {:.4f}", r.seed, r.a_avg, r.a_last);
        return 0;
    });
}

int cmd_ablate(const CommandOptions& opts) {
    return guarded("ablate", [&] {
        const ExperimentConfig x = resolve(opts);
        const auto names = opts.grid ? *opts.grid : x.grid;
        const auto cells = expand_grid(names, x.train, x.sweep);
        std::vector<Job> jobs;
        for (const auto& cell : cells)
            for (auto seed : x.seeds) jobs.push_back({&cell, seed, x.out_dir / cell.name / fmt::format("seed_{}", seed)});
        fs::create_directories(x.out_dir);
        write_config_copy(x, x.out_dir);
        auto rows = run_jobs(x, jobs);
        write_file_atomic(x.out_dir / "comparison.csv", summary_csv(rows));
        return 0;
    });
}

}  // namespace sscl
