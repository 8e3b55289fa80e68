#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sscl/experiment.hpp"

using namespace sscl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("sscl_test_experiment_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* kTiny = R"([stream]
num_tasks = 2
labels_per_class = 5
unlabeled_per_class = 20
test_per_class = 10
input_dim = 6

[train]
epochs = 2
warmup_epochs = 1
batch_size = 4
mu_ratio = 2
hidden = 8
proj_dim = 8
memory = 10

[experiment]
seeds = 1, 2
checkpoints = false
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
    auto p = dir / "config.ini";
    std::ofstream(p) << text;
    return p;
}

int config_error_line(const std::string& text) {
    try {
        parse_experiment_config(IniDocument::parse(text));
    } catch (const ConfigError& e) {
        return e.line;
    }
    return -1;
}

}  // namespace

TEST_CASE("config round-trip and defaults") {
    auto c = parse_experiment_config(IniDocument::parse(kTiny));
    CHECK(c.stream.num_tasks == 2);
    CHECK(c.train.hidden == std::vector<std::size_t>{8});
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK_FALSE(c.checkpoints);
    CHECK(c.train.lr == 0.03);
    CHECK(c.sweep == std::vector<double>{0.1, 0.5, 1.0, 1.5, 2.0});

    TrainConfig t;
    t.weights.fsr = 0.5;
    t.pseudo_strategy = PseudoStrategy::p_ncm;
    t.test_strategy = TestStrategy::t_ncm;
    t.hidden = {3, 4};
    auto back = train_config_from_ini(IniDocument::parse(train_config_to_ini(t)));
    CHECK(back.weights.fsr == 0.5);
    CHECK(back.pseudo_strategy == PseudoStrategy::p_ncm);
    CHECK(back.test_strategy == TestStrategy::t_ncm);
    CHECK(back.hidden == std::vector<std::size_t>{3, 4});
    CHECK(train_config_to_ini(back) == train_config_to_ini(t));
}

TEST_CASE("config errors point at the offending line") {
    CHECK(config_error_line("[train]\nepochs = 5\nepoch = 3\n") == 3);
    CHECK(config_error_line("[train]\n\n\nlr = fast\n") == 4);
    CHECK(config_error_line("[stream]\nnum_tasks = 2\n[nonsense]\nx = 1\n") == 4);
    CHECK(config_error_line("[experiment]\nseeds = 1, 1\n") == 2);
    CHECK(config_error_line("[train]\npseudo_strategy = magic\n") == 2);
    CHECK(config_error_line("[ablation]\ngrid = full, bogus\n") == 2);
    // Semantic checks without a single line to blame.
    CHECK_THROWS_AS(parse_experiment_config(IniDocument::parse("[train]\nwarmup_epochs = 80\n")), std::exception);
}

TEST_CASE("seed lists") {
    CHECK(parse_seed_list("3, 1,2") == std::vector<std::uint64_t>{3, 1, 2});
    CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("1,1"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("1,x"), ConfigError);
}

TEST_CASE("grid expansion") {
    TrainConfig base;
    std::vector<double> sweep = {0.1, 0.5, 1, 1.5, 2};
    auto cells = expand_grid({"full", "wo_fsr", "wo_cud", "p-cls"}, base, sweep);
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].name == "full");
    CHECK_FALSE(cells[0].config.disable_fsr);
    CHECK(cells[1].config.disable_fsr);
    CHECK(cells[2].config.disable_cud);
    CHECK(cells[3].config.pseudo_strategy == PseudoStrategy::p_cls);

    auto b = expand_grid({"baseline"}, base, sweep).front().config;
    CHECK(b.disable_fsr);
    CHECK(b.disable_cud);
    CHECK(b.pseudo_strategy == PseudoStrategy::p_cls);
    CHECK(b.test_strategy == TestStrategy::t_cls);

    auto lam = expand_grid({"lambda_fsr"}, base, sweep);
    REQUIRE(lam.size() == 5);
    CHECK(lam[0].name == "lambda_fsr=0.1");
    CHECK(lam[4].config.weights.fsr == 2.0);
    CHECK(lam[4].config.weights.cud == 1.0);

    auto one = expand_grid({"lambda_cud=0.25", "t-ncm", "p-r"}, base, sweep);
    CHECK(one[0].config.weights.cud == 0.25);
    CHECK(one[1].config.test_strategy == TestStrategy::t_ncm);
    CHECK(one[2].config.pseudo_strategy == PseudoStrategy::p_r);

    CHECK_THROWS_AS(expand_grid({}, base, sweep), ConfigError);
    CHECK_THROWS_AS(expand_grid({"full", "full"}, base, sweep), ConfigError);
    try {
        expand_grid({"wo_everything"}, base, sweep);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        for (const auto& n : valid_grid_names()) CHECK(msg.find(n) != std::string::npos);
    }
}

TEST_CASE("summary schema") {
    std::vector<SeedSummary> rows = {{"full", 1, 0.8, 0.7}, {"full", 2, 0.6, 0.5}, {"base", 1, 0.5, 0.4}};
    const std::string csv = summary_csv(rows);
    CHECK(csv.starts_with("cell,seed,A_avg,A_last,A_avg_std,A_last_std\n"));
    CHECK(csv.find("full,1,0.8,0.7,,\n") != std::string::npos);
    // Sample std of {0.8, 0.6} is sqrt(0.02).
    CHECK(csv.find("full,mean,0.7,0.6,0.1414213562,0.1414213562\n") != std::string::npos);
    CHECK(csv.find("base,mean,0.5,0.4,0,0\n") != std::string::npos);
}

TEST_CASE("cell threads honour the environment cap") {
    setenv("SSCL_LAB_THREADS", "2", 1);
    CHECK(cell_threads(5) == 2);
    CHECK(cell_threads(1) == 1);
    unsetenv("SSCL_LAB_THREADS");
    CHECK(cell_threads(3) >= 1);
}

TEST_CASE("gen-stream refuses a non-empty directory without force") {
    auto dir = scratch("gen");
    auto cfg = write_config(dir, kTiny);
    CommandOptions o;
    o.config = cfg;
    o.out = dir / "stream";
    CHECK(cmd_gen_stream(o) == 0);
    CHECK(fs::exists(dir / "stream" / "manifest.ini"));
    for (int t = 1; t <= 2; ++t)
        for (const char* f : {"labeled.csv", "unlabeled.csv", "test.csv"})
            CHECK(fs::exists(dir / "stream" / ("task_" + std::to_string(t)) / f));
    const auto first = slurp(dir / "stream" / "task_1" / "labeled.csv");
    CHECK(cmd_gen_stream(o) != 0);
    o.force = true;
    CHECK(cmd_gen_stream(o) == 0);
    CHECK(slurp(dir / "stream" / "task_1" / "labeled.csv") == first);

    o.out = dir / "imb";
    o.variant = "imbalanced";
    CHECK(cmd_gen_stream(o) == 0);
    CHECK(slurp(dir / "imb" / "manifest.ini").find("variant = imbalanced") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("run writes the documented files and is byte-reproducible") {
    auto dir = scratch("run");
    auto cfg = write_config(dir, kTiny);
    CommandOptions o;
    o.config = cfg;
    o.out = dir / "a";
    REQUIRE(cmd_run(o) == 0);
    o.out = dir / "b";
    REQUIRE(cmd_run(o) == 0);
    for (const char* f : {"accuracy.csv", "metrics.csv", "losses.csv", "diagnostics.csv", "diagnostics_summary.csv",
                          "base_novel.csv", "report.json"}) {
        INFO(f);
        CHECK(fs::exists(dir / "a" / "seed_1" / f));
        CHECK(slurp(dir / "a" / "seed_2" / f) == slurp(dir / "b" / "seed_2" / f));
    }
    CHECK(slurp(dir / "a" / "summary.csv") == slurp(dir / "b" / "summary.csv"));
    CHECK(slurp(dir / "a" / "seed_1" / "accuracy.csv").starts_with("t,i,acc\n"));
    // Two seeds plus the aggregate row.
    std::istringstream summary(slurp(dir / "a" / "summary.csv"));
    std::string line;
    int n = 0;
    while (std::getline(summary, line)) ++n;
    CHECK(n == 1 + 2 + 1);
    CHECK_FALSE(fs::exists(dir / "a" / "seed_1" / "checkpoints"));

    o.out = dir / "c";
    o.seeds = std::vector<std::uint64_t>{2};
    REQUIRE(cmd_run(o) == 0);
    CHECK(slurp(dir / "c" / "seed_2" / "metrics.csv") == slurp(dir / "a" / "seed_2" / "metrics.csv"));
    fs::remove_all(dir);
}

TEST_CASE("run with checkpoints and a shared stream directory") {
    auto dir = scratch("shared");
    std::string text = kTiny;
    text.replace(text.find("checkpoints = false"), 19, "checkpoints = true");
    auto cfg = write_config(dir, text);
    CommandOptions o;
    o.config = cfg;
    o.out = dir / "stream";
    REQUIRE(cmd_gen_stream(o) == 0);
    write_config(dir, text + "stream_dir = " + (dir / "stream").string() + "\n");
    o.out = dir / "out";
    REQUIRE(cmd_run(o) == 0);
    CHECK(fs::exists(dir / "out" / "seed_1" / "checkpoints" / "task_2.ckpt"));
    CHECK(fs::exists(dir / "out" / "seed_1" / "checkpoints" / "buffer_task_2.csv"));
    CHECK(fs::exists(dir / "out" / "config.ini"));
    fs::remove_all(dir);
}

TEST_CASE("ablate writes one directory per cell and a comparison") {
    auto dir = scratch("ablate");
    auto cfg = write_config(dir, std::string(kTiny) + "\n[ablation]\ngrid = full, wo_cud\n");
    CommandOptions o;
    o.config = cfg;
    o.out = dir / "out";
    o.seeds = std::vector<std::uint64_t>{1};
    REQUIRE(cmd_ablate(o) == 0);
    CHECK(fs::exists(dir / "out" / "full" / "seed_1" / "metrics.csv"));
    CHECK(fs::exists(dir / "out" / "wo_cud" / "seed_1" / "metrics.csv"));
    const auto cmp = slurp(dir / "out" / "comparison.csv");
    CHECK(cmp.starts_with("cell,seed,A_avg,A_last,A_avg_std,A_last_std\n"));
    CHECK(cmp.find("wo_cud,mean") != std::string::npos);

    o.grid = std::vector<std::string>{"nope"};
    CHECK(cmd_ablate(o) == 2);
    o.grid = std::vector<std::string>{};
    CHECK(cmd_ablate(o) != 0);
    fs::remove_all(dir);
}

TEST_CASE("bad config exits with status 2") {
    auto dir = scratch("bad");
    auto cfg = write_config(dir, "[train]\nepochs = many\n");
    CommandOptions o;
    o.config = cfg;
    o.out = dir / "out";
    CHECK(cmd_run(o) == 2);
    o.config = dir / "missing.ini";
    CHECK(cmd_run(o) != 0);
    fs::remove_all(dir);
}

TEST_CASE("shipped configs parse") {
    int n = 0;
    for (const auto& entry : fs::directory_iterator(SSCL_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        INFO(entry.path().string());
        CHECK_NOTHROW(parse_experiment_config(IniDocument::parse(slurp(entry.path()))));
        ++n;
    }
    CHECK(n >= 1);
}
