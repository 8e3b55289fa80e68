#include <doctest.h>

#include <algorithm>

#include "sscl/eval.hpp"
#include "sscl/ini.hpp"
#include "sscl/losses.hpp"
#include "support.hpp"

using namespace sscl;
using namespace sscl::test;

namespace {

AccuracyMatrix matrix_of(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m;
    for (const auto& r : rows) m.append_row(r);
    return m;
}

int argmax(std::span<const double> v) { return static_cast<int>(std::ranges::max_element(v) - v.begin()); }

// Two-branch reference for test-time prediction.
std::vector<int> predict_oracle(const Matrix& logits, const Matrix& f, const ClassMeanTable& table, double tau) {
    Matrix p = softmax_rows(logits);
    std::vector<int> out;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = p.row(i);
        if (*std::ranges::max_element(row) >= tau) {
            out.push_back(argmax(row));
            continue;
        }
        double best = -2;
        int cls = -1;
        for (std::size_t r = 0; r < table.size(); ++r) {
            double dot = 0, nf = 0, nm = 0;
            for (std::size_t j = 0; j < f.cols(); ++j) {
                dot += f(i, j) * table.means(r, j);
                nf += f(i, j) * f(i, j);
                nm += table.means(r, j) * table.means(r, j);
            }
            const double s = dot / std::sqrt(nf * nm);
            if (s > best) {
                best = s;
                cls = table.classes[r];
            }
        }
        out.push_back(cls);
    }
    return out;
}

ClassMeanTable random_table(std::size_t k, std::size_t d, Rng& rng) {
    ClassMeanTable t;
    for (std::size_t c = 0; c < k; ++c) t.classes.push_back(static_cast<int>(c));
    t.means = l2_normalize_rows(random_matrix(k, d, rng)).rows;
    return t;
}

}  // namespace

TEST_CASE("incremental metrics on a hand example") {
    auto m = incremental_metrics(matrix_of({{0.9}, {0.8, 0.7}}));
    REQUIRE(m.a_t.size() == 2);
    CHECK(m.a_t[0] == doctest::Approx(0.9));
    CHECK(m.a_t[1] == doctest::Approx(0.75));
    CHECK(m.a_avg == doctest::Approx(0.825));
    CHECK(m.a_last == doctest::Approx(0.75));

    auto single = incremental_metrics(matrix_of({{0.4}}));
    CHECK(single.a_avg == 0.4);
    CHECK(single.a_last == 0.4);
}

TEST_CASE("incremental metrics against direct arithmetic") {
    Rng rng = make_rng(1, "metrics");
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> tn(1, 12);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<std::vector<double>> rows(tn(rng));
        for (std::size_t t = 0; t < rows.size(); ++t)
            for (std::size_t i = 0; i <= t; ++i) rows[t].push_back(u(rng));
        auto m = incremental_metrics(matrix_of(rows));
        double avg = 0;
        for (std::size_t t = 0; t < rows.size(); ++t) {
            double s = 0;
            for (double v : rows[t]) s += v;
            CHECK(std::abs(m.a_t[t] - s / (t + 1)) <= 1e-12);
            avg += s / (t + 1);
        }
        CHECK(std::abs(m.a_avg - avg / rows.size()) <= 1e-12);
        CHECK(m.a_last == m.a_t.back());
    }
}

TEST_CASE("A_t does not depend on the order of old tasks") {
    Rng rng = make_rng(2, "perm");
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::vector<double>> rows = {{u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng), u(rng), }};
    auto base = incremental_metrics(matrix_of(rows));
    std::ranges::reverse(rows[2]);
    std::swap(rows[1][0], rows[1][1]);
    auto perm = incremental_metrics(matrix_of(rows));
    for (std::size_t t = 0; t < 3; ++t) CHECK(perm.a_t[t] == doctest::Approx(base.a_t[t]).epsilon(1e-14));
}

TEST_CASE("malformed accuracy matrices are rejected") {
    CHECK_THROWS_AS(incremental_metrics(AccuracyMatrix{}), ContractError);
    CHECK_THROWS_AS(incremental_metrics(matrix_of({{0.5}, {0.5}})), ContractError);
    CHECK_THROWS_AS(incremental_metrics(matrix_of({{1.5}})), ContractError);
    CHECK_THROWS_AS(incremental_metrics(matrix_of({{-0.1}})), ContractError);
}

TEST_CASE("dcp prediction routes like the two-branch oracle") {
    Rng rng = make_rng(3, "dcp");
    for (int rep = 0; rep < 50; ++rep) {
        Matrix logits = random_matrix(40, 5, rng, 3.0);
        Matrix f = l2_normalize_rows(random_matrix(40, 4, rng)).rows;
        ClassMeanTable t = random_table(5, 4, rng);
        for (double tau : {0.3, 0.6, 0.9})
            CHECK(dcp_predict(logits, f, t, tau) == predict_oracle(logits, f, t, tau));
    }
}

TEST_CASE("dcp prediction degenerates at the threshold boundaries") {
    Rng rng = make_rng(4, "edge");
    for (int rep = 0; rep < 20; ++rep) {
        Matrix logits = random_matrix(30, 4, rng, 2.0);
        Matrix f = l2_normalize_rows(random_matrix(30, 6, rng)).rows;
        ClassMeanTable t = random_table(4, 6, rng);
        CHECK(dcp_predict(logits, f, t, 0.0) == dcp_predict(logits, f, t, 0.0, TestStrategy::t_cls));
        CHECK(dcp_predict(logits, f, t, 0.9999) == dcp_predict(logits, f, t, 0.5, TestStrategy::t_ncm));
    }
    // Confident sample goes to the classifier even when NCM disagrees.
    ClassMeanTable t;
    t.classes = {0, 1};
    t.means = {{1, 0}, {0, 1}};
    Matrix logits = {{10, 0}};
    Matrix f = {{0, 1}};
    CHECK(dcp_predict(logits, f, t, 0.95) == std::vector<int>{0});
    CHECK(dcp_predict(logits, f, t, 0.95, TestStrategy::t_ncm) == std::vector<int>{1});
    // No class means: the classifier answers.
    CHECK(dcp_predict(Matrix{{0, 0.1}}, f, ClassMeanTable{{}, Matrix(0, 2)}, 0.95) == std::vector<int>{1});
}

TEST_CASE("test strategy names round-trip") {
    for (auto s : {TestStrategy::dcp, TestStrategy::t_cls, TestStrategy::t_ncm})
        CHECK(parse_test_strategy(to_string(s)) == s);
    CHECK(to_string(TestStrategy::t_cls) == "t-cls");
    CHECK_THROWS_AS(parse_test_strategy("t-knn"), ConfigError);
}

TEST_CASE("base and novel accuracy split by class") {
    std::vector<std::vector<ClassTally>> per_task = {
        {{0, 8, 10}, {1, 6, 10}},
        {{0, 7, 10}, {1, 5, 10}, {2, 9, 10}, {3, 1, 10}},
    };
    std::vector<int> base = {0, 1};
    auto r = base_novel_accuracy(per_task, base);
    REQUIRE(r.size() == 2);
    CHECK(r[0].base == doctest::Approx(0.7));
    CHECK_FALSE(r[0].novel.has_value());
    CHECK(r[1].base == doctest::Approx(0.6));
    CHECK(*r[1].novel == doctest::Approx(0.5));
    std::vector<int> missing = {0, 9};
    CHECK_THROWS_AS(base_novel_accuracy(per_task, missing), ParameterError);
    CHECK(base_novel_csv(r) == "task,base,novel\n1,0.7,\n2,0.6,0.5\n");
}

TEST_CASE("diagnostic histograms conserve the scored samples") {
    Rng rng = make_rng(5, "diag");
    ModelState m = tiny_model(5, 4);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix x = random_matrix(60, 5, rng, 2.0);
        auto truth = random_labels(60, 4, rng);
        auto fx = forward_projection(m, x).rows;
        auto table = class_means(fx, truth, std::vector<int>{0, 1, 2, 3}).table;
        auto d = pseudo_diagnostics(x, truth, m, table, 0.6);
        REQUIRE(d.strategies.size() == 3);
        for (const auto& s : d.strategies) {
            std::size_t n = 0, good = 0;
            for (std::size_t b = 0; b < kConfidenceBins; ++b) {
                n += s.correct[b] + s.incorrect[b];
                good += s.correct[b];
            }
            CHECK(n == 60);
            CHECK(s.scored == 60);
            CHECK(s.accuracy == doctest::Approx(good / 60.0));
        }
        // dcp agrees with p-cls on confident samples and with p-ncm elsewhere.
        auto route = dcp_route(x, m, table, 0.6);
        std::size_t low = 0;
        for (std::size_t i = 0; i < route.size(); ++i) low += !route.high_confidence(i);
        CHECK(d.get("dcp").low_conf_count == low);
        CHECK(d.get("p-cls").low_conf_count == low);
        CHECK_THROWS_AS(d.get("p-r"), IndexError);
    }
}

TEST_CASE("confidence bins") {
    CHECK(confidence_bin(0.0) == 0);
    CHECK(confidence_bin(0.049) == 0);
    CHECK(confidence_bin(0.05) == 1);
    CHECK(confidence_bin(0.999) == kConfidenceBins - 1);
    CHECK(confidence_bin(1.0) == kConfidenceBins - 1);
}

TEST_CASE("csv headers") {
    auto acc = matrix_of({{0.5}, {0.25, 1}});
    CHECK(accuracy_csv(acc) == "t,i,acc\n1,1,0.5\n2,1,0.25\n2,2,1\n");
    auto metrics = metrics_csv(incremental_metrics(acc));
    CHECK(metrics.starts_with("metric,task,value\nA_t,1,0.5\nA_t,2,0.625\n"));
    CHECK(metrics.find("A_avg,,0.5625") != std::string::npos);
    CHECK(diagnostics_csv({}).starts_with("task,epoch,strategy,bin,correct_count,incorrect_count\n"));
    CHECK(diagnostics_summary_csv({}) ==
          "task,epoch,strategy,scored,accuracy,low_conf_count,low_conf_accuracy\n");
}
