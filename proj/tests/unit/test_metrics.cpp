// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/metrics.hpp"
#include "ctfagent/trace_io.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace ctfagent;
using testing::data_dir;
using testing::slurp;

namespace
{

const ResultSet& reference()
{
    static const ResultSet rows = import_runs_csv(slurp(data_dir() / "reference_runs.csv"));
    return rows;
}

ResultSet group(const std::string& model, ArchitectureKind arch)
{
    ResultSet out;
    for (const auto& r: reference())
        if (r.model_id == model && r.architecture == arch)
            out.push_back(r);
    return out;
}

constexpr auto E = ArchitectureKind::Executor;
constexpr auto EE = ArchitectureKind::ExecutorEvaluator;
constexpr auto PEE = ArchitectureKind::PlannerExecutorEvaluator;

std::string two(double v) { return fmt::format("{:.2f}", v); }

/// Random synthetic result set: `tasks` tasks with `reps` runs each.
ResultSet synthetic(std::mt19937_64& rng, int tasks, int reps, ArchitectureKind arch = PEE)
{
    std::uniform_int_distribution<int> status(0, 4), steps(0, 50), rej(0, 3), cat(0, 13), diff(0, 2), coin(0, 1);
    ResultSet out;
    for (int t = 0; t < tasks; ++t)
    {
        const auto category = all_categories()[static_cast<std::size_t>(cat(rng))];
        const auto difficulty = static_cast<Difficulty>(diff(rng));
        for (int k = 1; k <= reps; ++k)
        {
            ResultRow r;
            r.model_id = "m";
            r.architecture = arch;
            r.challenge_id = "t" + std::to_string(t);
            r.category = category;
            r.difficulty = difficulty;
            r.repetition = k;
            r.status = static_cast<ResultStatus>(status(rng));
            r.steps = steps(rng);
            r.rejections = rej(rng) * r.steps;
            r.cost_usd = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
            r.duration_s = std::uniform_real_distribution<double>(0.0, 900.0)(rng);
            if (coin(rng))
                r.plan_category = coin(rng) ? category : all_categories()[static_cast<std::size_t>(cat(rng))];
            out.push_back(r);
        }
    }
    return out;
}

} // namespace

TEST_CASE("reference result set: shape")
{
    CHECK(reference().size() == 360);
    const auto groups = group_runs(reference());
    REQUIRE(groups.size() == 4);
    for (const auto& [key, rows]: groups)
        CHECK(rows.size() == 90);
}

TEST_CASE("success and efficiency table")
{
    struct Row
    {
        std::string model;
        ArchitectureKind arch;
        int solved;
        const char* steps;
        const char* cost;
        const char* duration;
    };
    const std::vector<Row> expected {
        {"gpt-4.1", E, 9, "36.74", "1.43", "162.13"},
        {"gpt-5", E, 19, "31.56", "0.90", "336.74"},
        {"gpt-5", EE, 19, "28.76", "0.64", "799.30"},
        {"gpt-5", PEE, 19, "24.09", "0.59", "925.80"},
    };
    for (const auto& e: expected)
    {
        CAPTURE(e.model);
        CAPTURE(table_label(e.arch));
        const ResultSet rows = group(e.model, e.arch);
        const SuccessMax s = success_max(rows);
        CHECK(s.solved == e.solved);
        CHECK(s.tasks == 30);
        const auto a = averages(rows);
        REQUIRE(a);
        CHECK(two(a->steps) == e.steps);
        CHECK(two(a->cost_usd) == e.cost);
        CHECK(two(a->duration_s) == e.duration);
    }
}

TEST_CASE("consistency table")
{
    const std::vector<std::pair<ArchitectureKind, std::vector<int>>> expected {
        {E, {5, 2, 12}}, {EE, {2, 3, 14}}, {PEE, {1, 2, 16}}};
    const std::vector<int> totals {45, 50, 53};
    for (std::size_t i = 0; i < expected.size(); ++i)
    {
        const Consistency c = consistency(group("gpt-5", expected[i].first));
        CHECK(c.counts == expected[i].second);
        CHECK(c.total_successes == totals[i]);
    }
}

TEST_CASE("reject ratio table")
{
    const std::map<ArchitectureKind, std::array<std::array<const char*, 3>, 3>> expected {
        {EE,
         {{{"1/20 (5%)", "1/9 (11%)", "3/50 (6%)"},
           {"5/33 (15%)", "3/22 (14%)", "7/44 (16%)"},
           {"6/33 (18%)", "4/25 (16%)", "7/37 (19%)"}}}},
        {PEE,
         {{{"2/18 (11%)", "1/10 (10%)", "6/43 (14%)"},
           {"4/26 (15%)", "3/17 (18%)", "6/37 (16%)"},
           {"4/32 (13%)", "2/22 (9%)", "5/37 (14%)"}}}},
    };
    const std::array<Difficulty, 3> diffs {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard};
    const std::array<OutcomeFilter, 3> outcomes {OutcomeFilter::Overall, OutcomeFilter::Solved, OutcomeFilter::Unsolved};
    for (const auto& [arch, table]: expected)
    {
        const ResultSet rows = group("gpt-5", arch);
        for (std::size_t d = 0; d < 3; ++d)
            for (std::size_t o = 0; o < 3; ++o)
            {
                CAPTURE(table_label(arch));
                CAPTURE(to_string(diffs[d]));
                CAPTURE(to_string(outcomes[o]));
                CHECK(format_reject_ratio(reject_ratio(filter_runs(rows, diffs[d], outcomes[o]))) == table[d][o]);
            }
    }
}

TEST_CASE("planner accuracy")
{
    const PlanAccuracy p = plan_accuracy(group("gpt-5", PEE));
    CHECK(p.correct == 23);
    CHECK(p.total == 30);
    CHECK(plan_accuracy(group("gpt-5", E)).no_data());
}

TEST_CASE("executor-only unsolved runs sit at the step cap")
{
    const StepDistribution d = step_distribution(group("gpt-5", E));
    REQUIRE(d.unsolved);
    CHECK(d.unsolved->median == 50.0);
    REQUIRE(d.solved);
    CHECK(d.solved->median < 50.0);
}

TEST_CASE("format_reject_ratio examples")
{
    CHECK(format_reject_ratio({1, 1.0, 20.0, 0.05}) == "1/20 (5%)");
    CHECK(format_reject_ratio({4, 0.0, 10.0, 0.0}) == "0/10 (0%)");
    CHECK(format_reject_ratio({}) == "-");
    CHECK(format_reject_ratio({2, 0.0, 0.0, 0.0}) == "0/0 (0%)");
    // Halves round up: 2.5 -> 3, 9.5 -> 10.
    CHECK(format_reject_ratio({2, 2.5, 9.5, 0.0}) == "3/10 (30%)");
}

TEST_CASE("reject ratio matches raw sums")
{
    std::mt19937_64 rng(11);
    for (int round = 0; round < 200; ++round)
    {
        const ResultSet rows = synthetic(rng, 1 + round % 7, 3);
        long long rej = 0, steps = 0;
        for (const auto& r: rows)
        {
            rej += r.rejections;
            steps += r.steps;
        }
        const RejectRatio rr = reject_ratio(rows);
        CHECK(rr.runs == static_cast<int>(rows.size()));
        CHECK(rr.rejections_avg == doctest::Approx(static_cast<double>(rej) / static_cast<double>(rows.size())));
        CHECK(rr.steps_avg == doctest::Approx(static_cast<double>(steps) / static_cast<double>(rows.size())));
        CHECK(rr.ratio == doctest::Approx(steps ? static_cast<double>(rej) / static_cast<double>(steps) : 0.0));

        // The printed cell agrees with a direct rendering of the sums.
        const long long n = static_cast<long long>(rows.size());
        const long long r_shown = static_cast<long long>(std::floor(static_cast<double>(rej) / n + 0.5));
        const long long s_shown = static_cast<long long>(std::floor(static_cast<double>(steps) / n + 0.5));
        const long long pct = s_shown ? static_cast<long long>(std::floor(100.0 * r_shown / s_shown + 0.5)) : 0;
        CHECK(format_reject_ratio(rr) == fmt::format("{}/{} ({}%)", r_shown, s_shown, pct));
    }
}

TEST_CASE("consistency matches a recount")
{
    std::mt19937_64 rng(12);
    for (int round = 0; round < 200; ++round)
    {
        const int reps = 1 + round % 4;
        const ResultSet rows = synthetic(rng, 1 + round % 9, reps);
        std::map<std::string, int> wins;
        for (const auto& r: rows)
            wins[r.challenge_id] += r.solved() ? 1 : 0;
        std::vector<int> counts(static_cast<std::size_t>(reps), 0);
        int total = 0;
        for (const auto& [_, w]: wins)
        {
            if (w > 0)
                ++counts[static_cast<std::size_t>(w - 1)];
            total += w;
        }
        const Consistency c = consistency(rows, reps);
        CHECK(c.counts == counts);
        CHECK(c.total_successes == total);
    }
    CHECK(consistency(ResultSet {}, 3).counts == std::vector<int> {0, 0, 0});

    ResultSet uneven = synthetic(rng, 2, 3);
    uneven.pop_back();
    CHECK_THROWS_AS(consistency(uneven, 3), PreconditionError);
}

TEST_CASE("quartiles match a sort oracle")
{
    std::mt19937_64 rng(13);
    for (int round = 0; round < 300; ++round)
    {
        std::vector<double> v(static_cast<std::size_t>(1 + round % 17));
        for (auto& x: v)
            x = std::uniform_int_distribution<int>(0, 50)(rng);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        // Closest-rank interpolation: position p * (n - 1).
        auto q = [&](int num, int den) {
            const std::size_t n1 = sorted.size() - 1;
            const std::size_t lo = n1 * static_cast<std::size_t>(num) / static_cast<std::size_t>(den);
            const double frac = static_cast<double>(n1 * static_cast<std::size_t>(num) % static_cast<std::size_t>(den)) / den;
            const double hi = lo + 1 < sorted.size() ? sorted[lo + 1] : sorted[lo];
            return sorted[lo] + frac * (hi - sorted[lo]);
        };
        const auto d = summarize_distribution(v);
        REQUIRE(d);
        CHECK(d->count == static_cast<int>(v.size()));
        CHECK(d->min == sorted.front());
        CHECK(d->max == sorted.back());
        CHECK(d->q1 == doctest::Approx(q(1, 4)));
        CHECK(d->median == doctest::Approx(q(1, 2)));
        CHECK(d->q3 == doctest::Approx(q(3, 4)));
        double sum = 0;
        for (double x: v)
            sum += x;
        CHECK(d->mean == doctest::Approx(sum / static_cast<double>(v.size())));
    }
    const auto one = summarize_distribution({7.0});
    REQUIRE(one);
    CHECK(one->q1 == 7.0);
    CHECK(one->median == 7.0);
    CHECK(one->q3 == 7.0);
    CHECK_FALSE(summarize_distribution({}));
}

TEST_CASE("plan accuracy matches a recount")
{
    std::mt19937_64 rng(14);
    for (int round = 0; round < 200; ++round)
    {
        const ResultSet rows = synthetic(rng, 1 + round % 10, 3);
        std::map<std::string, bool> right;
        for (const auto& r: rows)
            if (r.plan_category)
                right[r.challenge_id] = right[r.challenge_id] || *r.plan_category == r.category;
        int correct = 0;
        for (const auto& [_, ok]: right)
            correct += ok;
        const PlanAccuracy p = plan_accuracy(rows);
        CHECK(p.total == static_cast<int>(right.size()));
        CHECK(p.correct == correct);
    }
}

TEST_CASE("plan accuracy honours a registry override")
{
    ResultRow r;
    r.challenge_id = "x";
    r.category = VulnCategory::PathTraversal;
    r.plan_category = VulnCategory::PathTraversal;
    CHECK(plan_accuracy({r}).correct == 1);
    CHECK(plan_accuracy({r}, {{"x", VulnCategory::CommandInjection}}).correct == 0);
}

TEST_CASE("run-level filter")
{
    std::mt19937_64 rng(15);
    const ResultSet rows = synthetic(rng, 20, 3);
    const auto solved = filter_runs(rows, std::nullopt, OutcomeFilter::Solved);
    const auto unsolved = filter_runs(rows, std::nullopt, OutcomeFilter::Unsolved);
    CHECK(solved.size() + unsolved.size() == rows.size());
    CHECK(std::all_of(solved.begin(), solved.end(), [](const ResultRow& r) { return r.solved(); }));
    const auto easy = filter_runs(rows, Difficulty::Easy, OutcomeFilter::Overall);
    CHECK(std::all_of(easy.begin(), easy.end(), [](const ResultRow& r) { return r.difficulty == Difficulty::Easy; }));
}

TEST_CASE("success status comes from verification")
{
    RunOutcome o;
    o.status = RunStatus::FlagCaptured;
    o.flag_verified = true;
    CHECK(result_status(o) == ResultStatus::Success);
    o.flag_verified = false;
    CHECK(result_status(o) == ResultStatus::WrongFlag);
    o.flag_verified.reset();
    CHECK(result_status(o) == ResultStatus::WrongFlag);
    o.status = RunStatus::GaveUp;
    CHECK(result_status(o) == ResultStatus::GaveUp);
    o.status = RunStatus::StepCapExceeded;
    CHECK(result_status(o) == ResultStatus::StepCapExceeded);
    o.status = RunStatus::Error;
    CHECK(result_status(o) == ResultStatus::Error);
}

TEST_CASE("runs CSV round-trips")
{
    CHECK(import_runs_csv(export_runs_csv(reference())) == reference());
    const std::string once = export_runs_csv(reference());
    CHECK(export_runs_csv(import_runs_csv(once)) == once);

    std::mt19937_64 rng(16);
    ResultSet rows = synthetic(rng, 10, 3);
    rows[0].model_id = "odd,\"name\"";
    CHECK(import_runs_csv(export_runs_csv(rows)) == rows);

    CHECK(import_runs_csv(export_runs_csv({})).empty());
    CHECK_THROWS_AS(import_runs_csv("model\n"), CsvError);
    CHECK_THROWS_AS(import_runs_csv(std::string(kRunsCsvSchema) + "\nwrong,header\n"), CsvError);
}

TEST_CASE("loading traces from disk")
{
    testing::TempDir dir;
    CHECK(load_results(dir / "missing").empty());

    Trace t;
    t.run_id = "r";
    t.challenge_id = "c1";
    t.challenge_category = VulnCategory::CommandInjection;
    t.challenge_difficulty = Difficulty::Medium;
    t.architecture = PEE;
    t.model_id = "m";
    t.repetition_index = 2;
    t.prompt_hash = std::string(64, 'b');
    t.plan = Plan {VulnCategory::CommandInjection, "x", {"a"}, "raw"};
    t.outcome.status = RunStatus::FlagCaptured;
    t.outcome.flag_verified = true;
    t.outcome.cost_usd = 0.25;
    t.outcome.duration_s = 3.5;
    write_trace_file(dir / "m" / "pee" / "c1" / "2.trace", t);

    const ResultSet rows = load_results(dir.path());
    REQUIRE(rows.size() == 1);
    CHECK(rows[0] == result_row(t));
    CHECK(rows[0].status == ResultStatus::Success);
    CHECK(rows[0].plan_category == VulnCategory::CommandInjection);
    CHECK(rows[0].repetition == 2);
}

TEST_CASE("empty result set renders headers only")
{
    const std::string report = render_report({});
    CHECK(report.find("Success and efficiency") != std::string::npos);
    CHECK(report.find("Planner accuracy") != std::string::npos);
    CHECK(report.find("gpt") == std::string::npos);
    CHECK(render_report_csv({}) == "table,model,architecture,group,metric,value\n");

    ResultSet only_e = group("gpt-5", E);
    CHECK(render_report(only_e).find("no data") == std::string::npos);
}

TEST_CASE("report is byte-stable and matches the golden file")
{
    const std::string a = render_report(reference());
    ResultSet shuffled = reference();
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(17));
    CHECK(render_report(shuffled) == a);
    CHECK(render_report(reference()) == a);
    CHECK(a == slurp(data_dir() / "reference_report.txt"));
    CHECK(render_report_csv(shuffled) == render_report_csv(reference()));
    CHECK(a.find("1/20 (5%)") != std::string::npos);
    CHECK(a.find("23/30") != std::string::npos);
}
