// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/metrics.hpp"

#include "ctfagent/trace_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <set>

namespace ctfagent
{

std::string_view to_string(ResultStatus s)
{
    switch (s)
    {
        case ResultStatus::Success: return "Success";
        case ResultStatus::WrongFlag: return "WrongFlag";
        case ResultStatus::GaveUp: return "GaveUp";
        case ResultStatus::StepCapExceeded: return "StepCapExceeded";
        case ResultStatus::Error: return "Error";
    }
    return "?";
}

std::optional<ResultStatus> result_status_from_string(std::string_view s)
{
    for (auto v: {ResultStatus::Success, ResultStatus::WrongFlag, ResultStatus::GaveUp, ResultStatus::StepCapExceeded,
                  ResultStatus::Error})
        if (to_string(v) == s)
            return v;
    return std::nullopt;
}

ResultStatus result_status(const RunOutcome& o)
{
    switch (o.status)
    {
        case RunStatus::FlagCaptured: return o.flag_verified.value_or(false) ? ResultStatus::Success : ResultStatus::WrongFlag;
        case RunStatus::GaveUp: return ResultStatus::GaveUp;
        case RunStatus::StepCapExceeded: return ResultStatus::StepCapExceeded;
        case RunStatus::Error: return ResultStatus::Error;
    }
    return ResultStatus::Error;
}

ResultRow result_row(const Trace& t)
{
    ResultRow r;
    r.model_id = t.model_id;
    r.architecture = t.architecture;
    r.challenge_id = t.challenge_id;
    r.category = t.challenge_category;
    r.difficulty = t.challenge_difficulty;
    r.repetition = t.repetition_index;
    r.status = result_status(t.outcome);
    r.steps = executed_steps(t);
    r.rejections = total_rejections(t);
    r.cost_usd = recorded_cost(t);
    r.duration_s = t.outcome.duration_s;
    if (t.plan)
        r.plan_category = t.plan->classified_vulnerability;
    return r;
}

ResultSet load_results(const std::filesystem::path& dir)
{
    ResultSet out;
    if (!std::filesystem::exists(dir))
        return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e: std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".trace")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f: files)
    {
        try
        {
            out.push_back(result_row(read_trace_file(f)));
        }
        catch (const TraceFormatError& e)
        {
            throw TraceFormatError(fmt::format("{}: {}", f.string(), e.what()));
        }
    }
    return out;
}

namespace
{

std::string csv_field(std::string_view s)
{
    if (s.find_first_of(",\"\n") == std::string_view::npos)
        return std::string(s);
    std::string out = "\"";
    for (char c: s)
    {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no)
{
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i)
    {
        char c = line[i];
        if (quoted)
        {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"')
            {
                fields.back() += '"';
                ++i;
            }
            else if (c == '"')
                quoted = false;
            else
                fields.back() += c;
        }
        else if (c == '"')
            quoted = true;
        else if (c == ',')
            fields.emplace_back();
        else
            fields.back() += c;
    }
    if (quoted)
        throw CsvError(fmt::format("line {}: unterminated quote", line_no));
    return fields;
}

template <class T>
T parse_number(const std::string& s, std::size_t line_no, std::string_view column)
{
    T v {};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw CsvError(fmt::format("line {}: bad {} '{}'", line_no, column, s));
    return v;
}

const std::vector<std::string_view> kRunsColumns {"model",  "architecture", "challenge_id", "category",
                                                  "difficulty", "repetition", "status",   "steps",
                                                  "rejections", "cost_usd",   "duration_s", "plan_category"};

} // namespace

std::string export_runs_csv(const ResultSet& results)
{
    std::string out = std::string(kRunsCsvSchema) + "\n";
    for (std::size_t i = 0; i < kRunsColumns.size(); ++i)
        out += fmt::format("{}{}", i ? "," : "", kRunsColumns[i]);
    out += "\n";
    for (const auto& r: results)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(r.model_id), short_code(r.architecture),
                           csv_field(r.challenge_id), csv_field(to_string(r.category)), to_string(r.difficulty), r.repetition,
                           to_string(r.status), r.steps, r.rejections, r.cost_usd, r.duration_s,
                           r.plan_category ? csv_field(to_string(*r.plan_category)) : std::string());
    return out;
}

ResultSet import_runs_csv(std::string_view text)
{
    ResultSet out;
    std::size_t pos = 0, line_no = 0;
    bool schema_seen = false, header_seen = false;
    while (pos < text.size())
    {
        auto eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (!schema_seen)
        {
            if (line != kRunsCsvSchema)
                throw CsvError(fmt::format("line {}: expected '{}'", line_no, kRunsCsvSchema));
            schema_seen = true;
            continue;
        }
        if (line.front() == '#')
            continue;
        auto f = split_csv_line(line, line_no);
        if (!header_seen)
        {
            if (f.size() != kRunsColumns.size() || !std::equal(f.begin(), f.end(), kRunsColumns.begin()))
                throw CsvError(fmt::format("line {}: unexpected header", line_no));
            header_seen = true;
            continue;
        }
        if (f.size() != kRunsColumns.size())
            throw CsvError(fmt::format("line {}: expected {} fields, got {}", line_no, kRunsColumns.size(), f.size()));
        ResultRow r;
        r.model_id = f[0];
        auto arch = architecture_from_string(f[1]);
        auto cat = category_from_string(f[3]);
        auto diff = difficulty_from_string(f[4]);
        auto status = result_status_from_string(f[6]);
        if (!arch || !cat || !diff || !status)
            throw CsvError(fmt::format("line {}: unknown architecture, category, difficulty or status", line_no));
        r.architecture = *arch;
        r.challenge_id = f[2];
        r.category = *cat;
        r.difficulty = *diff;
        r.repetition = parse_number<int>(f[5], line_no, "repetition");
        r.status = *status;
        r.steps = parse_number<int>(f[7], line_no, "steps");
        r.rejections = parse_number<int>(f[8], line_no, "rejections");
        r.cost_usd = parse_number<double>(f[9], line_no, "cost_usd");
        r.duration_s = parse_number<double>(f[10], line_no, "duration_s");
        if (!f[11].empty())
        {
            r.plan_category = category_from_string(f[11]);
            if (!r.plan_category)
                throw CsvError(fmt::format("line {}: unknown plan category '{}'", line_no, f[11]));
        }
        out.push_back(std::move(r));
    }
    if (!header_seen)
        throw CsvError("missing schema or header line");
    return out;
}

std::string_view table_label(ArchitectureKind a)
{
    switch (a)
    {
        case ArchitectureKind::Executor: return "E";
        case ArchitectureKind::ExecutorEvaluator: return "E+E";
        case ArchitectureKind::PlannerExecutorEvaluator: return "P+E+E";
    }
    return "?";
}

std::map<GroupKey, ResultSet> group_runs(const ResultSet& results)
{
    std::map<GroupKey, ResultSet> out;
    for (const auto& r: results)
        out[{r.model_id, r.architecture}].push_back(r);
    return out;
}

SuccessMax success_max(const ResultSet& rows)
{
    SuccessMax s;
    for (const auto& r: rows)
        s.per_task[r.challenge_id] = s.per_task[r.challenge_id] || r.solved();
    s.tasks = static_cast<int>(s.per_task.size());
    s.solved = static_cast<int>(std::count_if(s.per_task.begin(), s.per_task.end(), [](const auto& kv) { return kv.second; }));
    return s;
}

std::optional<Averages> averages(const ResultSet& rows)
{
    if (rows.empty())
        return std::nullopt;
    Averages a;
    for (const auto& r: rows)
    {
        a.steps += r.steps;
        a.cost_usd += r.cost_usd;
        a.duration_s += r.duration_s;
    }
    const double n = static_cast<double>(rows.size());
    a.steps /= n;
    a.cost_usd /= n;
    a.duration_s /= n;
    return a;
}

Consistency consistency(const ResultSet& rows, int reps)
{
    if (reps < 1)
        throw PreconditionError("reps must be >= 1");
    std::map<std::string, std::pair<int, int>> per_task; // runs, successes
    for (const auto& r: rows)
    {
        auto& [runs, wins] = per_task[r.challenge_id];
        ++runs;
        wins += r.solved() ? 1 : 0;
    }
    Consistency c;
    c.counts.assign(static_cast<std::size_t>(reps), 0);
    for (const auto& [id, rw]: per_task)
    {
        if (rw.first != reps)
            throw PreconditionError(fmt::format("task '{}' has {} runs, expected {}", id, rw.first, reps));
        if (rw.second > 0)
            ++c.counts[static_cast<std::size_t>(rw.second - 1)];
        c.total_successes += rw.second;
    }
    return c;
}

namespace
{

struct RatioSums
{
    long long runs = 0;
    long long rejections = 0;
    long long steps = 0;
};

RatioSums ratio_sums(const ResultSet& rows)
{
    RatioSums s;
    for (const auto& r: rows)
    {
        ++s.runs;
        s.rejections += r.rejections;
        s.steps += r.steps;
    }
    return s;
}

/// round(num / den) with halves rounded up, in exact integer arithmetic.
long long round_half_up(long long num, long long den)
{
    return (2 * num + den) / (2 * den);
}

} // namespace

RejectRatio reject_ratio(const ResultSet& rows)
{
    const auto s = ratio_sums(rows);
    RejectRatio r;
    r.runs = static_cast<int>(s.runs);
    if (s.runs == 0)
        return r;
    r.rejections_avg = static_cast<double>(s.rejections) / static_cast<double>(s.runs);
    r.steps_avg = static_cast<double>(s.steps) / static_cast<double>(s.runs);
    // Both means share the run count, so the ratio of means is the ratio of sums.
    r.ratio = s.steps == 0 ? 0.0 : static_cast<double>(s.rejections) / static_cast<double>(s.steps);
    return r;
}

std::string format_reject_ratio(const RejectRatio& r)
{
    if (r.runs == 0)
        return "-";
    // Recover the integer sums so rounding is exact; the averages were
    // produced by dividing integer totals by the run count.
    const long long n = r.runs;
    const long long rej = std::llround(r.rejections_avg * static_cast<double>(n));
    const long long steps = std::llround(r.steps_avg * static_cast<double>(n));
    const long long r_shown = round_half_up(rej, n);
    const long long s_shown = round_half_up(steps, n);
    // The percentage is that of the fraction as printed, so a cell always
    // reads consistently (4/32 shows 13%).
    const long long pct = s_shown == 0 ? 0 : round_half_up(100 * r_shown, s_shown);
    return fmt::format("{}/{} ({}%)", r_shown, s_shown, pct);
}

std::string_view to_string(OutcomeFilter f)
{
    switch (f)
    {
        case OutcomeFilter::Overall: return "Overall";
        case OutcomeFilter::Solved: return "Solved";
        case OutcomeFilter::Unsolved: return "Unsolved";
    }
    return "?";
}

ResultSet filter_runs(const ResultSet& rows, std::optional<Difficulty> difficulty, OutcomeFilter outcome)
{
    ResultSet out;
    for (const auto& r: rows)
    {
        if (difficulty && r.difficulty != *difficulty)
            continue;
        if (outcome == OutcomeFilter::Solved && !r.solved())
            continue;
        if (outcome == OutcomeFilter::Unsolved && r.solved())
            continue;
        out.push_back(r);
    }
    return out;
}

std::optional<DistributionSummary> summarize_distribution(std::vector<double> values)
{
    if (values.empty())
        return std::nullopt;
    std::sort(values.begin(), values.end());
    auto quantile = [&](double p) {
        const double pos = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    DistributionSummary d;
    d.count = static_cast<int>(values.size());
    d.min = values.front();
    d.max = values.back();
    d.q1 = quantile(0.25);
    d.median = quantile(0.5);
    d.q3 = quantile(0.75);
    double sum = 0.0;
    for (double v: values)
        sum += v;
    d.mean = sum / static_cast<double>(values.size());
    return d;
}

StepDistribution step_distribution(const ResultSet& rows)
{
    std::vector<double> solved, unsolved;
    for (const auto& r: rows)
        (r.solved() ? solved : unsolved).push_back(r.steps);
    return {summarize_distribution(std::move(solved)), summarize_distribution(std::move(unsolved))};
}

PlanAccuracy plan_accuracy(const ResultSet& rows, const std::map<std::string, VulnCategory>& truth)
{
    std::map<std::string, bool> per_task;
    for (const auto& r: rows)
    {
        if (!r.plan_category)
            continue;
        auto it = truth.find(r.challenge_id);
        const VulnCategory expected = it == truth.end() ? r.category : it->second;
        per_task[r.challenge_id] = per_task[r.challenge_id] || *r.plan_category == expected;
    }
    PlanAccuracy p;
    p.total = static_cast<int>(per_task.size());
    p.correct = static_cast<int>(std::count_if(per_task.begin(), per_task.end(), [](const auto& kv) { return kv.second; }));
    return p;
}

namespace
{

constexpr std::array<Difficulty, 3> kDifficulties {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard};
constexpr std::array<OutcomeFilter, 3> kOutcomes {OutcomeFilter::Overall, OutcomeFilter::Solved, OutcomeFilter::Unsolved};

bool has_evaluator(ArchitectureKind a)
{
    return a != ArchitectureKind::Executor;
}

/// Repetition count shared by every task in the group, if there is one.
std::optional<int> uniform_reps(const ResultSet& rows)
{
    std::map<std::string, int> runs;
    for (const auto& r: rows)
        ++runs[r.challenge_id];
    std::set<int> counts;
    for (const auto& [_, n]: runs)
        counts.insert(n);
    if (counts.size() != 1)
        return std::nullopt;
    return *counts.begin();
}

std::string fmt2(double v)
{
    return fmt::format("{:.2f}", v);
}

std::string consistency_cell(const std::optional<Consistency>& c)
{
    if (!c)
        return "-";
    std::string cells;
    for (std::size_t k = 0; k < c->counts.size(); ++k)
        cells += fmt::format("{}{}", k ? "," : "", c->counts[k]);
    return fmt::format("({}) {}", cells, c->total_successes);
}

std::optional<Consistency> try_consistency(const ResultSet& rows)
{
    auto reps = uniform_reps(rows);
    if (!reps)
        return std::nullopt;
    return consistency(rows, *reps);
}

} // namespace

std::string render_report(const ResultSet& results)
{
    const auto groups = group_runs(results);
    std::string out;

    out += "Success and efficiency\n";
    out += fmt::format("{:<24} {:<6} {:>8} {:>10} {:>10} {:>14}\n", "model", "arch", "success", "steps_avg", "cost_avg",
                       "duration_avg_s");
    for (const auto& [key, rows]: groups)
    {
        const auto s = success_max(rows);
        const auto a = averages(rows);
        out += fmt::format("{:<24} {:<6} {:>8} {:>10} {:>10} {:>14}\n", key.model_id, table_label(key.architecture),
                           fmt::format("{}/{}", s.solved, s.tasks), a ? fmt2(a->steps) : "-", a ? fmt2(a->cost_usd) : "-",
                           a ? fmt2(a->duration_s) : "-");
    }

    out += "\nConsistency (tasks solved in exactly k runs) total\n";
    out += fmt::format("{:<24} {:<6} {}\n", "model", "arch", "counts");
    for (const auto& [key, rows]: groups)
        out += fmt::format("{:<24} {:<6} {}\n", key.model_id, table_label(key.architecture), consistency_cell(try_consistency(rows)));

    out += "\nEvaluator reject ratio (rejections/steps)\n";
    out += fmt::format("{:<24} {:<6} {:<8} {:>12} {:>12} {:>12}\n", "model", "arch", "level", "Overall", "Solved", "Unsolved");
    for (const auto& [key, rows]: groups)
    {
        if (!has_evaluator(key.architecture))
            continue;
        for (auto d: kDifficulties)
        {
            std::array<std::string, 3> cells;
            for (std::size_t i = 0; i < kOutcomes.size(); ++i)
                cells[i] = format_reject_ratio(reject_ratio(filter_runs(rows, d, kOutcomes[i])));
            out += fmt::format("{:<24} {:<6} {:<8} {:>12} {:>12} {:>12}\n", key.model_id, table_label(key.architecture),
                               to_string(d), cells[0], cells[1], cells[2]);
        }
    }

    out += "\nPlanner accuracy\n";
    out += fmt::format("{:<24} {:<6} {:>8}\n", "model", "arch", "correct");
    for (const auto& [key, rows]: groups)
    {
        if (key.architecture != ArchitectureKind::PlannerExecutorEvaluator)
            continue;
        const auto p = plan_accuracy(rows);
        out += fmt::format("{:<24} {:<6} {:>8}\n", key.model_id, table_label(key.architecture),
                           p.no_data() ? std::string("no data") : fmt::format("{}/{}", p.correct, p.total));
    }

    out += "\nStep distribution by outcome\n";
    out += fmt::format("{:<24} {:<6} {:<9} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "model", "arch", "outcome", "n", "min",
                       "q1", "median", "q3", "max", "mean");
    for (const auto& [key, rows]: groups)
    {
        const auto dist = step_distribution(rows);
        for (auto [label, summary]: {std::pair {"solved", &dist.solved}, std::pair {"unsolved", &dist.unsolved}})
        {
            if (!*summary)
            {
                out += fmt::format("{:<24} {:<6} {:<9} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n", key.model_id,
                                   table_label(key.architecture), label, 0, "-", "-", "-", "-", "-", "-");
                continue;
            }
            const auto& s = **summary;
            out += fmt::format("{:<24} {:<6} {:<9} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n", key.model_id,
                               table_label(key.architecture), label, s.count, fmt2(s.min), fmt2(s.q1), fmt2(s.median),
                               fmt2(s.q3), fmt2(s.max), fmt2(s.mean));
        }
    }
    return out;
}

std::string render_report_csv(const ResultSet& results)
{
    const auto groups = group_runs(results);
    std::string out = "table,model,architecture,group,metric,value\n";
    auto line = [&](std::string_view table, const GroupKey& key, std::string_view group, std::string_view metric,
                    const std::string& value) {
        out += fmt::format("{},{},{},{},{},{}\n", table, csv_field(key.model_id), short_code(key.architecture), group, metric,
                           csv_field(value));
    };
    for (const auto& [key, rows]: groups)
    {
        const auto s = success_max(rows);
        line("success", key, "all", "solved", std::to_string(s.solved));
        line("success", key, "all", "tasks", std::to_string(s.tasks));
        if (auto a = averages(rows))
        {
            line("success", key, "all", "steps_avg", fmt2(a->steps));
            line("success", key, "all", "cost_avg", fmt2(a->cost_usd));
            line("success", key, "all", "duration_avg_s", fmt2(a->duration_s));
        }
        if (auto c = try_consistency(rows))
        {
            for (std::size_t k = 0; k < c->counts.size(); ++k)
                line("consistency", key, "all", fmt::format("solved_in_{}", k + 1), std::to_string(c->counts[k]));
            line("consistency", key, "all", "total", std::to_string(c->total_successes));
        }
        if (has_evaluator(key.architecture))
            for (auto d: kDifficulties)
                for (auto o: kOutcomes)
                    line("reject_ratio", key, fmt::format("{}/{}", to_string(d), to_string(o)), "cell",
                         format_reject_ratio(reject_ratio(filter_runs(rows, d, o))));
        if (key.architecture == ArchitectureKind::PlannerExecutorEvaluator)
        {
            const auto p = plan_accuracy(rows);
            line("plan_accuracy", key, "all", "correct", std::to_string(p.correct));
            line("plan_accuracy", key, "all", "total", std::to_string(p.total));
        }
        const auto dist = step_distribution(rows);
        for (auto [label, summary]: {std::pair {"solved", &dist.solved}, std::pair {"unsolved", &dist.unsolved}})
        {
            if (!*summary)
                continue;
            const auto& s = **summary;
            line("steps", key, label, "n", std::to_string(s.count));
            line("steps", key, label, "q1", fmt2(s.q1));
            line("steps", key, label, "median", fmt2(s.median));
            line("steps", key, label, "q3", fmt2(s.q3));
            line("steps", key, label, "mean", fmt2(s.mean));
        }
    }
    return out;
}

} // namespace ctfagent
