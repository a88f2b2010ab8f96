// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/domain.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfagent
{

/// Run status after harness-side flag verification. Everything except
/// Success is a failure for every metric.
enum class ResultStatus
{
    Success,
    /// FlagCaptured but the flag did not match the ground truth (or was
    /// never verified).
    WrongFlag,
    GaveUp,
    StepCapExceeded,
    Error,
};

std::string_view to_string(ResultStatus s);
std::optional<ResultStatus> result_status_from_string(std::string_view s);

/// One run, flattened to what the metrics need.
struct ResultRow
{
    std::string model_id;
    ArchitectureKind architecture = ArchitectureKind::Executor;
    std::string challenge_id;
    VulnCategory category = VulnCategory::BrokenCryptography;
    Difficulty difficulty = Difficulty::Easy;
    int repetition = 1;
    ResultStatus status = ResultStatus::Error;
    int steps = 0;
    int rejections = 0;
    double cost_usd = 0.0;
    double duration_s = 0.0;
    std::optional<VulnCategory> plan_category;

    bool solved() const { return status == ResultStatus::Success; }
    bool operator==(const ResultRow&) const = default;
};

using ResultSet = std::vector<ResultRow>;

ResultStatus result_status(const RunOutcome& outcome);
ResultRow result_row(const Trace& trace);

/// Every `*.trace` file under `dir`, in path order. A missing directory is
/// an empty set.
ResultSet load_results(const std::filesystem::path& dir);

class CsvError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kRunsCsvSchema = "#schema=ctfagent-runs/1";

/// Per-run CSV: a schema comment line, a header, one line per run. Floats
/// use the shortest round-trip representation, so import(export(r)) == r.
std::string export_runs_csv(const ResultSet& results);
ResultSet import_runs_csv(std::string_view text);

/// Short label used in tables: E, E+E, P+E+E.
std::string_view table_label(ArchitectureKind a);

struct GroupKey
{
    std::string model_id;
    ArchitectureKind architecture = ArchitectureKind::Executor;

    auto operator<=>(const GroupKey&) const = default;
};

/// Rows split by (model, architecture), ordered by model then architecture.
std::map<GroupKey, ResultSet> group_runs(const ResultSet& results);

struct SuccessMax
{
    int solved = 0;
    int tasks = 0;
    std::map<std::string, bool> per_task;
};

/// A task is solved iff any of its repetitions is a Success.
SuccessMax success_max(const ResultSet& rows);

struct Averages
{
    double steps = 0.0;
    double cost_usd = 0.0;
    double duration_s = 0.0;
};

/// Means over all runs; nullopt for an empty scope.
std::optional<Averages> averages(const ResultSet& rows);

struct Consistency
{
    /// counts[k - 1] = tasks solved in exactly k repetitions.
    std::vector<int> counts;
    int total_successes = 0;
};

/// Throws PreconditionError unless every task has exactly `reps` runs.
Consistency consistency(const ResultSet& rows, int reps = 3);

struct RejectRatio
{
    int runs = 0;
    double rejections_avg = 0.0;
    double steps_avg = 0.0;
    /// Mean rejections over mean steps; 0 when no steps were taken.
    double ratio = 0.0;
};

RejectRatio reject_ratio(const ResultSet& rows);

/// "r/s (p%)": r and s are the means rounded half-up, p is 100 r/s of those
/// printed values, rounded half-up. "-" for an empty group.
std::string format_reject_ratio(const RejectRatio& r);

enum class OutcomeFilter
{
    Overall,
    Solved,
    Unsolved,
};

std::string_view to_string(OutcomeFilter f);

/// Run-level filter: a run is Solved when its own status is Success.
ResultSet filter_runs(const ResultSet& rows, std::optional<Difficulty> difficulty, OutcomeFilter outcome);

struct DistributionSummary
{
    int count = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

/// Quartiles by linear interpolation between closest ranks. nullopt for no
/// values.
std::optional<DistributionSummary> summarize_distribution(std::vector<double> values);

struct StepDistribution
{
    std::optional<DistributionSummary> solved;
    std::optional<DistributionSummary> unsolved;
};

StepDistribution step_distribution(const ResultSet& rows);

struct PlanAccuracy
{
    int correct = 0;
    int total = 0;
    bool no_data() const { return total == 0; }
};

/// A task's plan is correct iff any repetition classified it as its true
/// category. Tasks without any plan are not counted. `truth` overrides the
/// category recorded in the rows.
PlanAccuracy plan_accuracy(const ResultSet& rows, const std::map<std::string, VulnCategory>& truth = {});

/// Plain-text tables. Byte-stable for identical input; headers only for an
/// empty set.
std::string render_report(const ResultSet& results);

/// Same content in long form: table,model,architecture,group,metric,value.
std::string render_report_csv(const ResultSet& results);

} // namespace ctfagent
