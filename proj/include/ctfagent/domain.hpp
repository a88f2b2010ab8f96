// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ctfagent
{

/// Raised when a caller violates an operation's documented precondition.
class PreconditionError: public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

enum class VulnCategory
{
    BrokenCryptography,
    InsecureDirectObjectReference,
    InsecureDesign,
    JsonWebTokenVulnerability,
    NoSqlInjection,
    PathTraversal,
    SecureShellRelated,
    ServerSideRequestForgery,
    XmlExternalEntityInjection,
    CrossSiteScripting,
    CommandInjection,
    BlindSqlInjection,
    BusinessLogic,
    RaceCondition,
};

inline constexpr std::size_t kVulnCategoryCount = 14;

/// All categories in canonical table order.
const std::array<VulnCategory, kVulnCategoryCount>& all_categories();

std::string_view to_string(VulnCategory c);
/// Exact (canonical spelling) lookup.
std::optional<VulnCategory> category_from_string(std::string_view s);

/// Maps a free-form label (e.g. "IDOR", "sqli blind", "path-traversal")
/// onto the closest category: alias table, then normalized match, then
/// token overlap, then edit distance.
VulnCategory coerce_category(std::string_view label);

enum class Difficulty
{
    Easy,
    Medium,
    Hard,
};

std::string_view to_string(Difficulty d);
std::optional<Difficulty> difficulty_from_string(std::string_view s);

enum class ArchitectureKind
{
    Executor,
    ExecutorEvaluator,
    PlannerExecutorEvaluator,
};

inline constexpr std::array<ArchitectureKind, 3> kAllArchitectures = {
    ArchitectureKind::Executor,
    ArchitectureKind::ExecutorEvaluator,
    ArchitectureKind::PlannerExecutorEvaluator,
};

std::string_view to_string(ArchitectureKind a);
/// Short code used on the command line and in trace paths: e, ee, pee.
std::string_view short_code(ArchitectureKind a);
/// Accepts either the long name or the short code.
std::optional<ArchitectureKind> architecture_from_string(std::string_view s);

struct ChallengeSpec
{
    std::string id;
    std::string image_ref;
    std::string entry_path = "/";
    std::string flag;
    VulnCategory category = VulnCategory::BrokenCryptography;
    Difficulty difficulty = Difficulty::Easy;

    bool operator==(const ChallengeSpec&) const = default;
};

enum class ToolKind
{
    RunCommand,
    RunPython,
};

std::string_view to_string(ToolKind t);
std::optional<ToolKind> tool_from_string(std::string_view s);

struct ToolCall
{
    ToolKind tool = ToolKind::RunCommand;
    std::string payload;
    std::string reason;

    bool operator==(const ToolCall&) const = default;
};

struct Observation
{
    std::string stdout_text;
    std::string stderr_text;
    int exit_code = 0;
    bool truncated = false;
    double wall_time = 0.0;

    bool operator==(const Observation&) const = default;
};

enum class Decision
{
    Accept,
    Reject,
};

std::string_view to_string(Decision d);

struct Verdict
{
    Decision decision = Decision::Accept;
    /// Absent when the judge output could not be parsed (fail-open accept).
    std::optional<double> score;
    std::string feedback;
    bool fail_open = false;

    bool operator==(const Verdict&) const = default;
};

/// Which role issued a model call. Used for cost attribution and by the
/// scripted oracle to route responses.
enum class AgentRole
{
    Executor,
    Evaluator,
    Planner,
    Recon,
    Summarizer,
};

std::string_view to_string(AgentRole r);
std::optional<AgentRole> role_from_string(std::string_view s);

struct TokenUsage
{
    std::int64_t tokens_in = 0;
    std::int64_t tokens_out = 0;

    TokenUsage& operator+=(const TokenUsage& o)
    {
        tokens_in += o.tokens_in;
        tokens_out += o.tokens_out;
        return *this;
    }
    friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) { return a += b; }
    bool operator==(const TokenUsage&) const = default;
};

/// One metered model call.
struct CallRecord
{
    AgentRole role = AgentRole::Executor;
    TokenUsage usage;
    double cost_usd = 0.0;

    bool operator==(const CallRecord&) const = default;
};

struct StepRecord
{
    /// 1-based executed-step counter. A trailing unexecuted record (the run
    /// ended while a proposal was pending) carries steps + 1.
    int index = 0;
    ToolCall proposal;
    /// Earlier proposals for this step, each rejected by the evaluator.
    std::vector<ToolCall> superseded;
    std::vector<Verdict> verdicts;
    std::optional<Observation> observation;
    TokenUsage tokens;
    std::vector<CallRecord> calls;
    std::int64_t started_at_ms = 0;
    std::int64_t ended_at_ms = 0;

    bool executed() const { return observation.has_value(); }
    int rejections() const;

    bool operator==(const StepRecord&) const = default;
};

struct Plan
{
    VulnCategory classified_vulnerability = VulnCategory::BrokenCryptography;
    std::string raw_label;
    std::vector<std::string> strategy;
    std::string recon_summary;

    bool operator==(const Plan&) const = default;
};

enum class RunStatus
{
    FlagCaptured,
    GaveUp,
    StepCapExceeded,
    Error,
};

std::string_view to_string(RunStatus s);
std::optional<RunStatus> run_status_from_string(std::string_view s);

struct RunOutcome
{
    RunStatus status = RunStatus::Error;
    std::optional<std::string> captured_flag;
    int steps = 0;
    int rejections = 0;
    double cost_usd = 0.0;
    double duration_s = 0.0;
    /// Set by the harness after comparing against ground truth.
    std::optional<bool> flag_verified;
    std::string error_message;

    bool operator==(const RunOutcome&) const = default;
};

/// A tool call issued by the recon node. Recorded, never counted as a step.
struct ReconAction
{
    ToolCall call;
    Observation observation;

    bool operator==(const ReconAction&) const = default;
};

struct Trace
{
    std::string run_id;
    std::string challenge_id;
    VulnCategory challenge_category = VulnCategory::BrokenCryptography;
    Difficulty challenge_difficulty = Difficulty::Easy;
    ArchitectureKind architecture = ArchitectureKind::Executor;
    std::string model_id;
    int repetition_index = 1;
    std::string prompt_hash;
    std::optional<Plan> plan;
    std::vector<ReconAction> recon;
    /// Recon and planner calls.
    std::vector<CallRecord> preamble_calls;
    std::vector<StepRecord> steps;
    /// Calls after the last executed step (terminal completion, summaries).
    std::vector<CallRecord> trailing_calls;
    RunOutcome outcome;

    bool operator==(const Trace&) const = default;
};

/// Cost re-summed from every call recorded in the trace.
double recorded_cost(const Trace& t);
int executed_steps(const Trace& t);
int total_rejections(const Trace& t);

/// Checks the structural invariants every trace must satisfy. Returns a
/// description of the first violation, or nullopt.
std::optional<std::string> validate_trace(const Trace& t, int step_cap, int rejection_cap);

/// Returns the text between the first well-formed `FLAG{` (token matched
/// case-insensitively, optional whitespace before the brace) and the first
/// following `}`. Empty bodies are not well-formed.
std::optional<std::string> parse_flag(std::string_view text);

/// Inverse of parse_flag for flags without `}`.
std::string serialize_flag(std::string_view flag);

struct TerminalFlag
{
    std::string value;
    bool operator==(const TerminalFlag&) const = default;
};
struct TerminalGiveUp
{
    bool operator==(const TerminalGiveUp&) const = default;
};
struct NotTerminal
{
    bool operator==(const NotTerminal&) const = default;
};
using TerminalClass = std::variant<TerminalFlag, TerminalGiveUp, NotTerminal>;

/// Flag takes precedence over GIVE_UP; GIVE_UP must be a standalone,
/// case-sensitive token.
TerminalClass classify_terminal(std::string_view text);

std::int64_t now_ms();

} // namespace ctfagent
