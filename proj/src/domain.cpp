// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/domain.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <utility>

namespace ctfagent
{

namespace
{

constexpr std::array<std::pair<VulnCategory, std::string_view>, kVulnCategoryCount> kCategoryNames = {{
    {VulnCategory::BrokenCryptography, "Broken Cryptography"},
    {VulnCategory::InsecureDirectObjectReference, "Insecure Direct Object Reference"},
    {VulnCategory::InsecureDesign, "Insecure Design"},
    {VulnCategory::JsonWebTokenVulnerability, "JSON Web Token Vulnerability"},
    {VulnCategory::NoSqlInjection, "No SQL Injection"},
    {VulnCategory::PathTraversal, "Path Traversal"},
    {VulnCategory::SecureShellRelated, "Secure Shell-related"},
    {VulnCategory::ServerSideRequestForgery, "Server-Side Request Forgery"},
    {VulnCategory::XmlExternalEntityInjection, "XML External Entity Injection"},
    {VulnCategory::CrossSiteScripting, "Cross Site Scripting"},
    {VulnCategory::CommandInjection, "Command Injection"},
    {VulnCategory::BlindSqlInjection, "Blind SQL Injection"},
    {VulnCategory::BusinessLogic, "Business Logic"},
    {VulnCategory::RaceCondition, "Race Condition"},
}};

// Normalized alias -> category. Keys are lowercase words separated by
// single spaces.
const std::vector<std::pair<std::string_view, VulnCategory>>& aliases()
{
    static const std::vector<std::pair<std::string_view, VulnCategory>> table = {
        {"crypto", VulnCategory::BrokenCryptography},
        {"broken crypto", VulnCategory::BrokenCryptography},
        {"weak cryptography", VulnCategory::BrokenCryptography},
        {"cryptographic failure", VulnCategory::BrokenCryptography},
        {"cryptographic failures", VulnCategory::BrokenCryptography},
        {"idor", VulnCategory::InsecureDirectObjectReference},
        {"insecure direct object references", VulnCategory::InsecureDirectObjectReference},
        {"broken access control", VulnCategory::InsecureDirectObjectReference},
        {"jwt", VulnCategory::JsonWebTokenVulnerability},
        {"json web token", VulnCategory::JsonWebTokenVulnerability},
        {"nosql", VulnCategory::NoSqlInjection},
        {"nosqli", VulnCategory::NoSqlInjection},
        {"nosql injection", VulnCategory::NoSqlInjection},
        {"lfi", VulnCategory::PathTraversal},
        {"local file inclusion", VulnCategory::PathTraversal},
        {"directory traversal", VulnCategory::PathTraversal},
        {"file inclusion", VulnCategory::PathTraversal},
        {"ssh", VulnCategory::SecureShellRelated},
        {"secure shell", VulnCategory::SecureShellRelated},
        {"ssrf", VulnCategory::ServerSideRequestForgery},
        {"server side request forgery", VulnCategory::ServerSideRequestForgery},
        {"xxe", VulnCategory::XmlExternalEntityInjection},
        {"xml external entity", VulnCategory::XmlExternalEntityInjection},
        {"xss", VulnCategory::CrossSiteScripting},
        {"cross site scripting", VulnCategory::CrossSiteScripting},
        {"rce", VulnCategory::CommandInjection},
        {"cmdi", VulnCategory::CommandInjection},
        {"os command injection", VulnCategory::CommandInjection},
        {"shell injection", VulnCategory::CommandInjection},
        {"remote code execution", VulnCategory::CommandInjection},
        {"sqli", VulnCategory::BlindSqlInjection},
        {"sql injection", VulnCategory::BlindSqlInjection},
        {"blind sqli", VulnCategory::BlindSqlInjection},
        {"business logic flaw", VulnCategory::BusinessLogic},
        {"logic flaw", VulnCategory::BusinessLogic},
        {"race", VulnCategory::RaceCondition},
        {"toctou", VulnCategory::RaceCondition},
    };
    return table;
}

std::string normalize_label(std::string_view s)
{
    std::string out;
    bool pending_space = false;
    for (char ch: s)
    {
        auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c))
        {
            if (pending_space && !out.empty())
                out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        }
        else
        {
            pending_space = true;
        }
    }
    return out;
}

bool contains_words(const std::string& haystack, std::string_view needle)
{
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos)
    {
        bool left = pos == 0 || haystack[pos - 1] == ' ';
        std::size_t end = pos + needle.size();
        bool right = end == haystack.size() || haystack[end] == ' ';
        if (left && right)
            return true;
        ++pos;
    }
    return false;
}

std::size_t edit_distance(std::string_view a, std::string_view b)
{
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j)
        row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i)
    {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
        {
            std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

bool is_word_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

} // namespace

const std::array<VulnCategory, kVulnCategoryCount>& all_categories()
{
    static const auto cats = [] {
        std::array<VulnCategory, kVulnCategoryCount> out {};
        for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
            out[i] = kCategoryNames[i].first;
        return out;
    }();
    return cats;
}

std::string_view to_string(VulnCategory c)
{
    for (const auto& [cat, name]: kCategoryNames)
        if (cat == c)
            return name;
    return "?";
}

std::optional<VulnCategory> category_from_string(std::string_view s)
{
    for (const auto& [cat, name]: kCategoryNames)
        if (name == s)
            return cat;
    return std::nullopt;
}

VulnCategory coerce_category(std::string_view label)
{
    const std::string norm = normalize_label(label);

    for (const auto& [cat, name]: kCategoryNames)
        if (normalize_label(name) == norm)
            return cat;
    for (const auto& [alias, cat]: aliases())
        if (alias == norm)
            return cat;

    // Longest canonical name or alias appearing as whole words in the label.
    std::optional<VulnCategory> best;
    std::size_t best_len = 0;
    auto consider = [&](std::string_view needle, VulnCategory cat) {
        if (needle.size() > best_len && contains_words(norm, needle))
        {
            best = cat;
            best_len = needle.size();
        }
    };
    for (const auto& [cat, name]: kCategoryNames)
        consider(normalize_label(name), cat);
    for (const auto& [alias, cat]: aliases())
        consider(alias, cat);
    if (best)
        return *best;

    VulnCategory nearest = kCategoryNames[0].first;
    std::size_t nearest_dist = std::string::npos;
    auto measure = [&](std::string_view candidate, VulnCategory cat) {
        std::size_t d = edit_distance(norm, candidate);
        if (d < nearest_dist)
        {
            nearest_dist = d;
            nearest = cat;
        }
    };
    for (const auto& [cat, name]: kCategoryNames)
        measure(normalize_label(name), cat);
    for (const auto& [alias, cat]: aliases())
        measure(alias, cat);
    return nearest;
}

std::string_view to_string(Difficulty d)
{
    switch (d)
    {
        case Difficulty::Easy: return "Easy";
        case Difficulty::Medium: return "Medium";
        case Difficulty::Hard: return "Hard";
    }
    return "?";
}

std::optional<Difficulty> difficulty_from_string(std::string_view s)
{
    if (s == "Easy")
        return Difficulty::Easy;
    if (s == "Medium")
        return Difficulty::Medium;
    if (s == "Hard")
        return Difficulty::Hard;
    return std::nullopt;
}

std::string_view to_string(ArchitectureKind a)
{
    switch (a)
    {
        case ArchitectureKind::Executor: return "Executor";
        case ArchitectureKind::ExecutorEvaluator: return "ExecutorEvaluator";
        case ArchitectureKind::PlannerExecutorEvaluator: return "PlannerExecutorEvaluator";
    }
    return "?";
}

std::string_view short_code(ArchitectureKind a)
{
    switch (a)
    {
        case ArchitectureKind::Executor: return "e";
        case ArchitectureKind::ExecutorEvaluator: return "ee";
        case ArchitectureKind::PlannerExecutorEvaluator: return "pee";
    }
    return "?";
}

std::optional<ArchitectureKind> architecture_from_string(std::string_view s)
{
    for (auto a: kAllArchitectures)
        if (s == to_string(a) || s == short_code(a))
            return a;
    return std::nullopt;
}

std::string_view to_string(ToolKind t)
{
    return t == ToolKind::RunCommand ? "run_command" : "run_python";
}

std::optional<ToolKind> tool_from_string(std::string_view s)
{
    if (s == "run_command")
        return ToolKind::RunCommand;
    if (s == "run_python")
        return ToolKind::RunPython;
    return std::nullopt;
}

std::string_view to_string(Decision d)
{
    return d == Decision::Accept ? "Accept" : "Reject";
}

std::string_view to_string(AgentRole r)
{
    switch (r)
    {
        case AgentRole::Executor: return "executor";
        case AgentRole::Evaluator: return "evaluator";
        case AgentRole::Planner: return "planner";
        case AgentRole::Recon: return "recon";
        case AgentRole::Summarizer: return "summarizer";
    }
    return "?";
}

std::optional<AgentRole> role_from_string(std::string_view s)
{
    for (auto r: {AgentRole::Executor, AgentRole::Evaluator, AgentRole::Planner, AgentRole::Recon, AgentRole::Summarizer})
        if (to_string(r) == s)
            return r;
    return std::nullopt;
}

std::string_view to_string(RunStatus s)
{
    switch (s)
    {
        case RunStatus::FlagCaptured: return "FlagCaptured";
        case RunStatus::GaveUp: return "GaveUp";
        case RunStatus::StepCapExceeded: return "StepCapExceeded";
        case RunStatus::Error: return "Error";
    }
    return "?";
}

std::optional<RunStatus> run_status_from_string(std::string_view s)
{
    for (auto st: {RunStatus::FlagCaptured, RunStatus::GaveUp, RunStatus::StepCapExceeded, RunStatus::Error})
        if (to_string(st) == s)
            return st;
    return std::nullopt;
}

int StepRecord::rejections() const
{
    return static_cast<int>(std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) {
        return v.decision == Decision::Reject;
    }));
}

double recorded_cost(const Trace& t)
{
    double sum = 0.0;
    for (const auto& c: t.preamble_calls)
        sum += c.cost_usd;
    for (const auto& s: t.steps)
        for (const auto& c: s.calls)
            sum += c.cost_usd;
    for (const auto& c: t.trailing_calls)
        sum += c.cost_usd;
    return sum;
}

int executed_steps(const Trace& t)
{
    return static_cast<int>(std::count_if(t.steps.begin(), t.steps.end(), [](const StepRecord& s) {
        return s.executed();
    }));
}

int total_rejections(const Trace& t)
{
    int n = 0;
    for (const auto& s: t.steps)
        n += s.rejections();
    return n;
}

std::optional<std::string> validate_trace(const Trace& t, int step_cap, int rejection_cap)
{
    const int executed = executed_steps(t);
    if (t.outcome.steps != executed)
        return fmt::format("outcome.steps {} != executed records {}", t.outcome.steps, executed);
    if (t.outcome.rejections != total_rejections(t))
        return fmt::format("outcome.rejections {} != recorded rejections {}", t.outcome.rejections, total_rejections(t));
    if (t.outcome.steps > step_cap)
        return fmt::format("steps {} exceed cap {}", t.outcome.steps, step_cap);
    if (t.outcome.status == RunStatus::StepCapExceeded && t.outcome.steps != step_cap)
        return "StepCapExceeded with steps != cap";
    if (t.outcome.status == RunStatus::FlagCaptured && !t.outcome.captured_flag)
        return "FlagCaptured without a captured flag";
    if (t.outcome.cost_usd < 0.0 || t.outcome.duration_s < 0.0)
        return "negative cost or duration";

    int expected_index = 1;
    for (std::size_t i = 0; i < t.steps.size(); ++i)
    {
        const auto& s = t.steps[i];
        if (s.index != expected_index)
            return fmt::format("step record {} has index {}, expected {}", i, s.index, expected_index);
        if (!s.executed() && i + 1 != t.steps.size())
            return "unexecuted step record before the end of the trace";
        if (s.executed())
            ++expected_index;

        if (s.rejections() > rejection_cap)
            return fmt::format("step {} has {} rejections", s.index, s.rejections());
        // Rejections first, at most one trailing accept.
        for (std::size_t v = 0; v < s.verdicts.size(); ++v)
        {
            if (s.verdicts[v].decision == Decision::Accept && v + 1 != s.verdicts.size())
                return fmt::format("step {} has a verdict after an accept", s.index);
            if (s.verdicts[v].decision == Decision::Reject && s.verdicts[v].feedback.empty())
                return fmt::format("step {} has a reject without feedback", s.index);
        }
        // Each verdict judges one proposal: superseded ones, then the final.
        if (!s.verdicts.empty() && s.verdicts.size() != s.superseded.size() + 1)
            return fmt::format("step {} superseded/verdict count mismatch", s.index);
        if (s.verdicts.empty() && !s.superseded.empty())
            return fmt::format("step {} has superseded proposals without verdicts", s.index);
        if (s.proposal.reason.empty())
            return fmt::format("step {} proposal has no reason", s.index);
    }
    if (t.architecture == ArchitectureKind::Executor)
        for (const auto& s: t.steps)
            if (!s.verdicts.empty())
                return "Executor architecture trace contains verdicts";
    if (t.plan && t.architecture != ArchitectureKind::PlannerExecutorEvaluator)
        return "plan present outside the planner architecture";
    return std::nullopt;
}

std::optional<std::string> parse_flag(std::string_view text)
{
    static constexpr std::string_view token = "flag";
    for (std::size_t i = 0; i + token.size() <= text.size(); ++i)
    {
        bool match = true;
        for (std::size_t k = 0; k < token.size(); ++k)
        {
            if (std::tolower(static_cast<unsigned char>(text[i + k])) != token[k])
            {
                match = false;
                break;
            }
        }
        if (!match)
            continue;
        std::size_t j = i + token.size();
        while (j < text.size() && (text[j] == ' ' || text[j] == '\t'))
            ++j;
        if (j >= text.size() || text[j] != '{')
            continue;
        std::size_t close = text.find('}', j + 1);
        if (close == std::string_view::npos)
            return std::nullopt;
        if (close == j + 1)
            continue;
        return std::string(text.substr(j + 1, close - j - 1));
    }
    return std::nullopt;
}

std::string serialize_flag(std::string_view flag)
{
    return fmt::format("FLAG{{{}}}", flag);
}

TerminalClass classify_terminal(std::string_view text)
{
    if (auto flag = parse_flag(text))
        return TerminalFlag {std::move(*flag)};
    static constexpr std::string_view give_up = "GIVE_UP";
    std::size_t pos = 0;
    while ((pos = text.find(give_up, pos)) != std::string_view::npos)
    {
        bool left = pos == 0 || !is_word_char(text[pos - 1]);
        std::size_t end = pos + give_up.size();
        bool right = end == text.size() || !is_word_char(text[end]);
        if (left && right)
            return TerminalGiveUp {};
        ++pos;
    }
    return NotTerminal {};
}

std::int64_t now_ms()
{
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

} // namespace ctfagent
