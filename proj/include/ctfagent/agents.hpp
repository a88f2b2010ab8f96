// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/llm_gateway.hpp"
#include "ctfagent/memory.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <variant>

namespace ctfagent
{

class AgentError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// The executor reply had neither a tool call nor a terminal token.
class MalformedCompletion: public AgentError
{
  public:
    using AgentError::AgentError;
};

class UnparseablePlan: public AgentError
{
  public:
    using AgentError::AgentError;
};

/// Sent back to the executor after a reply with neither a tool call nor a
/// terminal token.
inline constexpr std::string_view kMalformedReminder =
    "Your previous reply contained neither a tool call nor a final answer. Call run_command or run_python with a reason, "
    "reply FLAG{...} with the flag, or reply GIVE_UP.";

struct PromptAssets
{
    std::string version;
    std::string system_prompt;
    std::string evaluator_prompt;
    std::string planner_prompt;
    std::string recon_prompt;
    std::string summarize_prompt;

    /// Hex SHA-256 over the version and every prompt text.
    std::string hash() const;
};

/// Reads VERSION, system.txt, evaluator.txt, planner.txt, recon.txt and
/// summarize.txt from `dir`, then validates them.
PromptAssets load_prompt_assets(const std::filesystem::path& dir);
/// The system prompt must carry the literal exit tokens.
void validate_prompt_assets(const PromptAssets& assets);

/// Directory holding the bundled assets (prompts, oracles, manifest).
std::filesystem::path default_asset_dir();

std::string sha256_hex(std::string_view data);

struct AgentContext
{
    std::string model_id;
    Sampling sampling;
    std::string target_url;
    double evaluator_threshold = 0.5;
};

struct Propose
{
    ToolCall call;
};
struct Terminal
{
    /// A flag, or nullopt for GIVE_UP.
    std::optional<std::string> flag;
};
using ExecutorDecision = std::variant<Propose, Terminal>;

/// Conversation the executor sees: system prompt, task (and plan), then the
/// scratchpad replayed as messages.
Conversation build_executor_conversation(const Scratchpad& pad, const PromptAssets& assets, const std::optional<Plan>& plan,
                                         const AgentContext& ctx);

/// Asks the model for the next move and records the reply in the pad as
/// Thought/Action entries. A flag in the message wins over a co-proposed
/// tool call. Throws MalformedCompletion when the reply is neither.
ExecutorDecision executor_step(Scratchpad& pad, const PromptAssets& assets, const std::optional<Plan>& plan, LlmClient& llm,
                               const AgentContext& ctx);

std::string render_tool_call(const ToolCall& call);
std::string render_observation(const Observation& obs);
std::string render_plan(const Plan& plan);

/// Judges a proposal in isolation: the action, its reason, the latest
/// observation, and the plan when there is one. Malformed judge output
/// fails open (Accept, score absent, fail_open set).
Verdict evaluate_action(const ToolCall& proposal, const std::optional<Observation>& last_observation,
                        const std::optional<Plan>& plan, const PromptAssets& assets, LlmClient& llm, const AgentContext& ctx);

/// Parses {"score": x, "feedback": "..."} (or "score: x" lines).
std::optional<Verdict> parse_verdict(std::string_view text, double threshold);

using ToolRunner = std::function<Observation(const ToolCall&)>;

struct ReconReport
{
    std::string summary;
    std::vector<ReconAction> actions;
    bool cap_exhausted = false;
};

/// Bounded exploration loop. Tool calls go through `runner` and are
/// returned for the trace; a reply without a tool call is the report.
ReconReport run_recon(const ToolRunner& runner, const PromptAssets& assets, LlmClient& llm, int recon_step_cap,
                      const AgentContext& ctx);

/// Parses a planner reply: a JSON object with "vuln" and "steps".
std::optional<Plan> parse_plan(std::string_view text, const std::string& recon_summary);

/// One planner call, one retry with a format reminder, else UnparseablePlan.
Plan make_plan(const std::string& recon_summary, const PromptAssets& assets, LlmClient& llm, const AgentContext& ctx);

} // namespace ctfagent
