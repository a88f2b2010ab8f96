// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/agents.hpp"

#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <openssl/evp.h>
#include <regex>
#include <sstream>

namespace ctfagent
{

using json = nlohmann::json;

namespace
{

constexpr std::string_view kPlanFormatReminder =
    "Your previous reply could not be parsed. Reply with a JSON object only: "
    "{\"vuln\": \"<label>\", \"steps\": [\"<step>\", ...]}";
constexpr std::string_view kReconBudgetNote = "\n\n(Reconnaissance budget exhausted: reply now with your report and no tool call.)";

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw ConfigError(fmt::format("cannot read prompt asset {}", p.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string s)
{
    auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return {};
    auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

// Outermost {...} span in free text, tolerant of code fences around it.
std::optional<json> extract_json_object(std::string_view text)
{
    auto open = text.find('{');
    auto close = text.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        return std::nullopt;
    try
    {
        auto j = json::parse(text.substr(open, close - open + 1));
        if (j.is_object())
            return j;
    }
    catch (const json::parse_error&)
    {
    }
    return std::nullopt;
}

MessageRole role_for(EntryKind k)
{
    switch (k)
    {
        case EntryKind::Thought:
        case EntryKind::Action: return MessageRole::Assistant;
        case EntryKind::Observation: return MessageRole::ToolResult;
        default: return MessageRole::User;
    }
}

void replay_pad(Conversation& conv, const Scratchpad& pad)
{
    for (const auto& e: pad.entries())
    {
        const MessageRole role = role_for(e.kind);
        std::string text = e.kind == EntryKind::Thought || e.kind == EntryKind::Action || e.kind == EntryKind::Observation
            ? e.text
            : fmt::format("[{}] {}", to_string(e.kind), e.text);
        if (role == MessageRole::Assistant && !conv.messages.empty() && conv.messages.back().role == MessageRole::Assistant)
            conv.messages.back().content += "\n" + text;
        else
            conv.messages.push_back({role, std::move(text)});
    }
}

void record_completion(Scratchpad& pad, const Completion& c)
{
    if (!c.content.empty())
        pad.append({EntryKind::Thought, c.content});
    if (c.tool_call)
        pad.append({EntryKind::Action, render_tool_call(*c.tool_call)});
}

} // namespace

std::string sha256_hex(std::string_view data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i)
        out += fmt::format("{:02x}", digest[i]);
    return out;
}

std::string PromptAssets::hash() const
{
    std::string blob;
    for (const std::string* s: {&version, &system_prompt, &evaluator_prompt, &planner_prompt, &recon_prompt, &summarize_prompt})
    {
        blob += std::to_string(s->size());
        blob += ':';
        blob += *s;
    }
    return sha256_hex(blob);
}

void validate_prompt_assets(const PromptAssets& assets)
{
    if (assets.system_prompt.find("FLAG{") == std::string::npos)
        throw ConfigError("system prompt lacks the FLAG{ exit token");
    if (assets.system_prompt.find("GIVE_UP") == std::string::npos)
        throw ConfigError("system prompt lacks the GIVE_UP exit token");
    for (const std::string* s: {&assets.evaluator_prompt, &assets.planner_prompt, &assets.recon_prompt, &assets.summarize_prompt})
        if (s->empty())
            throw ConfigError("empty prompt asset");
}

PromptAssets load_prompt_assets(const std::filesystem::path& dir)
{
    PromptAssets a;
    a.version = trim(read_text(dir / "VERSION"));
    a.system_prompt = read_text(dir / "system.txt");
    a.evaluator_prompt = read_text(dir / "evaluator.txt");
    a.planner_prompt = read_text(dir / "planner.txt");
    a.recon_prompt = read_text(dir / "recon.txt");
    a.summarize_prompt = read_text(dir / "summarize.txt");
    validate_prompt_assets(a);
    return a;
}

std::filesystem::path default_asset_dir()
{
    if (const char* env = std::getenv("CTFAGENT_ASSETS"); env && *env)
        return env;
#ifdef CTFAGENT_ASSET_DIR
    return CTFAGENT_ASSET_DIR;
#else
    return "assets";
#endif
}

std::string render_tool_call(const ToolCall& call)
{
    return fmt::format("{}: {}\nreason: {}", to_string(call.tool), call.payload, call.reason);
}

std::string render_observation(const Observation& obs)
{
    std::string out = fmt::format("exit_code: {}", obs.exit_code);
    if (!obs.stdout_text.empty())
        out += "\nstdout:\n" + obs.stdout_text;
    if (!obs.stderr_text.empty())
        out += "\nstderr:\n" + obs.stderr_text;
    if (obs.truncated)
        out += "\n(output truncated)";
    return out;
}

std::string render_plan(const Plan& plan)
{
    std::string out = fmt::format("Vulnerability: {}\nStrategy:", to_string(plan.classified_vulnerability));
    for (std::size_t i = 0; i < plan.strategy.size(); ++i)
        out += fmt::format("\n{}. {}", i + 1, plan.strategy[i]);
    return out;
}

Conversation build_executor_conversation(const Scratchpad& pad, const PromptAssets& assets, const std::optional<Plan>& plan,
                                         const AgentContext& ctx)
{
    Conversation conv;
    conv.agent = AgentRole::Executor;
    conv.messages.push_back({MessageRole::System, assets.system_prompt});
    std::string task = fmt::format("The target is available at {} (exported as $TARGET_URL).", ctx.target_url);
    if (plan)
        task += "\n\nAttack plan:\n" + render_plan(*plan);
    conv.messages.push_back({MessageRole::User, std::move(task)});
    replay_pad(conv, pad);
    return conv;
}

ExecutorDecision executor_step(Scratchpad& pad, const PromptAssets& assets, const std::optional<Plan>& plan, LlmClient& llm,
                               const AgentContext& ctx)
{
    const Conversation conv = build_executor_conversation(pad, assets, plan, ctx);
    Completion c = llm.complete(conv, ctx.model_id, ctx.sampling);
    record_completion(pad, c);

    auto terminal = classify_terminal(c.content);
    if (auto* flag = std::get_if<TerminalFlag>(&terminal))
        return Terminal {flag->value};
    if (std::holds_alternative<TerminalGiveUp>(terminal))
        return Terminal {std::nullopt};
    if (c.tool_call)
    {
        if (c.tool_call->reason.empty())
            throw MalformedCompletion("tool call without a reason");
        return Propose {*c.tool_call};
    }
    throw MalformedCompletion("reply has neither a tool call nor a terminal token");
}

std::optional<Verdict> parse_verdict(std::string_view text, double threshold)
{
    std::optional<double> score;
    std::string feedback;
    if (auto j = extract_json_object(text))
    {
        if (j->contains("score") && (*j)["score"].is_number())
            score = (*j)["score"].get<double>();
        if (j->contains("feedback") && (*j)["feedback"].is_string())
            feedback = (*j)["feedback"].get<std::string>();
    }
    if (!score)
    {
        const std::string s(text);
        std::smatch m;
        static const std::regex score_re(R"([Ss]core\s*[:=]\s*([0-9]*\.?[0-9]+))");
        static const std::regex feedback_re(R"([Ff]eedback\s*[:=]\s*([\s\S]+))");
        if (std::regex_search(s, m, score_re))
            score = std::stod(m[1].str());
        if (std::regex_search(s, m, feedback_re))
            feedback = m[1].str();
    }
    if (!score || !(*score >= 0.0 && *score <= 1.0))
        return std::nullopt;

    Verdict v;
    v.score = score;
    v.feedback = trim(feedback);
    v.decision = *score < threshold ? Decision::Reject : Decision::Accept;
    if (v.decision == Decision::Reject && v.feedback.empty())
        v.feedback = "The evaluator scored this action below the acceptance threshold; reconsider the approach.";
    return v;
}

Verdict evaluate_action(const ToolCall& proposal, const std::optional<Observation>& last_observation,
                        const std::optional<Plan>& plan, const PromptAssets& assets, LlmClient& llm, const AgentContext& ctx)
{
    if (proposal.reason.empty())
        throw PreconditionError("proposal has no reason");

    Conversation conv;
    conv.agent = AgentRole::Evaluator;
    conv.offer_tools = false;
    conv.messages.push_back({MessageRole::System, assets.evaluator_prompt});
    std::string body = fmt::format("Proposed action:\n{}", render_tool_call(proposal));
    if (last_observation)
        body += "\n\nLast observation:\n" + render_observation(*last_observation);
    if (plan)
        body += "\n\nAttack plan:\n" + render_plan(*plan);
    conv.messages.push_back({MessageRole::User, std::move(body)});

    Completion c = llm.complete(conv, ctx.model_id, ctx.sampling);
    if (auto v = parse_verdict(c.content, ctx.evaluator_threshold))
        return *v;
    Verdict open;
    open.decision = Decision::Accept;
    open.fail_open = true;
    return open;
}

ReconReport run_recon(const ToolRunner& runner, const PromptAssets& assets, LlmClient& llm, int recon_step_cap,
                      const AgentContext& ctx)
{
    if (recon_step_cap < 1)
        throw PreconditionError("recon step cap must be at least 1");

    ReconReport report;
    Scratchpad pad;
    auto conversation = [&] {
        Conversation conv;
        conv.agent = AgentRole::Recon;
        conv.messages.push_back({MessageRole::System, assets.recon_prompt});
        conv.messages.push_back({MessageRole::User, fmt::format("Target: {} (exported as $TARGET_URL).", ctx.target_url)});
        replay_pad(conv, pad);
        return conv;
    };

    while (static_cast<int>(report.actions.size()) < recon_step_cap)
    {
        Completion c = llm.complete(conversation(), ctx.model_id, ctx.sampling);
        if (!c.tool_call)
        {
            report.summary = trim(c.content);
            if (!report.summary.empty())
                return report;
            break;
        }
        record_completion(pad, c);
        Observation obs = runner(*c.tool_call);
        pad.append({EntryKind::Observation, render_observation(obs)});
        report.actions.push_back({*c.tool_call, std::move(obs)});
    }

    report.cap_exhausted = static_cast<int>(report.actions.size()) >= recon_step_cap;
    if (report.cap_exhausted)
    {
        Conversation conv = conversation();
        conv.offer_tools = false;
        if (conv.messages.back().role == MessageRole::ToolResult)
            conv.messages.back().content += kReconBudgetNote;
        else
            conv.messages.push_back({MessageRole::User, std::string(trim(std::string(kReconBudgetNote)))});
        Completion c = llm.complete(conv, ctx.model_id, ctx.sampling);
        report.summary = trim(c.content);
    }
    if (report.summary.empty())
    {
        // Whatever was gathered stands in for the report.
        for (const auto& a: report.actions)
            report.summary += fmt::format("{}\n{}\n\n", render_tool_call(a.call), render_observation(a.observation).substr(0, 2000));
        report.summary = trim(report.summary);
        if (report.summary.empty())
            report.summary = "(no reconnaissance data gathered)";
    }
    return report;
}

std::optional<Plan> parse_plan(std::string_view text, const std::string& recon_summary)
{
    auto j = extract_json_object(text);
    if (!j)
        return std::nullopt;
    std::string label;
    for (const char* key: {"vuln", "vulnerability", "classified_vulnerability"})
        if (j->contains(key) && (*j)[key].is_string())
        {
            label = (*j)[key].get<std::string>();
            break;
        }
    const json* steps = nullptr;
    for (const char* key: {"steps", "strategy"})
        if (j->contains(key) && (*j)[key].is_array())
        {
            steps = &(*j)[key];
            break;
        }
    if (label.empty() || !steps)
        return std::nullopt;

    Plan plan;
    plan.raw_label = label;
    plan.classified_vulnerability = coerce_category(label);
    plan.recon_summary = recon_summary;
    for (const auto& s: *steps)
        if (s.is_string() && !trim(s.get<std::string>()).empty())
            plan.strategy.push_back(s.get<std::string>());
    if (plan.strategy.empty())
        return std::nullopt;
    return plan;
}

Plan make_plan(const std::string& recon_summary, const PromptAssets& assets, LlmClient& llm, const AgentContext& ctx)
{
    if (trim(recon_summary).empty())
        throw PreconditionError("recon summary is empty");

    Conversation conv;
    conv.agent = AgentRole::Planner;
    conv.offer_tools = false;
    conv.messages.push_back({MessageRole::System, assets.planner_prompt});
    conv.messages.push_back({MessageRole::User, "Reconnaissance report:\n" + recon_summary});

    Completion first = llm.complete(conv, ctx.model_id, ctx.sampling);
    if (auto plan = parse_plan(first.content, recon_summary))
        return *plan;

    conv.messages.push_back({MessageRole::Assistant, first.content.empty() ? std::string("(empty reply)") : first.content});
    conv.messages.push_back({MessageRole::User, std::string(kPlanFormatReminder)});
    Completion second = llm.complete(conv, ctx.model_id, ctx.sampling);
    if (auto plan = parse_plan(second.content, recon_summary))
        return *plan;
    throw UnparseablePlan("planner reply could not be parsed after one retry");
}

} // namespace ctfagent
