// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/llm_gateway.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

namespace ctfagent
{

using json = nlohmann::json;

namespace
{

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string substitute_captures(const std::string& text, const std::smatch* m)
{
    if (!m || text.find("{{") == std::string::npos)
        return text;
    std::string out;
    std::size_t i = 0;
    while (i < text.size())
    {
        if (text.compare(i, 2, "{{") == 0)
        {
            std::size_t close = text.find("}}", i + 2);
            if (close != std::string::npos)
            {
                std::string idx = text.substr(i + 2, close - i - 2);
                bool numeric = !idx.empty() && idx.find_first_not_of("0123456789") == std::string::npos;
                if (numeric)
                {
                    std::size_t n = std::stoul(idx);
                    if (n < m->size())
                        out += (*m)[n].str();
                    i = close + 2;
                    continue;
                }
            }
        }
        out.push_back(text[i++]);
    }
    return out;
}

Completion parse_completion(const json& j)
{
    Completion c;
    c.content = j.value("content", "");
    if (j.contains("tool_call") && !j["tool_call"].is_null())
    {
        const auto& tc = j["tool_call"];
        auto tool = tool_from_string(tc.value("tool", "run_command"));
        if (!tool)
            throw ConfigError(fmt::format("unknown tool '{}' in oracle script", tc.value("tool", "")));
        c.tool_call = ToolCall {*tool, tc.value("payload", ""), tc.value("reason", "")};
    }
    return c;
}

} // namespace

std::string_view to_string(MessageRole r)
{
    switch (r)
    {
        case MessageRole::System: return "system";
        case MessageRole::User: return "user";
        case MessageRole::Assistant: return "assistant";
        case MessageRole::ToolResult: return "tool";
    }
    return "?";
}

std::string_view Conversation::last_input() const
{
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->role == MessageRole::User || it->role == MessageRole::ToolResult)
            return it->content;
    return {};
}

void check_conversation(const Conversation& c)
{
    if (c.messages.empty())
        throw PreconditionError("conversation is empty");
    if (c.messages.front().role != MessageRole::System)
        throw PreconditionError("conversation must start with a system message");
    for (std::size_t i = 1; i < c.messages.size(); ++i)
        if (c.messages[i].role == MessageRole::Assistant && c.messages[i - 1].role == MessageRole::Assistant)
            throw PreconditionError("conversation has consecutive assistant messages");
}

std::int64_t estimate_tokens(std::size_t characters)
{
    return static_cast<std::int64_t>((characters + 3) / 4);
}

std::int64_t estimate_tokens(std::string_view text)
{
    return estimate_tokens(text.size());
}

double estimate_cost(const TokenUsage& usage, std::string_view model_id, const PriceTable& prices)
{
    auto it = prices.models.find(model_id);
    if (it == prices.models.end())
        throw UnknownModel(fmt::format("no price configured for model '{}'", model_id));
    if (usage.tokens_in < 0 || usage.tokens_out < 0)
        throw PreconditionError("negative token usage");
    return static_cast<double>(usage.tokens_in) * it->second.usd_per_input_token
        + static_cast<double>(usage.tokens_out) * it->second.usd_per_output_token;
}

PriceTable parse_price_table(std::string_view json_text)
{
    json j;
    try
    {
        j = json::parse(json_text);
    }
    catch (const json::parse_error& e)
    {
        throw ConfigError(fmt::format("price table: {}", e.what()));
    }
    if (j.value("version", 0) != 1)
        throw ConfigError("price table: unsupported version");
    PriceTable table;
    for (const auto& [model, rates]: j.at("models").items())
    {
        ModelPrice p;
        if (rates.contains("usd_per_mtok_in") || rates.contains("usd_per_mtok_out"))
        {
            p.usd_per_input_token = rates.value("usd_per_mtok_in", 0.0) / 1e6;
            p.usd_per_output_token = rates.value("usd_per_mtok_out", 0.0) / 1e6;
        }
        else
        {
            p.usd_per_input_token = rates.value("usd_per_input_token", 0.0);
            p.usd_per_output_token = rates.value("usd_per_output_token", 0.0);
        }
        if (p.usd_per_input_token < 0.0 || p.usd_per_output_token < 0.0)
            throw ConfigError(fmt::format("price table: negative rate for '{}'", model));
        table.models.emplace(model, p);
    }
    return table;
}

PriceTable load_price_table(const std::filesystem::path& path)
{
    return parse_price_table(read_file(path));
}

OracleScript parse_oracle_script(std::string_view json_text)
{
    json j;
    try
    {
        j = json::parse(json_text);
    }
    catch (const json::parse_error& e)
    {
        throw ConfigError(fmt::format("oracle script: {}", e.what()));
    }
    if (j.value("version", 0) != 1)
        throw ConfigError("oracle script: unsupported version");

    OracleScript script;
    for (const auto& e: j.value("entries", json::array()))
    {
        OracleEntry entry;
        if (e.contains("pattern"))
        {
            entry.pattern_source = e.at("pattern").get<std::string>();
            try
            {
                entry.pattern.emplace(entry.pattern_source, std::regex::ECMAScript);
            }
            catch (const std::regex_error& err)
            {
                throw ConfigError(fmt::format("oracle script: bad pattern '{}': {}", entry.pattern_source, err.what()));
            }
        }
        if (e.contains("literal"))
            entry.literal = e.at("literal").get<std::string>();
        if (e.contains("agent"))
        {
            entry.agent = role_from_string(e.at("agent").get<std::string>());
            if (!entry.agent)
                throw ConfigError(fmt::format("oracle script: unknown agent '{}'", e.at("agent").dump()));
        }
        entry.respond = parse_completion(e.at("respond"));
        script.entries.push_back(std::move(entry));
    }
    script.fallback = parse_completion(j.value("default", json {{"content", "GIVE_UP"}}));
    return script;
}

OracleScript load_oracle_script(const std::filesystem::path& path)
{
    return parse_oracle_script(read_file(path));
}

Completion oracle_complete(const OracleScript& script, const Conversation& conversation)
{
    const std::string input(conversation.last_input());

    Completion out = script.fallback;
    for (const auto& entry: script.entries)
    {
        if (entry.agent && *entry.agent != conversation.agent)
            continue;
        if (entry.literal && input.find(*entry.literal) == std::string::npos)
            continue;
        std::smatch match;
        if (entry.pattern && !std::regex_search(input, match, *entry.pattern))
            continue;

        const std::smatch* m = entry.pattern ? &match : nullptr;
        out = entry.respond;
        out.content = substitute_captures(out.content, m);
        if (out.tool_call)
        {
            out.tool_call->payload = substitute_captures(out.tool_call->payload, m);
            out.tool_call->reason = substitute_captures(out.tool_call->reason, m);
        }
        break;
    }

    out.usage = {};
    for (const auto& msg: conversation.messages)
        out.usage.tokens_in += estimate_tokens(msg.content);
    std::size_t out_chars = out.content.size();
    if (out.tool_call)
        out_chars += out.tool_call->payload.size() + out.tool_call->reason.size();
    out.usage.tokens_out = estimate_tokens(out_chars);
    return out;
}

Completion OracleClient::complete(const Conversation& conversation, const std::string&, const Sampling&)
{
    check_conversation(conversation);
    return oracle_complete(_script, conversation);
}

Completion with_retries(const RetryPolicy& policy, const std::function<Completion()>& fn)
{
    auto delay = policy.base_delay;
    for (int attempt = 1;; ++attempt)
    {
        try
        {
            return fn();
        }
        catch (const RateLimited&)
        {
            if (attempt >= policy.attempts)
                throw;
        }
        catch (const TransportError&)
        {
            if (attempt >= policy.attempts)
                throw;
        }
        if (policy.sleep)
            policy.sleep(delay);
        else
            std::this_thread::sleep_for(delay);
        delay = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(delay.count()) * policy.factor));
    }
}

Completion MeteredClient::complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling)
{
    Completion c = _inner.complete(conversation, model_id, sampling);
    CallRecord rec {conversation.agent, c.usage, estimate_cost(c.usage, model_id, _prices)};
    std::lock_guard lock(_mutex);
    _pending.push_back(rec);
    return c;
}

std::vector<CallRecord> MeteredClient::drain()
{
    std::lock_guard lock(_mutex);
    std::vector<CallRecord> out;
    out.swap(_pending);
    return out;
}

} // namespace ctfagent
