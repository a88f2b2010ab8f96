// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/llm_gateway.hpp"

#include <cstdlib>
#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

namespace ctfagent
{

using json = nlohmann::json;

namespace
{

std::string env_or(const char* primary, const char* fallback, std::string def = {})
{
    if (const char* v = std::getenv(primary); v && *v)
        return v;
    if (const char* v = std::getenv(fallback); v && *v)
        return v;
    return def;
}

json tool_schema()
{
    auto tool = [](const char* name, const char* arg, const char* description) {
        return json {
            {"type", "function"},
            {"function",
             {{"name", name},
              {"description", description},
              {"parameters",
               {{"type", "object"},
                {"properties",
                 {{arg, {{"type", "string"}}},
                  {"reason", {{"type", "string"}, {"description", "The reasoning that led to this call."}}}}},
                {"required", json::array({arg, "reason"})}}}}}};
    };
    return json::array({
        tool("run_command", "command", "Run a bash command on the attack host."),
        tool("run_python", "script", "Write and run a Python script on the attack host."),
    });
}

struct SplitUrl
{
    std::string origin;
    std::string prefix;
};

SplitUrl split_base_url(const std::string& url)
{
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError(fmt::format("provider base URL '{}' has no scheme", url));
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/')
        prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

} // namespace

HttpProviderConfig http_provider_from_env()
{
    HttpProviderConfig cfg;
    cfg.base_url = env_or("CTFAGENT_API_BASE", "OPENAI_BASE_URL", "https://api.openai.com/v1");
    cfg.api_key = env_or("CTFAGENT_API_KEY", "OPENAI_API_KEY");
    return cfg;
}

HttpChatClient::HttpChatClient(HttpProviderConfig config): _config(std::move(config)) {}

std::string HttpChatClient::build_request(const Conversation& conversation, const std::string& model_id, const Sampling& sampling)
{
    json messages = json::array();
    for (const auto& m: conversation.messages)
    {
        // Tool output travels as plain user text; prior tool calls are
        // rendered into assistant text, so no call ids are needed.
        std::string_view role = m.role == MessageRole::ToolResult ? "user" : to_string(m.role);
        messages.push_back({{"role", role}, {"content", m.content}});
    }
    json body = {
        {"model", model_id},
        {"messages", messages},
        {"temperature", sampling.temperature},
        {"max_completion_tokens", sampling.max_tokens},
    };
    if (conversation.offer_tools)
    {
        body["tools"] = tool_schema();
        body["tool_choice"] = "auto";
    }
    return body.dump();
}

Completion HttpChatClient::parse_response(std::string_view body, const Conversation& conversation)
{
    json j;
    try
    {
        j = json::parse(body);
    }
    catch (const json::parse_error& e)
    {
        throw MalformedResponse(fmt::format("provider body is not JSON: {}", e.what()));
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw MalformedResponse("provider body has no choices");

    const auto& msg = j["choices"][0].value("message", json::object());
    Completion c;
    if (msg.contains("content") && msg["content"].is_string())
        c.content = msg["content"].get<std::string>();

    if (msg.contains("tool_calls") && msg["tool_calls"].is_array() && !msg["tool_calls"].empty())
    {
        const auto& fn = msg["tool_calls"][0].value("function", json::object());
        auto tool = tool_from_string(fn.value("name", ""));
        if (!tool)
            throw MalformedResponse(fmt::format("unknown tool '{}'", fn.value("name", "")));
        json args;
        try
        {
            args = json::parse(fn.value("arguments", "{}"));
        }
        catch (const json::parse_error&)
        {
            throw MalformedResponse("tool call arguments are not JSON");
        }
        const char* key = *tool == ToolKind::RunCommand ? "command" : "script";
        if (!args.contains(key) || !args[key].is_string())
            throw MalformedResponse(fmt::format("tool call lacks '{}'", key));
        std::string reason = args.contains("reason") && args["reason"].is_string() ? args["reason"].get<std::string>() : "";
        if (reason.empty())
            throw MalformedResponse("tool call lacks a reason");
        c.tool_call = ToolCall {*tool, args[key].get<std::string>(), std::move(reason)};
    }

    if (j.contains("usage") && j["usage"].is_object())
    {
        c.usage.tokens_in = j["usage"].value("prompt_tokens", std::int64_t {0});
        c.usage.tokens_out = j["usage"].value("completion_tokens", std::int64_t {0});
    }
    else
    {
        for (const auto& m: conversation.messages)
            c.usage.tokens_in += estimate_tokens(m.content);
        std::size_t chars = c.content.size();
        if (c.tool_call)
            chars += c.tool_call->payload.size() + c.tool_call->reason.size();
        c.usage.tokens_out = estimate_tokens(chars);
    }
    if (c.usage.tokens_in < 0 || c.usage.tokens_out < 0)
        throw MalformedResponse("negative usage counters");
    return c;
}

Completion HttpChatClient::complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling)
{
    check_conversation(conversation);
    if (_config.api_key.empty())
        throw AuthError("no API key configured (set CTFAGENT_API_KEY or OPENAI_API_KEY)");

    const auto url = split_base_url(_config.base_url);
    const std::string body = build_request(conversation, model_id, sampling);

    return with_retries(_config.retry, [&]() -> Completion {
        httplib::Client cli(url.origin);
        cli.set_connection_timeout(std::chrono::seconds(30));
        cli.set_read_timeout(_config.timeout);
        cli.set_write_timeout(std::chrono::seconds(60));
        cli.set_bearer_token_auth(_config.api_key);

        auto res = cli.Post(url.prefix + "/chat/completions", body, "application/json");
        if (!res)
            throw TransportError(fmt::format("provider request failed: {}", httplib::to_string(res.error())));
        if (res->status == 401 || res->status == 403)
            throw AuthError(fmt::format("provider rejected credentials (HTTP {})", res->status));
        if (res->status == 429)
            throw RateLimited("provider rate limit (HTTP 429)");
        if (res->status >= 500)
            throw TransportError(fmt::format("provider error HTTP {}", res->status));
        if (res->status != 200)
            throw GatewayError(fmt::format("provider returned HTTP {}: {}", res->status, res->body.substr(0, 512)));
        return parse_response(res->body, conversation);
    });
}

} // namespace ctfagent
