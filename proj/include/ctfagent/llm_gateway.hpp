// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/domain.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfagent
{

class GatewayError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};
class AuthError: public GatewayError
{
  public:
    using GatewayError::GatewayError;
};
class RateLimited: public GatewayError
{
  public:
    using GatewayError::GatewayError;
};
class MalformedResponse: public GatewayError
{
  public:
    using GatewayError::GatewayError;
};
class TransportError: public GatewayError
{
  public:
    using GatewayError::GatewayError;
};
class UnknownModel: public GatewayError
{
  public:
    using GatewayError::GatewayError;
};
class ConfigError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

enum class MessageRole
{
    System,
    User,
    Assistant,
    ToolResult,
};

std::string_view to_string(MessageRole r);

struct Message
{
    MessageRole role = MessageRole::User;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct Conversation
{
    /// Which agent built the conversation; not sent to providers.
    AgentRole agent = AgentRole::Executor;
    std::vector<Message> messages;
    /// Whether the run_command/run_python tools are offered.
    bool offer_tools = true;

    /// Last User or ToolResult message, or empty.
    std::string_view last_input() const;
};

/// First message must be System; no two consecutive Assistant messages.
void check_conversation(const Conversation& c);

struct Completion
{
    std::string content;
    std::optional<ToolCall> tool_call;
    TokenUsage usage;

    bool operator==(const Completion&) const = default;
};

struct Sampling
{
    double temperature = 0.0;
    int max_tokens = 4096;
};

/// ceil(characters / 4); the project-wide token estimator.
std::int64_t estimate_tokens(std::string_view text);
std::int64_t estimate_tokens(std::size_t characters);

struct ModelPrice
{
    double usd_per_input_token = 0.0;
    double usd_per_output_token = 0.0;
};

struct PriceTable
{
    std::map<std::string, ModelPrice, std::less<>> models;
};

/// tokens_in * rate_in + tokens_out * rate_out.
double estimate_cost(const TokenUsage& usage, std::string_view model_id, const PriceTable& prices);

/// {"version": 1, "models": {"<id>": {"usd_per_input_token": x, "usd_per_output_token": y}}}
/// Rates may instead be given per million tokens via "usd_per_mtok_in"/"usd_per_mtok_out".
PriceTable load_price_table(const std::filesystem::path& path);
PriceTable parse_price_table(std::string_view json_text);

struct OracleEntry
{
    /// Regex searched in Conversation::last_input(); capture groups are
    /// substituted into the response as {{0}}, {{1}}, ...
    std::optional<std::regex> pattern;
    std::string pattern_source;
    /// Literal substring searched instead of a pattern.
    std::optional<std::string> literal;
    /// Restricts the entry to conversations built by one agent.
    std::optional<AgentRole> agent;
    Completion respond;
};

struct OracleScript
{
    std::vector<OracleEntry> entries;
    Completion fallback;
};

/// Script schema:
/// {
///   "version": 1,
///   "entries": [ {"agent": "executor", "pattern": "regex" | "literal": "text",
///                 "respond": {"content": "...",
///                             "tool_call": {"tool": "run_command", "payload": "...", "reason": "..."}}} ],
///   "default": {"content": "GIVE_UP"}
/// }
OracleScript parse_oracle_script(std::string_view json_text);
OracleScript load_oracle_script(const std::filesystem::path& path);

/// Deterministic, network-free completion: the first entry whose agent
/// filter and matcher accept the conversation wins, otherwise the default.
/// Usage is the token estimate of every message in, and of the response out.
Completion oracle_complete(const OracleScript& script, const Conversation& conversation);

/// Chat-completion backend.
class LlmClient
{
  public:
    virtual ~LlmClient() = default;

    virtual Completion complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling) = 0;
};

class OracleClient final: public LlmClient
{
  public:
    explicit OracleClient(OracleScript script): _script(std::move(script)) {}

    Completion complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling) override;

  private:
    OracleScript _script;
};

struct RetryPolicy
{
    int attempts = 3;
    std::chrono::milliseconds base_delay {1000};
    double factor = 2.0;
    /// Injected for tests.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Invokes `fn`, retrying RateLimited/TransportError with exponential backoff.
Completion with_retries(const RetryPolicy& policy, const std::function<Completion()>& fn);

struct HttpProviderConfig
{
    /// e.g. https://api.openai.com/v1
    std::string base_url;
    std::string api_key;
    std::chrono::seconds timeout {300};
    RetryPolicy retry;
};

/// Reads CTFAGENT_API_BASE / CTFAGENT_API_KEY, falling back to
/// OPENAI_BASE_URL / OPENAI_API_KEY.
HttpProviderConfig http_provider_from_env();

/// OpenAI-compatible /chat/completions client.
class HttpChatClient final: public LlmClient
{
  public:
    explicit HttpChatClient(HttpProviderConfig config);

    Completion complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling) override;

    /// Request body sent for a conversation; exposed for tests.
    static std::string build_request(const Conversation& conversation, const std::string& model_id, const Sampling& sampling);
    /// Maps a provider response body into a Completion.
    static Completion parse_response(std::string_view body, const Conversation& conversation);

  private:
    HttpProviderConfig _config;
};

/// Decorator that prices every call and records it for later attribution.
class MeteredClient final: public LlmClient
{
  public:
    MeteredClient(LlmClient& inner, PriceTable prices): _inner(inner), _prices(std::move(prices)) {}

    Completion complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling) override;

    /// Returns and clears the calls recorded since the last drain.
    std::vector<CallRecord> drain();

  private:
    LlmClient& _inner;
    PriceTable _prices;
    std::mutex _mutex;
    std::vector<CallRecord> _pending;
};

} // namespace ctfagent
