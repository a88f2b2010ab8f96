// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/agents.hpp"
#include "ctfagent/llm_gateway.hpp"
#include "ctfagent/orchestrator.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace ctfagent::testing
{

inline std::filesystem::path asset_dir() { return CTFAGENT_TEST_ASSETS; }
inline std::filesystem::path data_dir() { return CTFAGENT_TEST_DATA; }

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, std::string_view text)
{
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

class TempDir
{
  public:
    TempDir()
    {
        std::string tmpl = (std::filesystem::temp_directory_path() / "ctfagent-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data()))
            throw std::runtime_error("mkdtemp failed");
        _path = tmpl;
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return _path; }
    std::filesystem::path operator/(const std::string& s) const { return _path / s; }

  private:
    std::filesystem::path _path;
};

inline const PromptAssets& prompts()
{
    static const PromptAssets assets = load_prompt_assets(asset_dir() / "prompts");
    return assets;
}

inline PriceTable test_prices()
{
    PriceTable t;
    t.models["oracle"] = {1e-6, 2e-6};
    t.models["free"] = {0.0, 0.0};
    return t;
}

inline OracleScript script(const nlohmann::json& j) { return parse_oracle_script(j.dump()); }

inline nlohmann::json tool_entry(const std::string& agent, const std::string& pattern, const std::string& payload,
                                 const std::string& reason = "probe")
{
    nlohmann::json e = {{"pattern", pattern},
                        {"respond", {{"content", ""}, {"tool_call", {{"tool", "run_command"}, {"payload", payload}, {"reason", reason}}}}}};
    if (!agent.empty())
        e["agent"] = agent;
    return e;
}

inline nlohmann::json text_entry(const std::string& agent, const std::string& pattern, const std::string& content)
{
    nlohmann::json e = {{"pattern", pattern}, {"respond", {{"content", content}}}};
    if (!agent.empty())
        e["agent"] = agent;
    return e;
}

/// Recon answers at once, the planner names `vuln`, the judge scores `score`.
inline nlohmann::json preamble_entries(double score, const std::string& vuln = "Insecure Design")
{
    const std::string plan = nlohmann::json {{"vuln", vuln}, {"steps", {"look around"}}}.dump();
    return nlohmann::json::array({
        text_entry("recon", "", "recon done"),
        text_entry("planner", "", plan),
        text_entry("evaluator", "", nlohmann::json {{"score", score}, {"feedback", "not convinced"}}.dump()),
    });
}

/// Executor that proposes a command forever.
inline OracleScript looping_script(double judge_score = 0.9)
{
    nlohmann::json entries = preamble_entries(judge_score);
    entries.push_back(tool_entry("executor", "", "echo step", "keep going"));
    return script({{"version", 1}, {"entries", entries}});
}

/// Judge rejects everything; the executor revises after each feedback.
inline OracleScript rejecting_script()
{
    nlohmann::json entries = preamble_entries(0.0);
    entries.push_back(tool_entry("executor", "^\\[Feedback\\]", "echo revised", "revised after feedback"));
    entries.push_back(tool_entry("executor", "", "echo first", "first idea"));
    return script({{"version", 1}, {"entries", entries}});
}

/// Forwards to an inner client and keeps a copy of every conversation.
class RecordingClient final: public LlmClient
{
  public:
    explicit RecordingClient(LlmClient& inner): _inner(inner) {}

    Completion complete(const Conversation& conversation, const std::string& model_id, const Sampling& sampling) override
    {
        {
            std::lock_guard lock(_mutex);
            seen.push_back(conversation);
        }
        return _inner.complete(conversation, model_id, sampling);
    }

    std::vector<Conversation> seen;

  private:
    LlmClient& _inner;
    std::mutex _mutex;
};

/// Local shell session rooted in a fresh temp dir.
struct LocalShell
{
    TempDir dir;
    ShellSession session;

    explicit LocalShell(const std::string& target_url = "http://127.0.0.1:9")
        : session(make_local_session(dir.path(), target_url))
    {
    }
};

inline RunConfig fast_config()
{
    RunConfig c;
    c.tool_limits.timeout = std::chrono::seconds(10);
    return c;
}

inline ChallengeSpec sample_challenge()
{
    ChallengeSpec c;
    c.id = "sample";
    c.image_ref = "fixture/robots";
    c.category = VulnCategory::InsecureDesign;
    c.difficulty = Difficulty::Easy;
    return c;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len, std::string_view alphabet)
{
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string s(len(rng), ' ');
    for (auto& ch: s)
        ch = alphabet[pick(rng)];
    return s;
}

} // namespace ctfagent::testing
