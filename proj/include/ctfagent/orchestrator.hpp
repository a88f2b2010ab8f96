// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/agents.hpp"
#include "ctfagent/toolbox.hpp"

#include <filesystem>
#include <string>

namespace ctfagent
{

struct RunConfig
{
    int step_cap = 50;
    int rejection_cap = 3;
    std::int64_t memory_budget = 100'000;
    std::size_t keep_tail = 6;
    ToolLimits tool_limits;
    int recon_step_cap = 8;
    double evaluator_threshold = 0.5;
    Sampling sampling;
    /// Re-asks after a reply with neither tool call nor terminal token.
    int malformed_retries = 1;
    /// Empty means the bundled price table.
    std::string price_table;
    /// Absent means local subprocess sessions.
    std::optional<SshTransport> ssh;
    std::string remote_workdir = "/tmp";
};

/// Fields absent from the JSON keep their defaults.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// CTFAGENT_STEP_CAP, CTFAGENT_REJECTION_CAP, CTFAGENT_TOOL_TIMEOUT_S,
/// CTFAGENT_MEMORY_BUDGET, CTFAGENT_RECON_STEP_CAP, CTFAGENT_TEMPERATURE.
void apply_env_overrides(RunConfig& config);
/// Throws ConfigError on out-of-range values.
void validate_run_config(const RunConfig& config);
std::string describe_run_config(const RunConfig& config);

struct PipelineDescriptor
{
    bool recon = false;
    bool planner = false;
    bool executor = true;
    bool evaluator = false;

    bool operator==(const PipelineDescriptor&) const = default;
};

PipelineDescriptor wire_architecture(ArchitectureKind kind);

struct EpisodeRequest
{
    ArchitectureKind architecture = ArchitectureKind::Executor;
    ChallengeSpec challenge;
    std::string target_url;
    std::string model_id;
    int repetition = 1;
    std::string run_id;
};

/// Runs one episode to a terminal state and returns its trace. Never throws
/// for gateway or transport failures: those end the run with an Error
/// outcome and the partial trace.
Trace run_episode(const EpisodeRequest& request, const RunConfig& config, LlmClient& llm, const PriceTable& prices,
                  const ShellSession& session, const PromptAssets& assets);

} // namespace ctfagent
