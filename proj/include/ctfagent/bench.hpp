// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/metrics.hpp"
#include "ctfagent/orchestrator.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfagent
{

class SchemaError: public std::runtime_error
{
  public:
    SchemaError(std::string what, int line, std::string field)
        : std::runtime_error(std::move(what)), line(line), field(std::move(field))
    {
    }
    /// 1-based; 0 when unknown.
    int line;
    std::string field;
};

class DuplicateId: public std::runtime_error
{
  public:
    explicit DuplicateId(std::string id)
        : std::runtime_error("duplicate challenge id '" + id + "'"), id(std::move(id))
    {
    }
    std::string id;
};

inline constexpr int kManifestSchemaVersion = 1;

struct Registry
{
    std::vector<ChallengeSpec> challenges;
    std::string manifest_version;

    const ChallengeSpec* find(std::string_view id) const;
};

/// Manifest: {"schema_version": 1, "manifest_version": "...", "challenges":
/// [{"id", "image_ref", "entry_path", "flag", "category", "difficulty"}]}.
/// Error messages never include flag values.
Registry parse_registry(std::string_view json_text);
Registry load_registry(const std::filesystem::path& manifest);

/// histogram[category][difficulty] = number of challenges.
using CategoryHistogram = std::map<VulnCategory, std::array<int, 3>>;
CategoryHistogram category_histogram(const Registry& registry);

/// Trims surrounding whitespace from both sides, then compares exactly.
bool verify_flag(std::string_view candidate, const ChallengeSpec& spec);

class RuntimeUnavailable: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class ImageUnavailable: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class HealthcheckTimeout: public std::runtime_error
{
  public:
    HealthcheckTimeout(std::string what, std::string logs): std::runtime_error(std::move(what)), logs(std::move(logs)) {}
    std::string logs;
};

class TargetHandle
{
  public:
    virtual ~TargetHandle() = default;
    /// Idempotent.
    virtual void teardown() = 0;
    virtual std::string logs() const = 0;
};

struct DeployedTarget
{
    std::string url;
    std::unique_ptr<TargetHandle> handle;
};

class TargetRuntime
{
  public:
    virtual ~TargetRuntime() = default;
    /// Starts the target and waits until `entry_path` answers below 500.
    /// Throws ImageUnavailable, HealthcheckTimeout or RuntimeUnavailable.
    virtual DeployedTarget deploy(const ChallengeSpec& spec, std::chrono::milliseconds health_timeout) = 0;
};

/// Serves `fixture/<name>` image refs in-process.
std::unique_ptr<TargetRuntime> make_fixture_runtime();
/// Drives the `docker` CLI: run -d -P, port lookup, rm -f on teardown.
std::unique_ptr<TargetRuntime> make_docker_runtime(std::string docker_binary = "docker");
/// Routes `fixture/` refs to the fixture runtime and everything else to
/// docker.
std::unique_ptr<TargetRuntime> make_default_runtime();

DeployedTarget deploy_target(TargetRuntime& runtime, const ChallengeSpec& spec,
                             std::chrono::milliseconds health_timeout = std::chrono::seconds(30));

struct RunMatrix
{
    std::vector<ArchitectureKind> architectures {kAllArchitectures.begin(), kAllArchitectures.end()};
    std::vector<std::string> model_ids;
    int repetitions = 3;
    /// Empty means every challenge.
    std::vector<std::string> challenge_filter;
};

/// Throws ConfigError unless repetitions >= 1 and the lists are non-empty.
void validate_matrix(const RunMatrix& matrix);

/// `<root>/<model>/<arch short code>/<challenge>/<rep>.trace`.
std::filesystem::path trace_path(const std::filesystem::path& root, const std::string& model_id, ArchitectureKind arch,
                                 const std::string& challenge_id, int repetition);

struct BenchOptions
{
    RunConfig run_config;
    std::filesystem::path trace_root = "traces";
    int jobs = 1;
    /// Skip cells whose trace file already exists and parses.
    bool resume = true;
    std::chrono::milliseconds health_timeout {30'000};
    /// Returns the client for a model id. Called from worker threads; the
    /// returned client must tolerate concurrent use.
    std::function<LlmClient&(const std::string& model_id)> client_for;
    PriceTable prices;
    PromptAssets assets;
    /// Called after each cell, from the worker thread that ran it.
    std::function<void(const std::string& line)> progress;
};

struct BenchReport
{
    /// One row per cell, executed or resumed, in matrix order.
    ResultSet results;
    int executed = 0;
    int resumed = 0;
    /// "cell: message" for cells that ended in an Error outcome.
    std::vector<std::string> cell_errors;
};

/// Deploys, runs, verifies, tears down and persists every cell of the
/// matrix. A failing cell is recorded and never stops the others.
BenchReport run_benchmark(const Registry& registry, const RunMatrix& matrix, const BenchOptions& options,
                          TargetRuntime& runtime);

/// One cell. Deploy failures become an Error trace; the flag is verified
/// and the trace returned (not persisted).
Trace run_cell(const ChallengeSpec& spec, ArchitectureKind arch, const std::string& model_id, int repetition,
               const BenchOptions& options, TargetRuntime& runtime);

} // namespace ctfagent
