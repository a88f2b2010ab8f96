// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/domain.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfagent
{

class ToolError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// The process was killed at the deadline; the partial output is kept.
class ToolTimeout: public ToolError
{
  public:
    ToolTimeout(std::string what, Observation partial): ToolError(std::move(what)), partial(std::move(partial)) {}
    Observation partial;
};

/// The remote shell connection dropped; the session must be re-established.
class TransportLost: public ToolError
{
  public:
    using ToolError::ToolError;
};

class PolicyViolation: public ToolError
{
  public:
    PolicyViolation(std::string what, std::string rule): ToolError(std::move(what)), rule(std::move(rule)) {}
    std::string rule;
};

class ScriptWriteFailed: public ToolError
{
  public:
    using ToolError::ToolError;
};

struct SshTransport
{
    std::string host;
    int port = 22;
    std::string user;
    std::string identity_file;
    /// Extra -o options, e.g. "StrictHostKeyChecking=accept-new".
    std::vector<std::string> options {"BatchMode=yes", "StrictHostKeyChecking=accept-new"};
};

struct ShellSession
{
    /// Absent means local subprocess mode.
    std::optional<SshTransport> ssh;
    std::filesystem::path workdir;
    std::map<std::string, std::string> env;
    std::string python = "python3";
    /// ECMAScript patterns; a command matching any of them is blocked.
    std::vector<std::string> deny_list = default_deny_list();

    static std::vector<std::string> default_deny_list();
};

/// Local session in `workdir` with TARGET_URL exported.
ShellSession make_local_session(const std::filesystem::path& workdir, const std::string& target_url);

struct ToolLimits
{
    std::chrono::milliseconds timeout {120'000};
    std::size_t output_cap = 16 * 1024;
};

/// Runs a shell command in the session. Throws PolicyViolation, ToolTimeout,
/// TransportLost or PreconditionError.
Observation run_command(const ShellSession& session, const ToolCall& call, const ToolLimits& limits);

/// Writes the payload to a unique script file in the workdir, runs it with
/// the session interpreter, and always removes the file.
Observation run_python(const ShellSession& session, const ToolCall& call, const ToolLimits& limits);

/// Dispatches on call.tool.
Observation run_tool(const ShellSession& session, const ToolCall& call, const ToolLimits& limits);

/// First deny-list pattern the command matches, if any.
std::optional<std::string> policy_match(const ShellSession& session, std::string_view command);

/// POSIX single-quote escaping.
std::string shell_quote(std::string_view s);

/// argv used to run `remote_command` over ssh; exposed for tests.
std::vector<std::string> ssh_argv(const SshTransport& t, const std::string& remote_command);

struct ProcessResult
{
    Observation observation;
    bool timed_out = false;
};

/// Low-level runner: fork/exec `argv` in its own process group with the
/// given environment, feed `stdin_data`, capture both streams up to `cap`
/// bytes each, and SIGKILL the group at the deadline.
ProcessResult run_process(const std::vector<std::string>& argv,
                          const std::map<std::string, std::string>& env,
                          const std::filesystem::path& workdir,
                          std::string_view stdin_data,
                          std::chrono::milliseconds timeout,
                          std::size_t cap);

} // namespace ctfagent
