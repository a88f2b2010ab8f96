// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/fixtures.hpp"
#include "ctfagent/toolbox.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace ctfagent;
using ctfagent::testing::LocalShell;

namespace
{

ToolCall cmd(std::string payload) { return {ToolKind::RunCommand, std::move(payload), "test"}; }
ToolCall py(std::string payload) { return {ToolKind::RunPython, std::move(payload), "test"}; }

ToolLimits limits(std::chrono::milliseconds timeout = std::chrono::seconds(10), std::size_t cap = 16 * 1024)
{
    return {timeout, cap};
}

} // namespace

TEST_CASE("run_command: echo")
{
    LocalShell shell;
    const Observation o = run_command(shell.session, cmd("echo hello"), limits());
    CHECK(o.stdout_text == "hello\n");
    CHECK(o.stderr_text.empty());
    CHECK(o.exit_code == 0);
    CHECK_FALSE(o.truncated);
}

TEST_CASE("run_command: exit code and stderr")
{
    LocalShell shell;
    const Observation o = run_command(shell.session, cmd("echo oops >&2; exit 7"), limits());
    CHECK(o.exit_code == 7);
    CHECK(o.stderr_text == "oops\n");
}

TEST_CASE("run_command: timeout kills the process and keeps partial output")
{
    LocalShell shell;
    try
    {
        run_command(shell.session, cmd("echo before; sleep 999"), limits(std::chrono::seconds(2)));
        FAIL("expected a timeout");
    }
    catch (const ToolTimeout& e)
    {
        CHECK(e.partial.stdout_text == "before\n");
        CHECK(e.partial.wall_time >= 1.9);
        CHECK(e.partial.wall_time < 4.0);
    }
}

TEST_CASE("run_command: truncation is exact at the cap")
{
    LocalShell shell;
    const Observation big = run_command(shell.session, cmd("head -c 5000 /dev/zero | tr '\\0' a"), limits(std::chrono::seconds(10), 1024));
    CHECK(big.truncated);
    CHECK(big.stdout_text.size() == 1024);

    const Observation exact = run_command(shell.session, cmd("head -c 1024 /dev/zero | tr '\\0' a"), limits(std::chrono::seconds(10), 1024));
    CHECK_FALSE(exact.truncated);
    CHECK(exact.stdout_text.size() == 1024);
}

TEST_CASE("run_command: deny list blocks host browsing")
{
    LocalShell shell;
    CHECK_THROWS_AS(run_command(shell.session, cmd("ls /"), limits()), PolicyViolation);
    CHECK_THROWS_AS(run_command(shell.session, cmd("echo x; ls -la ~"), limits()), PolicyViolation);
    CHECK_THROWS_AS(run_command(shell.session, cmd("cat /etc/shadow"), limits()), PolicyViolation);
    CHECK_FALSE(policy_match(shell.session, "ls ./loot"));
    CHECK_FALSE(policy_match(shell.session, "curl -s \"$TARGET_URL/\""));
    CHECK_FALSE(policy_match(shell.session, "curl \"$TARGET_URL/download?file=../../etc/passwd\""));
}

TEST_CASE("run_command: a call without a reason is rejected")
{
    LocalShell shell;
    CHECK_THROWS_AS(run_command(shell.session, {ToolKind::RunCommand, "echo hi", ""}, limits()), PreconditionError);
    CHECK_THROWS_AS(run_command(shell.session, py("print(1)"), limits()), PreconditionError);
}

TEST_CASE("run_command: environment carries TARGET_URL and no harness secrets")
{
    ::setenv("CTFAGENT_API_KEY", "sk-should-not-leak", 1);
    ::setenv("OPENAI_API_KEY", "sk-should-not-leak", 1);
    LocalShell shell("http://target.invalid:8080");
    const Observation o = run_command(shell.session, cmd("env"), limits());
    CHECK(o.stdout_text.find("TARGET_URL=http://target.invalid:8080") != std::string::npos);
    CHECK(o.stdout_text.find("sk-should-not-leak") == std::string::npos);
    ::unsetenv("CTFAGENT_API_KEY");
    ::unsetenv("OPENAI_API_KEY");
}

TEST_CASE("run_python: output, tracebacks, and no leftover scripts")
{
    LocalShell shell;
    const Observation ok = run_python(shell.session, py("print(1+1)"), limits());
    CHECK(ok.stdout_text == "2\n");
    CHECK(ok.exit_code == 0);

    const Observation bad = run_python(shell.session, py("raise ValueError('boom')"), limits());
    CHECK(bad.exit_code != 0);
    CHECK(bad.stderr_text.find("Traceback") != std::string::npos);
    CHECK(bad.stderr_text.find("ValueError: boom") != std::string::npos);

    CHECK_THROWS_AS(run_python(shell.session, py("import time; time.sleep(60)"), limits(std::chrono::seconds(1))), ToolTimeout);

    CHECK(std::filesystem::is_empty(shell.dir.path()));
}

TEST_CASE("tools against a fixture target")
{
    auto server = start_fixture("robots", "FLAG{t}");
    REQUIRE(server);
    LocalShell shell(server->url());

    const Observation robots = run_command(shell.session, cmd("curl -s $TARGET_URL/robots.txt"), limits());
    CHECK(robots.exit_code == 0);
    CHECK(robots.stdout_text.find("/internal-backup-2019/") != std::string::npos);

    const Observation gets = run_python(shell.session, py(R"(import os, urllib.request
for _ in range(10):
    print(urllib.request.urlopen(os.environ["TARGET_URL"] + "/").status)
)"),
                                        limits());
    CHECK(gets.exit_code == 0);
    std::string expected;
    for (int i = 0; i < 10; ++i)
        expected += "200\n";
    CHECK(gets.stdout_text == expected);
    server->stop();
}

TEST_CASE("shell_quote survives a round trip through sh")
{
    LocalShell shell;
    for (std::string s: {"plain", "it's", "a b\tc", "$(whoami)", "'\"'\"", "back\\slash", ""})
    {
        const Observation o = run_command(shell.session, cmd("printf %s " + shell_quote(s)), limits());
        CHECK(o.stdout_text == s);
    }
}

TEST_CASE("ssh argv")
{
    SshTransport t;
    t.host = "attacker";
    t.port = 2222;
    t.user = "kali";
    t.identity_file = "/keys/id";
    const auto argv = ssh_argv(t, "echo hi");
    REQUIRE(argv.size() >= 4);
    CHECK(argv.front() == "ssh");
    CHECK(argv.back() == "echo hi");
    CHECK(std::find(argv.begin(), argv.end(), "2222") != argv.end());
    CHECK(std::find(argv.begin(), argv.end(), "/keys/id") != argv.end());
    CHECK(std::find(argv.begin(), argv.end(), "kali@attacker") != argv.end());
}

TEST_CASE("binary output is scrubbed to valid UTF-8 without changing its length")
{
    LocalShell shell;
    const Observation o = run_command(shell.session, cmd("printf 'a\\377b\\303\\251c\\355\\240\\200\\342\\202'"), limits());
    CHECK(o.stdout_text == "a?b\xC3\xA9" "c????" "?");
    CHECK(o.stdout_text.size() == 11);
}
