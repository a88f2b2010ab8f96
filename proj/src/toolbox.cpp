// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/toolbox.hpp"

#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <fmt/format.h>
#include <fstream>
#include <poll.h>
#include <random>
#include <regex>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace ctfagent
{

namespace
{

constexpr int kSshTransportExit = 255;

struct Fd
{
    int fd = -1;
    Fd() = default;
    explicit Fd(int f): fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }
    void reset()
    {
        if (fd >= 0)
            ::close(fd);
        fd = -1;
    }
};

void append_capped(std::string& dst, const char* data, std::size_t n, std::size_t cap, bool& overflow)
{
    if (dst.size() < cap)
    {
        std::size_t take = std::min(n, cap - dst.size());
        dst.append(data, take);
        if (take < n)
            overflow = true;
    }
    else if (n > 0)
    {
        overflow = true;
    }
}

std::map<std::string, std::string> base_environment(const std::map<std::string, std::string>& session_env)
{
    // Harness secrets (API keys) never reach agent commands: only a minimal
    // inherited set plus the session variables.
    std::map<std::string, std::string> env;
    for (const char* key: {"PATH", "HOME", "LANG", "LC_ALL", "TERM", "TMPDIR"})
        if (const char* v = std::getenv(key))
            env[key] = v;
    if (!env.count("PATH"))
        env["PATH"] = "/usr/local/bin:/usr/bin:/bin";
    for (const auto& [k, v]: session_env)
        env[k] = v;
    return env;
}

std::string remote_prelude(const ShellSession& session)
{
    std::string cmd = fmt::format("cd {}", shell_quote(session.workdir.string()));
    for (const auto& [k, v]: session.env)
        cmd += fmt::format(" && export {}={}", k, shell_quote(v));
    return cmd;
}

void check_call(const ToolCall& call, ToolKind expected, const ToolLimits& limits)
{
    if (call.tool != expected)
        throw PreconditionError(fmt::format("expected a {} call", to_string(expected)));
    if (call.reason.empty())
        throw PreconditionError("tool call has no reason");
    if (limits.timeout.count() <= 0)
        throw PreconditionError("timeout must be positive");
}

// Bytes that are not part of a well-formed UTF-8 sequence become '?', so
// traces stay valid JSON and the byte length (and the cap) is unchanged.
void scrub_utf8(std::string& s)
{
    std::size_t i = 0;
    while (i < s.size())
    {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        bool ok = len > 0 && i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k)
            ok = (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
        if (ok && len > 1)
        {
            // Reject overlong forms, surrogates and code points past U+10FFFF.
            std::uint32_t cp = c & (0xFF >> (len + 1));
            for (std::size_t k = 1; k < len; ++k)
                cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
            static constexpr std::uint32_t min_cp[] = {0, 0, 0x80, 0x800, 0x10000};
            ok = cp >= min_cp[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
        }
        if (!ok)
        {
            s[i] = '?';
            len = 1;
        }
        i += len;
    }
}

Observation finish(ProcessResult r, const ShellSession& session, std::chrono::milliseconds timeout)
{
    scrub_utf8(r.observation.stdout_text);
    scrub_utf8(r.observation.stderr_text);
    if (session.ssh && r.observation.exit_code == kSshTransportExit && !r.timed_out)
        throw TransportLost(fmt::format("ssh transport lost: {}", r.observation.stderr_text.substr(0, 256)));
    if (r.timed_out)
        throw ToolTimeout(fmt::format("tool call timed out after {} ms", timeout.count()), std::move(r.observation));
    return std::move(r.observation);
}

std::string unique_script_name()
{
    static thread_local std::mt19937_64 rng(std::random_device {}());
    return fmt::format("ctf_script_{:016x}.py", rng());
}

} // namespace

std::vector<std::string> ShellSession::default_deny_list()
{
    return {
        // Listing or searching the host root or home directories.
        R"((^|[;&|(]\s*)(ls|find|tree|du)(\s+-\S+)*\s+(/|~|/home\S*|/root\S*)(\s|$|[;&|)]))",
        // Reading host account or key material.
        R"((^|[;&|(]\s*)(cat|less|more|head|tail|strings)\s+(\S+\s+)*(/etc/shadow|~?/\S*\.ssh/)\S*)",
        R"((^|[;&|(]\s*)rm\s+-\S*r\S*\s+/(\s|$))",
    };
}

ShellSession make_local_session(const std::filesystem::path& workdir, const std::string& target_url)
{
    ShellSession s;
    s.workdir = workdir;
    s.env["TARGET_URL"] = target_url;
    return s;
}

std::string shell_quote(std::string_view s)
{
    std::string out = "'";
    for (char c: s)
    {
        if (c == '\'')
            out += "'\\''";
        else
            out.push_back(c);
    }
    out.push_back('\'');
    return out;
}

std::vector<std::string> ssh_argv(const SshTransport& t, const std::string& remote_command)
{
    std::vector<std::string> argv {"ssh", "-p", std::to_string(t.port)};
    for (const auto& o: t.options)
    {
        argv.push_back("-o");
        argv.push_back(o);
    }
    if (!t.identity_file.empty())
    {
        argv.push_back("-i");
        argv.push_back(t.identity_file);
    }
    argv.push_back(t.user.empty() ? t.host : t.user + "@" + t.host);
    argv.push_back("--");
    argv.push_back(remote_command);
    return argv;
}

std::optional<std::string> policy_match(const ShellSession& session, std::string_view command)
{
    const std::string cmd(command);
    for (const auto& rule: session.deny_list)
        if (std::regex_search(cmd, std::regex(rule, std::regex::ECMAScript)))
            return rule;
    return std::nullopt;
}

ProcessResult run_process(const std::vector<std::string>& argv,
                          const std::map<std::string, std::string>& env,
                          const std::filesystem::path& workdir,
                          std::string_view stdin_data,
                          std::chrono::milliseconds timeout,
                          std::size_t cap)
{
    if (argv.empty())
        throw PreconditionError("empty argv");

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0)
        throw ToolError(fmt::format("pipe: {}", std::strerror(errno)));
    Fd in_w(in_pipe[1]), out_r(out_pipe[0]), err_r(err_pipe[0]);
    Fd in_r(in_pipe[0]), out_w(out_pipe[1]), err_w(err_pipe[1]);

    std::vector<std::string> env_strings;
    for (const auto& [k, v]: env)
        env_strings.push_back(k + "=" + v);
    std::vector<char*> c_env;
    for (auto& s: env_strings)
        c_env.push_back(s.data());
    c_env.push_back(nullptr);
    std::vector<std::string> args = argv;
    std::vector<char*> c_argv;
    for (auto& a: args)
        c_argv.push_back(a.data());
    c_argv.push_back(nullptr);
    const std::string dir = workdir.string();

    const auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0)
        throw ToolError(fmt::format("fork: {}", std::strerror(errno)));
    if (pid == 0)
    {
        ::setpgid(0, 0);
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        if (!dir.empty() && ::chdir(dir.c_str()) != 0)
            ::_exit(126);
        ::execvpe(c_argv[0], c_argv.data(), c_env.data());
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    in_r.reset();
    out_w.reset();
    err_w.reset();

    for (int fd: {in_w.fd, out_r.fd, err_r.fd})
        ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
    if (stdin_data.empty())
        in_w.reset();

    ProcessResult result;
    auto& obs = result.observation;
    bool overflow = false;
    std::size_t written = 0;
    const auto deadline = start + timeout;
    char buf[8192];

    while (out_r.fd >= 0 || err_r.fd >= 0)
    {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline)
        {
            result.timed_out = true;
            ::kill(-pid, SIGKILL);
            break;
        }
        int wait_ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;

        std::vector<pollfd> fds;
        if (out_r.fd >= 0)
            fds.push_back({out_r.fd, POLLIN, 0});
        if (err_r.fd >= 0)
            fds.push_back({err_r.fd, POLLIN, 0});
        if (in_w.fd >= 0)
            fds.push_back({in_w.fd, POLLOUT, 0});
        int rc = ::poll(fds.data(), fds.size(), wait_ms);
        if (rc < 0 && errno == EINTR)
            continue;
        if (rc < 0)
            throw ToolError(fmt::format("poll: {}", std::strerror(errno)));

        for (const auto& p: fds)
        {
            if (p.revents == 0)
                continue;
            if (p.fd == in_w.fd)
            {
                ssize_t n = ::write(in_w.fd, stdin_data.data() + written, stdin_data.size() - written);
                if (n > 0)
                    written += static_cast<std::size_t>(n);
                if (n < 0 && errno != EAGAIN)
                    in_w.reset();
                else if (written == stdin_data.size())
                    in_w.reset();
                continue;
            }
            Fd& src = p.fd == out_r.fd ? out_r : err_r;
            std::string& dst = p.fd == out_r.fd ? obs.stdout_text : obs.stderr_text;
            ssize_t n = ::read(src.fd, buf, sizeof buf);
            if (n > 0)
                append_capped(dst, buf, static_cast<std::size_t>(n), cap, overflow);
            else if (n == 0 || errno != EAGAIN)
                src.reset();
        }
    }

    int status = 0;
    if (!result.timed_out)
    {
        // Streams closed; wait for exit, still honouring the deadline.
        while (true)
        {
            pid_t w = ::waitpid(pid, &status, WNOHANG);
            if (w == pid)
                break;
            if (std::chrono::steady_clock::now() >= deadline)
            {
                result.timed_out = true;
                ::kill(-pid, SIGKILL);
                ::waitpid(pid, &status, 0);
                break;
            }
            ::usleep(2000);
        }
    }
    else
    {
        ::waitpid(pid, &status, 0);
    }
    // Reap stragglers left in the group.
    ::kill(-pid, SIGKILL);

    if (result.timed_out)
        obs.exit_code = -1;
    else if (WIFEXITED(status))
        obs.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        obs.exit_code = 128 + WTERMSIG(status);
    obs.truncated = overflow;
    obs.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

Observation run_command(const ShellSession& session, const ToolCall& call, const ToolLimits& limits)
{
    check_call(call, ToolKind::RunCommand, limits);
    if (auto rule = policy_match(session, call.payload))
        throw PolicyViolation("command blocked: browsing the host filesystem is not allowed", *rule);

    if (session.ssh)
    {
        auto argv = ssh_argv(*session.ssh, remote_prelude(session) + " && bash -c " + shell_quote(call.payload));
        return finish(run_process(argv, base_environment({}), {}, {}, limits.timeout, limits.output_cap), session, limits.timeout);
    }
    return finish(run_process({"/bin/bash", "-c", call.payload}, base_environment(session.env), session.workdir, {},
                              limits.timeout, limits.output_cap),
                  session, limits.timeout);
}

Observation run_python(const ShellSession& session, const ToolCall& call, const ToolLimits& limits)
{
    check_call(call, ToolKind::RunPython, limits);

    if (session.ssh)
    {
        // The script travels on stdin into a remote temp file that is
        // removed whatever the interpreter's exit status.
        std::string remote = remote_prelude(session)
            + fmt::format(" && f=$(mktemp ./ctf_script_XXXXXX.py) && cat > \"$f\" && {{ {} \"$f\"; rc=$?; rm -f \"$f\"; exit $rc; }}",
                          shell_quote(session.python));
        auto argv = ssh_argv(*session.ssh, remote);
        return finish(run_process(argv, base_environment({}), {}, call.payload, limits.timeout, limits.output_cap), session,
                      limits.timeout);
    }

    const auto script = session.workdir / unique_script_name();
    struct Remover
    {
        std::filesystem::path p;
        ~Remover()
        {
            std::error_code ec;
            std::filesystem::remove(p, ec);
        }
    } remover {script};

    {
        std::ofstream out(script, std::ios::binary);
        if (!out || !(out << call.payload) || !out.flush())
            throw ScriptWriteFailed(fmt::format("cannot write {}", script.string()));
    }
    return finish(run_process({session.python, script.filename().string()}, base_environment(session.env), session.workdir, {},
                              limits.timeout, limits.output_cap),
                  session, limits.timeout);
}

Observation run_tool(const ShellSession& session, const ToolCall& call, const ToolLimits& limits)
{
    return call.tool == ToolKind::RunCommand ? run_command(session, call, limits) : run_python(session, call, limits);
}

} // namespace ctfagent
