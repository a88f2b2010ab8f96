// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/bench.hpp"

#include "ctfagent/fixtures.hpp"
#include "ctfagent/trace_io.hpp"

#include <atomic>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

namespace ctfagent
{

using json = nlohmann::json;

const ChallengeSpec* Registry::find(std::string_view id) const
{
    for (const auto& c: challenges)
        if (c.id == id)
            return &c;
    return nullptr;
}

namespace
{

int line_of_offset(std::string_view text, std::size_t offset)
{
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

struct EntryLines
{
    int start = 0;
    std::map<std::string, int> keys;
};

/// Line numbers of the objects directly inside the first array nested in
/// the root object (the challenge entries) and of their keys.
std::vector<EntryLines> challenge_lines(std::string_view text)
{
    std::vector<EntryLines> entries;
    int depth = 0;
    int line = 1;
    bool in_string = false, escaped = false;
    std::string current;
    int current_line = 0;
    std::optional<std::pair<std::string, int>> last_string;
    for (char c: text)
    {
        if (c == '\n')
            ++line;
        if (in_string)
        {
            if (escaped)
            {
                escaped = false;
                current += c;
            }
            else if (c == '\\')
                escaped = true;
            else if (c == '"')
            {
                in_string = false;
                last_string.emplace(std::move(current), current_line);
            }
            else
                current += c;
            continue;
        }
        switch (c)
        {
            case '"':
                in_string = true;
                current.clear();
                current_line = line;
                break;
            case ':':
                if (depth == 3 && last_string && !entries.empty())
                    entries.back().keys.emplace(last_string->first, last_string->second);
                break;
            case '{':
            case '[':
                ++depth;
                if (c == '{' && depth == 3)
                    entries.push_back({line, {}});
                break;
            case '}':
            case ']': --depth; break;
            default: break;
        }
        if (c != '"' && c != ' ' && c != '\t' && c != '\n' && c != '\r')
            last_string.reset();
    }
    return entries;
}

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

} // namespace

Registry parse_registry(std::string_view text)
{
    json root;
    try
    {
        root = json::parse(text);
    }
    catch (const json::parse_error& e)
    {
        const int line = line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0);
        throw SchemaError(fmt::format("line {}: manifest is not valid JSON", line), line, "");
    }
    auto fail = [](std::string field, int line, std::string msg) {
        throw SchemaError(line ? fmt::format("line {}: {}: {}", line, field, msg) : fmt::format("{}: {}", field, msg), line,
                          field);
    };
    if (!root.is_object())
        fail("<root>", 1, "expected an object");
    if (!root.contains("schema_version") || !root["schema_version"].is_number_integer())
        fail("schema_version", 0, "missing or not an integer");
    if (root["schema_version"].get<int>() != kManifestSchemaVersion)
        fail("schema_version", 0, fmt::format("unsupported version {}", root["schema_version"].get<int>()));

    Registry reg;
    if (root.contains("manifest_version"))
    {
        if (!root["manifest_version"].is_string())
            fail("manifest_version", 0, "expected a string");
        reg.manifest_version = root["manifest_version"].get<std::string>();
    }
    if (!root.contains("challenges") || !root["challenges"].is_array())
        fail("challenges", 0, "missing or not an array");

    const auto lines = challenge_lines(text);
    std::set<std::string> seen;
    std::size_t i = 0;
    for (const auto& c: root["challenges"])
    {
        const EntryLines entry = i < lines.size() ? lines[i] : EntryLines {};
        const int line = entry.start;
        auto key_line = [&](const std::string& key) {
            auto it = entry.keys.find(key);
            return it == entry.keys.end() ? line : it->second;
        };
        const std::string where = fmt::format("challenges[{}]", i);
        ++i;
        if (!c.is_object())
            fail(where, line, "expected an object");
        auto str = [&](const char* key, bool required) -> std::string {
            if (!c.contains(key))
            {
                if (required)
                    fail(where + "." + key, line, "missing");
                return {};
            }
            if (!c[key].is_string())
                fail(where + "." + key, key_line(key), "expected a string");
            return c[key].get<std::string>();
        };
        for (const auto& [key, _]: c.items())
            if (key != "id" && key != "image_ref" && key != "entry_path" && key != "flag" && key != "category" &&
                key != "difficulty")
                fail(where + "." + key, key_line(key), "unknown field");

        ChallengeSpec spec;
        spec.id = str("id", true);
        if (spec.id.empty())
            fail(where + ".id", key_line("id"), "must not be empty");
        spec.image_ref = str("image_ref", true);
        if (spec.image_ref.empty())
            fail(where + ".image_ref", key_line("image_ref"), "must not be empty");
        if (c.contains("entry_path"))
            spec.entry_path = str("entry_path", false);
        if (spec.entry_path.empty() || spec.entry_path.front() != '/')
            fail(where + ".entry_path", key_line("entry_path"), "must start with '/'");
        spec.flag = str("flag", true);
        if (trim(spec.flag).empty())
            fail(where + ".flag", key_line("flag"), "must not be empty");
        const auto cat = str("category", true);
        auto category = category_from_string(cat);
        if (!category)
            fail(where + ".category", key_line("category"), fmt::format("unknown category '{}'", cat));
        spec.category = *category;
        const auto diff = str("difficulty", true);
        auto difficulty = difficulty_from_string(diff);
        if (!difficulty)
            fail(where + ".difficulty", key_line("difficulty"), fmt::format("unknown difficulty '{}'", diff));
        spec.difficulty = *difficulty;
        if (!seen.insert(spec.id).second)
            throw DuplicateId(spec.id);
        reg.challenges.push_back(std::move(spec));
    }
    return reg;
}

Registry load_registry(const std::filesystem::path& manifest)
{
    std::ifstream in(manifest, std::ios::binary);
    if (!in)
        throw SchemaError(fmt::format("cannot open manifest {}", manifest.string()), 0, "");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_registry(ss.str());
}

CategoryHistogram category_histogram(const Registry& registry)
{
    CategoryHistogram h;
    for (const auto& c: registry.challenges)
        ++h[c.category][static_cast<std::size_t>(c.difficulty)];
    return h;
}

bool verify_flag(std::string_view candidate, const ChallengeSpec& spec)
{
    return trim(candidate) == trim(spec.flag);
}

namespace
{

void wait_healthy(const std::string& url, const std::string& path, std::chrono::milliseconds timeout,
                  const std::function<std::string()>& logs)
{
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;)
    {
        const int status = http_probe(url, path, std::chrono::milliseconds(1000));
        if (status > 0 && status < 500)
            return;
        if (std::chrono::steady_clock::now() >= deadline)
            throw HealthcheckTimeout(fmt::format("{}{} not healthy after {} ms (last status {})", url, path, timeout.count(),
                                                 status),
                                     logs());
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

class FixtureHandle final: public TargetHandle
{
  public:
    explicit FixtureHandle(std::unique_ptr<FixtureServer> server): _server(std::move(server)) {}
    void teardown() override { _server->stop(); }
    std::string logs() const override { return _server->logs(); }

  private:
    std::unique_ptr<FixtureServer> _server;
};

constexpr std::string_view kFixtureScheme = "fixture/";

class FixtureRuntime final: public TargetRuntime
{
  public:
    DeployedTarget deploy(const ChallengeSpec& spec, std::chrono::milliseconds health_timeout) override
    {
        if (spec.image_ref.rfind(kFixtureScheme, 0) != 0)
            throw ImageUnavailable(fmt::format("'{}' is not a fixture image", spec.image_ref));
        auto server = start_fixture(std::string_view(spec.image_ref).substr(kFixtureScheme.size()), spec.flag);
        if (!server)
            throw ImageUnavailable(fmt::format("no fixture named '{}'", spec.image_ref));
        DeployedTarget t {server->url(), std::make_unique<FixtureHandle>(std::move(server))};
        try
        {
            wait_healthy(t.url, spec.entry_path, health_timeout, [&] { return t.handle->logs(); });
        }
        catch (...)
        {
            t.handle->teardown();
            throw;
        }
        return t;
    }
};

std::map<std::string, std::string> docker_env()
{
    std::map<std::string, std::string> env;
    for (const char* name: {"PATH", "HOME", "DOCKER_HOST", "DOCKER_CONFIG", "DOCKER_CONTEXT"})
        if (const char* v = std::getenv(name))
            env[name] = v;
    if (!env.count("PATH"))
        env["PATH"] = "/usr/local/bin:/usr/bin:/bin";
    return env;
}

Observation docker(const std::string& binary, std::vector<std::string> args, std::chrono::milliseconds timeout)
{
    args.insert(args.begin(), binary);
    auto r = run_process(args, docker_env(), std::filesystem::temp_directory_path(), "", timeout, 64 * 1024);
    if (r.observation.exit_code == 127)
        throw RuntimeUnavailable(fmt::format("'{}' could not be executed", binary));
    if (r.timed_out)
        throw RuntimeUnavailable(fmt::format("'{} {}' timed out", binary, args.size() > 1 ? args[1] : ""));
    return r.observation;
}

class DockerHandle final: public TargetHandle
{
  public:
    DockerHandle(std::string binary, std::string id): _binary(std::move(binary)), _id(std::move(id)) {}
    ~DockerHandle() override
    {
        try
        {
            teardown();
        }
        catch (...)
        {
        }
    }
    void teardown() override
    {
        std::lock_guard lock(_mutex);
        if (_down)
            return;
        docker(_binary, {"rm", "-f", _id}, std::chrono::seconds(60));
        _down = true;
    }
    std::string logs() const override
    {
        auto o = docker(_binary, {"logs", "--tail", "200", _id}, std::chrono::seconds(30));
        return o.stdout_text + o.stderr_text;
    }

  private:
    std::string _binary;
    std::string _id;
    std::mutex _mutex;
    bool _down = false;
};

class DockerRuntime final: public TargetRuntime
{
  public:
    explicit DockerRuntime(std::string binary): _binary(std::move(binary)) {}

    DeployedTarget deploy(const ChallengeSpec& spec, std::chrono::milliseconds health_timeout) override
    {
        auto run = docker(_binary, {"run", "-d", "-P", spec.image_ref}, std::chrono::minutes(10));
        if (run.exit_code != 0)
        {
            const auto& err = run.stderr_text;
            if (err.find("Cannot connect to the Docker daemon") != std::string::npos ||
                err.find("permission denied while trying to connect") != std::string::npos)
                throw RuntimeUnavailable(trim(err));
            throw ImageUnavailable(fmt::format("{}: {}", spec.image_ref, trim(err)));
        }
        auto handle = std::make_unique<DockerHandle>(_binary, trim(run.stdout_text));
        const auto id = trim(run.stdout_text);
        auto port = docker(_binary, {"port", id}, std::chrono::seconds(30));
        const auto first_line = port.stdout_text.substr(0, port.stdout_text.find('\n'));
        const auto colon = first_line.rfind(':');
        if (port.exit_code != 0 || colon == std::string::npos)
        {
            const auto logs = handle->logs();
            handle->teardown();
            throw HealthcheckTimeout(fmt::format("{} published no port", spec.image_ref), logs);
        }
        DeployedTarget t {fmt::format("http://127.0.0.1:{}", trim(first_line.substr(colon + 1))), std::move(handle)};
        try
        {
            wait_healthy(t.url, spec.entry_path, health_timeout, [&] { return t.handle->logs(); });
        }
        catch (...)
        {
            t.handle->teardown();
            throw;
        }
        return t;
    }

  private:
    std::string _binary;
};

class RoutingRuntime final: public TargetRuntime
{
  public:
    DeployedTarget deploy(const ChallengeSpec& spec, std::chrono::milliseconds health_timeout) override
    {
        if (spec.image_ref.rfind(kFixtureScheme, 0) == 0)
            return _fixtures.deploy(spec, health_timeout);
        return _docker.deploy(spec, health_timeout);
    }

  private:
    FixtureRuntime _fixtures;
    DockerRuntime _docker {"docker"};
};

std::string make_temp_dir()
{
    auto tmpl = (std::filesystem::temp_directory_path() / "ctfagent-run-XXXXXX").string();
    if (!::mkdtemp(tmpl.data()))
        throw std::runtime_error("cannot create a run directory");
    return tmpl;
}

} // namespace

std::unique_ptr<TargetRuntime> make_fixture_runtime()
{
    return std::make_unique<FixtureRuntime>();
}

std::unique_ptr<TargetRuntime> make_docker_runtime(std::string docker_binary)
{
    return std::make_unique<DockerRuntime>(std::move(docker_binary));
}

std::unique_ptr<TargetRuntime> make_default_runtime()
{
    return std::make_unique<RoutingRuntime>();
}

DeployedTarget deploy_target(TargetRuntime& runtime, const ChallengeSpec& spec, std::chrono::milliseconds health_timeout)
{
    return runtime.deploy(spec, health_timeout);
}

void validate_matrix(const RunMatrix& m)
{
    if (m.repetitions < 1)
        throw ConfigError(fmt::format("repetitions must be >= 1 (got {})", m.repetitions));
    if (m.architectures.empty())
        throw ConfigError("no architectures selected");
    if (m.model_ids.empty())
        throw ConfigError("no models selected");
}

std::filesystem::path trace_path(const std::filesystem::path& root, const std::string& model_id, ArchitectureKind arch,
                                 const std::string& challenge_id, int repetition)
{
    return root / model_id / std::string(short_code(arch)) / challenge_id / fmt::format("{}.trace", repetition);
}

Trace run_cell(const ChallengeSpec& spec, ArchitectureKind arch, const std::string& model_id, int repetition,
               const BenchOptions& options, TargetRuntime& runtime)
{
    EpisodeRequest req;
    req.architecture = arch;
    req.challenge = spec;
    req.challenge.flag.clear();
    req.model_id = model_id;
    req.repetition = repetition;
    req.run_id = fmt::format("{}.{}.{}.{}", model_id, short_code(arch), spec.id, repetition);

    auto error_trace = [&](const std::string& message) {
        Trace t;
        t.run_id = req.run_id;
        t.challenge_id = spec.id;
        t.challenge_category = spec.category;
        t.challenge_difficulty = spec.difficulty;
        t.architecture = arch;
        t.model_id = model_id;
        t.repetition_index = repetition;
        t.prompt_hash = options.assets.hash();
        t.outcome.status = RunStatus::Error;
        t.outcome.error_message = message;
        return t;
    };

    DeployedTarget target;
    try
    {
        target = deploy_target(runtime, spec, options.health_timeout);
    }
    catch (const HealthcheckTimeout& e)
    {
        return error_trace(fmt::format("deploy: {}\n{}", e.what(), e.logs));
    }
    catch (const std::exception& e)
    {
        return error_trace(fmt::format("deploy: {}", e.what()));
    }
    req.target_url = target.url;

    Trace trace;
    std::string workdir;
    try
    {
        ShellSession session;
        if (options.run_config.ssh)
        {
            session.ssh = options.run_config.ssh;
            session.workdir = options.run_config.remote_workdir;
            session.env["TARGET_URL"] = target.url;
        }
        else
        {
            workdir = make_temp_dir();
            session = make_local_session(workdir, target.url);
        }
        trace = run_episode(req, options.run_config, options.client_for(model_id), options.prices, session, options.assets);
    }
    catch (const std::exception& e)
    {
        trace = error_trace(e.what());
    }
    if (trace.outcome.status == RunStatus::FlagCaptured && trace.outcome.captured_flag)
        trace.outcome.flag_verified = verify_flag(serialize_flag(*trace.outcome.captured_flag), spec);
    try
    {
        target.handle->teardown();
    }
    catch (const std::exception&)
    {
        // The run result stands; a leaked container is reported by the runtime.
    }
    if (!workdir.empty())
    {
        std::error_code ec;
        std::filesystem::remove_all(workdir, ec);
    }
    return trace;
}

BenchReport run_benchmark(const Registry& registry, const RunMatrix& matrix, const BenchOptions& options,
                          TargetRuntime& runtime)
{
    validate_matrix(matrix);
    if (options.jobs < 1)
        throw ConfigError(fmt::format("jobs must be >= 1 (got {})", options.jobs));
    if (!options.client_for)
        throw ConfigError("no model client configured");

    std::vector<const ChallengeSpec*> selected;
    for (const auto& id: matrix.challenge_filter)
        if (!registry.find(id))
            throw ConfigError(fmt::format("unknown challenge '{}'", id));
    for (const auto& c: registry.challenges)
        if (matrix.challenge_filter.empty() ||
            std::find(matrix.challenge_filter.begin(), matrix.challenge_filter.end(), c.id) != matrix.challenge_filter.end())
            selected.push_back(&c);

    struct Cell
    {
        const ChallengeSpec* spec;
        ArchitectureKind arch;
        std::string model;
        int rep;
        std::filesystem::path path;
    };
    std::vector<Cell> cells;
    for (const auto* spec: selected)
        for (auto arch: matrix.architectures)
            for (const auto& model: matrix.model_ids)
                for (int rep = 1; rep <= matrix.repetitions; ++rep)
                    cells.push_back({spec, arch, model, rep, trace_path(options.trace_root, model, arch, spec->id, rep)});

    BenchReport report;
    std::vector<std::optional<ResultRow>> rows(cells.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < cells.size(); ++i)
    {
        if (options.resume && std::filesystem::exists(cells[i].path))
        {
            try
            {
                rows[i] = result_row(read_trace_file(cells[i].path));
                ++report.resumed;
                continue;
            }
            catch (const TraceFormatError&)
            {
                // Unreadable leftovers are re-run.
            }
        }
        pending.push_back(i);
    }

    std::mutex mutex;
    std::atomic<std::size_t> next {0};
    auto worker = [&] {
        for (;;)
        {
            const std::size_t k = next.fetch_add(1);
            if (k >= pending.size())
                return;
            const auto& cell = cells[pending[k]];
            Trace trace = run_cell(*cell.spec, cell.arch, cell.model, cell.rep, options, runtime);
            std::string persist_error;
            try
            {
                write_trace_file(cell.path, trace);
            }
            catch (const std::exception& e)
            {
                persist_error = e.what();
            }
            const auto label = fmt::format("{}/{}/{}/{}", cell.model, short_code(cell.arch), cell.spec->id, cell.rep);
            std::lock_guard lock(mutex);
            rows[pending[k]] = result_row(trace);
            ++report.executed;
            if (trace.outcome.status == RunStatus::Error)
                report.cell_errors.push_back(fmt::format("{}: {}", label, trace.outcome.error_message));
            if (!persist_error.empty())
                report.cell_errors.push_back(fmt::format("{}: cannot persist trace: {}", label, persist_error));
            if (options.progress)
                options.progress(fmt::format("{} {} steps={} cost=${:.4f}", label, to_string(result_status(trace.outcome)),
                                             trace.outcome.steps, trace.outcome.cost_usd));
        }
    };
    const int threads = std::min<int>(options.jobs, static_cast<int>(std::max<std::size_t>(pending.size(), 1)));
    if (threads <= 1)
        worker();
    else
    {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto& t: pool)
            t.join();
    }
    for (auto& r: rows)
        if (r)
            report.results.push_back(std::move(*r));
    return report;
}

} // namespace ctfagent
