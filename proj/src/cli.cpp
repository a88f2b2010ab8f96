// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/cli.hpp"

#include "ctfagent/bench.hpp"
#include "ctfagent/fixtures.hpp"
#include "ctfagent/trace_io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

namespace ctfagent
{

namespace
{

/// Flags shared by `run` and `bench`. Unset optionals leave the config file
/// and environment values alone.
struct RunFlags
{
    std::string config_path;
    std::string assets_dir;
    std::string prices_path;
    std::string traces_dir = "traces";
    std::string manifest;
    std::string oracle;
    std::optional<int> step_cap;
    std::optional<int> rejection_cap;
    std::optional<double> tool_timeout_s;
    std::optional<std::int64_t> memory_budget;
    std::optional<double> temperature;
};

void add_run_flags(CLI::App& cmd, RunFlags& f)
{
    const RunConfig defaults;
    cmd.add_option("--config", f.config_path, "Run config JSON (defaults < config file < CTFAGENT_* env < flags)");
    cmd.add_option("--assets", f.assets_dir, "Asset directory (prompts, oracles, manifest, prices)")
        ->default_str(default_asset_dir().string());
    cmd.add_option("--prices", f.prices_path, "Price table JSON")->default_str("<assets>/prices.json");
    cmd.add_option("--traces", f.traces_dir, "Trace output root")->capture_default_str();
    cmd.add_option("--manifest", f.manifest, "Challenge manifest")->default_str("<assets>/manifest.json");
    cmd.add_option("--oracle", f.oracle, "Scripted oracle (name under <assets>/oracles or a file path) instead of a provider");
    cmd.add_option("--step-cap", f.step_cap, "Executed tool calls per run")->default_str(std::to_string(defaults.step_cap));
    cmd.add_option("--rejection-cap", f.rejection_cap, "Evaluator rejections per step")
        ->default_str(std::to_string(defaults.rejection_cap));
    cmd.add_option("--tool-timeout", f.tool_timeout_s, "Seconds per tool call")
        ->default_str(fmt::format("{}", defaults.tool_limits.timeout.count() / 1000.0));
    cmd.add_option("--memory-budget", f.memory_budget, "Scratchpad token budget")
        ->default_str(std::to_string(defaults.memory_budget));
    cmd.add_option("--temperature", f.temperature, "Sampling temperature")
        ->default_str(fmt::format("{}", defaults.sampling.temperature));
}

std::filesystem::path assets_of(const RunFlags& f)
{
    return f.assets_dir.empty() ? default_asset_dir() : std::filesystem::path(f.assets_dir);
}

RunConfig resolve_config(const RunFlags& f)
{
    RunConfig c = f.config_path.empty() ? RunConfig {} : load_run_config(f.config_path);
    apply_env_overrides(c);
    if (f.step_cap)
        c.step_cap = *f.step_cap;
    if (f.rejection_cap)
        c.rejection_cap = *f.rejection_cap;
    if (f.tool_timeout_s)
        c.tool_limits.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(*f.tool_timeout_s * 1000.0));
    if (f.memory_budget)
        c.memory_budget = *f.memory_budget;
    if (f.temperature)
        c.sampling.temperature = *f.temperature;
    validate_run_config(c);
    return c;
}

PriceTable resolve_prices(const RunFlags& f, const RunConfig& c)
{
    if (!f.prices_path.empty())
        return load_price_table(f.prices_path);
    if (!c.price_table.empty())
        return load_price_table(c.price_table);
    return load_price_table(assets_of(f) / "prices.json");
}

std::filesystem::path resolve_manifest(const RunFlags& f)
{
    return f.manifest.empty() ? assets_of(f) / "manifest.json" : std::filesystem::path(f.manifest);
}

OracleScript resolve_oracle(const RunFlags& f)
{
    std::filesystem::path p = f.oracle;
    if (!std::filesystem::exists(p))
        p = assets_of(f) / "oracles" / (f.oracle + ".json");
    if (!std::filesystem::exists(p))
        throw ConfigError(fmt::format("no oracle script '{}'", f.oracle));
    return load_oracle_script(p);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

ArchitectureKind parse_arch(const std::string& s)
{
    auto a = architecture_from_string(s);
    if (!a)
        throw ConfigError(fmt::format("unknown architecture '{}' (use e, ee or pee)", s));
    return *a;
}

/// Owns whichever client backs a command.
struct ClientHolder
{
    std::unique_ptr<LlmClient> client;
    std::string default_model;
};

ClientHolder make_client(const RunFlags& f)
{
    if (!f.oracle.empty())
        return {std::make_unique<OracleClient>(resolve_oracle(f)), "oracle"};
    return {std::make_unique<HttpChatClient>(http_provider_from_env()), ""};
}

void require_priced(const PriceTable& prices, const std::string& model)
{
    try
    {
        estimate_cost({}, model, prices);
    }
    catch (const UnknownModel&)
    {
        throw ConfigError(fmt::format("model '{}' has no price table entry", model));
    }
}

int exit_for_run(const Trace& t)
{
    if (t.outcome.status == RunStatus::Error)
        return kExitEnvironment;
    return result_status(t.outcome) == ResultStatus::Success ? kExitOk : kExitRunFailed;
}

struct RunCommand
{
    RunFlags flags;
    std::string challenge;
    std::string arch = "pee";
    std::string model;
    int rep = 1;

    int execute(std::ostream& out, std::ostream& err) const
    {
        const auto config = resolve_config(flags);
        const auto registry = load_registry(resolve_manifest(flags));
        const auto* spec = registry.find(challenge);
        if (!spec)
            throw ConfigError(fmt::format("unknown challenge '{}'", challenge));
        const auto arch_kind = parse_arch(arch);
        auto holder = make_client(flags);
        const std::string model_id = model.empty() ? holder.default_model : model;
        if (model_id.empty())
            throw ConfigError("--model is required without --oracle");
        BenchOptions opts;
        opts.run_config = config;
        opts.prices = resolve_prices(flags, config);
        require_priced(opts.prices, model_id);
        opts.assets = load_prompt_assets(assets_of(flags) / "prompts");
        opts.client_for = [&](const std::string&) -> LlmClient& { return *holder.client; };
        auto runtime = make_default_runtime();

        Trace trace = run_cell(*spec, arch_kind, model_id, rep, opts, *runtime);
        const auto path = trace_path(flags.traces_dir, model_id, arch_kind, spec->id, rep);
        write_trace_file(path, trace);
        out << fmt::format("{} {} steps={} rejections={} cost=${:.4f} duration={:.2f}s\n", trace.run_id,
                           to_string(result_status(trace.outcome)), trace.outcome.steps, trace.outcome.rejections,
                           trace.outcome.cost_usd, trace.outcome.duration_s);
        out << "trace: " << path.string() << "\n";
        if (!trace.outcome.error_message.empty())
            err << "error: " << trace.outcome.error_message << "\n";
        return exit_for_run(trace);
    }
};

struct BenchCommand
{
    RunFlags flags;
    int reps = 3;
    std::string archs = "e,ee,pee";
    std::string models;
    std::string challenges;
    bool resume = true;
    int jobs = 1;

    int execute(std::ostream& out, std::ostream& err) const
    {
        RunMatrix matrix;
        matrix.repetitions = reps;
        matrix.architectures.clear();
        for (const auto& a: split_list(archs))
            matrix.architectures.push_back(parse_arch(a));
        matrix.challenge_filter = split_list(challenges);
        auto holder = make_client(flags);
        matrix.model_ids = split_list(models);
        if (matrix.model_ids.empty() && !holder.default_model.empty())
            matrix.model_ids.push_back(holder.default_model);
        validate_matrix(matrix);
        if (jobs < 1)
            throw ConfigError("--jobs must be >= 1");

        BenchOptions opts;
        opts.run_config = resolve_config(flags);
        opts.prices = resolve_prices(flags, opts.run_config);
        for (const auto& m: matrix.model_ids)
            require_priced(opts.prices, m);
        opts.assets = load_prompt_assets(assets_of(flags) / "prompts");
        opts.trace_root = flags.traces_dir;
        opts.resume = resume;
        opts.jobs = jobs;
        opts.client_for = [&](const std::string&) -> LlmClient& { return *holder.client; };
        opts.progress = [&](const std::string& line) { err << line << "\n"; };
        const auto registry = load_registry(resolve_manifest(flags));
        auto runtime = make_default_runtime();

        const auto report = run_benchmark(registry, matrix, opts, *runtime);
        out << fmt::format("cells: {} executed, {} resumed, {} errors\n", report.executed, report.resumed,
                           report.cell_errors.size());
        for (const auto& e: report.cell_errors)
            err << "cell error: " << e << "\n";
        out << render_report(report.results);
        return kExitOk;
    }
};

struct ReportCommand
{
    std::string traces_dir = "traces";
    std::string format = "text";
    std::string runs_csv;

    int execute(std::ostream& out, std::ostream&) const
    {
        const ResultSet results = [&] {
            if (runs_csv.empty())
                return load_results(traces_dir);
            std::ifstream in(runs_csv, std::ios::binary);
            if (!in)
                throw ConfigError(fmt::format("cannot open {}", runs_csv));
            std::ostringstream ss;
            ss << in.rdbuf();
            return import_runs_csv(ss.str());
        }();
        if (format == "text")
            out << render_report(results);
        else if (format == "csv")
            out << render_report_csv(results);
        else if (format == "runs")
            out << export_runs_csv(results);
        else
            throw ConfigError(fmt::format("unknown format '{}'", format));
        return kExitOk;
    }
};

struct FixturesCommand
{
    RunFlags flags;

    /// Deploys every fixture challenge, checks its landing page, and when a
    /// `solve_<name>` oracle exists, solves it with the executor.
    int execute(std::ostream& out, std::ostream& err) const
    {
        const auto assets = assets_of(flags);
        const auto registry = load_registry(resolve_manifest(flags));
        RunConfig config = resolve_config(flags);
        const auto prices = resolve_prices(flags, config);
        const auto prompts = load_prompt_assets(assets / "prompts");
        auto runtime = make_fixture_runtime();
        int failures = 0;
        for (const auto& spec: registry.challenges)
        {
            if (spec.image_ref.rfind("fixture/", 0) != 0)
                continue;
            const auto name = spec.image_ref.substr(8);
            std::string verdict = "ok";
            try
            {
                auto target = deploy_target(*runtime, spec, std::chrono::seconds(10));
                const int status = http_probe(target.url, spec.entry_path, std::chrono::seconds(5));
                target.handle->teardown();
                target.handle->teardown();
                if (status != 200)
                    verdict = fmt::format("entry page returned {}", status);
                std::string oracle_name = "solve_" + name;
                std::replace(oracle_name.begin(), oracle_name.end(), '-', '_');
                const auto oracle = assets / "oracles" / (oracle_name + ".json");
                if (verdict == "ok" && std::filesystem::exists(oracle))
                {
                    OracleClient client(load_oracle_script(oracle));
                    BenchOptions opts;
                    opts.run_config = config;
                    opts.prices = prices;
                    opts.assets = prompts;
                    opts.client_for = [&](const std::string&) -> LlmClient& { return client; };
                    const auto t = run_cell(spec, ArchitectureKind::Executor, "oracle", 1, opts, *runtime);
                    if (result_status(t.outcome) != ResultStatus::Success)
                        verdict = fmt::format("oracle run ended {}", to_string(result_status(t.outcome)));
                    else
                        verdict = fmt::format("ok (solved in {} steps)", t.outcome.steps);
                }
            }
            catch (const std::exception& e)
            {
                verdict = e.what();
            }
            const bool ok = verdict.rfind("ok", 0) == 0;
            failures += ok ? 0 : 1;
            (ok ? out : err) << fmt::format("{:<24} {:<32} {}\n", spec.id, to_string(spec.category), verdict);
        }
        return failures == 0 ? kExitOk : kExitEnvironment;
    }
};

struct ReplayCommand
{
    std::string trace_file;

    int execute(std::ostream& out, std::ostream&) const
    {
        Trace t;
        try
        {
            t = read_trace_file(trace_file);
        }
        catch (const TraceFormatError& e)
        {
            throw ConfigError(e.what());
        }
        out << pretty_print_trace(t);
        return kExitOk;
    }
};

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app {"Multi-agent web CTF solver and benchmark harness", "ctfagent"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 1 run failed, 2 configuration error, 3 environment error.\n"
               "Config precedence: flags > CTFAGENT_* environment > --config file > defaults.");

    RunCommand run;
    auto* run_cmd = app.add_subcommand("run", "Run one episode against one challenge");
    add_run_flags(*run_cmd, run.flags);
    run_cmd->add_option("--challenge", run.challenge, "Challenge id from the manifest")->required();
    run_cmd->add_option("--arch", run.arch, "Architecture: e, ee or pee")->capture_default_str();
    run_cmd->add_option("--model", run.model, "Model id (defaults to 'oracle' with --oracle)");
    run_cmd->add_option("--rep", run.rep, "Repetition index used in the trace path")->capture_default_str()->check(
        CLI::PositiveNumber);

    BenchCommand bench;
    auto* bench_cmd = app.add_subcommand("bench", "Run the challenge x architecture x model x repetition matrix");
    add_run_flags(*bench_cmd, bench.flags);
    bench_cmd->add_option("--reps", bench.reps, "Repetitions per cell")->capture_default_str();
    bench_cmd->add_option("--archs", bench.archs, "Comma-separated architectures")->capture_default_str();
    bench_cmd->add_option("--models", bench.models, "Comma-separated model ids");
    bench_cmd->add_option("--challenges", bench.challenges, "Comma-separated challenge ids (default: all)");
    bench_cmd->add_flag("--resume,!--no-resume", bench.resume, "Skip cells whose trace already exists")
        ->capture_default_str();
    bench_cmd->add_option("--jobs", bench.jobs, "Concurrent episodes")->capture_default_str();

    ReportCommand report;
    auto* report_cmd = app.add_subcommand("report", "Compute metrics from persisted traces");
    report_cmd->add_option("--traces", report.traces_dir, "Trace root")->capture_default_str();
    report_cmd->add_option("--format", report.format, "text, csv, or runs (per-run CSV)")->capture_default_str();
    report_cmd->add_option("--runs-csv", report.runs_csv, "Read runs from a per-run CSV instead of traces");

    FixturesCommand fixtures;
    auto* fixtures_cmd = app.add_subcommand("fixtures", "Deploy and self-test the bundled fixture challenges");
    add_run_flags(*fixtures_cmd, fixtures.flags);

    ReplayCommand replay;
    auto* replay_cmd = app.add_subcommand("replay", "Pretty-print a trace without executing anything");
    replay_cmd->add_option("--trace", replay.trace_file, "Trace file")->required();

    std::vector<std::string> argv_store {"ctfagent"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a: argv_store)
        argv.push_back(a.data());
    try
    {
        app.parse(static_cast<int>(argv.size()), argv.data());
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e, out, err);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e, out, err);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e, out, err);
        err << app.help();
        return kExitConfig;
    }

    try
    {
        if (run_cmd->parsed())
            return run.execute(out, err);
        if (bench_cmd->parsed())
            return bench.execute(out, err);
        if (report_cmd->parsed())
            return report.execute(out, err);
        if (fixtures_cmd->parsed())
            return fixtures.execute(out, err);
        if (replay_cmd->parsed())
            return replay.execute(out, err);
    }
    catch (const RuntimeUnavailable& e)
    {
        err << "environment error: " << e.what() << "\n";
        return kExitEnvironment;
    }
    catch (const ImageUnavailable& e)
    {
        err << "environment error: " << e.what() << "\n";
        return kExitEnvironment;
    }
    catch (const std::filesystem::filesystem_error& e)
    {
        err << "environment error: " << e.what() << "\n";
        return kExitEnvironment;
    }
    catch (const std::exception& e)
    {
        // Schema, config, script, price-table and prompt-asset problems.
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

int cli_main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

} // namespace ctfagent
