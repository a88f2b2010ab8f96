// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/orchestrator.hpp"

#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace ctfagent
{

using json = nlohmann::json;

RunConfig parse_run_config(std::string_view json_text)
{
    json j;
    try
    {
        j = json::parse(json_text);
    }
    catch (const json::parse_error& e)
    {
        throw ConfigError(fmt::format("run config: {}", e.what()));
    }
    if (j.value("version", 1) != 1)
        throw ConfigError("run config: unsupported version");

    RunConfig c;
    try
    {
        c.step_cap = j.value("step_cap", c.step_cap);
        c.rejection_cap = j.value("rejection_cap", c.rejection_cap);
        c.memory_budget = j.value("memory_budget_tokens", c.memory_budget);
        c.keep_tail = j.value("keep_tail", c.keep_tail);
        c.tool_limits.timeout = std::chrono::milliseconds(
            static_cast<std::int64_t>(j.value("tool_timeout_s", c.tool_limits.timeout.count() / 1000.0) * 1000.0));
        c.tool_limits.output_cap = j.value("output_cap_bytes", c.tool_limits.output_cap);
        c.recon_step_cap = j.value("recon_step_cap", c.recon_step_cap);
        c.evaluator_threshold = j.value("evaluator_threshold", c.evaluator_threshold);
        c.sampling.temperature = j.value("temperature", c.sampling.temperature);
        c.sampling.max_tokens = j.value("max_tokens", c.sampling.max_tokens);
        c.malformed_retries = j.value("malformed_retries", c.malformed_retries);
        c.price_table = j.value("price_table", c.price_table);
        if (j.contains("shell"))
        {
            const auto& s = j["shell"];
            if (s.value("mode", "local") == "ssh")
            {
                SshTransport t;
                t.host = s.at("host").get<std::string>();
                t.port = s.value("port", 22);
                t.user = s.value("user", "");
                t.identity_file = s.value("identity_file", "");
                c.ssh = t;
            }
            c.remote_workdir = s.value("workdir", c.remote_workdir);
        }
    }
    catch (const json::exception& e)
    {
        throw ConfigError(fmt::format("run config: {}", e.what()));
    }
    validate_run_config(c);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(fmt::format("cannot open run config {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void apply_env_overrides(RunConfig& config)
{
    auto get = [](const char* name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name); v && *v)
            return std::string(v);
        return std::nullopt;
    };
    try
    {
        if (auto v = get("CTFAGENT_STEP_CAP"))
            config.step_cap = std::stoi(*v);
        if (auto v = get("CTFAGENT_REJECTION_CAP"))
            config.rejection_cap = std::stoi(*v);
        if (auto v = get("CTFAGENT_TOOL_TIMEOUT_S"))
            config.tool_limits.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(std::stod(*v) * 1000.0));
        if (auto v = get("CTFAGENT_MEMORY_BUDGET"))
            config.memory_budget = std::stoll(*v);
        if (auto v = get("CTFAGENT_RECON_STEP_CAP"))
            config.recon_step_cap = std::stoi(*v);
        if (auto v = get("CTFAGENT_TEMPERATURE"))
            config.sampling.temperature = std::stod(*v);
    }
    catch (const std::logic_error&)
    {
        throw ConfigError("malformed numeric CTFAGENT_* environment variable");
    }
}

void validate_run_config(const RunConfig& c)
{
    if (c.step_cap < 1)
        throw ConfigError("step_cap must be at least 1");
    if (c.rejection_cap < 0)
        throw ConfigError("rejection_cap must be non-negative");
    if (c.memory_budget < 1)
        throw ConfigError("memory_budget_tokens must be positive");
    if (c.keep_tail < 1)
        throw ConfigError("keep_tail must be at least 1");
    if (c.tool_limits.timeout.count() <= 0)
        throw ConfigError("tool_timeout_s must be positive");
    if (c.tool_limits.output_cap < 1)
        throw ConfigError("output_cap_bytes must be positive");
    if (c.recon_step_cap < 1)
        throw ConfigError("recon_step_cap must be at least 1");
    if (!(c.evaluator_threshold >= 0.0 && c.evaluator_threshold <= 1.0))
        throw ConfigError("evaluator_threshold must lie in [0, 1]");
    if (c.malformed_retries < 0)
        throw ConfigError("malformed_retries must be non-negative");
}

std::string describe_run_config(const RunConfig& c)
{
    return fmt::format(
        "step_cap={} rejection_cap={} memory_budget_tokens={} keep_tail={} tool_timeout_s={} output_cap_bytes={} "
        "recon_step_cap={} evaluator_threshold={} temperature={} max_tokens={} shell={}",
        c.step_cap, c.rejection_cap, c.memory_budget, c.keep_tail, c.tool_limits.timeout.count() / 1000.0,
        c.tool_limits.output_cap, c.recon_step_cap, c.evaluator_threshold, c.sampling.temperature, c.sampling.max_tokens,
        c.ssh ? "ssh:" + c.ssh->host : std::string("local"));
}

PipelineDescriptor wire_architecture(ArchitectureKind kind)
{
    switch (kind)
    {
        case ArchitectureKind::Executor: return {false, false, true, false};
        case ArchitectureKind::ExecutorEvaluator: return {false, false, true, true};
        case ArchitectureKind::PlannerExecutorEvaluator: return {true, true, true, true};
    }
    return {};
}

namespace
{

// Tool failures the agent can recover from become observations; only a
// transport that stays down ends the run.
Observation execute_tool(const ShellSession& session, const ToolCall& call, const ToolLimits& limits)
{
    for (int attempt = 0;; ++attempt)
    {
        try
        {
            return run_tool(session, call, limits);
        }
        catch (const ToolTimeout& e)
        {
            Observation obs = e.partial;
            obs.stderr_text += fmt::format("\n[killed: timed out after {:.0f} s]", limits.timeout.count() / 1000.0);
            return obs;
        }
        catch (const PolicyViolation& e)
        {
            Observation obs;
            obs.exit_code = 126;
            obs.stderr_text = fmt::format("[blocked by policy] {}", e.what());
            return obs;
        }
        catch (const ScriptWriteFailed& e)
        {
            Observation obs;
            obs.exit_code = 1;
            obs.stderr_text = e.what();
            return obs;
        }
        catch (const TransportLost&)
        {
            // ssh sessions are re-established per call; one retry.
            if (attempt >= 1)
                throw;
        }
    }
}

class Episode
{
  public:
    Episode(const EpisodeRequest& req, const RunConfig& config, LlmClient& llm, const PriceTable& prices,
            const ShellSession& session, const PromptAssets& assets)
        : _req(req)
        , _config(config)
        , _prices(prices)
        , _meter(llm, prices)
        , _session(session)
        , _assets(assets)
        , _wiring(wire_architecture(req.architecture))
    {
        _ctx.model_id = req.model_id;
        _ctx.sampling = config.sampling;
        _ctx.target_url = req.target_url;
        _ctx.evaluator_threshold = config.evaluator_threshold;

        _trace.run_id = req.run_id.empty()
            ? fmt::format("{}-{}-{}-r{}", req.challenge.id, short_code(req.architecture), req.model_id, req.repetition)
            : req.run_id;
        _trace.challenge_id = req.challenge.id;
        _trace.challenge_category = req.challenge.category;
        _trace.challenge_difficulty = req.challenge.difficulty;
        _trace.architecture = req.architecture;
        _trace.model_id = req.model_id;
        _trace.repetition_index = req.repetition;
        _trace.prompt_hash = assets.hash();
    }

    Trace run()
    {
        const auto start = std::chrono::steady_clock::now();
        try
        {
            // Fail fast on a model the price table does not know.
            estimate_cost({}, _req.model_id, _prices);
            if (_wiring.planner)
                preamble();
            loop();
        }
        catch (const std::exception& e)
        {
            _trace.outcome.status = RunStatus::Error;
            _trace.outcome.captured_flag.reset();
            _trace.outcome.error_message = e.what();
            if (_pending && !_pending->verdicts.empty())
                _trace.steps.push_back(std::move(*_pending));
            _pending.reset();
        }
        auto rest = _meter.drain();
        _trace.trailing_calls.insert(_trace.trailing_calls.end(), rest.begin(), rest.end());

        auto& out = _trace.outcome;
        out.steps = executed_steps(_trace);
        out.rejections = total_rejections(_trace);
        out.cost_usd = recorded_cost(_trace);
        out.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return std::move(_trace);
    }

  private:
    void preamble()
    {
        ToolRunner runner = [this](const ToolCall& call) { return execute_tool(_session, call, _config.tool_limits); };
        ReconReport report = run_recon(runner, _assets, _meter, _config.recon_step_cap, _ctx);
        _trace.recon = std::move(report.actions);
        _plan = make_plan(report.summary, _assets, _meter, _ctx);
        _trace.plan = _plan;
        _trace.preamble_calls = _meter.drain();
    }

    void summarize_if_needed()
    {
        SummarizeOptions opts;
        opts.budget = _config.memory_budget;
        opts.keep_tail = _config.keep_tail;
        opts.prompt = _assets.summarize_prompt;
        opts.model_id = _req.model_id;
        opts.sampling = _config.sampling;
        _pad = maybe_summarize(_pad, _meter, opts).pad;
    }

    ExecutorDecision next_decision()
    {
        summarize_if_needed();
        for (int attempt = 0;; ++attempt)
        {
            try
            {
                return executor_step(_pad, _assets, _plan, _meter, _ctx);
            }
            catch (const MalformedCompletion&)
            {
                if (attempt >= _config.malformed_retries)
                    return Terminal {std::nullopt};
                _pad.append({EntryKind::Feedback, std::string(kMalformedReminder)});
            }
        }
    }

    void finish_terminal(const Terminal& t)
    {
        if (t.flag)
        {
            _trace.outcome.status = RunStatus::FlagCaptured;
            _trace.outcome.captured_flag = t.flag;
        }
        else
        {
            _trace.outcome.status = RunStatus::GaveUp;
        }
    }

    void loop()
    {
        int steps = 0;
        while (true)
        {
            if (steps >= _config.step_cap)
            {
                _trace.outcome.status = RunStatus::StepCapExceeded;
                return;
            }

            _pending.emplace();
            StepRecord& rec = *_pending;
            rec.index = steps + 1;
            rec.started_at_ms = now_ms();

            ExecutorDecision d = next_decision();
            if (auto* t = std::get_if<Terminal>(&d))
            {
                finish_terminal(*t);
                _pending.reset();
                return;
            }
            ToolCall current = std::get<Propose>(d).call;

            if (_wiring.evaluator)
            {
                while (true)
                {
                    Verdict v = evaluate_action(current, _last_observation, _plan, _assets, _meter, _ctx);
                    rec.verdicts.push_back(v);
                    if (v.decision == Decision::Accept || rec.rejections() >= _config.rejection_cap)
                        break;

                    _pad.append({EntryKind::Feedback, v.feedback});
                    ExecutorDecision revised = next_decision();
                    if (auto* t = std::get_if<Terminal>(&revised))
                    {
                        // Ended while a proposal was pending: keep its verdicts.
                        rec.proposal = current;
                        rec.ended_at_ms = now_ms();
                        rec.calls = _meter.drain();
                        accumulate_tokens(rec);
                        _trace.steps.push_back(std::move(rec));
                        _pending.reset();
                        finish_terminal(*t);
                        return;
                    }
                    rec.superseded.push_back(current);
                    current = std::get<Propose>(revised).call;
                }
            }

            rec.proposal = current;
            Observation obs = execute_tool(_session, current, _config.tool_limits);
            _pad.append({EntryKind::Observation, render_observation(obs)});
            _last_observation = obs;
            rec.observation = std::move(obs);
            rec.ended_at_ms = now_ms();
            rec.calls = _meter.drain();
            accumulate_tokens(rec);
            _trace.steps.push_back(std::move(rec));
            _pending.reset();
            ++steps;
        }
    }

    static void accumulate_tokens(StepRecord& rec)
    {
        rec.tokens = {};
        for (const auto& c: rec.calls)
            rec.tokens += c.usage;
    }

    const EpisodeRequest& _req;
    const RunConfig& _config;
    const PriceTable& _prices;
    MeteredClient _meter;
    const ShellSession& _session;
    const PromptAssets& _assets;
    PipelineDescriptor _wiring;
    AgentContext _ctx;
    Trace _trace;
    Scratchpad _pad;
    std::optional<Plan> _plan;
    std::optional<Observation> _last_observation;
    std::optional<StepRecord> _pending;
};

} // namespace

Trace run_episode(const EpisodeRequest& request, const RunConfig& config, LlmClient& llm, const PriceTable& prices,
                  const ShellSession& session, const PromptAssets& assets)
{
    validate_run_config(config);
    Episode episode(request, config, llm, prices, session, assets);
    return episode.run();
}

} // namespace ctfagent
