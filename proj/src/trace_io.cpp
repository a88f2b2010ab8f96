// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/trace_io.hpp"

#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

namespace ctfagent
{

using ojson = nlohmann::ordered_json;

namespace
{

template <class T>
T require(std::optional<T> v, std::string_view what, std::string_view got)
{
    if (!v)
        throw TraceFormatError(fmt::format("unknown {} '{}'", what, got));
    return *v;
}

ojson to_json(const ToolCall& c)
{
    return {{"tool", to_string(c.tool)}, {"payload", c.payload}, {"reason", c.reason}};
}

ToolCall tool_call_from(const ojson& j)
{
    const auto name = j.at("tool").get<std::string>();
    return {require(tool_from_string(name), "tool", name), j.at("payload").get<std::string>(), j.at("reason").get<std::string>()};
}

ojson to_json(const Observation& o)
{
    return {{"stdout", o.stdout_text},
            {"stderr", o.stderr_text},
            {"exit_code", o.exit_code},
            {"truncated", o.truncated},
            {"wall_time", o.wall_time}};
}

Observation observation_from(const ojson& j)
{
    Observation o;
    o.stdout_text = j.at("stdout").get<std::string>();
    o.stderr_text = j.at("stderr").get<std::string>();
    o.exit_code = j.at("exit_code").get<int>();
    o.truncated = j.at("truncated").get<bool>();
    o.wall_time = j.at("wall_time").get<double>();
    return o;
}

ojson to_json(const Verdict& v)
{
    return {{"decision", to_string(v.decision)},
            {"score", v.score ? ojson(*v.score) : ojson(nullptr)},
            {"feedback", v.feedback},
            {"fail_open", v.fail_open}};
}

Verdict verdict_from(const ojson& j)
{
    Verdict v;
    const auto d = j.at("decision").get<std::string>();
    if (d == "Accept")
        v.decision = Decision::Accept;
    else if (d == "Reject")
        v.decision = Decision::Reject;
    else
        throw TraceFormatError(fmt::format("unknown decision '{}'", d));
    if (!j.at("score").is_null())
        v.score = j.at("score").get<double>();
    v.feedback = j.at("feedback").get<std::string>();
    v.fail_open = j.at("fail_open").get<bool>();
    return v;
}

ojson to_json(const std::vector<CallRecord>& calls)
{
    ojson arr = ojson::array();
    for (const auto& c: calls)
        arr.push_back({{"role", to_string(c.role)},
                       {"tokens_in", c.usage.tokens_in},
                       {"tokens_out", c.usage.tokens_out},
                       {"cost_usd", c.cost_usd}});
    return arr;
}

std::vector<CallRecord> calls_from(const ojson& j)
{
    std::vector<CallRecord> out;
    for (const auto& c: j)
    {
        const auto role = c.at("role").get<std::string>();
        out.push_back({require(role_from_string(role), "role", role),
                       {c.at("tokens_in").get<std::int64_t>(), c.at("tokens_out").get<std::int64_t>()},
                       c.at("cost_usd").get<double>()});
    }
    return out;
}

ojson to_json(const Plan& p)
{
    return {{"classified_vulnerability", to_string(p.classified_vulnerability)},
            {"raw_label", p.raw_label},
            {"strategy", p.strategy},
            {"recon_summary", p.recon_summary}};
}

Plan plan_from(const ojson& j)
{
    Plan p;
    const auto cat = j.at("classified_vulnerability").get<std::string>();
    p.classified_vulnerability = require(category_from_string(cat), "category", cat);
    p.raw_label = j.at("raw_label").get<std::string>();
    p.strategy = j.at("strategy").get<std::vector<std::string>>();
    p.recon_summary = j.at("recon_summary").get<std::string>();
    return p;
}

ojson header_json(const Trace& t)
{
    ojson recon = ojson::array();
    for (const auto& a: t.recon)
        recon.push_back({{"call", to_json(a.call)}, {"observation", to_json(a.observation)}});
    return {{"record", "header"},
            {"format", kTraceFormat},
            {"run_id", t.run_id},
            {"challenge_id", t.challenge_id},
            {"category", to_string(t.challenge_category)},
            {"difficulty", to_string(t.challenge_difficulty)},
            {"architecture", to_string(t.architecture)},
            {"model_id", t.model_id},
            {"repetition_index", t.repetition_index},
            {"prompt_hash", t.prompt_hash},
            {"plan", t.plan ? to_json(*t.plan) : ojson(nullptr)},
            {"recon", recon},
            {"preamble_calls", to_json(t.preamble_calls)}};
}

ojson step_json(const StepRecord& s)
{
    ojson superseded = ojson::array();
    for (const auto& c: s.superseded)
        superseded.push_back(to_json(c));
    ojson verdicts = ojson::array();
    for (const auto& v: s.verdicts)
        verdicts.push_back(to_json(v));
    return {{"record", "step"},
            {"index", s.index},
            {"proposal", to_json(s.proposal)},
            {"superseded", superseded},
            {"verdicts", verdicts},
            {"observation", s.observation ? to_json(*s.observation) : ojson(nullptr)},
            {"tokens_in", s.tokens.tokens_in},
            {"tokens_out", s.tokens.tokens_out},
            {"calls", to_json(s.calls)},
            {"started_at_ms", s.started_at_ms},
            {"ended_at_ms", s.ended_at_ms}};
}

ojson outcome_json(const Trace& t)
{
    const auto& o = t.outcome;
    return {{"record", "outcome"},
            {"status", to_string(o.status)},
            {"captured_flag", o.captured_flag ? ojson(*o.captured_flag) : ojson(nullptr)},
            {"flag_verified", o.flag_verified ? ojson(*o.flag_verified) : ojson(nullptr)},
            {"steps", o.steps},
            {"rejections", o.rejections},
            {"cost_usd", o.cost_usd},
            {"duration_s", o.duration_s},
            {"error", o.error_message},
            {"trailing_calls", to_json(t.trailing_calls)}};
}

} // namespace

std::string serialize_trace(const Trace& t)
{
    std::string out = header_json(t).dump() + "\n";
    for (const auto& s: t.steps)
        out += step_json(s).dump() + "\n";
    out += outcome_json(t).dump() + "\n";
    return out;
}

Trace deserialize_trace(std::string_view text)
{
    Trace t;
    bool have_header = false, have_outcome = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto eol = text.find('\n', pos);
        auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (line.empty())
            continue;
        try
        {
            const ojson j = ojson::parse(line);
            const auto kind = j.at("record").get<std::string>();
            if (have_outcome)
                throw TraceFormatError("record after outcome");
            if (kind == "header")
            {
                if (have_header)
                    throw TraceFormatError("duplicate header");
                if (j.at("format").get<std::string>() != kTraceFormat)
                    throw TraceFormatError(fmt::format("unsupported format '{}'", j.at("format").get<std::string>()));
                have_header = true;
                t.run_id = j.at("run_id").get<std::string>();
                t.challenge_id = j.at("challenge_id").get<std::string>();
                const auto cat = j.at("category").get<std::string>();
                t.challenge_category = require(category_from_string(cat), "category", cat);
                const auto diff = j.at("difficulty").get<std::string>();
                t.challenge_difficulty = require(difficulty_from_string(diff), "difficulty", diff);
                const auto arch = j.at("architecture").get<std::string>();
                t.architecture = require(architecture_from_string(arch), "architecture", arch);
                t.model_id = j.at("model_id").get<std::string>();
                t.repetition_index = j.at("repetition_index").get<int>();
                t.prompt_hash = j.at("prompt_hash").get<std::string>();
                if (!j.at("plan").is_null())
                    t.plan = plan_from(j.at("plan"));
                for (const auto& a: j.at("recon"))
                    t.recon.push_back({tool_call_from(a.at("call")), observation_from(a.at("observation"))});
                t.preamble_calls = calls_from(j.at("preamble_calls"));
            }
            else if (!have_header)
            {
                throw TraceFormatError("first record must be the header");
            }
            else if (kind == "step")
            {
                StepRecord s;
                s.index = j.at("index").get<int>();
                s.proposal = tool_call_from(j.at("proposal"));
                for (const auto& c: j.at("superseded"))
                    s.superseded.push_back(tool_call_from(c));
                for (const auto& v: j.at("verdicts"))
                    s.verdicts.push_back(verdict_from(v));
                if (!j.at("observation").is_null())
                    s.observation = observation_from(j.at("observation"));
                s.tokens = {j.at("tokens_in").get<std::int64_t>(), j.at("tokens_out").get<std::int64_t>()};
                s.calls = calls_from(j.at("calls"));
                s.started_at_ms = j.at("started_at_ms").get<std::int64_t>();
                s.ended_at_ms = j.at("ended_at_ms").get<std::int64_t>();
                t.steps.push_back(std::move(s));
            }
            else if (kind == "outcome")
            {
                have_outcome = true;
                auto& o = t.outcome;
                const auto st = j.at("status").get<std::string>();
                o.status = require(run_status_from_string(st), "status", st);
                if (!j.at("captured_flag").is_null())
                    o.captured_flag = j.at("captured_flag").get<std::string>();
                if (!j.at("flag_verified").is_null())
                    o.flag_verified = j.at("flag_verified").get<bool>();
                o.steps = j.at("steps").get<int>();
                o.rejections = j.at("rejections").get<int>();
                o.cost_usd = j.at("cost_usd").get<double>();
                o.duration_s = j.at("duration_s").get<double>();
                o.error_message = j.at("error").get<std::string>();
                t.trailing_calls = calls_from(j.at("trailing_calls"));
            }
            else
            {
                throw TraceFormatError(fmt::format("unknown record '{}'", kind));
            }
        }
        catch (const nlohmann::json::exception& e)
        {
            throw TraceFormatError(fmt::format("line {}: {}", line_no, e.what()));
        }
        catch (const TraceFormatError& e)
        {
            throw TraceFormatError(fmt::format("line {}: {}", line_no, e.what()));
        }
    }
    if (!have_header || !have_outcome)
        throw TraceFormatError("trace lacks a header or outcome record");
    return t;
}

void write_trace_file(const std::filesystem::path& path, const Trace& trace)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += fmt::format(".tmp{}", ::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
        out << serialize_trace(trace);
        if (!out.flush())
            throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

Trace read_trace_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw TraceFormatError(fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_trace(ss.str());
}

std::string pretty_print_trace(const Trace& t)
{
    std::string out;
    out += fmt::format("run {}  challenge {} ({}, {})\n", t.run_id, t.challenge_id, to_string(t.challenge_category),
                       to_string(t.challenge_difficulty));
    out += fmt::format("architecture {}  model {}  repetition {}\n", to_string(t.architecture), t.model_id, t.repetition_index);
    for (const auto& a: t.recon)
        out += fmt::format("[recon] {}: {}  -> exit {}\n", to_string(a.call.tool), a.call.payload, a.observation.exit_code);
    if (t.plan)
    {
        out += fmt::format("[plan] {} (raw: {})\n", to_string(t.plan->classified_vulnerability), t.plan->raw_label);
        for (std::size_t i = 0; i < t.plan->strategy.size(); ++i)
            out += fmt::format("       {}. {}\n", i + 1, t.plan->strategy[i]);
    }
    for (const auto& s: t.steps)
    {
        for (std::size_t i = 0; i < s.verdicts.size(); ++i)
        {
            const auto& v = s.verdicts[i];
            const ToolCall& judged = i < s.superseded.size() ? s.superseded[i] : s.proposal;
            out += fmt::format("[step {}] proposed {}: {}\n", s.index, to_string(judged.tool), judged.payload);
            out += fmt::format("          evaluator {} score={}{}{}\n", to_string(v.decision),
                               v.score ? fmt::format("{:.2f}", *v.score) : std::string("n/a"),
                               v.fail_open ? " (fail-open)" : "", v.feedback.empty() ? "" : " : " + v.feedback);
        }
        if (s.observation)
        {
            out += fmt::format("[step {}] {}: {}\n", s.index, to_string(s.proposal.tool), s.proposal.payload);
            out += fmt::format("          reason: {}\n", s.proposal.reason);
            std::string head = s.observation->stdout_text.substr(0, 400);
            out += fmt::format("          exit {}{}  {}\n", s.observation->exit_code, s.observation->truncated ? " (truncated)" : "",
                               head);
        }
        else
        {
            out += fmt::format("[step {}] not executed\n", s.index);
        }
    }
    const auto& o = t.outcome;
    out += fmt::format("outcome {}{}  steps {}  rejections {}  cost ${:.4f}  duration {:.2f}s\n", to_string(o.status),
                       o.captured_flag ? " flag=" + *o.captured_flag : std::string(), o.steps, o.rejections, o.cost_usd,
                       o.duration_s);
    if (o.flag_verified)
        out += fmt::format("flag verified: {}\n", *o.flag_verified ? "yes" : "no");
    if (!o.error_message.empty())
        out += fmt::format("error: {}\n", o.error_message);
    return out;
}

} // namespace ctfagent
