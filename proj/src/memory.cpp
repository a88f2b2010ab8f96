// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/memory.hpp"

#include <fmt/format.h>

namespace ctfagent
{

std::string_view to_string(EntryKind k)
{
    switch (k)
    {
        case EntryKind::Thought: return "Thought";
        case EntryKind::Action: return "Action";
        case EntryKind::Observation: return "Observation";
        case EntryKind::Summary: return "Summary";
        case EntryKind::Feedback: return "Feedback";
        case EntryKind::PlanText: return "Plan";
    }
    return "?";
}

void Scratchpad::append(PadEntry entry)
{
    _chars += entry.text.size();
    _entries.push_back(std::move(entry));
}

void Scratchpad::replace_prefix(std::size_t count, std::string summary)
{
    if (count > _entries.size())
        throw PreconditionError("replace_prefix beyond pad size");
    for (std::size_t i = 0; i < count; ++i)
        _chars -= _entries[i].text.size();
    _entries.erase(_entries.begin(), _entries.begin() + static_cast<std::ptrdiff_t>(count));
    _chars += summary.size();
    _entries.insert(_entries.begin(), PadEntry {EntryKind::Summary, std::move(summary)});
}

void Scratchpad::truncate_entry(std::size_t i, std::size_t max_chars)
{
    auto& text = _entries.at(i).text;
    if (text.size() <= max_chars)
        return;
    std::string cut = max_chars > kTruncationMarker.size() ? text.substr(0, max_chars - kTruncationMarker.size()) : std::string {};
    cut += kTruncationMarker;
    if (cut.size() >= text.size())
        return;
    _chars -= text.size();
    _chars += cut.size();
    text = std::move(cut);
}

Scratchpad append(Scratchpad pad, PadEntry entry)
{
    pad.append(std::move(entry));
    return pad;
}

std::string render_entries(const std::vector<PadEntry>& entries, std::size_t first, std::size_t last)
{
    std::string out;
    for (std::size_t i = first; i < last && i < entries.size(); ++i)
    {
        if (!out.empty())
            out += "\n\n";
        out += fmt::format("[{}] {}", to_string(entries[i].kind), entries[i].text);
    }
    return out;
}

namespace
{

// Shrinks entries oldest-first until the pad fits: summaries first, the
// verbatim entries only if that is not enough. Nothing is removed.
void hard_truncate(Scratchpad& pad, std::int64_t budget)
{
    const std::size_t limit = static_cast<std::size_t>(budget) * 4;
    for (int pass = 0; pass < 2 && pad.characters() > limit; ++pass)
    {
        const bool summaries = pass == 0;
        for (std::size_t i = 0; i < pad.size() && pad.characters() > limit; ++i)
        {
            if ((pad.entries()[i].kind == EntryKind::Summary) != summaries)
                continue;
            const std::size_t excess = pad.characters() - limit;
            const std::size_t len = pad.entries()[i].text.size();
            pad.truncate_entry(i, len > excess ? len - excess : 0);
        }
    }
}

} // namespace

SummarizeResult maybe_summarize(const Scratchpad& pad, LlmClient& llm, const SummarizeOptions& options)
{
    if (options.budget <= 0)
        throw PreconditionError("summarization budget must be positive");
    if (options.keep_tail < 1)
        throw PreconditionError("keep_tail must be at least 1");

    SummarizeResult result {pad, false, false, 0};
    if (pad.token_estimate() <= options.budget)
        return result;

    Scratchpad& out = result.pad;
    const std::size_t prefix = pad.size() > options.keep_tail ? pad.size() - options.keep_tail : 0;
    if (prefix > 0)
    {
        std::size_t prefix_chars = 0;
        for (std::size_t i = 0; i < prefix; ++i)
            prefix_chars += pad.entries()[i].text.size();

        std::string summary;
        try
        {
            Conversation conv;
            conv.agent = AgentRole::Summarizer;
            conv.offer_tools = false;
            conv.messages.push_back({MessageRole::System, options.prompt});
            conv.messages.push_back({MessageRole::User, render_entries(pad.entries(), 0, prefix)});
            ++result.llm_calls;
            summary = llm.complete(conv, options.model_id, options.sampling).content;
            result.summarized = !summary.empty();
        }
        catch (const GatewayError&)
        {
            result.fell_back = true;
        }
        if (summary.empty())
        {
            result.fell_back = true;
            summary = fmt::format("{} {} earlier entries dropped (summarization unavailable)", kTruncationMarker, prefix);
        }
        // A summary must never grow the pad.
        const std::size_t max_chars = prefix_chars > 4 ? prefix_chars - 4 : 0;
        if (summary.size() > max_chars)
        {
            summary = max_chars > kTruncationMarker.size() ? summary.substr(0, max_chars - kTruncationMarker.size()) : std::string {};
            summary += kTruncationMarker;
            if (summary.size() > max_chars)
                summary.resize(max_chars);
        }
        out.replace_prefix(prefix, std::move(summary));
    }

    if (out.token_estimate() > options.budget)
        hard_truncate(out, options.budget);
    return result;
}

} // namespace ctfagent
