// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/llm_gateway.hpp"

#include <string>
#include <vector>

namespace ctfagent
{

enum class EntryKind
{
    Thought,
    Action,
    Observation,
    Summary,
    Feedback,
    PlanText,
};

std::string_view to_string(EntryKind k);

struct PadEntry
{
    EntryKind kind = EntryKind::Thought;
    std::string text;

    bool operator==(const PadEntry&) const = default;
};

/// Run-local working memory. The token estimate is always
/// estimate_tokens(sum of entry text lengths).
class Scratchpad
{
  public:
    Scratchpad() = default;

    const std::vector<PadEntry>& entries() const { return _entries; }
    std::int64_t token_estimate() const { return estimate_tokens(_chars); }
    std::size_t characters() const { return _chars; }
    bool empty() const { return _entries.empty(); }
    std::size_t size() const { return _entries.size(); }

    void append(PadEntry entry);
    /// Replaces entries [0, count) with a single Summary entry.
    void replace_prefix(std::size_t count, std::string summary);
    /// Cuts entry `i` down to at most `max_chars` characters, marker included.
    void truncate_entry(std::size_t i, std::size_t max_chars);

    bool operator==(const Scratchpad&) const = default;

  private:
    std::vector<PadEntry> _entries;
    std::size_t _chars = 0;
};

/// Value-style append.
Scratchpad append(Scratchpad pad, PadEntry entry);

inline constexpr std::string_view kTruncationMarker = "[...truncated...]";

struct SummarizeOptions
{
    std::int64_t budget = 100'000;
    std::size_t keep_tail = 6;
    std::string prompt;
    std::string model_id;
    Sampling sampling;
};

struct SummarizeResult
{
    Scratchpad pad;
    bool summarized = false;
    bool fell_back = false;
    int llm_calls = 0;
};

/// Identity when the pad is within budget. Otherwise everything but the last
/// keep_tail entries is summarized by one model call and replaced by a single
/// Summary entry; if still over budget, the oldest tail entries are
/// hard-truncated. A gateway failure falls back to dropping the prefix behind
/// a marker entry instead of failing the run.
SummarizeResult maybe_summarize(const Scratchpad& pad, LlmClient& llm, const SummarizeOptions& options);

/// Renders entries as "[Kind] text" blocks for prompts.
std::string render_entries(const std::vector<PadEntry>& entries, std::size_t first, std::size_t last);

} // namespace ctfagent
