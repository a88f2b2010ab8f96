// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/memory.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace ctfagent;
using ctfagent::testing::script;

namespace
{

// Recompute-from-scratch oracle for the running estimate.
std::int64_t recount(const Scratchpad& pad)
{
    std::string all;
    for (const auto& e: pad.entries())
        all += e.text;
    return (static_cast<std::int64_t>(all.size()) + 3) / 4;
}

class ThrowingClient final: public LlmClient
{
  public:
    Completion complete(const Conversation&, const std::string&, const Sampling&) override { throw TransportError("down"); }
};

Scratchpad filled(int n, std::size_t chars)
{
    Scratchpad pad;
    for (int i = 0; i < n; ++i)
    {
        std::string text = "e" + std::to_string(i) + ":";
        text.resize(chars, static_cast<char>('a' + i % 26));
        pad.append({i % 2 ? EntryKind::Observation : EntryKind::Action, text});
    }
    return pad;
}

SummarizeOptions opts(std::int64_t budget, std::size_t keep_tail = 6)
{
    SummarizeOptions o;
    o.budget = budget;
    o.keep_tail = keep_tail;
    o.prompt = "summarize";
    o.model_id = "oracle";
    return o;
}

} // namespace

TEST_CASE("append")
{
    const Scratchpad empty;
    const Scratchpad one = append(empty, {EntryKind::Thought, "x"});
    CHECK(empty.empty());
    CHECK(one.size() == 1);
    CHECK(one.entries()[0] == PadEntry {EntryKind::Thought, "x"});
    CHECK(one.token_estimate() == 1);
}

TEST_CASE("running estimate equals recomputation")
{
    std::mt19937_64 rng(5);
    Scratchpad pad;
    for (int i = 0; i < 100; ++i)
    {
        pad.append({EntryKind::Observation, testing::random_text(rng, 300, "abc \n{}")});
        CHECK(pad.token_estimate() == recount(pad));
    }
    pad.replace_prefix(40, "short summary");
    CHECK(pad.token_estimate() == recount(pad));
    for (std::size_t i = 0; i < pad.size(); i += 3)
    {
        pad.truncate_entry(i, 50);
        CHECK(pad.token_estimate() == recount(pad));
    }
}

TEST_CASE("under budget is the identity and makes no call")
{
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "SUMMARY"}}}}));
    const Scratchpad pad = filled(10, 40);
    const SummarizeResult r = maybe_summarize(pad, llm, opts(1000));
    CHECK(r.pad == pad);
    CHECK_FALSE(r.summarized);
    CHECK(r.llm_calls == 0);
    CHECK(maybe_summarize(r.pad, llm, opts(1000)).pad == pad);
}

TEST_CASE("over budget: summary replaces the prefix and the tail is kept")
{
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "SUMMARY"}}}}));
    const Scratchpad pad = filled(30, 100);
    const SummarizeResult r = maybe_summarize(pad, llm, opts(400, 6));
    CHECK(r.summarized);
    CHECK(r.llm_calls == 1);
    REQUIRE(r.pad.size() == 7);
    CHECK(r.pad.entries()[0] == PadEntry {EntryKind::Summary, "SUMMARY"});
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(r.pad.entries()[1 + i] == pad.entries()[24 + i]);
    CHECK(r.pad.token_estimate() <= 400);
    CHECK(r.pad.token_estimate() < pad.token_estimate());
    CHECK(r.pad.token_estimate() == recount(r.pad));
}

TEST_CASE("summaries are summarizable again")
{
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "S"}}}}));
    Scratchpad pad = filled(20, 100);
    pad = maybe_summarize(pad, llm, opts(300, 4)).pad;
    for (int i = 0; i < 20; ++i)
        pad.append({EntryKind::Thought, std::string(100, 't')});
    const SummarizeResult again = maybe_summarize(pad, llm, opts(300, 4));
    CHECK(again.summarized);
    CHECK(again.pad.entries()[0].kind == EntryKind::Summary);
    CHECK(again.pad.size() == 5);
}

TEST_CASE("gateway failure falls back to a marker")
{
    ThrowingClient llm;
    const Scratchpad pad = filled(30, 100);
    const SummarizeResult r = maybe_summarize(pad, llm, opts(400));
    CHECK(r.fell_back);
    CHECK_FALSE(r.summarized);
    CHECK(r.pad.entries()[0].kind == EntryKind::Summary);
    CHECK(r.pad.entries()[0].text.find(kTruncationMarker) != std::string::npos);
    CHECK(r.pad.token_estimate() <= 400);
}

TEST_CASE("an oversized tail is shortened, never dropped")
{
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "SUMMARY"}}}}));
    const Scratchpad pad = filled(10, 2000);
    const SummarizeResult r = maybe_summarize(pad, llm, opts(1000, 4));
    CHECK(r.pad.size() == 5);
    CHECK(r.pad.token_estimate() <= 1000);
    CHECK(r.pad.token_estimate() == recount(r.pad));
}

TEST_CASE("property: tail preserved and estimate shrinks")
{
    std::mt19937_64 rng(17);
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "condensed"}}}}));
    for (int round = 0; round < 200; ++round)
    {
        Scratchpad pad;
        const int n = std::uniform_int_distribution<int>(1, 60)(rng);
        for (int i = 0; i < n; ++i)
            pad.append({EntryKind::Observation, testing::random_text(rng, 400, "xyz ")});
        const std::int64_t budget = std::uniform_int_distribution<std::int64_t>(50, 3000)(rng);
        const std::size_t keep_tail = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const SummarizeResult r = maybe_summarize(pad, llm, opts(budget, keep_tail));

        CHECK(r.pad.token_estimate() == recount(r.pad));
        if (pad.token_estimate() <= budget)
        {
            CHECK(r.pad == pad);
            continue;
        }
        CHECK(r.pad.token_estimate() < pad.token_estimate());
        // Every kept entry is present; verbatim whenever the pad fit without
        // touching the tail.
        const std::size_t tail = std::min(keep_tail, pad.size());
        REQUIRE(r.pad.size() >= tail);
        std::size_t tail_chars = 0;
        for (std::size_t i = pad.size() - tail; i < pad.size(); ++i)
            tail_chars += pad.entries()[i].text.size();
        // A summary shrinks to at most one marker before the tail is touched.
        if (tail_chars + kTruncationMarker.size() <= static_cast<std::size_t>(budget) * 4)
            for (std::size_t k = 0; k < tail; ++k)
                CHECK(r.pad.entries()[r.pad.size() - tail + k] == pad.entries()[pad.size() - tail + k]);
    }
}

TEST_CASE("huge budget never summarizes across a long run")
{
    OracleClient llm(script({{"version", 1}, {"default", {{"content", "S"}}}}));
    Scratchpad pad;
    for (int step = 0; step < 50; ++step)
    {
        pad.append({EntryKind::Action, std::string(200, 'a')});
        pad.append({EntryKind::Observation, std::string(2000, 'o')});
        const SummarizeResult r = maybe_summarize(pad, llm, opts(std::int64_t {1} << 40));
        CHECK(r.llm_calls == 0);
        pad = r.pad;
    }
    CHECK(pad.size() == 100);
}

TEST_CASE("preconditions")
{
    OracleClient llm(script({{"version", 1}}));
    CHECK_THROWS_AS(maybe_summarize({}, llm, opts(0)), PreconditionError);
    CHECK_THROWS_AS(maybe_summarize({}, llm, opts(10, 0)), PreconditionError);
}
