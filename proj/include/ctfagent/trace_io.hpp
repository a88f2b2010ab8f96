// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctfagent/domain.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ctfagent
{

class TraceFormatError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kTraceFormat = "ctfagent-trace/1";

/// One JSON object per line: a header record, one record per StepRecord,
/// then the outcome record. Field order is fixed, so
/// serialize(deserialize(text)) == text for any text this function wrote.
std::string serialize_trace(const Trace& trace);
Trace deserialize_trace(std::string_view text);

/// Writes through a temporary file and rename, so readers never observe a
/// partial trace.
void write_trace_file(const std::filesystem::path& path, const Trace& trace);
Trace read_trace_file(const std::filesystem::path& path);

/// Human-readable rendering used by `replay`.
std::string pretty_print_trace(const Trace& trace);

} // namespace ctfagent
