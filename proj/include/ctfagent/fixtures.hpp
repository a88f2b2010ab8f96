// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent
{

/// Names of the bundled synthetic challenges (image refs `fixture/<name>`).
const std::vector<std::string>& fixture_names();

/// A small vulnerable web app served in-process on 127.0.0.1 with an
/// ephemeral port. The flag is handed in at start, as a container would
/// receive it at build time.
class FixtureServer
{
  public:
    virtual ~FixtureServer() = default;
    virtual int port() const = 0;
    virtual std::string url() const = 0;
    /// Idempotent.
    virtual void stop() = 0;
    /// Request log, one line per request.
    virtual std::string logs() const = 0;
};

/// Returns nullptr for an unknown fixture name.
std::unique_ptr<FixtureServer> start_fixture(std::string_view name, const std::string& flag);

/// GET `base_url + path`; the HTTP status, or -1 when nothing answered.
int http_probe(const std::string& base_url, const std::string& path, std::chrono::milliseconds timeout);

} // namespace ctfagent
