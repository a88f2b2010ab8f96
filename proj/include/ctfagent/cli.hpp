// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ctfagent
{

enum ExitCode : int
{
    kExitOk = 0,
    kExitRunFailed = 1,
    kExitConfig = 2,
    kExitEnvironment = 3,
};

/// Parses `args` (without the program name) and runs the subcommand.
/// Normal output goes to `out`, diagnostics and progress to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_main(int argc, char** argv);

} // namespace ctfagent
