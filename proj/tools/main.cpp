// SPDX-License-Identifier: Apache-2.0
#include "ctfagent/cli.hpp"

int main(int argc, char** argv)
{
    return ctfagent::cli_main(argc, argv);
}
