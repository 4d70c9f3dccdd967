// SPDX-License-Identifier: Apache-2.0
#include "osketch/cli.hpp"

int main(int argc, char** argv) {
    return osketch::cli::run_cli(argc, argv);
}
