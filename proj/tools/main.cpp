// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/cli.hpp"

int main(int argc, char** argv) {
    return tvscope::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
