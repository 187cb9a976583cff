// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace tvscope::cli {

// Exit codes: 0 success, 2 input error, 3 empty-result guard, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitEmpty = 3;

// args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace tvscope::cli
