// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace tvscope::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold is read once from TVSCOPE_LOG (error|warn|info|debug or 0-3); default warn.
Level threshold();
void set_threshold(Level level);

void write(Level level, std::string_view message);

inline void error(std::string_view m) { write(Level::error, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void debug(std::string_view m) { write(Level::debug, m); }

// Number of warnings emitted since process start (tests use this to check warning paths).
int warning_count();

}  // namespace tvscope::log
