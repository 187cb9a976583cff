// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>

namespace tvscope::log {

namespace {

std::optional<Level> parse_level(const char* text) {
    if (text == nullptr) return std::nullopt;
    const std::string s(text);
    if (s == "error" || s == "0") return Level::error;
    if (s == "warn" || s == "warning" || s == "1") return Level::warn;
    if (s == "info" || s == "2") return Level::info;
    if (s == "debug" || s == "3") return Level::debug;
    return std::nullopt;
}

std::atomic<int> g_threshold{-1};
std::atomic<int> g_warnings{0};
std::mutex g_write_mutex;

}  // namespace

Level threshold() {
    int t = g_threshold.load();
    if (t < 0) {
        t = static_cast<int>(parse_level(std::getenv("TVSCOPE_LOG")).value_or(Level::warn));
        g_threshold.store(t);
    }
    return static_cast<Level>(t);
}

void set_threshold(Level level) { g_threshold.store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
    if (level == Level::warn) ++g_warnings;
    if (static_cast<int>(level) > static_cast<int>(threshold())) return;
    static constexpr const char* kTags[] = {"error", "warning", "info", "debug"};
    std::lock_guard lock(g_write_mutex);
    std::fprintf(stderr, "tvscope: %s: %.*s\n", kTags[static_cast<int>(level)],
                 static_cast<int>(message.size()), message.data());
}

int warning_count() { return g_warnings.load(); }

}  // namespace tvscope::log
