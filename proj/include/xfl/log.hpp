#pragma once

#include <functional>
#include <string_view>

namespace xfl::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink (default: stderr). Returns the previous one.
Sink set_sink(Sink sink);
void set_quiet(bool quiet);
bool quiet();

void info(std::string_view message);
void warn(std::string_view message);

} // namespace xfl::log
