#include "xfl/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace xfl::log {
namespace {

std::mutex g_mutex;
bool g_quiet = false;

void default_sink(Level level, std::string_view message)
{
    std::cerr << (level == Level::warning ? "warning: " : "") << message << '\n';
}

Sink& sink_ref()
{
    static Sink sink = default_sink;
    return sink;
}

void emit(Level level, std::string_view message)
{
    std::lock_guard lock(g_mutex);
    if (g_quiet && level == Level::info)
        return;
    if (auto& s = sink_ref())
        s(level, message);
}

} // namespace

Sink set_sink(Sink sink)
{
    std::lock_guard lock(g_mutex);
    return std::exchange(sink_ref(), std::move(sink));
}

void set_quiet(bool q)
{
    std::lock_guard lock(g_mutex);
    g_quiet = q;
}

bool quiet()
{
    std::lock_guard lock(g_mutex);
    return g_quiet;
}

void info(std::string_view message) { emit(Level::info, message); }
void warn(std::string_view message) { emit(Level::warning, message); }

} // namespace xfl::log
