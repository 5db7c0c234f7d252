#include "daam/common.hpp"

#include <iostream>

namespace daam::log {

namespace {
thread_local Sink g_sink;
bool g_quiet = false;
}  // namespace

void warn(const std::string& msg) {
  if (g_sink) {
    g_sink(msg);
    return;
  }
  std::cerr << "warning: " << msg << '\n';
}

void info(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << '\n';
}

void set_quiet(bool quiet) { g_quiet = quiet; }

ScopedWarningSink::ScopedWarningSink(Sink sink) : previous_(std::move(g_sink)) {
  g_sink = std::move(sink);
}

ScopedWarningSink::~ScopedWarningSink() { g_sink = std::move(previous_); }

}  // namespace daam::log
