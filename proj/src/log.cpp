#include "unfmri/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace unfmri::log {

namespace {
std::atomic<Level> g_level{Level::Info};
std::atomic<int> g_warnings{0};
std::mutex g_mutex;

void emit(Level lvl, const char* tag, std::string_view message) {
  if (lvl < g_level.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::clog << '[' << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void info(std::string_view message) { emit(Level::Info, "info", message); }

void warning(std::string_view message) {
  g_warnings.fetch_add(1);
  emit(Level::Warning, "warn", message);
}

void error(std::string_view message) { emit(Level::Error, "error", message); }

int warning_count() { return g_warnings.load(); }

}  // namespace unfmri::log
