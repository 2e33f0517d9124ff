#pragma once

#include <string_view>

namespace unfmri::log {

enum class Level { Debug = 0, Info = 1, Warning = 2, Error = 3, Off = 4 };

void set_level(Level level);
Level level();

void info(std::string_view message);
void warning(std::string_view message);
void error(std::string_view message);

/// Number of warnings emitted by this process so far.
int warning_count();

}  // namespace unfmri::log
