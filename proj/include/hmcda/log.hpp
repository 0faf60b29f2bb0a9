#pragma once

#include <string_view>

namespace hmcda {

// Warnings go to stderr unless silenced (tests silence them).
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();

}  // namespace hmcda
