#pragma once

#include <string_view>
#include <vector>

namespace mobkit {

/// Text assets compiled into the library from assets/ (templates, PEFT presets, price table).
/// Names are paths relative to assets/, e.g. "templates/trip_origin.txt". Throws ConfigError.
std::string_view embedded_asset(std::string_view name);
std::vector<std::string_view> embedded_asset_names();

}  // namespace mobkit
