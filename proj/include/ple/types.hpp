#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace ple {

using TokenId = std::int32_t;

// Observed mode variable. Values double as expert indices.
enum class Route : std::uint8_t { NoThink = 0, Think = 1 };

inline constexpr std::size_t route_index(Route r) { return static_cast<std::size_t>(r); }
inline constexpr Route other_route(Route r) {
  return r == Route::Think ? Route::NoThink : Route::Think;
}

std::string_view route_name(Route r);
std::optional<Route> parse_route(std::string_view name);

}  // namespace ple
