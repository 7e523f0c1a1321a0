#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace lcqa::util {

/// Parses an ISO-8601 timestamp into seconds since the Unix epoch (UTC).
/// Accepted shapes: "YYYY-MM-DD", "YYYY-MM-DD[T ]HH:MM[:SS[.frac]]" with an
/// optional zone suffix "Z", "+hh:mm", "+hhmm" or "+hh". Missing zone means
/// UTC. Fractional seconds are truncated.
std::optional<std::int64_t> parse_iso8601(std::string_view text);

/// Formats epoch seconds as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(std::int64_t epoch_seconds);

}  // namespace lcqa::util
