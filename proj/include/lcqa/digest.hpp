#pragma once

#include <string>
#include <string_view>

namespace lcqa::util {

/// SHA-256 of `data` as a lowercase hex string.
std::string sha256_hex(std::string_view data);

}  // namespace lcqa::util
