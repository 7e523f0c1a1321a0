#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace lcqa::util {

/// Invokes `fn(line_number, record)` for each non-blank line of a JSONL file.
/// Throws ParseError naming the file and 1-based line on malformed JSON.
void for_each_record(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn);

/// Appends one record as a single line. Caller owns flushing/ordering policy.
void append_record(std::ostream& os, const nlohmann::json& record);

}  // namespace lcqa::util
