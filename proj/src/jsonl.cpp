#include "lcqa/jsonl.hpp"

#include <fstream>

#include "lcqa/errors.hpp"

namespace lcqa::util {

void for_each_record(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        bool blank = true;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                blank = false;
                break;
            }
        }
        if (blank) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
        }
        fn(line_no, record);
    }
}

void append_record(std::ostream& os, const nlohmann::json& record) {
    os << record.dump() << "\n";
}

}  // namespace lcqa::util
