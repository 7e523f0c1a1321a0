#include "lcqa/time_util.hpp"

#include <array>
#include <cctype>
#include <cstdio>

namespace lcqa::util {

namespace {

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

int to_int(std::string_view s) {
    int v = 0;
    for (char c : s) v = v * 10 + (c - '0');
    return v;
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(std::int64_t y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2) / 5 + static_cast<unsigned>(d) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

bool is_leap(std::int64_t y) {
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

int days_in_month(std::int64_t y, int m) {
    static constexpr std::array<int, 12> base = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return base[static_cast<std::size_t>(m - 1)];
}

}  // namespace

std::optional<std::int64_t> parse_iso8601(std::string_view text) {
    // Trim outer whitespace.
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text.size() < 10) return std::nullopt;

    if (text[4] != '-' || text[7] != '-') return std::nullopt;
    std::string_view ys = text.substr(0, 4), ms = text.substr(5, 2), ds = text.substr(8, 2);
    if (!all_digits(ys) || !all_digits(ms) || !all_digits(ds)) return std::nullopt;
    const int year = to_int(ys), month = to_int(ms), day = to_int(ds);
    if (month < 1 || month > 12) return std::nullopt;
    if (day < 1 || day > days_in_month(year, month)) return std::nullopt;

    std::size_t pos = 10;
    int hour = 0, minute = 0, second = 0;
    if (pos < text.size() && (text[pos] == 'T' || text[pos] == 't' || text[pos] == ' ')) {
        ++pos;
        if (pos + 5 > text.size() || text[pos + 2] != ':') return std::nullopt;
        std::string_view hs = text.substr(pos, 2), mins = text.substr(pos + 3, 2);
        if (!all_digits(hs) || !all_digits(mins)) return std::nullopt;
        hour = to_int(hs);
        minute = to_int(mins);
        pos += 5;
        if (pos + 3 <= text.size() && text[pos] == ':') {
            std::string_view ss = text.substr(pos + 1, 2);
            if (!all_digits(ss)) return std::nullopt;
            second = to_int(ss);
            pos += 3;
            if (pos < text.size() && (text[pos] == '.' || text[pos] == ',')) {
                ++pos;
                std::size_t frac_start = pos;
                while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
                if (pos == frac_start) return std::nullopt;
            }
        }
        if (hour > 23 || minute > 59 || second > 60) return std::nullopt;
    }

    std::int64_t offset = 0;
    if (pos < text.size()) {
        const char c = text[pos];
        if (c == 'Z' || c == 'z') {
            ++pos;
        } else if (c == '+' || c == '-') {
            const int sign = (c == '+') ? 1 : -1;
            ++pos;
            if (pos + 2 > text.size()) return std::nullopt;
            std::string_view oh = text.substr(pos, 2);
            if (!all_digits(oh)) return std::nullopt;
            int off_h = to_int(oh), off_m = 0;
            pos += 2;
            if (pos < text.size() && text[pos] == ':') ++pos;
            if (pos + 2 <= text.size() && all_digits(text.substr(pos, 2))) {
                off_m = to_int(text.substr(pos, 2));
                pos += 2;
            }
            if (off_h > 23 || off_m > 59) return std::nullopt;
            offset = sign * (off_h * 3600 + off_m * 60);
        }
    }
    if (pos != text.size()) return std::nullopt;

    const std::int64_t days = days_from_civil(year, month, day);
    return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

std::string format_iso8601(std::int64_t epoch_seconds) {
    std::int64_t days = epoch_seconds / 86400;
    std::int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    std::int64_t y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    const int hh = static_cast<int>(rem / 3600);
    const int mm = static_cast<int>((rem % 3600) / 60);
    const int ss = static_cast<int>(rem % 60);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02d:%02d:%02dZ", static_cast<long long>(y), m, d, hh, mm, ss);
    return buf;
}

}  // namespace lcqa::util
