#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "urcrime/error.hpp"

namespace urcrime {

// A calendar day, stored as days since 1970-01-01.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::int64_t days_since_epoch) : days_(days_since_epoch) {}

    static Date from_ymd(int year, unsigned month, unsigned day) {
        using namespace std::chrono;
        const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                 std::chrono::day{day}};
        if (!ymd.ok()) {
            throw ValidationError("invalid calendar date " + std::to_string(year) + "-" +
                                  std::to_string(month) + "-" + std::to_string(day));
        }
        return Date(sys_days{ymd}.time_since_epoch().count());
    }

    // Strict ISO-8601 calendar date, YYYY-MM-DD.
    static Date parse(std::string_view text) {
        auto digits = [&](std::size_t pos, std::size_t len) {
            int v = 0;
            for (std::size_t i = pos; i < pos + len; ++i) {
                const char c = text[i];
                if (c < '0' || c > '9') return -1;
                v = v * 10 + (c - '0');
            }
            return v;
        };
        if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
            throw ValidationError("malformed ISO date '" + std::string(text) + "'");
        }
        const int y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
        if (y < 0 || m < 0 || d < 0) {
            throw ValidationError("malformed ISO date '" + std::string(text) + "'");
        }
        return from_ymd(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
    }

    constexpr std::int64_t days() const { return days_; }

    std::chrono::year_month_day ymd() const {
        return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days_}}};
    }

    int year() const { return static_cast<int>(ymd().year()); }
    unsigned month() const { return static_cast<unsigned>(ymd().month()); }
    unsigned day() const { return static_cast<unsigned>(ymd().day()); }

    // 0 = Monday ... 6 = Sunday.
    unsigned weekday() const {
        const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{days_}}};
        return wd.iso_encoding() - 1;
    }

    // Key identifying the calendar month, e.g. 2020-08 -> 202008.
    int month_key() const { return year() * 100 + static_cast<int>(month()); }

    std::string iso() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year(), month(), day());
        return buf;
    }

    constexpr Date operator+(std::int64_t n) const { return Date(days_ + n); }
    constexpr Date operator-(std::int64_t n) const { return Date(days_ - n); }
    constexpr std::int64_t operator-(Date other) const { return days_ - other.days_; }
    constexpr Date& operator++() { ++days_; return *this; }

    constexpr auto operator<=>(const Date&) const = default;

    // First day of the month `months` calendar months after this date's month.
    Date add_months_first_day(int months) const {
        using namespace std::chrono;
        const auto base = year_month{ymd().year(), ymd().month()} + std::chrono::months{months};
        return Date(sys_days{base / std::chrono::day{1}}.time_since_epoch().count());
    }

    unsigned days_in_month() const {
        using namespace std::chrono;
        const auto last = year_month_day_last{ymd().year(), month_day_last{ymd().month()}};
        return static_cast<unsigned>(last.day());
    }

private:
    std::int64_t days_ = 0;
};

// Inclusive range of calendar days.
struct DateRange {
    Date first;
    Date last;

    std::size_t size() const {
        return last < first ? 0 : static_cast<std::size_t>(last - first + 1);
    }
    bool contains(Date d) const { return first <= d && d <= last; }
    std::size_t index_of(Date d) const { return static_cast<std::size_t>(d - first); }
    Date at(std::size_t i) const { return first + static_cast<std::int64_t>(i); }

    bool operator==(const DateRange&) const = default;
};

} // namespace urcrime
