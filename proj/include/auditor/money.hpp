#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "auditor/types.hpp"

namespace auditor {

/// Integer division rounded half to even. Denominator must be > 0.
constexpr std::int64_t div_round_half_even(__int128 num, __int128 den) {
    __int128 q = num / den;
    __int128 r = num % den;
    if (r < 0) {
        r += den;
        q -= 1;
    }
    const __int128 twice = 2 * r;
    if (twice > den || (twice == den && (q % 2 != 0))) q += 1;
    return static_cast<std::int64_t>(q);
}

/// sat = round_half_even(price_cents * 1e8 / rate_cents)
constexpr Satoshi fiat_to_satoshi(Cents price_cents, Cents rate_cents_per_btc) {
    return div_round_half_even(static_cast<__int128>(price_cents) * kSatoshisPerCoin, rate_cents_per_btc);
}

/// Nearest multiple of `quantum`, ties to even multiple.
constexpr Satoshi round_to_multiple(Satoshi value, Satoshi quantum) {
    return div_round_half_even(value, quantum) * quantum;
}

/// Parses a plain decimal ("2500", "2500.5", "-3.14", "0.004") into cents,
/// rounding extra fractional digits half to even. Exponents and thousands
/// separators are rejected.
inline std::optional<Cents> parse_decimal_cents(std::string_view text) {
    if (text.empty()) return std::nullopt;
    bool negative = false;
    if (text.front() == '-' || text.front() == '+') {
        negative = text.front() == '-';
        text.remove_prefix(1);
    }
    const auto dot = text.find('.');
    const std::string_view whole = text.substr(0, dot);
    const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() && frac.empty()) return std::nullopt;

    __int128 numerator = 0;
    __int128 denominator = 1;
    auto append = [&](std::string_view digits, bool scale) -> bool {
        for (char c : digits) {
            if (c < '0' || c > '9') return false;
            numerator = numerator * 10 + (c - '0');
            if (scale) denominator *= 10;
            if (numerator > (__int128{1} << 100) || denominator > (__int128{1} << 100)) return false;
        }
        return true;
    };
    if (!append(whole, false) || !append(frac, true)) return std::nullopt;

    const auto cents = div_round_half_even(numerator * 100, denominator);
    return negative ? -cents : cents;
}

/// Cents rendered as a decimal with two fractional digits.
inline std::string format_cents(Cents cents) {
    const bool negative = cents < 0;
    const auto magnitude = negative ? -cents : cents;
    std::string frac = std::to_string(magnitude % 100);
    if (frac.size() < 2) frac.insert(0, "0");
    return (negative ? "-" : "") + std::to_string(magnitude / 100) + "." + frac;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view text) {
    Int value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return value;
}

}  // namespace auditor
