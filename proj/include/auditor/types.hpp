#pragma once

#include <compare>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace auditor {

/// On-chain value in satoshis (1e-8 BTC). Signed so that differences
/// (fees, deficits) stay in the same type; loaded values are always >= 0.
using Satoshi = std::int64_t;

/// Fiat amounts in integer cents; exchange rates in cents per whole BTC.
using Cents = std::int64_t;

/// Unix seconds.
using UnixTime = std::int64_t;

using Height = std::int64_t;

inline constexpr Satoshi kSatoshisPerCoin = 100'000'000;

/// Dense 32-bit index with a tag, so address, transaction and cluster
/// indices cannot be mixed up.
template <typename Tag>
struct Id {
    std::uint32_t value = 0;

    constexpr Id() = default;
    template <std::integral T>
    constexpr explicit Id(T v) : value(static_cast<std::uint32_t>(v)) {}

    constexpr std::size_t index() const { return value; }
    constexpr auto operator<=>(const Id&) const = default;
};

using AddressId = Id<struct AddressTag>;
using TxIndex = Id<struct TxTag>;
using ClusterId = Id<struct ClusterTag>;

enum class AddressKind : std::uint8_t { regular, multisig };

inline std::string_view to_string(AddressKind kind) {
    return kind == AddressKind::multisig ? "multisig" : "regular";
}

/// A transaction output, identified by its creating transaction and position.
struct CoinRef {
    TxIndex tx;
    std::uint32_t vout = 0;

    constexpr auto operator<=>(const CoinRef&) const = default;
};

/// Malformed or inconsistent input data (files, chains, logs).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace auditor

template <typename Tag>
struct std::hash<auditor::Id<Tag>> {
    std::size_t operator()(auditor::Id<Tag> id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

template <>
struct std::hash<auditor::CoinRef> {
    std::size_t operator()(const auditor::CoinRef& c) const noexcept {
        return std::hash<std::uint64_t>{}((std::uint64_t{c.tx.value} << 32) | c.vout);
    }
};
